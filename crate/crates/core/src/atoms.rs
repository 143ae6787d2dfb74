//! Atomic sets: gauge, support function, exposure and top-k queries.

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::linops::{LinOp, Mat, Shape};
use crate::spectral;

const UNIT_TOL: f64 = 1e-12;
const SPECTRAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(v: f64) -> Sign {
        if v < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("sign must be +1 or -1, got {v}")),
        }
    }
}

/// A dictionary element. Canonical indices are column-major when the
/// ambient object is a matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Atom {
    SignedUnit { index: usize, sign: Sign },
    NonnegUnit { index: usize },
    Rank1 { u: Vec<f64>, v: Vec<f64> },
    Rank1Sym { v: Vec<f64> },
    Scaled { weight: f64, inner: Box<Atom> },
}

fn unit_check(x: &[f64]) -> Result<()> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Argument(format!("factor has norm {n}, expected 1")));
    }
    Ok(())
}

fn aligned(a: &[f64], b: &[f64], sign: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - sign * y).abs() <= UNIT_TOL)
}

impl PartialEq for Atom {
    fn eq(&self, other: &Atom) -> bool {
        use Atom::*;
        match (self, other) {
            (SignedUnit { index: i, sign: s }, SignedUnit { index: j, sign: t }) => i == j && s == t,
            (NonnegUnit { index: i }, NonnegUnit { index: j }) => i == j,
            (Rank1 { u, v }, Rank1 { u: u2, v: v2 }) => {
                (aligned(u, u2, 1.0) && aligned(v, v2, 1.0))
                    || (aligned(u, u2, -1.0) && aligned(v, v2, -1.0))
            }
            (Rank1Sym { v }, Rank1Sym { v: v2 }) => aligned(v, v2, 1.0) || aligned(v, v2, -1.0),
            (Scaled { weight: w, inner: a }, Scaled { weight: w2, inner: b }) => w == w2 && a == b,
            _ => false,
        }
    }
}

impl Atom {
    pub fn rank1(u: Vec<f64>, v: Vec<f64>) -> Result<Atom> {
        unit_check(&u)?;
        unit_check(&v)?;
        Ok(Atom::Rank1 { u, v })
    }

    pub fn rank1_sym(v: Vec<f64>) -> Result<Atom> {
        unit_check(&v)?;
        Ok(Atom::Rank1Sym { v })
    }

    pub fn scaled(weight: f64, inner: Atom) -> Result<Atom> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Argument(format!("atom weight {weight} must be positive")));
        }
        Ok(Atom::Scaled { weight, inner: Box::new(inner) })
    }

    /// Strip any `Scaled` wrappers, returning the accumulated weight.
    pub fn unwrap_scaled(&self) -> (f64, &Atom) {
        match self {
            Atom::Scaled { weight, inner } => {
                let (w, a) = inner.unwrap_scaled();
                (weight * w, a)
            }
            a => (1.0, a),
        }
    }

    /// Dense embedding into the ambient shape.
    pub fn to_dense(&self, shape: Shape) -> Result<Mat> {
        let mut out = shape.zeros();
        match self {
            Atom::SignedUnit { index, sign } => {
                check_index(*index, shape)?;
                out[*index] = sign.value();
            }
            Atom::NonnegUnit { index } => {
                check_index(*index, shape)?;
                out[*index] = 1.0;
            }
            Atom::Rank1 { u, v } => {
                check_shape((shape.rows, shape.cols), (u.len(), v.len()))?;
                for j in 0..v.len() {
                    for i in 0..u.len() {
                        out[(i, j)] = u[i] * v[j];
                    }
                }
            }
            Atom::Rank1Sym { v } => {
                check_shape((shape.rows, shape.cols), (v.len(), v.len()))?;
                for j in 0..v.len() {
                    for i in 0..v.len() {
                        out[(i, j)] = v[i] * v[j];
                    }
                }
            }
            Atom::Scaled { weight, inner } => return Ok(inner.to_dense(shape)? * *weight),
        }
        Ok(out)
    }

    /// `<a, z>` without forming the dense atom.
    pub fn inner(&self, z: &Mat) -> f64 {
        match self {
            Atom::SignedUnit { index, sign } => sign.value() * z[*index],
            Atom::NonnegUnit { index } => z[*index],
            Atom::Rank1 { u, v } => {
                let mut s = 0.0;
                for (j, vj) in v.iter().enumerate() {
                    let mut c = 0.0;
                    for (i, ui) in u.iter().enumerate() {
                        c += ui * z[(i, j)];
                    }
                    s += c * vj;
                }
                s
            }
            Atom::Rank1Sym { v } => {
                let mut s = 0.0;
                for (j, vj) in v.iter().enumerate() {
                    let mut c = 0.0;
                    for (i, vi) in v.iter().enumerate() {
                        c += vi * z[(i, j)];
                    }
                    s += c * vj;
                }
                s
            }
            Atom::Scaled { weight, inner } => weight * inner.inner(z),
        }
    }
}

fn check_index(index: usize, shape: Shape) -> Result<()> {
    if index >= shape.len() {
        return Err(Error::Argument(format!("atom index {index} outside ambient size {}", shape.len())));
    }
    Ok(())
}

/// Gauge value, with an explicit marker for points outside the cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    Finite(f64),
    Infinite,
}

impl Gauge {
    pub fn finite(self) -> Option<f64> {
        match self {
            Gauge::Finite(v) => Some(v),
            Gauge::Infinite => None,
        }
    }
}

/// Cardinality budget. A single entry applies to every operand of a
/// weighted sum; otherwise one entry per operand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Budget(pub Vec<usize>);

impl Budget {
    pub fn uniform(k: usize) -> Self {
        Budget(vec![k])
    }

    pub fn for_operand(&self, i: usize) -> usize {
        if self.0.len() == 1 {
            self.0[0]
        } else {
            self.0.get(i).copied().unwrap_or(0)
        }
    }
}

/// Coefficient domain of a reduced model block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Nonnegative,
    Free,
    FreeMatrix(usize),
    PsdMatrix(usize),
}

/// One block of a reduced model.
#[derive(Debug, Clone)]
pub enum ModelBlock {
    /// Conic (nonnegative) or linear (free) hull of finitely many atoms.
    Polyhedral { atoms: Vec<Atom>, domain: Domain },
    /// `{ U C V^T }`; for the PSD case `left == right` and `C` is PSD.
    Spectral { left: Mat, right: Mat, domain: Domain },
}

impl ModelBlock {
    pub fn domain(&self) -> Domain {
        match self {
            ModelBlock::Polyhedral { domain, .. } | ModelBlock::Spectral { domain, .. } => *domain,
        }
    }

    /// Number of scalar coefficients.
    pub fn n_coeffs(&self) -> usize {
        match self {
            ModelBlock::Polyhedral { atoms, .. } => atoms.len(),
            ModelBlock::Spectral { left, .. } => left.ncols() * left.ncols(),
        }
    }

    /// Dense basis elements, in coefficient order (column-major for C).
    pub fn basis(&self, shape: Shape) -> Result<Vec<Mat>> {
        match self {
            ModelBlock::Polyhedral { atoms, .. } => atoms.iter().map(|a| a.to_dense(shape)).collect(),
            ModelBlock::Spectral { left, right, .. } => {
                let k = left.ncols();
                let mut out = Vec::with_capacity(k * k);
                for j in 0..k {
                    for i in 0..k {
                        out.push(left.column(i) * right.column(j).transpose());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Image of every basis element under `op`; canonical atoms use the
    /// operator's basis fast path. Each image counts as one forward.
    pub fn basis_images(&self, op: &LinOp) -> Result<Vec<Mat>> {
        match self {
            ModelBlock::Polyhedral { atoms, .. } => atoms
                .iter()
                .map(|a| {
                    let (w, base) = a.unwrap_scaled();
                    match base {
                        Atom::SignedUnit { index, sign } => Ok(op.forward_basis(*index)? * (w * sign.value())),
                        Atom::NonnegUnit { index } => Ok(op.forward_basis(*index)? * w),
                        _ => op.forward(&a.to_dense(op.domain())?),
                    }
                })
                .collect(),
            ModelBlock::Spectral { .. } => {
                self.basis(op.domain())?.iter().map(|b| op.forward(b)).collect()
            }
        }
    }

    /// `sum_j c_j basis_j` as a dense ambient object.
    pub fn synthesize(&self, shape: Shape, coeffs: &[f64]) -> Result<Mat> {
        if coeffs.len() != self.n_coeffs() {
            return Err(Error::Argument(format!(
                "{} coefficients for a block of size {}",
                coeffs.len(),
                self.n_coeffs()
            )));
        }
        match self {
            ModelBlock::Polyhedral { atoms, .. } => {
                let mut out = shape.zeros();
                for (a, c) in atoms.iter().zip(coeffs) {
                    out += a.to_dense(shape)? * *c;
                }
                Ok(out)
            }
            ModelBlock::Spectral { left, right, .. } => {
                let k = left.ncols();
                let c = Mat::from_column_slice(k, k, coeffs);
                Ok(left * c * right.transpose())
            }
        }
    }
}

/// Identified atom basis plus coefficient domains.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub shape: Shape,
    pub blocks: Vec<ModelBlock>,
}

impl ReducedModel {
    pub fn n_coeffs(&self) -> usize {
        self.blocks.iter().map(|b| b.n_coeffs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AtomicSet {
    /// `{ +-e_i }`; gauge is the 1-norm.
    SignedCanonical { shape: Shape },
    /// `{ e_i }` as a cone; gauge is the indicator of the nonnegative orthant.
    NonnegCanonical { shape: Shape },
    /// `{ u v^T : ||u|| = ||v|| = 1 }`; gauge is the nuclear norm.
    SpectralAsym { m: usize, n: usize },
    /// `{ v v^T : ||v|| = 1 }`; gauge is trace on the PSD cone.
    SpectralPsd { n: usize },
    /// Union of `lambda * left` and `right`: support `max(lambda s_left, s_right)`.
    WeightedSum { lambda: f64, left: Box<AtomicSet>, right: Box<AtomicSet> },
}

impl AtomicSet {
    pub fn signed(n: usize) -> Self {
        AtomicSet::SignedCanonical { shape: Shape::vector(n) }
    }

    pub fn signed_on(shape: Shape) -> Self {
        AtomicSet::SignedCanonical { shape }
    }

    pub fn nonneg(n: usize) -> Self {
        AtomicSet::NonnegCanonical { shape: Shape::vector(n) }
    }

    pub fn spectral(m: usize, n: usize) -> Self {
        AtomicSet::SpectralAsym { m, n }
    }

    pub fn psd(n: usize) -> Self {
        AtomicSet::SpectralPsd { n }
    }

    pub fn weighted_sum(lambda: f64, left: AtomicSet, right: AtomicSet) -> Result<Self> {
        let s = AtomicSet::WeightedSum { lambda, left: Box::new(left), right: Box::new(right) };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AtomicSet::SignedCanonical { shape } | AtomicSet::NonnegCanonical { shape } => {
                if shape.is_empty() {
                    return Err(Error::Argument("atomic set dimension must be positive".into()));
                }
            }
            AtomicSet::SpectralAsym { m, n } => {
                if *m == 0 || *n == 0 {
                    return Err(Error::Argument("atomic set dimension must be positive".into()));
                }
            }
            AtomicSet::SpectralPsd { n } => {
                if *n == 0 {
                    return Err(Error::Argument("atomic set dimension must be positive".into()));
                }
            }
            AtomicSet::WeightedSum { lambda, left, right } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Argument(format!("lambda {lambda} must be positive")));
                }
                left.validate()?;
                right.validate()?;
                if left.shape() != right.shape() {
                    return Err(Error::Argument("weighted-sum operands differ in ambient shape".into()));
                }
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        match self {
            AtomicSet::SignedCanonical { shape } | AtomicSet::NonnegCanonical { shape } => *shape,
            AtomicSet::SpectralAsym { m, n } => Shape::matrix(*m, *n),
            AtomicSet::SpectralPsd { n } => Shape::matrix(*n, *n),
            AtomicSet::WeightedSum { left, .. } => left.shape(),
        }
    }

    /// Finite dictionary (canonical sets).
    pub fn is_polyhedral(&self) -> bool {
        match self {
            AtomicSet::SignedCanonical { .. } | AtomicSet::NonnegCanonical { .. } => true,
            AtomicSet::WeightedSum { left, right, .. } => left.is_polyhedral() && right.is_polyhedral(),
            _ => false,
        }
    }

    /// Operands of a weighted sum (with their scale), or the set itself.
    pub fn operands(&self) -> Vec<(f64, &AtomicSet)> {
        match self {
            AtomicSet::WeightedSum { lambda, left, right } => {
                let mut out: Vec<(f64, &AtomicSet)> =
                    left.operands().into_iter().map(|(w, s)| (w * lambda, s)).collect();
                out.extend(right.operands());
                out
            }
            s => vec![(1.0, s)],
        }
    }

    fn check(&self, z: &Mat) -> Result<()> {
        let s = self.shape();
        check_shape((s.rows, s.cols), (z.nrows(), z.ncols()))
    }

    /// `sigma(z) = sup_a <a, z>`.
    pub fn support_value(&self, z: &Mat) -> Result<f64> {
        self.check(z)?;
        Ok(match self {
            AtomicSet::SignedCanonical { .. } => z.amax(),
            AtomicSet::NonnegCanonical { .. } => z.max().max(0.0),
            AtomicSet::SpectralAsym { .. } => top_singular_value(z)?,
            AtomicSet::SpectralPsd { .. } => top_eigenvalue(z)?.max(0.0),
            AtomicSet::WeightedSum { lambda, left, right } => {
                (lambda * left.support_value(z)?).max(right.support_value(z)?)
            }
        })
    }

    /// Atoms within `eps` of the support value. Finite sets return all of
    /// them or a capacity error; spectral sets return at most `cap`.
    pub fn exposed_atoms(&self, z: &Mat, eps: f64, cap: usize) -> Result<Vec<Atom>> {
        self.check(z)?;
        if !(eps >= 0.0) || cap == 0 {
            return Err(Error::Argument("need eps >= 0 and cap >= 1".into()));
        }
        let sigma = self.support_value(z)?;
        let thresh = sigma - eps;
        let out = match self {
            AtomicSet::SignedCanonical { .. } => {
                let mut out = Vec::new();
                for (i, &v) in z.iter().enumerate() {
                    if v >= thresh {
                        out.push(Atom::SignedUnit { index: i, sign: Sign::Plus });
                    }
                    if -v >= thresh {
                        out.push(Atom::SignedUnit { index: i, sign: Sign::Minus });
                    }
                }
                out
            }
            AtomicSet::NonnegCanonical { .. } => z
                .iter()
                .enumerate()
                .filter(|(_, &v)| v >= thresh)
                .map(|(i, _)| Atom::NonnegUnit { index: i })
                .collect(),
            AtomicSet::SpectralAsym { m, n } => {
                let k = cap.min(*m.min(n));
                let svd = spectral::truncated_svd(z, k, SPECTRAL_TOL)?;
                let mut out = Vec::new();
                for i in 0..k {
                    if svd.s[i] >= thresh {
                        out.push(Atom::Rank1 {
                            u: svd.u.column(i).iter().copied().collect(),
                            v: svd.v.column(i).iter().copied().collect(),
                        });
                    }
                }
                return Ok(out);
            }
            AtomicSet::SpectralPsd { n } => {
                let k = cap.min(*n);
                let eig = spectral::truncated_eig_sym(&symmetric_part(z), k, SPECTRAL_TOL)?;
                let mut out = Vec::new();
                for i in 0..k {
                    if eig.values[i] >= thresh {
                        out.push(Atom::Rank1Sym { v: eig.v.column(i).iter().copied().collect() });
                    }
                }
                return Ok(out);
            }
            AtomicSet::WeightedSum { lambda, left, right } => {
                let mut out = Vec::new();
                let ls = left.support_value(z)? * lambda;
                if ls >= thresh {
                    // lambda * <a, z> >= thresh  <=>  <a, z> >= sigma_left - (ls - thresh) / lambda
                    let eps_l = (ls - thresh) / lambda;
                    for a in left.exposed_atoms(z, eps_l, cap)? {
                        out.push(Atom::scaled(*lambda, a)?);
                    }
                }
                let rs = right.support_value(z)?;
                if rs >= thresh {
                    out.extend(right.exposed_atoms(z, rs - thresh, cap)?);
                }
                out
            }
        };
        if self.is_polyhedral() && out.len() > cap {
            return Err(Error::Capacity { count: out.len(), cap });
        }
        Ok(out)
    }

    /// The k atoms with the largest `<a, z>`. Finite sets break ties by
    /// ascending index, positive sign first. Weighted sums return k atoms
    /// per operand (left operand first, wrapped in `Scaled`).
    pub fn top_k_atoms(&self, z: &Mat, k: usize) -> Result<Vec<Atom>> {
        self.top_k_budget(z, &Budget::uniform(k))
    }

    pub fn top_k_budget(&self, z: &Mat, budget: &Budget) -> Result<Vec<Atom>> {
        self.check(z)?;
        let mut out = Vec::new();
        for (i, (w, set)) in self.operands().into_iter().enumerate() {
            let k = budget.for_operand(i);
            for a in set.top_k_single(z, k)? {
                out.push(if w != 1.0 { Atom::scaled(w, a)? } else { a });
            }
        }
        Ok(out)
    }

    fn top_k_single(&self, z: &Mat, k: usize) -> Result<Vec<Atom>> {
        let n = self.shape().len();
        match self {
            AtomicSet::SignedCanonical { .. } => {
                if k == 0 || k > 2 * n {
                    return Err(Error::Argument(format!("k = {k} not in 1..={}", 2 * n)));
                }
                // candidates (value, index, sign) with +e_i before -e_i
                let mut cand: Vec<(f64, usize, Sign)> = Vec::with_capacity(2 * n);
                for (i, &v) in z.iter().enumerate() {
                    cand.push((v, i, Sign::Plus));
                    cand.push((0.0 - v, i, Sign::Minus));
                }
                let cmp = |a: &(f64, usize, Sign), b: &(f64, usize, Sign)| {
                    b.0.total_cmp(&a.0)
                        .then(a.1.cmp(&b.1))
                        .then((a.2 == Sign::Minus).cmp(&(b.2 == Sign::Minus)))
                };
                if k < cand.len() {
                    cand.select_nth_unstable_by(k - 1, cmp);
                    cand.truncate(k);
                }
                cand.sort_by(cmp);
                Ok(cand.into_iter().map(|(_, index, sign)| Atom::SignedUnit { index, sign }).collect())
            }
            AtomicSet::NonnegCanonical { .. } => {
                if k == 0 || k > n {
                    return Err(Error::Argument(format!("k = {k} not in 1..={n}")));
                }
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
                Ok(idx[..k].iter().map(|&index| Atom::NonnegUnit { index }).collect())
            }
            AtomicSet::SpectralAsym { m, n } => {
                if k == 0 || k > *m.min(n) {
                    return Err(Error::Argument(format!("k = {k} not in 1..={}", m.min(n))));
                }
                let svd = spectral::truncated_svd(z, k, SPECTRAL_TOL)?;
                Ok((0..k)
                    .map(|i| Atom::Rank1 {
                        u: svd.u.column(i).iter().copied().collect(),
                        v: svd.v.column(i).iter().copied().collect(),
                    })
                    .collect())
            }
            AtomicSet::SpectralPsd { n } => {
                if k == 0 || k > *n {
                    return Err(Error::Argument(format!("k = {k} not in 1..={n}")));
                }
                let eig = spectral::truncated_eig_sym(&symmetric_part(z), k, SPECTRAL_TOL)?;
                Ok((0..k).map(|i| Atom::Rank1Sym { v: eig.v.column(i).iter().copied().collect() }).collect())
            }
            AtomicSet::WeightedSum { .. } => self.top_k_atoms(z, k),
        }
    }

    /// Gauge `gamma(x)`. The cone sets return `Infinite` off their cone.
    pub fn gauge_value(&self, x: &Mat) -> Result<Gauge> {
        self.check(x)?;
        Ok(match self {
            AtomicSet::SignedCanonical { .. } => Gauge::Finite(x.lp_norm(1)),
            AtomicSet::NonnegCanonical { .. } => {
                if x.iter().all(|&v| v >= 0.0) {
                    Gauge::Finite(0.0)
                } else {
                    Gauge::Infinite
                }
            }
            AtomicSet::SpectralAsym { .. } => Gauge::Finite(spectral::singular_values(x).iter().sum()),
            AtomicSet::SpectralPsd { .. } => {
                if (x - x.transpose()).amax() > 1e-10 * (1.0 + x.amax()) {
                    return Ok(Gauge::Infinite);
                }
                let (vals, _) = spectral::sorted_eigen(&symmetric_part(x));
                let tol = 1e-12 * (1.0 + x.amax());
                if vals.last().copied().unwrap_or(0.0) < -tol {
                    Gauge::Infinite
                } else {
                    Gauge::Finite(x.trace())
                }
            }
            AtomicSet::WeightedSum { .. } => {
                return Err(Error::Unsupported(
                    "gauge of a weighted sum needs a decomposition; use component gauges".into(),
                ))
            }
        })
    }

    /// `||M||_A = max_a ||M a||`: exact for finite sets, a certified upper
    /// bound for spectral sets (via the operator norm, since unit rank-one
    /// atoms have unit Frobenius norm).
    pub fn atomic_opnorm(&self, op: &LinOp, trials: usize) -> Result<f64> {
        let s = self.shape();
        check_shape((s.rows, s.cols), (op.domain().rows, op.domain().cols))?;
        Ok(match self {
            AtomicSet::SignedCanonical { .. } | AtomicSet::NonnegCanonical { .. } => {
                op.column_norms().into_iter().fold(0.0, f64::max)
            }
            AtomicSet::SpectralAsym { .. } | AtomicSet::SpectralPsd { .. } => op.opnorm_upper(trials),
            AtomicSet::WeightedSum { lambda, left, right } => {
                (lambda * left.atomic_opnorm(op, trials)?).max(right.atomic_opnorm(op, trials)?)
            }
        })
    }

    /// Top-k atoms plus coefficient domain. Signed atoms span a line, so
    /// duplicates of the same index are dropped.
    pub fn ess_model(&self, z: &Mat, budget: &Budget) -> Result<ReducedModel> {
        self.check(z)?;
        let mut blocks = Vec::new();
        for (i, (_, set)) in self.operands().into_iter().enumerate() {
            let k = budget.for_operand(i);
            let block = match set {
                AtomicSet::SignedCanonical { .. } => {
                    let mut seen = std::collections::BTreeSet::new();
                    let atoms = set
                        .top_k_single(z, k)?
                        .into_iter()
                        .filter(|a| match a {
                            Atom::SignedUnit { index, .. } => seen.insert(*index),
                            _ => true,
                        })
                        .collect();
                    ModelBlock::Polyhedral { atoms, domain: Domain::Free }
                }
                AtomicSet::NonnegCanonical { .. } => {
                    ModelBlock::Polyhedral { atoms: set.top_k_single(z, k)?, domain: Domain::Nonnegative }
                }
                AtomicSet::SpectralAsym { m, n } => {
                    if k == 0 || k > *m.min(n) {
                        return Err(Error::Argument(format!("k = {k} not in 1..={}", m.min(n))));
                    }
                    let svd = spectral::truncated_svd(z, k, SPECTRAL_TOL)?;
                    ModelBlock::Spectral { left: svd.u, right: svd.v, domain: Domain::FreeMatrix(k) }
                }
                AtomicSet::SpectralPsd { n } => {
                    if k == 0 || k > *n {
                        return Err(Error::Argument(format!("k = {k} not in 1..={n}")));
                    }
                    let eig = spectral::truncated_eig_sym(&symmetric_part(z), k, SPECTRAL_TOL)?;
                    ModelBlock::Spectral { left: eig.v.clone(), right: eig.v, domain: Domain::PsdMatrix(k) }
                }
                AtomicSet::WeightedSum { .. } => unreachable!("operands are flattened"),
            };
            blocks.push(block);
        }
        Ok(ReducedModel { shape: self.shape(), blocks })
    }

    /// Linear minimization oracle: the atom maximizing `<a, z>` and its
    /// value, or `None` when the origin is at least as good (cone sets).
    pub fn best_atom(&self, z: &Mat) -> Result<Option<(Atom, f64)>> {
        self.check(z)?;
        Ok(match self {
            AtomicSet::SignedCanonical { .. } => {
                let a = self.top_k_single(z, 1)?.remove(0);
                let v = a.inner(z);
                Some((a, v))
            }
            AtomicSet::NonnegCanonical { .. } => {
                let a = self.top_k_single(z, 1)?.remove(0);
                let v = a.inner(z);
                (v > 0.0).then_some((a, v))
            }
            AtomicSet::SpectralAsym { .. } => {
                let svd = spectral::truncated_svd(z, 1, SPECTRAL_TOL)?;
                let a = Atom::Rank1 {
                    u: svd.u.column(0).iter().copied().collect(),
                    v: svd.v.column(0).iter().copied().collect(),
                };
                Some((a, svd.s[0]))
            }
            AtomicSet::SpectralPsd { .. } => {
                let eig = spectral::truncated_eig_sym(&symmetric_part(z), 1, SPECTRAL_TOL)?;
                (eig.values[0] > 0.0)
                    .then(|| (Atom::Rank1Sym { v: eig.v.column(0).iter().copied().collect() }, eig.values[0]))
            }
            AtomicSet::WeightedSum { lambda, left, right } => {
                let l = left.best_atom(z)?.map(|(a, v)| (a, v * lambda));
                let r = right.best_atom(z)?;
                match (l, r) {
                    (Some((la, lv)), Some((ra, rv))) => {
                        if lv >= rv {
                            Some((Atom::scaled(*lambda, la)?, lv))
                        } else {
                            Some((ra, rv))
                        }
                    }
                    (Some((la, lv)), None) => Some((Atom::scaled(*lambda, la)?, lv)),
                    (None, r) => r,
                }
            }
        })
    }
}

pub(crate) fn symmetric_part(z: &Mat) -> Mat {
    (z + z.transpose()) * 0.5
}

fn top_singular_value(z: &Mat) -> Result<f64> {
    Ok(spectral::truncated_svd(z, 1, SPECTRAL_TOL)?.s[0])
}

fn top_eigenvalue(z: &Mat) -> Result<f64> {
    Ok(spectral::truncated_eig_sym(&symmetric_part(z), 1, SPECTRAL_TOL)?.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Mat {
        Mat::from_column_slice(x.len(), 1, x)
    }

    fn su(index: usize, plus: bool) -> Atom {
        Atom::SignedUnit { index, sign: if plus { Sign::Plus } else { Sign::Minus } }
    }

    #[test]
    fn support_examples() {
        assert_eq!(AtomicSet::signed(3).support_value(&v(&[1.0, -2.0, 0.5])).unwrap(), 2.0);
        let z = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -3.0]));
        assert_eq!(AtomicSet::psd(2).support_value(&z).unwrap(), 0.0);
        let z = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        assert!((AtomicSet::spectral(2, 2).support_value(&z).unwrap() - 3.0).abs() < 1e-14);
        assert!(matches!(
            AtomicSet::signed(3).support_value(&v(&[1.0, 2.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn exposure_examples() {
        let s = AtomicSet::signed(3);
        let z = v(&[1.0, 0.9, 0.1]);
        assert_eq!(s.exposed_atoms(&z, 0.15, 10).unwrap(), vec![su(0, true), su(1, true)]);
        assert_eq!(s.exposed_atoms(&z, 0.0, 10).unwrap(), vec![su(0, true)]);
        assert!(matches!(s.exposed_atoms(&z, 0.15, 1), Err(Error::Capacity { count: 2, cap: 1 })));
    }

    #[test]
    fn top_k_examples() {
        let s = AtomicSet::signed(3);
        assert_eq!(s.top_k_atoms(&v(&[0.9, -2.0, 0.5]), 1).unwrap(), vec![su(1, false)]);
        assert_eq!(s.top_k_atoms(&v(&[1.0, 1.0, 0.0]), 1).unwrap(), vec![su(0, true)]);
        // zero entry: +e before -e
        assert_eq!(
            s.top_k_atoms(&v(&[0.0, 0.0, 0.0]), 2).unwrap(),
            vec![su(0, true), su(0, false)]
        );
        assert!(s.top_k_atoms(&v(&[0.0; 3]), 7).is_err());
        assert!(s.top_k_atoms(&v(&[0.0; 3]), 0).is_err());
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(
            AtomicSet::signed(3).gauge_value(&v(&[3.0, -4.0, 0.0])).unwrap(),
            Gauge::Finite(7.0)
        );
        let x = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(AtomicSet::psd(2).gauge_value(&x).unwrap(), Gauge::Finite(3.0));
        let x = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0]));
        assert_eq!(AtomicSet::psd(2).gauge_value(&x).unwrap(), Gauge::Infinite);
        assert_eq!(AtomicSet::nonneg(2).gauge_value(&v(&[1.0, 0.0])).unwrap(), Gauge::Finite(0.0));
        assert_eq!(AtomicSet::nonneg(2).gauge_value(&v(&[1.0, -1e-3])).unwrap(), Gauge::Infinite);
    }

    #[test]
    fn opnorm_examples() {
        let s = AtomicSet::signed(4);
        assert_eq!(s.atomic_opnorm(&LinOp::identity(4), 5).unwrap(), 1.0);
        let m = LinOp::dense(Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0])).unwrap();
        assert_eq!(AtomicSet::signed(2).atomic_opnorm(&m, 5).unwrap(), 4.0);
        let shape = Shape::matrix(2, 3);
        let all: Vec<_> = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let mask = LinOp::entry_mask(shape, all).unwrap();
        assert_eq!(AtomicSet::spectral(2, 3).atomic_opnorm(&mask, 5).unwrap(), 1.0);
    }

    #[test]
    fn ess_model_examples() {
        let m = AtomicSet::signed(3).ess_model(&v(&[0.9, -2.0, 0.5]), &Budget::uniform(2)).unwrap();
        match &m.blocks[0] {
            ModelBlock::Polyhedral { atoms, domain } => {
                assert_eq!(atoms, &vec![su(1, false), su(0, true)]);
                assert_eq!(*domain, Domain::Free);
            }
            _ => panic!(),
        }
        let m = AtomicSet::nonneg(3).ess_model(&v(&[1.0, -1.0, 2.0]), &Budget::uniform(1)).unwrap();
        match &m.blocks[0] {
            ModelBlock::Polyhedral { atoms, domain } => {
                assert_eq!(atoms, &vec![Atom::NonnegUnit { index: 2 }]);
                assert_eq!(*domain, Domain::Nonnegative);
            }
            _ => panic!(),
        }
        let z = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        let m = AtomicSet::psd(3).ess_model(&z, &Budget::uniform(2)).unwrap();
        assert_eq!(m.blocks[0].domain(), Domain::PsdMatrix(2));
        assert_eq!(m.n_coeffs(), 4);
    }

    #[test]
    fn counterexample_top1_is_leading_pair() {
        // B = U diag(2, 0.1, 0.1) V^T with U, V rotations
        let (c, s) = (0.6f64, 0.8f64);
        let u = Mat::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let vv = Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c]);
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.1, 0.1]));
        let z = &u * d * vv.transpose();
        let top = AtomicSet::spectral(3, 3).top_k_atoms(&z, 1).unwrap();
        let expect = Atom::rank1(u.column(0).iter().copied().collect(), vv.column(0).iter().copied().collect()).unwrap();
        match (&top[0], &expect) {
            (Atom::Rank1 { u: a, v: b }, Atom::Rank1 { u: a2, v: b2 }) => {
                let sgn = a[0].signum() * a2[0].signum();
                for i in 0..3 {
                    assert!((a[i] - sgn * a2[i]).abs() < 1e-12);
                    assert!((b[i] - sgn * b2[i]).abs() < 1e-12);
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn rank1_equality_up_to_sign_flip() {
        let a = Atom::rank1(vec![0.6, 0.8], vec![1.0, 0.0]).unwrap();
        let b = Atom::rank1(vec![-0.6, -0.8], vec![-1.0, 0.0]).unwrap();
        let c = Atom::rank1(vec![-0.6, -0.8], vec![1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(Atom::rank1(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(Atom::scaled(0.0, a).is_err());
    }

    #[test]
    fn atom_json_records() {
        let a = su(3, false);
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"kind":"signed_unit","index":3,"sign":-1}"#);
        let b: Atom = serde_json::from_str(r#"{"kind":"rank1","u":[1.0],"v":[0.0,1.0]}"#).unwrap();
        assert_eq!(b, Atom::rank1(vec![1.0], vec![0.0, 1.0]).unwrap());
        assert!(serde_json::from_str::<Atom>(r#"{"kind":"signed_unit","index":0,"sign":2}"#).is_err());
    }

    #[test]
    fn rank1_dense_embedding_is_outer_product() {
        let a = Atom::rank1(vec![0.6, 0.8], vec![0.0, 1.0, 0.0]).unwrap();
        let d = a.to_dense(Shape::matrix(2, 3)).unwrap();
        assert_eq!(d[(1, 1)], 0.8);
        assert_eq!(d[(0, 0)], 0.0);
        let z = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert!((a.inner(&z) - d.dot(&z)).abs() < 1e-14);
    }

    #[test]
    fn weighted_sum_semantics() {
        let shape = Shape::matrix(2, 2);
        let w = AtomicSet::weighted_sum(0.5, AtomicSet::spectral(2, 2), AtomicSet::signed_on(shape)).unwrap();
        let z = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        // max(0.5 * 3, 3)
        assert!((w.support_value(&z).unwrap() - 3.0).abs() < 1e-14);
        let top = w.top_k_atoms(&z, 1).unwrap();
        assert_eq!(top.len(), 2);
        assert!(matches!(top[0], Atom::Scaled { .. }));
        let m = w.ess_model(&z, &Budget(vec![1, 2])).unwrap();
        assert_eq!(m.blocks.len(), 2);
        assert_eq!(m.n_coeffs(), 1 + 2);
        assert!(AtomicSet::weighted_sum(1.0, AtomicSet::spectral(2, 2), AtomicSet::signed(4)).is_err());
        assert!(matches!(w.gauge_value(&z), Err(Error::Unsupported(_))));
        let best = w.best_atom(&z).unwrap().unwrap();
        assert_eq!(best.0, su(0, true));
    }

    fn small_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n)
    }

    fn all_finite_atoms(set: &AtomicSet) -> Vec<Atom> {
        let n = set.shape().len();
        match set {
            AtomicSet::SignedCanonical { .. } => (0..n).flat_map(|i| [su(i, true), su(i, false)]).collect(),
            AtomicSet::NonnegCanonical { .. } => (0..n).map(|index| Atom::NonnegUnit { index }).collect(),
            _ => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn exposed_atoms_attain_support(x in small_vec(6), nonneg in any::<bool>()) {
            let set = if nonneg { AtomicSet::nonneg(6) } else { AtomicSet::signed(6) };
            let z = v(&x);
            let sigma = set.support_value(&z).unwrap();
            for a in set.exposed_atoms(&z, 0.0, 12).unwrap() {
                prop_assert!((a.inner(&z) - sigma).abs() <= 1e-10);
            }
            // brute force agrees
            let brute = all_finite_atoms(&set).iter().map(|a| a.inner(&z)).fold(0.0, f64::max);
            prop_assert!((brute - sigma).abs() <= 1e-12);
        }

        #[test]
        fn spectral_exposed_atoms_attain_support(x in small_vec(12)) {
            let z = Mat::from_column_slice(4, 3, &x);
            let set = AtomicSet::spectral(4, 3);
            let sigma = set.support_value(&z).unwrap();
            for a in set.exposed_atoms(&z, 0.0, 3).unwrap() {
                prop_assert!((a.inner(&z) - sigma).abs() <= 1e-10);
            }
            let zs = &z.rows(0, 3) + z.rows(0, 3).transpose();
            let psd = AtomicSet::psd(3);
            let sp = psd.support_value(&zs).unwrap();
            prop_assert!(sp >= 0.0);
            for a in psd.exposed_atoms(&zs, 0.0, 3).unwrap() {
                prop_assert!((a.inner(&zs) - sp).abs() <= 1e-10);
            }
        }

        #[test]
        fn support_at_zero_direction_is_nonnegative(n in 1usize..5) {
            let sets = [AtomicSet::signed(n), AtomicSet::nonneg(n), AtomicSet::spectral(n, n), AtomicSet::psd(n)];
            for s in &sets {
                prop_assert_eq!(s.support_value(&s.shape().zeros()).unwrap(), 0.0);
            }
        }

        #[test]
        fn gauge_support_cauchy_schwarz(x in small_vec(5), z in small_vec(5)) {
            let set = AtomicSet::signed(5);
            let (xm, zm) = (v(&x), v(&z));
            let g = set.gauge_value(&xm).unwrap().finite().unwrap();
            prop_assert!(xm.dot(&zm) <= g * set.support_value(&zm).unwrap() + 1e-12);
            // z = sign(x) exposes supp(x): equality
            let s = xm.map(|t| if t > 0.0 { 1.0 } else if t < 0.0 { -1.0 } else { 0.0 });
            prop_assert!((xm.dot(&s) - g * set.support_value(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn top_k_contains_exposed_on_gapped_instances(x in small_vec(6), k in 1usize..4) {
            // construct a strict gap: k entries at magnitude 5, rest below 3
            let mut z = x.clone();
            for (i, zi) in z.iter_mut().enumerate().take(k) {
                *zi = if i % 2 == 0 { 5.0 } else { -5.0 };
            }
            let zm = v(&z);
            let set = AtomicSet::signed(6);
            let exposed = set.exposed_atoms(&zm, 0.0, 12).unwrap();
            let top = set.top_k_atoms(&zm, exposed.len()).unwrap();
            for a in &exposed {
                prop_assert!(top.contains(a));
            }
            // model span contains every exposed atom
            let m = set.ess_model(&zm, &Budget::uniform(exposed.len())).unwrap();
            if let ModelBlock::Polyhedral { atoms, .. } = &m.blocks[0] {
                for a in &exposed {
                    let Atom::SignedUnit { index, .. } = a else { unreachable!() };
                    let found = atoms.iter().any(|b| matches!(b, Atom::SignedUnit { index: j, .. } if j == index));
                    prop_assert!(found);
                }
            }
        }
    }
}
