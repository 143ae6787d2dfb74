//! Linear operators with forward/adjoint application and `nMat` accounting.
//!
//! Every ambient object (vector or matrix) is stored as a `DMatrix<f64>`;
//! vectors are `n x 1`. Leaf operators own a pair of atomic counters.
//! Composite operators (`Compose`, `HStack`) do not count on their own:
//! each constituent application is counted by the constituent, so one
//! forward through `Compose(Dense, Dct)` adds 2 to the forward count.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

pub type Mat = DMatrix<f64>;

/// Shape of an ambient object. Vectors are `n x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn of(m: &Mat) -> Self {
        Shape { rows: m.nrows(), cols: m.ncols() }
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn zeros(&self) -> Mat {
        Mat::zeros(self.rows, self.cols)
    }

    /// Column-major linear index of entry (i, j).
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.rows
    }

    /// Inverse of [`Shape::index`].
    pub fn position(&self, idx: usize) -> (usize, usize) {
        (idx % self.rows, idx / self.rows)
    }

    fn pair(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Snapshot of an operator's application counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub forward: u64,
    pub adjoint: u64,
}

impl OpCounter {
    /// Total number of applications of M or M*.
    pub fn nmat(&self) -> u64 {
        self.forward + self.adjoint
    }
}

impl std::ops::Add for OpCounter {
    type Output = OpCounter;
    fn add(self, o: OpCounter) -> OpCounter {
        OpCounter { forward: self.forward + o.forward, adjoint: self.adjoint + o.adjoint }
    }
}

#[derive(Default)]
struct Counts {
    forward: AtomicU64,
    adjoint: AtomicU64,
}

enum Kind {
    Dense(Mat),
    Identity(Shape),
    Dct { n: usize, inverse: bool, plan: Arc<dyn TransformType2And3<f64>> },
    Haar { n: usize, inverse: bool },
    Conv1d { kernel: Vec<f64>, n: usize },
    EntryMask { shape: Shape, omega: Vec<(usize, usize)>, observed: Vec<bool> },
    Compose { outer: Arc<LinOp>, inner: Arc<LinOp> },
    HStack(Vec<Arc<LinOp>>),
}

/// A linear map M with adjoint M*.
pub struct LinOp {
    kind: Kind,
    name: &'static str,
    domain: Shape,
    range: Shape,
    counts: Counts,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LinOp::{}({}x{} -> {}x{})",
            self.name, self.domain.rows, self.domain.cols, self.range.rows, self.range.cols
        )
    }
}

impl LinOp {
    fn leaf(kind: Kind, name: &'static str, domain: Shape, range: Shape) -> Self {
        LinOp { kind, name, domain, range, counts: Counts::default() }
    }

    pub fn dense(m: Mat) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::Argument("dense operator must be nonempty".into()));
        }
        let (r, c) = (m.nrows(), m.ncols());
        Ok(Self::leaf(Kind::Dense(m), "Dense", Shape::vector(c), Shape::vector(r)))
    }

    /// Materialized Gaussian ensemble with i.i.d. N(0, 1/m) entries.
    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Argument("gaussian ensemble needs m, n > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("valid std");
        let mat = Mat::from_fn(m, n, |_, _| normal.sample(&mut rng));
        let mut op = Self::dense(mat)?;
        op.name = "GaussianEnsemble";
        Ok(op)
    }

    pub fn identity(n: usize) -> Self {
        Self::identity_on(Shape::vector(n))
    }

    /// Identity on an arbitrary ambient shape (used for fully observed matrices).
    pub fn identity_on(shape: Shape) -> Self {
        Self::leaf(Kind::Identity(shape), "Identity", shape, shape)
    }

    /// Orthonormal DCT-II analysis.
    pub fn dct(n: usize) -> Result<Self> {
        Self::make_dct(n, false)
    }

    /// Orthonormal inverse DCT (DCT-III), i.e. synthesis from cosine coefficients.
    pub fn idct(n: usize) -> Result<Self> {
        Self::make_dct(n, true)
    }

    fn make_dct(n: usize, inverse: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("DCT length must be positive".into()));
        }
        let plan = DctPlanner::new().plan_dct2(n);
        let name = if inverse { "InverseDct" } else { "Dct" };
        Ok(Self::leaf(Kind::Dct { n, inverse, plan }, name, Shape::vector(n), Shape::vector(n)))
    }

    /// Orthonormal Haar wavelet analysis; `n` must be a power of two.
    pub fn haar(n: usize) -> Result<Self> {
        Self::make_haar(n, false)
    }

    /// Haar synthesis (coefficients to signal).
    pub fn ihaar(n: usize) -> Result<Self> {
        Self::make_haar(n, true)
    }

    fn make_haar(n: usize, inverse: bool) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Argument(format!("Haar length {n} is not a power of two")));
        }
        let name = if inverse { "InverseHaar" } else { "Haar" };
        Ok(Self::leaf(Kind::Haar { n, inverse }, name, Shape::vector(n), Shape::vector(n)))
    }

    /// Circular convolution `y_i = sum_j kernel_j x_{(i - j) mod n}`.
    pub fn conv1d(kernel: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 || kernel.is_empty() || kernel.len() > n {
            return Err(Error::Argument(format!(
                "kernel length {} must be in 1..={n}",
                kernel.len()
            )));
        }
        if kernel.iter().any(|k| !k.is_finite()) {
            return Err(Error::Argument("kernel has nonfinite entries".into()));
        }
        Ok(Self::leaf(Kind::Conv1d { kernel, n }, "Conv1d", Shape::vector(n), Shape::vector(n)))
    }

    /// Sampling operator keeping the entries in `omega` and zeroing the rest.
    /// Indices are sorted row-major; duplicates are rejected.
    pub fn entry_mask(shape: Shape, mut omega: Vec<(usize, usize)>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Argument("mask shape must be nonempty".into()));
        }
        omega.sort_unstable();
        if omega.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate index in mask".into()));
        }
        let mut observed = vec![false; shape.len()];
        for &(i, j) in &omega {
            if i >= shape.rows || j >= shape.cols {
                return Err(Error::Argument(format!("mask index ({i}, {j}) out of range")));
            }
            observed[shape.index(i, j)] = true;
        }
        Ok(Self::leaf(Kind::EntryMask { shape, omega, observed }, "EntryMask", shape, shape))
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: Arc<LinOp>, inner: Arc<LinOp>) -> Result<Self> {
        check_shape(outer.domain.pair(), inner.range.pair())?;
        let (domain, range) = (inner.domain, outer.range);
        Ok(Self::leaf(Kind::Compose { outer, inner }, "Compose", domain, range))
    }

    /// `[M_1 M_2 ...]` acting on stacked vectors.
    pub fn hstack(blocks: Vec<Arc<LinOp>>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::Argument("empty hstack".into()))?;
        let range = first.range;
        let mut n = 0;
        for b in &blocks {
            check_shape(range.pair(), b.range.pair())?;
            if !b.domain.is_vector() {
                return Err(Error::Argument("hstack blocks must act on vectors".into()));
            }
            n += b.domain.rows;
        }
        Ok(Self::leaf(Kind::HStack(blocks), "HStack", Shape::vector(n), range))
    }

    pub fn domain(&self) -> Shape {
        self.domain
    }

    pub fn range(&self) -> Shape {
        self.range
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// The dense matrix behind `Dense`/`GaussianEnsemble`, if any.
    pub fn as_dense(&self) -> Option<&Mat> {
        match &self.kind {
            Kind::Dense(m) => Some(m),
            _ => None,
        }
    }

    /// Observed index set of an `EntryMask`.
    pub fn mask_indices(&self) -> Option<&[(usize, usize)]> {
        match &self.kind {
            Kind::EntryMask { omega, .. } => Some(omega),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        check_shape(self.domain.pair(), (x.nrows(), x.ncols()))?;
        Ok(self.apply(x, false, true))
    }

    pub fn adjoint(&self, y: &Mat) -> Result<Mat> {
        check_shape(self.range.pair(), (y.nrows(), y.ncols()))?;
        Ok(self.apply(y, true, true))
    }

    /// Forward application that is not recorded in `nMat` (diagnostics only).
    pub fn forward_uncounted(&self, x: &Mat) -> Result<Mat> {
        check_shape(self.domain.pair(), (x.nrows(), x.ncols()))?;
        Ok(self.apply(x, false, false))
    }

    /// Adjoint application that is not recorded in `nMat` (diagnostics only).
    pub fn adjoint_uncounted(&self, y: &Mat) -> Result<Mat> {
        check_shape(self.range.pair(), (y.nrows(), y.ncols()))?;
        Ok(self.apply(y, true, false))
    }

    /// Image of the `idx`-th canonical basis element (column-major index).
    /// Counted as one forward; leaf operators avoid the full product.
    pub fn forward_basis(&self, idx: usize) -> Result<Mat> {
        if idx >= self.domain.len() {
            return Err(Error::Argument(format!("basis index {idx} out of range")));
        }
        Ok(self.basis_image(idx, true))
    }

    fn basis_image(&self, idx: usize, counted: bool) -> Mat {
        match &self.kind {
            Kind::Dense(m) => {
                if counted {
                    self.counts.forward.fetch_add(1, Ordering::Relaxed);
                }
                Mat::from_column_slice(m.nrows(), 1, m.column(idx).as_slice())
            }
            Kind::Identity(s) | Kind::EntryMask { shape: s, .. } => {
                if counted {
                    self.counts.forward.fetch_add(1, Ordering::Relaxed);
                }
                let mut out = s.zeros();
                let keep = match &self.kind {
                    Kind::EntryMask { observed, .. } => observed[idx],
                    _ => true,
                };
                if keep {
                    out[idx] = 1.0;
                }
                out
            }
            _ => {
                let mut e = self.domain.zeros();
                e[idx] = 1.0;
                self.apply(&e, false, counted)
            }
        }
    }

    pub fn counter_snapshot(&self) -> OpCounter {
        match &self.kind {
            Kind::Compose { outer, inner } => outer.counter_snapshot() + inner.counter_snapshot(),
            Kind::HStack(blocks) => {
                blocks.iter().fold(OpCounter::default(), |acc, b| acc + b.counter_snapshot())
            }
            _ => OpCounter {
                forward: self.counts.forward.load(Ordering::Acquire),
                adjoint: self.counts.adjoint.load(Ordering::Acquire),
            },
        }
    }

    pub fn counter_reset(&self) {
        match &self.kind {
            Kind::Compose { outer, inner } => {
                outer.counter_reset();
                inner.counter_reset();
            }
            Kind::HStack(blocks) => blocks.iter().for_each(|b| b.counter_reset()),
            _ => {
                self.counts.forward.store(0, Ordering::Release);
                self.counts.adjoint.store(0, Ordering::Release);
            }
        }
    }

    fn apply(&self, x: &Mat, adj: bool, counted: bool) -> Mat {
        let leaf = !matches!(self.kind, Kind::Compose { .. } | Kind::HStack(_));
        if counted && leaf {
            let c = if adj { &self.counts.adjoint } else { &self.counts.forward };
            c.fetch_add(1, Ordering::Relaxed);
        }
        match &self.kind {
            Kind::Dense(m) => {
                if adj {
                    m.tr_mul(x)
                } else {
                    m * x
                }
            }
            Kind::Identity(_) => x.clone(),
            Kind::Dct { n, inverse, plan } => {
                let mut buf: Vec<f64> = x.iter().copied().collect();
                // analysis for Dct forward and for InverseDct adjoint
                if *inverse == adj {
                    dct_forward(plan.as_ref(), &mut buf);
                } else {
                    dct_inverse(plan.as_ref(), &mut buf);
                }
                Mat::from_vec(*n, 1, buf)
            }
            Kind::Haar { n, inverse } => {
                let mut buf: Vec<f64> = x.iter().copied().collect();
                if *inverse == adj {
                    haar_analysis(&mut buf);
                } else {
                    haar_synthesis(&mut buf);
                }
                Mat::from_vec(*n, 1, buf)
            }
            Kind::Conv1d { kernel, n } => {
                let n = *n;
                let mut out = Mat::zeros(n, 1);
                if adj {
                    for l in 0..n {
                        let mut s = 0.0;
                        for (j, k) in kernel.iter().enumerate() {
                            s += k * x[(l + j) % n];
                        }
                        out[l] = s;
                    }
                } else {
                    for i in 0..n {
                        let mut s = 0.0;
                        for (j, k) in kernel.iter().enumerate() {
                            s += k * x[(i + n - j) % n];
                        }
                        out[i] = s;
                    }
                }
                out
            }
            Kind::EntryMask { observed, .. } => {
                let mut out = x.clone();
                for (v, &keep) in out.iter_mut().zip(observed) {
                    if !keep {
                        *v = 0.0;
                    }
                }
                out
            }
            Kind::Compose { outer, inner } => {
                if adj {
                    inner.apply(&outer.apply(x, true, counted), true, counted)
                } else {
                    outer.apply(&inner.apply(x, false, counted), false, counted)
                }
            }
            Kind::HStack(blocks) => {
                if adj {
                    let parts: Vec<Mat> = blocks.iter().map(|b| b.apply(x, true, counted)).collect();
                    let data: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
                    Mat::from_vec(self.domain.rows, 1, data)
                } else {
                    let mut out = self.range.zeros();
                    let mut off = 0;
                    for b in blocks {
                        let len = b.domain.rows;
                        let part = x.rows(off, len).into_owned();
                        out += b.apply(&part, false, counted);
                        off += len;
                    }
                    out
                }
            }
        }
    }

    /// Exact Euclidean norms `||M e_i||` for every canonical basis element,
    /// in column-major order. Not counted.
    pub fn column_norms(&self) -> Vec<f64> {
        match &self.kind {
            Kind::Dense(m) => m.column_iter().map(|c| c.norm()).collect(),
            Kind::Identity(s) => vec![1.0; s.len()],
            Kind::Dct { n, .. } | Kind::Haar { n, .. } => vec![1.0; *n],
            Kind::Conv1d { kernel, n } => {
                let k = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
                vec![k; *n]
            }
            Kind::EntryMask { observed, .. } => {
                observed.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
            }
            Kind::Compose { .. } | Kind::HStack(_) => (0..self.domain.len())
                .map(|i| self.basis_image(i, false).norm())
                .collect(),
        }
    }

    /// Certified upper bound on the spectral norm `||M||_2`.
    ///
    /// Orthonormal and sampling operators are bounded by 1, circular
    /// convolution by the largest DFT magnitude of its kernel, and dense
    /// matrices by `||(G)^(2^t)||_F^(1/2^(t+1))` with `G` the smaller Gram matrix
    /// and `t = trials` squarings. Composites multiply or add in quadrature.
    pub fn opnorm_upper(&self, trials: usize) -> f64 {
        match &self.kind {
            Kind::Dense(m) => dense_norm_bound(m, trials),
            Kind::Identity(_) | Kind::Dct { .. } | Kind::Haar { .. } => 1.0,
            Kind::EntryMask { omega, .. } => {
                if omega.is_empty() {
                    0.0
                } else {
                    1.0
                }
            }
            Kind::Conv1d { kernel, n } => {
                let n = *n;
                let mut best: f64 = 0.0;
                for f in 0..n {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, k) in kernel.iter().enumerate() {
                        let ang = -2.0 * std::f64::consts::PI * ((f * j) % n) as f64 / n as f64;
                        re += k * ang.cos();
                        im += k * ang.sin();
                    }
                    best = best.max(re.hypot(im));
                }
                best * (1.0 + 1e-12)
            }
            Kind::Compose { outer, inner } => outer.opnorm_upper(trials) * inner.opnorm_upper(trials),
            Kind::HStack(blocks) => blocks
                .iter()
                .map(|b| b.opnorm_upper(trials).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

fn dense_norm_bound(m: &Mat, trials: usize) -> f64 {
    // ||G^p||_F >= lambda_max(G)^p, so each squaring tightens the bound.
    // G^p is held as h * exp(log_scale) to avoid overflow.
    let mut h = if m.nrows() <= m.ncols() { m * m.transpose() } else { m.tr_mul(m) };
    let mut log_scale = 0.0;
    let mut p = 1.0;
    let mut bound = h.norm();
    for _ in 0..trials {
        let s = h.norm();
        if s == 0.0 || !s.is_finite() {
            break;
        }
        h /= s;
        log_scale += s.ln();
        h = &h * &h;
        log_scale *= 2.0;
        p *= 2.0;
        let hn = h.norm();
        if hn == 0.0 {
            break;
        }
        bound = bound.min(((log_scale + hn.ln()) / p).exp());
    }
    bound.sqrt() * (1.0 + 1e-12)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn dct_forward(plan: &dyn TransformType2And3<f64>, buf: &mut [f64]) {
    let n = buf.len() as f64;
    plan.process_dct2(buf);
    buf[0] *= (1.0 / n).sqrt();
    let s = (2.0 / n).sqrt();
    buf[1..].iter_mut().for_each(|v| *v *= s);
}

fn dct_inverse(plan: &dyn TransformType2And3<f64>, buf: &mut [f64]) {
    let n = buf.len() as f64;
    buf[0] *= 2.0 / n.sqrt();
    let s = (2.0 / n).sqrt();
    buf[1..].iter_mut().for_each(|v| *v *= s);
    plan.process_dct3(buf);
}

fn haar_analysis(x: &mut [f64]) {
    let n = x.len();
    let mut tmp = vec![0.0; n];
    let mut len = n;
    while len >= 2 {
        let h = len / 2;
        for i in 0..h {
            let (a, b) = (x[2 * i], x[2 * i + 1]);
            tmp[i] = (a + b) * FRAC_1_SQRT_2;
            tmp[h + i] = (a - b) * FRAC_1_SQRT_2;
        }
        x[..len].copy_from_slice(&tmp[..len]);
        len = h;
    }
}

fn haar_synthesis(x: &mut [f64]) {
    let n = x.len();
    let mut tmp = vec![0.0; n];
    let mut len = 2;
    while len <= n {
        let h = len / 2;
        for i in 0..h {
            let (a, d) = (x[i], x[h + i]);
            tmp[2 * i] = (a + d) * FRAC_1_SQRT_2;
            tmp[2 * i + 1] = (a - d) * FRAC_1_SQRT_2;
        }
        x[..len].copy_from_slice(&tmp[..len]);
        len *= 2;
    }
}

/// Frobenius inner product.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}
