//! Primal retrieval: dual oracle steps, essential-model construction and
//! reduced solves, with the exposure and Hausdorff bounds as diagnostics.

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::atoms::{Atom, AtomicSet, Domain, Gauge, ModelBlock, Sign};
use crate::error::{Error, Result};
use crate::linops::{LinOp, Mat};
use crate::objectives::{epsilon_bound, solver_gauge, Formulation, ProblemSpec, TOL};
use crate::solvers::{
    solve_reduced_with, DualOracle, LevelSetOracle, OracleState, ProxOptions, ProxOracle, ReducedOptions,
    ReducedSolution,
};
use crate::spectral::TruncatedSvd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    /// Level-set conditional gradient for P3, proximal gradient otherwise.
    #[default]
    Auto,
    Prox,
    LevelSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_iter: usize,
    /// Run the reduced solve every `cadence` outer iterations. `None` picks
    /// 1 for polyhedral sets and 5 when a spectral operand is present.
    pub cadence: Option<usize>,
    pub reduced: ReducedOptions,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_iter: 500, cadence: None, reduced: ReducedOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    FeasibleFound,
    MaxIter,
    OracleFailed,
}

/// One line of the per-iteration trace. Unavailable values are empty CSV
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub d_value: f64,
    pub eps_bound: Option<f64>,
    pub f_reduced: Option<f64>,
    pub feasible: bool,
    #[serde(rename = "nMat")]
    pub nmat: u64,
}

/// Retrieved component: atoms with their coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub domain: Domain,
    pub atoms: Vec<Atom>,
    pub coefficients: Vec<f64>,
    pub card: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub status: Status,
    pub iterations: usize,
    pub blocks: Vec<BlockReport>,
    /// Total atom count over blocks.
    pub card: usize,
    /// `f(b - M x)` for the returned `x`, if a reduced solve ran.
    pub f_value: Option<f64>,
    pub alpha: f64,
    pub eps_tol: f64,
    pub b_norm: f64,
    pub nmat: u64,
    pub wall_time_s: f64,
    pub message: Option<String>,
    pub trace: Vec<TraceRow>,
    /// Ambient reconstruction.
    #[serde(skip)]
    pub x: Option<Mat>,
    /// Per-block contributions to `x`, in block order.
    #[serde(skip)]
    pub block_x: Vec<Mat>,
}

impl RetrievalReport {
    /// The trace as CSV with columns `t,d_value,eps_bound,f_reduced,feasible,nMat`.
    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.trace {
            w.serialize(row).map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        }
        if self.trace.is_empty() {
            w.write_record(["t", "d_value", "eps_bound", "f_reduced", "feasible", "nMat"])
                .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
    }
}

/// What an observer sees after each outer iteration.
pub struct IterationInfo<'a> {
    pub t: usize,
    pub state: &'a OracleState,
    pub eps_bound: Option<f64>,
    pub solution: Option<&'a ReducedSolution>,
}

fn has_spectral(set: &AtomicSet) -> bool {
    set.operands().iter().any(|(_, s)| !s.is_polyhedral())
}

fn build_oracle(spec: &ProblemSpec, choice: OracleChoice) -> Result<Box<dyn DualOracle>> {
    match (choice, spec.formulation) {
        (OracleChoice::Auto, Formulation::P3) | (OracleChoice::LevelSet, _) => {
            Ok(Box::new(LevelSetOracle::new(spec.clone())?))
        }
        _ => Ok(Box::new(ProxOracle::new(spec.clone(), ProxOptions::default())?)),
    }
}

pub fn run_retrieval(spec: &ProblemSpec, choice: OracleChoice, limits: &Limits) -> Result<RetrievalReport> {
    run_retrieval_observed(spec, choice, limits, &mut |_| {})
}

/// Run the retrieval loop, calling `observer` after every outer iteration.
pub fn run_retrieval_observed(
    spec: &ProblemSpec,
    choice: OracleChoice,
    limits: &Limits,
    observer: &mut dyn FnMut(&IterationInfo),
) -> Result<RetrievalReport> {
    let spectral = has_spectral(&spec.set);
    if spectral && spec.eps_tol <= 0.0 {
        return Err(Error::Config(
            "spectral atomic sets need eps_tol > 0: retrieval only terminates up to a positive tolerance".into(),
        ));
    }
    if limits.max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let cadence = limits.cadence.unwrap_or(if spectral { 5 } else { 1 });
    if cadence == 0 {
        return Err(Error::Config("cadence must be at least 1".into()));
    }
    let start = Instant::now();
    // setup (norm estimates) is not part of nMat
    spec.atomic_opnorm()?;
    let mut oracle = build_oracle(spec, choice)?;
    spec.op.counter_reset();
    // the 1e-9 slack absorbs roundoff when alpha + eps_tol is exactly zero
    let threshold = spec.alpha + spec.eps_tol + TOL.feasibility;

    let mut trace = Vec::new();
    let mut last: Option<(crate::atoms::ReducedModel, ReducedSolution)> = None;
    let mut status = Status::MaxIter;
    let mut message = None;
    let mut iterations = 0;
    for t in 1..=limits.max_iter {
        iterations = t;
        let state = match oracle.step() {
            Ok(s) => s.clone(),
            Err(e) => {
                status = Status::OracleFailed;
                message = Some(e.to_string());
                break;
            }
        };
        let eps = state.d_star_lower().and_then(|dl| epsilon_bound(spec, &state.dual, dl).ok());
        let mut row = TraceRow {
            t,
            d_value: state.dual.d_value,
            eps_bound: eps,
            f_reduced: None,
            feasible: false,
            nmat: 0,
        };
        let mut solved = None;
        if t % cadence == 0 {
            let outcome = spec
                .set
                .ess_model(&state.z, &spec.budget)
                .and_then(|model| solve_reduced_with(spec, &model, &limits.reduced).map(|sol| (model, sol)));
            match outcome {
                Ok((model, sol)) => {
                    row.f_reduced = Some(sol.f_value);
                    row.feasible = sol.f_value <= threshold;
                    if let Some(p) = primal_value(spec, &sol) {
                        oracle.offer_primal(p);
                    }
                    solved = Some((model, sol));
                }
                Err(e) => {
                    status = Status::OracleFailed;
                    message = Some(e.to_string());
                }
            }
        }
        row.nmat = spec.op.counter_snapshot().nmat();
        observer(&IterationInfo { t, state: &state, eps_bound: eps, solution: solved.as_ref().map(|(_, s)| s) });
        let feasible = row.feasible;
        trace.push(row);
        if solved.is_some() {
            last = solved;
        }
        if status == Status::OracleFailed {
            break;
        }
        if feasible {
            status = Status::FeasibleFound;
            break;
        }
    }

    let mut blocks = Vec::new();
    let mut block_x = Vec::new();
    let (mut f_value, mut x) = (None, None);
    if let Some((model, sol)) = &last {
        for (block, c) in model.blocks.iter().zip(&sol.coeffs) {
            blocks.push(block_report(block, c)?);
            block_x.push(block.synthesize(model.shape, c)?);
        }
        f_value = Some(sol.f_value);
        x = Some(sol.x.clone());
    }
    Ok(RetrievalReport {
        status,
        iterations,
        card: blocks.iter().map(|b| b.card).sum(),
        blocks,
        f_value,
        alpha: spec.alpha,
        eps_tol: spec.eps_tol,
        b_norm: spec.b.norm(),
        nmat: spec.op.counter_snapshot().nmat(),
        wall_time_s: start.elapsed().as_secs_f64(),
        message,
        trace,
        x,
        block_x,
    })
}

/// Primal objective of a reduced solution, when it is feasible and its
/// gauge is computable.
fn primal_value(spec: &ProblemSpec, sol: &ReducedSolution) -> Option<f64> {
    let g = match solver_gauge(&spec.set, &sol.x) {
        Ok(Gauge::Finite(g)) => g,
        _ => return None,
    };
    match spec.formulation {
        Formulation::P1 { lambda } => Some(sol.f_value + lambda * g),
        Formulation::P2 { tau } => (g <= tau).then_some(sol.f_value),
        Formulation::P3 => (sol.f_value <= spec.alpha + TOL.feasibility).then_some(g),
    }
}

/// Coefficients below this fraction of the largest are not counted as atoms.
const CARD_TOL: f64 = 1e-10;

fn block_report(block: &ModelBlock, coeffs: &[f64]) -> Result<BlockReport> {
    let mut atoms = Vec::new();
    let mut values = Vec::new();
    match block {
        ModelBlock::Polyhedral { atoms: basis, .. } => {
            for (a, &c) in basis.iter().zip(coeffs) {
                // free coefficients fold their sign into the atom
                match (a, c < 0.0) {
                    (Atom::SignedUnit { index, sign }, true) => {
                        let flipped = if *sign == Sign::Plus { Sign::Minus } else { Sign::Plus };
                        atoms.push(Atom::SignedUnit { index: *index, sign: flipped });
                        values.push(-c);
                    }
                    _ => {
                        atoms.push(a.clone());
                        values.push(c);
                    }
                }
            }
        }
        ModelBlock::Spectral { left, right, domain } => {
            let k = left.ncols();
            let c = Mat::from_column_slice(k, k, coeffs);
            if let Domain::PsdMatrix(_) = domain {
                let (vals, vecs) = crate::spectral::sorted_eigen(&((&c + c.transpose()) * 0.5));
                for (i, &l) in vals.iter().enumerate() {
                    let v = left * vecs.column(i);
                    atoms.push(Atom::rank1_sym(v.iter().copied().collect())?);
                    values.push(l);
                }
            } else {
                let (u, s, v) = crate::spectral::jacobi_svd(&c);
                for (i, &si) in s.iter().enumerate() {
                    let uu = left * u.column(i);
                    let vv = right * v.column(i);
                    atoms.push(Atom::rank1(uu.iter().copied().collect(), vv.iter().copied().collect())?);
                    values.push(si);
                }
            }
        }
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let card = values.iter().filter(|v| v.abs() > CARD_TOL * scale).count();
    Ok(BlockReport { domain: block.domain(), atoms, coefficients: values, card })
}

/// Value of the truncated-SVD Hausdorff bound; `degenerate` when there is no
/// spectral gap, in which case the bound is the trivial sqrt(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffBound {
    pub value: f64,
    pub degenerate: bool,
}

/// `sqrt(2 min(eps / (sigma_1 - sigma_{k+1}), 1))`.
pub fn hausdorff_bound(svd: &TruncatedSvd, eps: f64) -> HausdorffBound {
    hausdorff_bound_from_gap(svd.sigma1() - svd.sigma_next_bound, eps)
}

pub fn hausdorff_bound_from_gap(gap: f64, eps: f64) -> HausdorffBound {
    let eps = eps.max(0.0);
    if eps == 0.0 && gap > 0.0 {
        return HausdorffBound { value: 0.0, degenerate: false };
    }
    if !(gap > 0.0) {
        return HausdorffBound { value: 2f64.sqrt(), degenerate: true };
    }
    HausdorffBound { value: (2.0 * (eps / gap).min(1.0)).sqrt(), degenerate: false }
}

/// Objective excess bound for a reconstruction in a cone at Hausdorff
/// distance `d` from the optimal support:
/// `sqrt(2 L alpha) ||M|| d sqrt(s) ||X*|| + (L ||M||^2 / 2) d^2 s ||X*||^2`.
pub fn recovery_excess_bound(d: f64, support_size: usize, x_star_norm: f64, m_norm: f64, l: f64, alpha: f64) -> f64 {
    let s = support_size as f64;
    (2.0 * l * alpha).sqrt() * m_norm * d * s.sqrt() * x_star_norm
        + 0.5 * l * m_norm * m_norm * d * d * s * x_star_norm * x_star_norm
}

/// [`recovery_excess_bound`] with `d` from [`hausdorff_bound`].
pub fn hausdorff_recovery_bound(
    svd: &TruncatedSvd,
    eps: f64,
    support_size: usize,
    x_star_norm: f64,
    m_norm: f64,
    l: f64,
    alpha: f64,
) -> f64 {
    recovery_excess_bound(hausdorff_bound(svd, eps).value, support_size, x_star_norm, m_norm, l, alpha)
}

/// `sigma(M* y) - max { <a, M* y> : a not in support }` over a finite set.
/// Nonpositive values mean the instance is degenerate.
pub fn nondegeneracy_margin(set: &AtomicSet, op: &LinOp, y_star: &Mat, support: &[Atom]) -> Result<f64> {
    let z = op.adjoint_uncounted(y_star)?;
    margin_from_z(set, &z, support)
}

pub fn margin_from_z(set: &AtomicSet, z: &Mat, support: &[Atom]) -> Result<f64> {
    let sigma = set.support_value(z)?;
    let candidates: Vec<Atom> = match set {
        AtomicSet::SignedCanonical { .. } => (0..z.len())
            .flat_map(|i| [Sign::Plus, Sign::Minus].map(|sign| Atom::SignedUnit { index: i, sign }))
            .collect(),
        AtomicSet::NonnegCanonical { .. } => (0..z.len()).map(|i| Atom::NonnegUnit { index: i }).collect(),
        _ => return Err(Error::Unsupported("nondegeneracy margin needs a finite atomic set".into())),
    };
    let best_other = candidates
        .iter()
        .filter(|a| !support.contains(a))
        .map(|a| a.inner(z))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(sigma - best_other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::Budget;
    use crate::linops::Shape;
    use crate::objectives::Loss;
    use std::sync::Arc;

    fn v(x: &[f64]) -> Mat {
        Mat::from_column_slice(x.len(), 1, x)
    }

    #[test]
    fn single_atom_terminates_at_first_iteration() {
        let op = Arc::new(LinOp::gaussian(8, 12, 3).unwrap());
        let b = op.forward_basis(4).unwrap() * 2.0;
        let spec = ProblemSpec::new(Loss::HalfSqNorm, op, b, AtomicSet::signed(12), Formulation::P3, 0.0, Budget::uniform(1), 0.0)
            .unwrap();
        let rep = run_retrieval(&spec, OracleChoice::Auto, &Limits::default()).unwrap();
        assert_eq!(rep.status, Status::FeasibleFound);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.blocks[0].atoms, vec![Atom::SignedUnit { index: 4, sign: Sign::Plus }]);
        assert!((rep.blocks[0].coefficients[0] - 2.0).abs() < 1e-10);
        assert!(rep.f_value.unwrap() < 1e-20);
    }

    #[test]
    fn spectral_needs_positive_tolerance() {
        let op = Arc::new(LinOp::identity_on(Shape::matrix(3, 3)));
        let spec = ProblemSpec::new(
            Loss::HalfSqNorm,
            op,
            Mat::identity(3, 3),
            AtomicSet::spectral(3, 3),
            Formulation::P3,
            0.1,
            Budget::uniform(1),
            0.0,
        )
        .unwrap();
        assert!(matches!(run_retrieval(&spec, OracleChoice::Auto, &Limits::default()), Err(Error::Config(_))));
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_bound_from_gap(1.0, 0.0).value, 0.0);
        assert_eq!(hausdorff_bound_from_gap(1.0, 1.0).value, 2f64.sqrt());
        assert_eq!(hausdorff_bound_from_gap(1.0, 0.5).value, 1.0);
        assert!(hausdorff_bound_from_gap(0.0, 0.1).degenerate);
        assert_eq!(recovery_excess_bound(0.0, 3, 1.0, 1.0, 1.0, 0.5), 0.0);
        assert!((recovery_excess_bound(0.1, 1, 1.0, 1.0, 1.0, 0.0) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn margin_examples() {
        let set = AtomicSet::signed(3);
        let plus1 = [Atom::SignedUnit { index: 0, sign: Sign::Plus }];
        assert!((margin_from_z(&set, &v(&[1.0, 0.2, 0.1]), &plus1).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(margin_from_z(&set, &v(&[1.0, -1.0, 0.1]), &plus1).unwrap(), 0.0);
    }

    #[test]
    fn csv_has_fixed_header_and_empty_fields() {
        let rep = RetrievalReport {
            status: Status::MaxIter,
            iterations: 1,
            blocks: vec![],
            card: 0,
            f_value: None,
            alpha: 0.0,
            eps_tol: 0.0,
            b_norm: 1.0,
            nmat: 2,
            wall_time_s: 0.0,
            message: None,
            trace: vec![TraceRow { t: 1, d_value: -0.5, eps_bound: None, f_reduced: Some(0.25), feasible: false, nmat: 2 }],
            x: None,
            block_x: vec![],
        };
        assert_eq!(rep.trace_csv().unwrap(), "t,d_value,eps_bound,f_reduced,feasible,nMat\n1,-0.5,,0.25,false,2\n");
    }
}
