//! Losses, primal and dual objectives, feasibility tests, the epsilon
//! bounds on exposure error and the beta bracket.
//!
//! Sign convention: the dual objectives `d_i` are minimized, and weak
//! duality reads `p_i(x) + d_i(y) >= 0`.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::atoms::{AtomicSet, Budget, Gauge};
use crate::error::{check_shape, Error, Result};
use crate::linops::{LinOp, Mat};
use crate::spectral;

/// Tolerances used throughout the library.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Dual feasibility slack on the support-function constraint.
    pub feasibility: f64,
    /// Slack for exposure containment checks.
    pub containment: f64,
}

pub const TOL: Tolerances = Tolerances { feasibility: 1e-9, containment: 1e-10 };

/// Power-of-Gram squarings used for operator norm bounds.
pub const NORM_TRIALS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `f(r) = ||r||^2 / 2`, L = 1.
    #[default]
    HalfSqNorm,
}

impl Loss {
    pub fn value(&self, r: &Mat) -> f64 {
        match self {
            Loss::HalfSqNorm => 0.5 * r.norm_squared(),
        }
    }

    pub fn grad(&self, r: &Mat) -> Mat {
        match self {
            Loss::HalfSqNorm => r.clone(),
        }
    }

    /// Convex conjugate `f*`.
    pub fn conjugate(&self, y: &Mat) -> f64 {
        match self {
            Loss::HalfSqNorm => 0.5 * y.norm_squared(),
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Loss::HalfSqNorm => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Formulation {
    /// `min f(b - Mx) + lambda gamma(x)`.
    P1 { lambda: f64 },
    /// `min f(b - Mx) s.t. gamma(x) <= tau`.
    P2 { tau: f64 },
    /// `min gamma(x) s.t. f(b - Mx) <= alpha`.
    P3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualForm {
    D1,
    D2,
    D3,
}

impl Formulation {
    pub fn dual_form(&self) -> DualForm {
        match self {
            Formulation::P1 { .. } => DualForm::D1,
            Formulation::P2 { .. } => DualForm::D2,
            Formulation::P3 => DualForm::D3,
        }
    }
}

/// A cardinality-constrained fitting problem together with its convex
/// relaxation.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub loss: Loss,
    pub op: Arc<LinOp>,
    pub b: Mat,
    pub set: AtomicSet,
    pub formulation: Formulation,
    /// Misfit level: the P3 constraint and the retrieval target.
    pub alpha: f64,
    pub budget: Budget,
    /// Retrieval tolerance epsilon (>= 0).
    pub eps_tol: f64,
    opnorm: Arc<OnceLock<f64>>,
}

impl ProblemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        loss: Loss,
        op: Arc<LinOp>,
        b: Mat,
        set: AtomicSet,
        formulation: Formulation,
        alpha: f64,
        budget: Budget,
        eps_tol: f64,
    ) -> Result<Self> {
        set.validate()?;
        let r = op.range();
        check_shape((r.rows, r.cols), (b.nrows(), b.ncols()))?;
        let s = set.shape();
        let d = op.domain();
        check_shape((s.rows, s.cols), (d.rows, d.cols))?;
        match formulation {
            Formulation::P1 { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                return Err(Error::Argument(format!("lambda = {lambda} must be positive")))
            }
            Formulation::P2 { tau } if !(tau > 0.0 && tau.is_finite()) => {
                return Err(Error::Argument(format!("tau = {tau} must be positive")))
            }
            _ => {}
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!("alpha = {alpha} must be nonnegative")));
        }
        if !(eps_tol >= 0.0 && eps_tol.is_finite()) {
            return Err(Error::Argument(format!("eps_tol = {eps_tol} must be nonnegative")));
        }
        let n_ops = set.operands().len();
        if budget.0.is_empty() || budget.0.iter().any(|&k| k == 0) || (budget.0.len() != 1 && budget.0.len() != n_ops) {
            return Err(Error::Argument(format!("budget {:?} does not fit {n_ops} operand(s)", budget.0)));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("observation has nonfinite entries".into()));
        }
        Ok(ProblemSpec { loss, op, b, set, formulation, alpha, budget, eps_tol, opnorm: Arc::new(OnceLock::new()) })
    }

    pub fn dual_form(&self) -> DualForm {
        self.formulation.dual_form()
    }

    /// `||M||_A` (exact for finite sets, an upper bound otherwise). Cached.
    pub fn atomic_opnorm(&self) -> Result<f64> {
        if let Some(v) = self.opnorm.get() {
            return Ok(*v);
        }
        let v = self.set.atomic_opnorm(&self.op, NORM_TRIALS)?;
        Ok(*self.opnorm.get_or_init(|| v))
    }

    /// Misfit `f(b - Mx)` given the precomputed image `Mx`.
    pub fn misfit_from_image(&self, mx: &Mat) -> f64 {
        self.loss.value(&(&self.b - mx))
    }
}

/// Dual iterate with optional beta bracket and gap estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub y: Mat,
    pub beta_bracket: Option<(f64, f64)>,
    pub d_value: f64,
    pub gap_bound: Option<f64>,
}

/// Gauge used by the solvers. For the nonnegative cone this is the sum of
/// entries (the gauge of the finite dictionary `{e_i}`), which is what the
/// level-set and proximal oracles need; `AtomicSet::gauge_value` keeps the
/// indicator semantics.
pub fn solver_gauge(set: &AtomicSet, x: &Mat) -> Result<Gauge> {
    match set {
        AtomicSet::NonnegCanonical { .. } => {
            if x.iter().all(|&v| v >= 0.0) {
                Ok(Gauge::Finite(x.sum()))
            } else {
                Ok(Gauge::Infinite)
            }
        }
        _ => set.gauge_value(x),
    }
}

/// Primal objective `p_i(x)`; `None` means infeasible (+infinity).
pub fn primal_objective(spec: &ProblemSpec, x: &Mat) -> Result<Option<f64>> {
    let mx = spec.op.forward(x)?;
    primal_objective_from_image(spec, x, &mx)
}

pub fn primal_objective_from_image(spec: &ProblemSpec, x: &Mat, mx: &Mat) -> Result<Option<f64>> {
    let g = solver_gauge(&spec.set, x)?;
    let fit = spec.misfit_from_image(mx);
    Ok(match (spec.formulation, g) {
        (_, Gauge::Infinite) => None,
        (Formulation::P1 { lambda }, Gauge::Finite(g)) => Some(fit + lambda * g),
        (Formulation::P2 { tau }, Gauge::Finite(g)) => (g <= tau * (1.0 + 1e-12)).then_some(fit),
        (Formulation::P3, Gauge::Finite(g)) => (fit <= spec.alpha * (1.0 + 1e-12) + 1e-300).then_some(g),
    })
}

/// `d_3` minimized over `beta > 0` in closed form: `sqrt(2 alpha) ||y|| - <b, y>`.
pub fn d3_inf(spec: &ProblemSpec, y: &Mat) -> f64 {
    match spec.loss {
        Loss::HalfSqNorm => (2.0 * spec.alpha).sqrt() * y.norm() - spec.b.dot(y),
    }
}

/// Dual objective. `z` may carry a precomputed `M* y` (needed by D2 only);
/// `beta` is required semantics for D3, where `None` takes the infimum
/// over beta.
pub fn dual_objective_with(spec: &ProblemSpec, y: &Mat, z: Option<&Mat>, beta: Option<f64>) -> Result<f64> {
    let r = spec.op.range();
    check_shape((r.rows, r.cols), (y.nrows(), y.ncols()))?;
    let base = spec.loss.conjugate(y) - spec.b.dot(y);
    match spec.formulation {
        Formulation::P1 { .. } => Ok(base),
        Formulation::P2 { tau } => {
            let owned;
            let z = match z {
                Some(z) => z,
                None => {
                    owned = spec.op.adjoint(y)?;
                    &owned
                }
            };
            Ok(base + tau * constraint_support(&spec.set, z)?)
        }
        Formulation::P3 => match beta {
            None => Ok(d3_inf(spec, y)),
            Some(beta) if beta > 0.0 && beta.is_finite() => {
                Ok(beta * (spec.loss.conjugate(&(y / beta)) + spec.alpha) - spec.b.dot(y))
            }
            Some(beta) => Err(Error::Argument(format!("beta = {beta} must be positive"))),
        },
    }
}

pub fn dual_objective(spec: &ProblemSpec, y: &Mat, beta: Option<f64>) -> Result<f64> {
    dual_objective_with(spec, y, None, beta)
}

/// Support value entering the dual constraints. Cone sets use the
/// support of the finite dictionary, `max(max z, 0)`.
pub fn constraint_support(set: &AtomicSet, z: &Mat) -> Result<f64> {
    set.support_value(z)
}

/// Bound on the support value for dual feasibility: lambda for D1, 1 for D3,
/// none for D2.
pub fn dual_radius(spec: &ProblemSpec) -> Option<f64> {
    match spec.formulation {
        Formulation::P1 { lambda } => Some(lambda),
        Formulation::P2 { .. } => None,
        Formulation::P3 => Some(1.0),
    }
}

pub fn dual_feasible(spec: &ProblemSpec, y: &Mat) -> Result<bool> {
    match dual_radius(spec) {
        None => Ok(true),
        Some(_) => dual_feasible_z(spec, &spec.op.adjoint(y)?),
    }
}

/// Feasibility test from a precomputed `M* y`.
pub fn dual_feasible_z(spec: &ProblemSpec, z: &Mat) -> Result<bool> {
    match dual_radius(spec) {
        None => Ok(true),
        Some(r) => Ok(constraint_support(&spec.set, z)? <= r + TOL.feasibility),
    }
}

/// Upper bound on the exposure error epsilon_i, with `d_value - d_star_lower`
/// standing in for the unknown dual gap (negative gaps clamp to 0).
pub fn epsilon_bound(spec: &ProblemSpec, state: &DualState, d_star_lower: f64) -> Result<f64> {
    let m = spec.atomic_opnorm()?;
    let l = spec.loss.lipschitz();
    match spec.dual_form() {
        DualForm::D1 => Ok(m * (2.0 * l * (state.d_value - d_star_lower).max(0.0)).sqrt()),
        DualForm::D2 => Ok(2.0 * m * (2.0 * l * (state.d_value - d_star_lower).max(0.0)).sqrt()),
        DualForm::D3 => {
            let (lo, hi) = state
                .beta_bracket
                .ok_or_else(|| Error::State("epsilon_3 needs a beta bracket".into()))?;
            if !(lo > 0.0) {
                return Err(Error::State("beta bracket has no positive lower end".into()));
            }
            // the bracket holds the penalty sigma(M* grad f(r*)); the
            // perspective variable of d3 is its reciprocal
            let (p_lo, p_hi) = (1.0 / hi, 1.0 / lo);
            let d_lo = dual_objective_with(spec, &state.y, None, Some(p_lo))?;
            let d_hi = dual_objective_with(spec, &state.y, None, Some(p_hi))?;
            let gap = (d_lo.max(d_hi) - d_star_lower).max(0.0);
            Ok(2.0 * m * (2.0 * p_hi * l * gap).sqrt())
        }
    }
}

/// `beta_j = sigma(M* grad f(b - M x_j))` at two level-set endpoints,
/// returned in increasing order.
pub fn beta_bracket(spec: &ProblemSpec, x_lo: &Mat, x_hi: &Mat) -> Result<(f64, f64)> {
    let mut out = [0.0; 2];
    for (o, x) in out.iter_mut().zip([x_lo, x_hi]) {
        let g = spec.loss.grad(&(&spec.b - spec.op.forward(x)?));
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("nonfinite loss gradient".into()));
        }
        *o = spec.set.support_value(&spec.op.adjoint(&g)?)?;
    }
    Ok((out[0].min(out[1]), out[0].max(out[1])))
}

/// Nuclear norm, used for spectral gauge evaluations on small matrices.
pub fn nuclear_norm(x: &Mat) -> f64 {
    spectral::singular_values(x).iter().sum()
}
