//! Dual oracles and reduced-problem solvers.

mod gauge_ops;
mod levelset;
mod prox;
mod reduced;

pub use gauge_ops::{project_gauge_ball, project_l1_ball, prox_gauge};
pub use levelset::{LevelSetInner, LevelSetOracle};
pub use prox::{ProxOptions, ProxOracle};
pub use reduced::{solve_reduced, solve_reduced_with, ReducedOptions, ReducedSolution};

use serde::{Deserialize, Serialize};

use crate::atoms::Atom;
use crate::error::Result;
use crate::linops::{LinOp, Mat};
use crate::objectives::{DualForm, DualState, ProblemSpec};

/// Level-set bracket on the optimal gauge value tau*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBracket {
    /// Level at which the conditional-gradient subproblem currently runs.
    pub tau: f64,
    pub tau_lo: f64,
    pub tau_hi: Option<f64>,
}

/// Snapshot emitted by a dual oracle after each step.
#[derive(Debug, Clone)]
pub struct OracleState {
    pub form: DualForm,
    pub dual: DualState,
    /// `M* y` for the emitted `y`.
    pub z: Mat,
    pub iteration: usize,
    pub level: Option<LevelBracket>,
    /// Bounded summary of the last conditional-gradient primal iterate.
    pub cg_summary: Vec<(Atom, f64)>,
    /// Best certified primal objective value seen so far.
    pub best_primal: Option<f64>,
    pub converged: bool,
}

impl OracleState {
    /// Lower bound on the optimal dual value from weak duality.
    pub fn d_star_lower(&self) -> Option<f64> {
        self.best_primal.map(|p| -p)
    }
}

/// A source of improving dual-feasible iterates.
pub trait DualOracle {
    fn step(&mut self) -> Result<&OracleState>;
    fn state(&self) -> &OracleState;
    /// Record the objective value of a primal point found elsewhere.
    fn offer_primal(&mut self, value: f64);
}

fn merge_primal(best: &mut Option<f64>, value: f64) {
    if value.is_finite() && best.is_none_or(|b| value < b) {
        *best = Some(value);
    }
}

/// `M a`, using the operator's basis fast path for canonical atoms.
pub(crate) fn forward_atom(op: &LinOp, atom: &Atom) -> Result<Mat> {
    let (w, base) = atom.unwrap_scaled();
    match base {
        Atom::SignedUnit { index, sign } => Ok(op.forward_basis(*index)? * (w * sign.value())),
        Atom::NonnegUnit { index } => Ok(op.forward_basis(*index)? * w),
        _ => op.forward(&atom.to_dense(op.domain())?),
    }
}

/// `x += c * a` in place.
pub(crate) fn add_atom(x: &mut Mat, atom: &Atom, c: f64) -> Result<()> {
    let (w, base) = atom.unwrap_scaled();
    match base {
        Atom::SignedUnit { index, sign } => x[*index] += c * w * sign.value(),
        Atom::NonnegUnit { index } => x[*index] += c * w,
        Atom::Rank1 { u, v } => {
            for (j, vj) in v.iter().enumerate() {
                for (i, ui) in u.iter().enumerate() {
                    x[(i, j)] += c * w * ui * vj;
                }
            }
        }
        Atom::Rank1Sym { v } => {
            for (j, vj) in v.iter().enumerate() {
                for (i, vi) in v.iter().enumerate() {
                    x[(i, j)] += c * w * vi * vj;
                }
            }
        }
        Atom::Scaled { .. } => unreachable!("unwrapped above"),
    }
    Ok(())
}

/// Build the default oracle for a spec: level-set conditional gradient for
/// P3, proximal gradient for P1/P2.
pub fn default_oracle(spec: &ProblemSpec) -> Result<Box<dyn DualOracle>> {
    match spec.dual_form() {
        DualForm::D3 => Ok(Box::new(LevelSetOracle::new(spec.clone())?)),
        _ => Ok(Box::new(ProxOracle::new(spec.clone(), ProxOptions::default())?)),
    }
}
