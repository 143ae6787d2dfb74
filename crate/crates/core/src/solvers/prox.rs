//! Proximal-gradient dual oracle for the penalized (D1) and constrained (D2)
//! duals.
//!
//! One outer step is a gradient step on `f*(y) - <b, y>` followed by the
//! prox of the nonsmooth part. By Moreau's identity both proxes reduce to a
//! gauge-regularized least-squares problem in the primal variable, which is
//! solved by warm-started FISTA. The inner solution also gives a primal
//! estimate, so each step tightens the duality gap from both sides.

use crate::error::{Error, Result};
use crate::linops::Mat;
use crate::objectives::{
    constraint_support, dual_feasible, dual_objective_with, primal_objective_from_image, DualForm, DualState, Formulation,
    ProblemSpec, NORM_TRIALS,
};

use super::gauge_ops::{project_gauge_ball, prox_gauge};
use super::{merge_primal, DualOracle, OracleState};

#[derive(Debug, Clone, Copy)]
pub struct ProxOptions {
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    pub max_backtracks: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions { inner_max_iter: 100, inner_tol: 1e-10, max_backtracks: 30 }
    }
}

pub struct ProxOracle {
    spec: ProblemSpec,
    opts: ProxOptions,
    /// Squared spectral-norm bound of `M` (inner Lipschitz constant).
    lip: f64,
    eta: f64,
    /// Warm start for the inner solve, in units of the primal estimate.
    x_prev: Mat,
    state: OracleState,
}

impl ProxOracle {
    pub fn new(spec: ProblemSpec, opts: ProxOptions) -> Result<Self> {
        let form = spec.dual_form();
        if form == DualForm::D3 {
            return Err(Error::Argument("the proximal oracle handles D1 and D2 only".into()));
        }
        if spec.set.operands().len() > 1 {
            return Err(Error::Unsupported("proximal oracle on a weighted-sum set".into()));
        }
        let nrm = spec.op.opnorm_upper(NORM_TRIALS);
        let lip = (nrm * nrm).max(f64::MIN_POSITIVE);
        let eta = 1.0 / (1.0 / spec.loss.lipschitz() + lip);
        let range = spec.op.range();
        let mut best = None;
        // x = 0 is feasible for P1 and P2 with value f(b)
        merge_primal(&mut best, spec.loss.value(&spec.b));
        let state = OracleState {
            form,
            dual: DualState { y: range.zeros(), beta_bracket: None, d_value: 0.0, gap_bound: best },
            z: spec.op.domain().zeros(),
            iteration: 0,
            level: None,
            cg_summary: Vec::new(),
            best_primal: best,
            converged: false,
        };
        Ok(ProxOracle { x_prev: spec.op.domain().zeros(), spec, opts, lip, eta, state })
    }

    /// Start from a given dual point instead of `y = 0`. It must be feasible.
    pub fn starting_at(spec: ProblemSpec, opts: ProxOptions, y: Mat) -> Result<Self> {
        let mut o = Self::new(spec, opts)?;
        if !dual_feasible(&o.spec, &y)? {
            return Err(Error::Argument("starting dual point is infeasible".into()));
        }
        let z = o.spec.op.adjoint_uncounted(&y)?;
        o.state.dual.d_value = dual_objective_with(&o.spec, &y, Some(&z), None)?;
        o.state.dual.y = y;
        o.state.z = z;
        o.state.dual.gap_bound = o.state.best_primal.map(|p| o.state.dual.d_value + p);
        Ok(o)
    }

    pub fn step_size(&self) -> f64 {
        self.eta
    }

    /// Inner problem: `min_x ||w - M x||^2 / 2 + lambda gamma(x)` (D1) or the
    /// same objective over `gamma(x) <= radius` (D2).
    fn inner(&self, w: &Mat, x0: Mat) -> Result<Mat> {
        let op = &self.spec.op;
        let step = 1.0 / self.lip;
        let apply = |v: &Mat| -> Result<Mat> {
            match self.spec.formulation {
                Formulation::P1 { lambda } => prox_gauge(&self.spec.set, v, step * lambda),
                Formulation::P2 { tau } => project_gauge_ball(&self.spec.set, v, self.eta * tau),
                Formulation::P3 => unreachable!(),
            }
        };
        let mut x = apply(&x0)?;
        let mut v = x.clone();
        let mut t = 1.0f64;
        for _ in 0..self.opts.inner_max_iter {
            let g = op.adjoint(&(op.forward(&v)? - w))?;
            let x_new = apply(&(&v - g * step))?;
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let dx = &x_new - &x;
            // gradient-style restart keeps the momentum from overshooting
            let restart = dx.dot(&(&v - &x_new)) > 0.0;
            v = if restart { x_new.clone() } else { &x_new + dx.clone() * ((t - 1.0) / t_new) };
            t = if restart { 1.0 } else { t_new };
            let done = dx.norm() <= self.opts.inner_tol * x_new.norm().max(1.0);
            x = x_new;
            if done {
                break;
            }
        }
        Ok(x)
    }
}

impl DualOracle for ProxOracle {
    fn state(&self) -> &OracleState {
        &self.state
    }

    fn offer_primal(&mut self, value: f64) {
        merge_primal(&mut self.state.best_primal, value);
        self.state.dual.gap_bound = self.state.best_primal.map(|p| self.state.dual.d_value + p);
    }

    fn step(&mut self) -> Result<&OracleState> {
        let spec = self.spec.clone();
        let spec = &spec;
        let y = self.state.dual.y.clone();
        let d_cur = self.state.dual.d_value;
        let mut eta = self.eta;
        let mut accepted = None;
        for _ in 0..=self.opts.max_backtracks {
            self.eta = eta;
            let grad = &spec.b - &y;
            let w = &y + grad * eta;
            let x_hat = self.inner(&w, &self.x_prev * eta)?;
            let mx_hat = spec.op.forward(&x_hat)?;
            let mut y_new = &w - &mx_hat;
            let mut z_new = spec.op.adjoint(&y_new)?;
            if let Formulation::P1 { lambda } = spec.formulation {
                let s = constraint_support(&spec.set, &z_new)?;
                if s > lambda {
                    y_new *= lambda / s;
                    z_new *= lambda / s;
                }
            }
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("nonfinite dual iterate".into()));
            }
            let d_new = dual_objective_with(spec, &y_new, Some(&z_new), None)?;
            let x_p = &x_hat / eta;
            let p = primal_objective_from_image(spec, &x_p, &(&mx_hat / eta))?;
            if d_new <= d_cur {
                accepted = Some((y_new, z_new, d_new, x_p, p));
                break;
            }
            if let Some(p) = p {
                merge_primal(&mut self.state.best_primal, p);
            }
            eta *= 0.5;
        }
        self.state.iteration += 1;
        match accepted {
            Some((y_new, z_new, d_new, x_p, p)) => {
                if let Some(p) = p {
                    merge_primal(&mut self.state.best_primal, p);
                }
                let moved = (&y_new - &y).norm();
                self.state.dual.y = y_new;
                self.state.z = z_new;
                self.state.dual.d_value = d_new;
                self.x_prev = x_p;
                self.state.converged = moved <= 1e-12 * self.state.dual.y.norm().max(1.0);
            }
            None => self.state.converged = true,
        }
        self.state.dual.gap_bound = self.state.best_primal.map(|p| self.state.dual.d_value + p);
        Ok(&self.state)
    }
}
