//! Level-set oracle for the gauge-minimization dual (D3).
//!
//! The primal iterate lives in the gauge ball of radius `tau` and is moved
//! either by conditional-gradient steps or, for single spectral sets, by
//! accelerated projected-gradient steps. Both cost one adjoint and one
//! forward application per step. The scaled residual `r / sigma(M* r)` is
//! always D3-feasible, and its closed-form value `d3_inf` gives a lower bound
//! on `tau*` that drives the level upward. A feasible iterate caps `tau*`
//! from above, and the conditional-gradient gaps at both ends bracket the
//! optimal multiplier beta*.

use serde::{Deserialize, Serialize};

use crate::atoms::{Atom, AtomicSet, Gauge};
use crate::error::{Error, Result};
use crate::linops::Mat;
use crate::objectives::{d3_inf, solver_gauge, DualForm, DualState, ProblemSpec, NORM_TRIALS};

use super::gauge_ops::project_gauge_ball;
use super::{add_atom, forward_atom, merge_primal, DualOracle, LevelBracket, OracleState};

/// Primal subproblem solver inside the level-set loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSetInner {
    ConditionalGradient,
    /// Needs a Euclidean projection onto the gauge ball, so not available
    /// for weighted sums.
    ProjectedGradient,
}

impl LevelSetInner {
    /// Projected gradient for single spectral sets, conditional gradient
    /// otherwise.
    pub fn default_for(set: &AtomicSet) -> Self {
        match set {
            AtomicSet::SpectralAsym { .. } | AtomicSet::SpectralPsd { .. } => LevelSetInner::ProjectedGradient,
            _ => LevelSetInner::ConditionalGradient,
        }
    }
}

/// Momentum state of the projected-gradient inner solver.
struct Momentum {
    x_prev: Mat,
    z_prev: Mat,
    t: f64,
    tau: f64,
    fit: f64,
}

/// Atoms kept in the conditional-gradient summary.
const SUMMARY_CAP: usize = 256;
/// Relative bracket width at which the oracle reports convergence.
const LEVEL_TOL: f64 = 1e-6;
/// Fraction of the bracket by which the working level exceeds the
/// certified lower bound.
const OVERSHOOT: f64 = 0.5;
/// Relative overshoot before any feasible point is known. Kept small: dual
/// candidates from levels far above tau* are poor.
const PROBE: f64 = 1e-2;

pub struct LevelSetOracle {
    spec: ProblemSpec,
    norm: f64,
    x: Mat,
    mx: Mat,
    /// Upper bound on the gauge of `x`.
    gauge_bound: f64,
    tau: f64,
    tau_lo: f64,
    tau_hi: Option<f64>,
    beta_lo: Option<f64>,
    beta_hi: Option<f64>,
    summary: Vec<(Atom, f64)>,
    inner: LevelSetInner,
    /// Squared spectral-norm bound of `M` (projected-gradient step).
    lip: f64,
    momentum: Option<Momentum>,
    state: OracleState,
}

impl LevelSetOracle {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let inner = LevelSetInner::default_for(&spec.set);
        Self::with_inner(spec, inner)
    }

    pub fn with_inner(spec: ProblemSpec, inner: LevelSetInner) -> Result<Self> {
        if inner == LevelSetInner::ProjectedGradient && spec.set.operands().len() > 1 {
            return Err(Error::Unsupported("projected gradient over a weighted-sum ball".into()));
        }
        if spec.dual_form() != DualForm::D3 {
            return Err(Error::Argument("the level-set oracle handles D3 only".into()));
        }
        let norm = spec.atomic_opnorm()?;
        let dom = spec.op.domain();
        let range = spec.op.range();
        let mut tau_hi = None;
        let mut best = None;
        if spec.loss.value(&spec.b) <= spec.alpha {
            tau_hi = Some(0.0);
            best = Some(0.0);
        }
        let state = OracleState {
            form: DualForm::D3,
            dual: DualState { y: range.zeros(), beta_bracket: None, d_value: 0.0, gap_bound: best },
            z: dom.zeros(),
            iteration: 0,
            level: Some(LevelBracket { tau: 0.0, tau_lo: 0.0, tau_hi }),
            cg_summary: Vec::new(),
            best_primal: best,
            converged: tau_hi == Some(0.0),
        };
        Ok(LevelSetOracle {
            x: dom.zeros(),
            mx: range.zeros(),
            gauge_bound: 0.0,
            tau: 0.0,
            tau_lo: 0.0,
            tau_hi,
            beta_lo: None,
            beta_hi: None,
            summary: Vec::new(),
            inner,
            lip: spec.op.opnorm_upper(NORM_TRIALS).powi(2).max(f64::MIN_POSITIVE),
            momentum: None,
            norm,
            spec,
            state,
        })
    }

    /// Current conditional-gradient primal iterate.
    pub fn primal(&self) -> &Mat {
        &self.x
    }

    fn push_summary(&mut self, atom: Atom, theta: f64) {
        for (_, c) in self.summary.iter_mut() {
            *c *= 1.0 - theta;
        }
        let add = theta * self.tau;
        if let Some(entry) = self.summary.iter_mut().find(|(a, _)| *a == atom) {
            entry.1 += add;
        } else {
            self.summary.push((atom, add));
        }
        self.summary.retain(|(_, c)| *c > 0.0);
        if self.summary.len() > SUMMARY_CAP {
            self.summary.sort_by(|a, b| b.1.total_cmp(&a.1));
            self.summary.truncate(SUMMARY_CAP);
        }
    }

    fn cg_step(&mut self, atom: Atom, r: &Mat) -> Result<()> {
        if self.tau <= 0.0 {
            return Ok(());
        }
        let ma = forward_atom(&self.spec.op, &atom)?;
        let dir = ma * self.tau - &self.mx;
        let dd = dir.norm_squared();
        // exact line search on the quadratic misfit
        let theta = if dd > 0.0 { (r.dot(&dir) / dd).clamp(0.0, 1.0) } else { 0.0 };
        if theta > 0.0 {
            self.x *= 1.0 - theta;
            add_atom(&mut self.x, &atom, theta * self.tau)?;
            self.mx += dir * theta;
            self.gauge_bound = (1.0 - theta) * self.gauge_bound + theta * self.tau;
            self.push_summary(atom, theta);
        }
        Ok(())
    }

    /// One FISTA step on `min f(b - M x)` over the ball of radius tau. The
    /// gradient at the extrapolated point is a combination of the adjoints
    /// already computed, so no extra operator applications are needed.
    fn pg_step(&mut self, z: Mat, fit: f64) -> Result<()> {
        let restart = match &self.momentum {
            Some(m) => m.tau != self.tau || fit > m.fit,
            None => true,
        };
        let (t, x_prev, z_prev) = match self.momentum.take() {
            Some(m) if !restart => (m.t, m.x_prev, m.z_prev),
            _ => (1.0, self.x.clone(), z.clone()),
        };
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        let v = &self.x + (&self.x - &x_prev) * beta;
        let z_v = &z * (1.0 + beta) - &z_prev * beta;
        let x_new = project_gauge_ball(&self.spec.set, &(v + z_v / self.lip), self.tau)?;
        self.mx = self.spec.op.forward(&x_new)?;
        self.gauge_bound = match solver_gauge(&self.spec.set, &x_new)? {
            Gauge::Finite(g) => g.min(self.tau),
            Gauge::Infinite => self.tau,
        };
        let x_old = std::mem::replace(&mut self.x, x_new);
        self.momentum = Some(Momentum { x_prev: x_old, z_prev: z, t: t_new, tau: self.tau, fit });
        Ok(())
    }

    fn publish(&mut self) {
        let st = &mut self.state;
        st.level = Some(LevelBracket { tau: self.tau, tau_lo: self.tau_lo, tau_hi: self.tau_hi });
        st.dual.beta_bracket = match (self.beta_lo, self.beta_hi) {
            (Some(lo), Some(hi)) if lo > 0.0 => Some((lo.min(hi), hi)),
            _ => None,
        };
        st.dual.gap_bound = st.best_primal.map(|p| st.dual.d_value + p);
        st.cg_summary = self.summary.clone();
        st.converged = match self.tau_hi {
            Some(hi) => (hi - self.tau_lo) / hi.max(1.0) <= LEVEL_TOL,
            None => false,
        };
    }
}

impl DualOracle for LevelSetOracle {
    fn state(&self) -> &OracleState {
        &self.state
    }

    fn offer_primal(&mut self, value: f64) {
        merge_primal(&mut self.state.best_primal, value);
        if let Some(p) = self.state.best_primal {
            self.tau_hi = Some(self.tau_hi.map_or(p, |h| h.min(p)));
        }
        self.publish();
    }

    fn step(&mut self) -> Result<&OracleState> {
        let spec = &self.spec;
        let r = &spec.b - &self.mx;
        let z = spec.op.adjoint(&r)?;
        let lmo = match self.inner {
            LevelSetInner::ConditionalGradient => spec.set.best_atom(&z)?,
            LevelSetInner::ProjectedGradient => None,
        };
        let sigma = match self.inner {
            LevelSetInner::ConditionalGradient => lmo.as_ref().map_or(0.0, |(_, s)| *s),
            LevelSetInner::ProjectedGradient => spec.set.support_value(&z)?,
        };
        let r_mx = r.dot(&self.mx);
        let fit = spec.loss.value(&r);
        self.state.iteration += 1;

        // x lies in the ball of radius gauge_bound; the conditional-gradient
        // gap there lower-bounds the level value function
        let gap = (self.gauge_bound * sigma - r_mx).max(0.0);
        let lower = fit - gap;
        let l = spec.loss.lipschitz();
        if sigma > 0.0 {
            let y = &r / sigma;
            let d = d3_inf(spec, &y);
            if d < self.state.dual.d_value {
                self.state.dual.d_value = d;
                self.state.dual.y = y;
                self.state.z = &z / sigma;
            }
            self.tau_lo = self.tau_lo.max(-d);
        }
        if lower > spec.alpha {
            // gauge_bound < tau*: the multiplier there bounds beta* from
            // above, and the convex minorant of the value function pushes
            // the lower level up
            let bh = sigma + self.norm * (2.0 * l * gap).sqrt();
            self.beta_hi = Some(self.beta_hi.map_or(bh, |h| h.min(bh)));
            if bh > 0.0 {
                self.tau_lo = self.tau_lo.max(self.gauge_bound + (lower - spec.alpha) / bh);
            }
        }
        if fit <= spec.alpha {
            merge_primal(&mut self.state.best_primal, self.gauge_bound);
            self.tau_hi = Some(self.tau_hi.map_or(self.gauge_bound, |h| h.min(self.gauge_bound)));
            // gauge_bound >= tau*, so its multiplier bounds beta* from below
            let bl = sigma - self.norm * (2.0 * l * gap).sqrt();
            self.beta_lo = Some(self.beta_lo.map_or(bl, |b| b.max(bl)));
        }
        // run above the certified lower level so that feasible
        // points, and with them the upper bracket, keep appearing
        self.tau = match self.tau_hi {
            Some(hi) => (self.tau_lo + OVERSHOOT * (hi - self.tau_lo)).min(hi),
            None => self.tau_lo * (1.0 + PROBE),
        };

        match self.inner {
            LevelSetInner::ConditionalGradient => {
                if let Some((atom, _)) = lmo {
                    self.cg_step(atom, &r)?;
                }
            }
            LevelSetInner::ProjectedGradient => self.pg_step(z, fit)?,
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("nonfinite level-set iterate".into()));
        }
        self.publish();
        Ok(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::{AtomicSet, Budget};
    use crate::linops::LinOp;
    use crate::objectives::{dual_feasible, epsilon_bound, Formulation, Loss};
    use std::sync::Arc;

    fn spec(alpha_rel: f64) -> ProblemSpec {
        let op = Arc::new(LinOp::gaussian(30, 60, 11).unwrap());
        let mut x = Mat::zeros(60, 1);
        x[5] = 1.0;
        x[40] = -1.5;
        let b = op.forward_uncounted(&x).unwrap();
        let alpha = alpha_rel * b.norm_squared();
        ProblemSpec::new(Loss::HalfSqNorm, op, b, AtomicSet::signed(60), Formulation::P3, alpha, Budget::uniform(2), 0.0)
            .unwrap()
    }

    /// Runs up to `n` steps checking monotonicity, dual feasibility and the
    /// bracket order. Returns whether an epsilon bound was ever available.
    fn run(o: &mut LevelSetOracle, s: &ProblemSpec, n: usize) -> bool {
        let mut prev = 0.0;
        let mut eps_seen = false;
        for _ in 0..n {
            let st = o.step().unwrap().clone();
            assert!(st.dual.d_value <= prev);
            prev = st.dual.d_value;
            assert!(dual_feasible(s, &st.dual.y).unwrap());
            let lvl = st.level.unwrap();
            if let Some(hi) = lvl.tau_hi {
                assert!(lvl.tau_lo <= hi * (1.0 + 1e-9));
            }
            if let (Some(dl), Some(_)) = (st.d_star_lower(), st.dual.beta_bracket) {
                let e = epsilon_bound(s, &st.dual, dl).unwrap();
                assert!(e.is_finite());
                eps_seen = true;
            }
            if st.converged {
                break;
            }
        }
        eps_seen
    }

    #[test]
    fn lower_level_approaches_tau_star() {
        let s = spec(1e-4);
        let mut o = LevelSetOracle::new(s.clone()).unwrap();
        run(&mut o, &s, 2000);
        let lvl = o.state().level.unwrap();
        // tau* is close to the l1 norm of the planted signal
        assert!((lvl.tau_lo - 2.5).abs() < 0.1, "{lvl:?}");
        // the planted signal is feasible, so offering it closes the bracket
        o.offer_primal(2.5);
        let lvl = o.state().level.unwrap();
        assert_eq!(lvl.tau_hi, Some(2.5));
        assert!(lvl.tau_lo <= 2.5);
    }

    #[test]
    fn loose_misfit_gives_upper_level_and_epsilon() {
        let s = spec(1e-2);
        let mut o = LevelSetOracle::new(s.clone()).unwrap();
        let eps_seen = run(&mut o, &s, 2000);
        let lvl = o.state().level.unwrap();
        assert!(lvl.tau_hi.is_some(), "{lvl:?}");
        assert!(eps_seen);
    }

    #[test]
    fn trivial_when_b_is_small() {
        let op = Arc::new(LinOp::identity(4));
        let b = Mat::from_element(4, 1, 0.01);
        let s = ProblemSpec::new(Loss::HalfSqNorm, op, b, AtomicSet::signed(4), Formulation::P3, 1.0, Budget::uniform(1), 0.0)
            .unwrap();
        let o = LevelSetOracle::new(s).unwrap();
        assert!(o.state().converged);
        assert_eq!(o.state().best_primal, Some(0.0));
    }

    #[test]
    fn projected_gradient_on_nuclear_ball() {
        use crate::linops::Shape;
        // b = 3 u v^T, so tau* = 3 - ||r|| with ||r|| = sqrt(2 alpha) = 0.1
        let u = Mat::from_fn(6, 1, |i, _| if i == 1 { 1.0 } else { 0.0 });
        let v = Mat::from_fn(1, 5, |_, j| if j == 3 { 1.0 } else { 0.0 });
        let b = u * v * 3.0;
        let op = Arc::new(LinOp::identity_on(Shape::matrix(6, 5)));
        let s = ProblemSpec::new(Loss::HalfSqNorm, op, b, AtomicSet::spectral(6, 5), Formulation::P3, 0.005, Budget::uniform(1), 0.0)
            .unwrap();
        let mut o = LevelSetOracle::new(s.clone()).unwrap();
        assert_eq!(o.inner, LevelSetInner::ProjectedGradient);
        run(&mut o, &s, 500);
        let lvl = o.state().level.unwrap();
        assert!((lvl.tau_lo - 2.9).abs() < 1e-4, "{lvl:?}");
        assert!(LevelSetOracle::with_inner(s, LevelSetInner::ConditionalGradient).is_ok());
    }
}
