//! Synthetic problem generators: basis pursuit denoise instances shaped
//! like the Sparco problems, low-rank matrix completion and robust PCA.
//!
//! Misfit levels are given as relative residual norms: `alpha_rel = 1e-3`
//! means `||b - M x|| <= 1e-3 ||b||`, i.e. `f = ||r||^2 / 2 <= (1e-3 ||b||)^2 / 2`.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atoms::{Atom, AtomicSet, Budget, Sign};
use crate::error::{Error, Result};
use crate::linops::{LinOp, Mat, Shape};
use crate::objectives::{Formulation, Loss, ProblemSpec};

/// Generated problem with its planted solution.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: ProblemSpec,
    pub x_true: Mat,
    /// Planted atoms (polyhedral instances only).
    pub support: Vec<Atom>,
    /// RPCA only: `[L, S]`.
    pub components: Vec<Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BpdnKind {
    /// Piecewise-constant signal under an orthonormal Haar synthesis.
    Blocksig,
    /// Cosines plus spikes: `[idct, I]`, 1024 x 2048.
    Cosspike,
    /// Gaussian ensemble 300 x 1024 applied to `[idct, I]`.
    Gcosspike,
    /// 20 signed spikes under a 600 x 2560 Gaussian ensemble.
    Sgnspike,
    /// Spike train convolved with a smooth kernel.
    Spiketrn,
    /// One-dimensional sanity instance.
    Smoke,
}

/// Half squared norm corresponding to a relative residual level.
pub fn misfit_level(rel: f64, b: &Mat) -> f64 {
    0.5 * (rel * b.norm()).powi(2)
}

fn check_rel(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("{name} = {v} must be finite and nonnegative")))
    }
}

fn signed_amplitude(rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    s * (1.0 + z.abs())
}

/// Planted sparse signal with `k` nonzeros at distinct random positions.
fn sparse_signal(rng: &mut ChaCha8Rng, n: usize, k: usize, amp: impl Fn(&mut ChaCha8Rng) -> f64) -> Mat {
    let mut x = Mat::zeros(n, 1);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    for i in idx {
        x[i] = amp(rng);
    }
    x
}

fn support_of(x: &Mat) -> Vec<Atom> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| Atom::SignedUnit { index: i, sign: Sign::of(*v) })
        .collect()
}

/// Basis pursuit denoise instance, `b = M x + noise`.
pub fn bpdn(kind: BpdnKind, seed: u64, noise: f64, alpha_rel: f64, formulation: Formulation) -> Result<Instance> {
    check_rel("noise", noise)?;
    check_rel("alpha_rel", alpha_rel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op_seed: u64 = rng.random();
    let (op, x) = match kind {
        BpdnKind::Sgnspike => {
            let op = LinOp::gaussian(600, 2560, op_seed)?;
            let x = sparse_signal(&mut rng, 2560, 20, |r| if r.random_bool(0.5) { 1.0 } else { -1.0 });
            (op, x)
        }
        BpdnKind::Blocksig => {
            let n = 1024;
            let mut jumps = sample(&mut rng, n - 1, 7).into_vec();
            jumps.sort_unstable();
            let mut signal = Mat::zeros(n, 1);
            let mut level = signed_amplitude(&mut rng);
            let mut next = jumps.iter().peekable();
            for i in 0..n {
                if next.peek().is_some_and(|&&j| j + 1 == i) {
                    next.next();
                    level = signed_amplitude(&mut rng);
                }
                signal[i] = level;
            }
            let mut x = LinOp::haar(n)?.forward_uncounted(&signal)?;
            // exact zeros for the planted support
            x.iter_mut().for_each(|v| {
                if v.abs() < 1e-12 {
                    *v = 0.0
                }
            });
            (LinOp::ihaar(n)?, x)
        }
        BpdnKind::Cosspike | BpdnKind::Gcosspike => {
            let n = 1024;
            let dict = LinOp::hstack(vec![Arc::new(LinOp::idct(n)?), Arc::new(LinOp::identity(n))])?;
            let mut x = Mat::zeros(2 * n, 1);
            let cos = sparse_signal(&mut rng, n, 60, signed_amplitude);
            let spikes = sparse_signal(&mut rng, n, 53, signed_amplitude);
            x.view_mut((0, 0), (n, 1)).copy_from(&cos);
            x.view_mut((n, 0), (n, 1)).copy_from(&spikes);
            let op = if kind == BpdnKind::Cosspike {
                dict
            } else {
                LinOp::compose(Arc::new(LinOp::gaussian(300, n, op_seed)?), Arc::new(dict))?
            };
            (op, x)
        }
        BpdnKind::Spiketrn => {
            let n = 1024;
            let kernel: Vec<f64> = (-7i32..=7).map(|t| (-(t * t) as f64 / 8.0).exp()).collect();
            let nrm = kernel.iter().map(|v| v * v).sum::<f64>().sqrt();
            let kernel = kernel.iter().map(|v| v / nrm).collect();
            (LinOp::conv1d(kernel, n)?, sparse_signal(&mut rng, n, 35, signed_amplitude))
        }
        BpdnKind::Smoke => (LinOp::identity(1), Mat::from_element(1, 1, 1.5)),
    };
    let mut b = op.forward_uncounted(&x)?;
    if noise > 0.0 {
        let nd = Normal::new(0.0, noise).map_err(|e| Error::Argument(e.to_string()))?;
        b.iter_mut().for_each(|v| *v += nd.sample(&mut rng));
    }
    let support = support_of(&x);
    let k = support.len();
    let alpha = misfit_level(alpha_rel, &b);
    let n = op.domain().len();
    let spec = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(op),
        b,
        AtomicSet::signed(n),
        formulation,
        alpha,
        Budget::uniform(k),
        0.0,
    )?;
    Ok(Instance { spec, x_true: x, support, components: Vec::new() })
}

/// `k` signed unit spikes in `n` observed through an `m x n` Gaussian ensemble.
/// A scaled-down sgnspike for interactive use.
pub fn gaussian_spikes(m: usize, n: usize, k: usize, seed: u64, noise: f64, alpha_rel: f64) -> Result<Instance> {
    if m == 0 || n == 0 || k == 0 || k > n {
        return Err(Error::Argument(format!("bad spike dims {m}x{n} with {k} spikes")));
    }
    check_rel("noise", noise)?;
    check_rel("alpha_rel", alpha_rel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = LinOp::gaussian(m, n, rng.random())?;
    let x = sparse_signal(&mut rng, n, k, |r| if r.random_bool(0.5) { 1.0 } else { -1.0 });
    let mut b = op.forward_uncounted(&x)?;
    if noise > 0.0 {
        let nd = Normal::new(0.0, noise).map_err(|e| Error::Argument(e.to_string()))?;
        b.iter_mut().for_each(|v| *v += nd.sample(&mut rng));
    }
    let support = support_of(&x);
    let alpha = misfit_level(alpha_rel, &b);
    let spec = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(op),
        b,
        AtomicSet::signed(n),
        Formulation::P3,
        alpha,
        Budget::uniform(k),
        0.0,
    )?;
    Ok(Instance { spec, x_true: x, support, components: Vec::new() })
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Mat {
    Mat::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionParams {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    /// Fraction of entries observed, in (0, 1].
    pub fraction: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_alpha_rel")]
    pub alpha_rel: f64,
    #[serde(default = "default_eps_rel")]
    pub eps_tol_rel: f64,
}

fn default_alpha_rel() -> f64 {
    1e-3
}

fn default_eps_rel() -> f64 {
    1e-3
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            m: 60,
            n: 40,
            rank: 5,
            fraction: 0.5,
            noise: 0.0,
            alpha_rel: default_alpha_rel(),
            eps_tol_rel: default_eps_rel(),
        }
    }
}

/// Rank-`r` matrix `A B^T` observed on a uniform random subset of entries.
pub fn matrix_completion(p: &CompletionParams, seed: u64, formulation: Formulation) -> Result<Instance> {
    if p.m == 0 || p.n == 0 || p.rank == 0 || p.rank > p.m.min(p.n) {
        return Err(Error::Argument(format!("bad completion dims {}x{} rank {}", p.m, p.n, p.rank)));
    }
    if !(p.fraction > 0.0 && p.fraction <= 1.0) {
        return Err(Error::Argument(format!("observation fraction {} not in (0, 1]", p.fraction)));
    }
    check_rel("noise", p.noise)?;
    check_rel("alpha_rel", p.alpha_rel)?;
    check_rel("eps_tol_rel", p.eps_tol_rel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(&mut rng, p.m, p.rank);
    let bf = gaussian_matrix(&mut rng, p.n, p.rank);
    let x = &a * bf.transpose();
    let shape = Shape::matrix(p.m, p.n);
    let count = ((p.fraction * (p.m * p.n) as f64).round() as usize).max(1);
    let omega = sample(&mut rng, p.m * p.n, count).into_iter().map(|i| shape.position(i)).collect();
    let op = LinOp::entry_mask(shape, omega)?;
    let mut b = op.forward_uncounted(&x)?;
    if p.noise > 0.0 {
        let nd = Normal::new(0.0, p.noise).map_err(|e| Error::Argument(e.to_string()))?;
        b.iter_mut().for_each(|v| *v += nd.sample(&mut rng));
        // the mask is a projection; keep unobserved entries at zero
        b = op.forward_uncounted(&b)?;
    }
    let alpha = misfit_level(p.alpha_rel, &b);
    let eps_tol = misfit_level(p.eps_tol_rel, &b);
    let spec = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(op),
        b,
        AtomicSet::spectral(p.m, p.n),
        formulation,
        alpha,
        Budget::uniform(p.rank),
        eps_tol,
    )?;
    Ok(Instance { spec, x_true: x, support: Vec::new(), components: Vec::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcaParams {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    /// Fraction of corrupted entries.
    pub sparsity: f64,
    /// Weight on the spectral atoms; defaults to `1 / sqrt(max(m, n))`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_alpha_rel")]
    pub alpha_rel: f64,
    #[serde(default = "default_eps_rel")]
    pub eps_tol_rel: f64,
}

impl Default for RpcaParams {
    fn default() -> Self {
        RpcaParams {
            m: 40,
            n: 40,
            rank: 2,
            sparsity: 0.05,
            lambda: None,
            alpha_rel: default_alpha_rel(),
            eps_tol_rel: default_eps_rel(),
        }
    }
}

/// Fully observed `L + S` with `L` of rank `r` and `S` sparse with entries
/// of magnitude in [1, 2]. The atomic set is the union of weighted rank-one
/// atoms and signed entries.
pub fn rpca(p: &RpcaParams, seed: u64, formulation: Formulation) -> Result<Instance> {
    if p.m == 0 || p.n == 0 || p.rank == 0 || p.rank > p.m.min(p.n) {
        return Err(Error::Argument(format!("bad rpca dims {}x{} rank {}", p.m, p.n, p.rank)));
    }
    if !(p.sparsity >= 0.0 && p.sparsity < 1.0) {
        return Err(Error::Argument(format!("sparsity {} not in [0, 1)", p.sparsity)));
    }
    check_rel("alpha_rel", p.alpha_rel)?;
    check_rel("eps_tol_rel", p.eps_tol_rel)?;
    let lambda = p.lambda.unwrap_or(1.0 / (p.m.max(p.n) as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = gaussian_matrix(&mut rng, p.m, p.rank) * gaussian_matrix(&mut rng, p.rank, p.n);
    let count = (p.sparsity * (p.m * p.n) as f64).round() as usize;
    let mut s = Mat::zeros(p.m, p.n);
    let mut idx = sample(&mut rng, p.m * p.n, count).into_vec();
    idx.sort_unstable();
    for i in idx {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        s[i] = sign * rng.random_range(1.0..2.0);
    }
    let shape = Shape::matrix(p.m, p.n);
    let b = &l + &s;
    let set = AtomicSet::weighted_sum(lambda, AtomicSet::spectral(p.m, p.n), AtomicSet::signed_on(shape))?;
    let alpha = misfit_level(p.alpha_rel, &b);
    let eps_tol = misfit_level(p.eps_tol_rel, &b);
    let spec = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(LinOp::identity_on(shape)),
        b.clone(),
        set,
        formulation,
        alpha,
        Budget(vec![p.rank, count.max(1)]),
        eps_tol,
    )?;
    Ok(Instance { spec, x_true: b, support: support_of(&s), components: vec![l, s] })
}

/// Instance from the partial-SVD counterexample: `min ||X - B||^2 / 2` over
/// the unit nuclear ball, where the top singular pair of `B` is tilted by
/// `eps` toward the last coordinate.
#[derive(Debug, Clone)]
pub struct PartialSvdCounterexample {
    pub spec: ProblemSpec,
    pub x_star: Mat,
    pub y_star: Mat,
    /// Feasible dual point whose singular vectors are the coordinate axes.
    pub y_hat: Mat,
}

pub fn partial_svd_counterexample(n: usize, eps: f64) -> Result<PartialSvdCounterexample> {
    if n < 2 {
        return Err(Error::Argument(format!("n = {n} must be at least 2")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Argument(format!("eps = {eps} not in (0, 1)")));
    }
    let mut u = Mat::identity(n, n);
    let (c, s) = ((1.0 - eps).sqrt(), eps.sqrt());
    u[(0, 0)] = c;
    u[(n - 1, 0)] = s;
    u[(0, n - 1)] = -s;
    u[(n - 1, n - 1)] = c;
    let diag = |first: f64| {
        let mut d = vec![0.1; n];
        d[0] = first;
        Mat::from_diagonal(&nalgebra::DVector::from_vec(d))
    };
    let b = &u * diag(2.0) * u.transpose();
    let u1 = u.column(0).into_owned();
    let x_star = &u1 * u1.transpose();
    let y_star = &b - &x_star;
    let spec = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(LinOp::identity_on(Shape::matrix(n, n))),
        b.clone(),
        AtomicSet::spectral(n, n),
        Formulation::P2 { tau: 1.0 },
        0.5 * y_star.norm_squared(),
        Budget::uniform(1),
        0.0,
    )?;
    Ok(PartialSvdCounterexample { spec, x_star, y_star, y_hat: diag(1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgnspike_shape_and_support() {
        let inst = bpdn(BpdnKind::Sgnspike, 1, 0.0, 1e-3, Formulation::P3).unwrap();
        assert_eq!(inst.spec.op.range(), Shape::vector(600));
        assert_eq!(inst.spec.op.domain(), Shape::vector(2560));
        assert_eq!(inst.support.len(), 20);
        assert!(inst.x_true.iter().all(|v| *v == 0.0 || v.abs() == 1.0));
        let want = 0.5 * (1e-3 * inst.spec.b.norm()).powi(2);
        assert!((inst.spec.alpha - want).abs() <= 1e-15 * want);
    }

    #[test]
    fn generators_are_deterministic() {
        for kind in [BpdnKind::Blocksig, BpdnKind::Cosspike, BpdnKind::Gcosspike, BpdnKind::Spiketrn] {
            let a = bpdn(kind, 5, 0.01, 1e-3, Formulation::P3).unwrap();
            let b = bpdn(kind, 5, 0.01, 1e-3, Formulation::P3).unwrap();
            assert_eq!(a.spec.b, b.spec.b);
            assert_eq!(a.support, b.support);
            assert!(!a.support.is_empty());
        }
    }

    #[test]
    fn blocksig_support_is_small() {
        let inst = bpdn(BpdnKind::Blocksig, 2, 0.0, 1e-3, Formulation::P3).unwrap();
        // each jump touches at most one coefficient per Haar level
        assert!(inst.support.len() <= 7 * 10 + 1, "{}", inst.support.len());
        let r = &inst.spec.b - inst.spec.op.forward_uncounted(&inst.x_true).unwrap();
        assert!(r.norm() < 1e-10);
    }

    #[test]
    fn completion_and_rpca_shapes() {
        let mc = matrix_completion(&CompletionParams::default(), 0, Formulation::P3).unwrap();
        assert_eq!(mc.spec.op.mask_indices().unwrap().len(), 1200);
        assert_eq!(crate::spectral::singular_values(&mc.x_true).iter().filter(|s| **s > 1e-8).count(), 5);
        let rp = rpca(&RpcaParams::default(), 0, Formulation::P3).unwrap();
        assert_eq!(rp.support.len(), 80);
        assert_eq!(rp.spec.budget.0, vec![2, 80]);
        assert!(matches!(
            matrix_completion(&CompletionParams { fraction: 1.5, ..Default::default() }, 0, Formulation::P3),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gaussian_spikes_are_consistent() {
        let inst = gaussian_spikes(40, 100, 4, 3, 0.0, 1e-3).unwrap();
        assert_eq!(inst.support.len(), 4);
        assert!(inst.x_true.iter().all(|v| *v == 0.0 || v.abs() == 1.0));
        let r = &inst.spec.b - inst.spec.op.forward_uncounted(&inst.x_true).unwrap();
        assert!(r.norm() < 1e-12);
        assert!(gaussian_spikes(4, 3, 5, 0, 0.0, 0.0).is_err());
    }

    #[test]
    fn counterexample_dual_pair() {
        let ce = partial_svd_counterexample(10, 0.01).unwrap();
        assert!((ce.x_star.trace() - 1.0).abs() < 1e-12);
        // Y* = U diag(1, 0.1, ...) U^T and ||Y_hat - Y*|| = O(sqrt(eps))
        let sv = crate::spectral::singular_values(&ce.y_star);
        assert!((sv[0] - 1.0).abs() < 1e-12 && (sv[1] - 0.1).abs() < 1e-12);
        let d = (&ce.y_hat - &ce.y_star).norm();
        assert!(d > 0.1 && d < 0.2, "{d}");
    }
}
