//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string so the page needs no generated TypeScript types.

use atomret::generate::{self, RpcaParams};
use atomret::linops::Mat;
use atomret::objectives::{dual_objective, epsilon_bound, DualState, Formulation};
use atomret::retrieval::{hausdorff_recovery_bound, run_retrieval, Limits, OracleChoice, RetrievalReport};
use atomret::solvers::{solve_reduced_with, ReducedOptions};
use atomret::spectral::truncated_svd;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct TracePoint {
    t: usize,
    d_value: f64,
    eps_bound: Option<f64>,
    f_reduced: Option<f64>,
}

fn trace(rep: &RetrievalReport) -> Vec<TracePoint> {
    rep.trace
        .iter()
        .map(|r| TracePoint { t: r.t, d_value: r.d_value, eps_bound: r.eps_bound, f_reduced: r.f_reduced })
        .collect()
}

/// Row-major copy for the page's canvas code.
fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Serialize)]
pub struct SparseResult {
    status: String,
    iterations: usize,
    x_true: Vec<f64>,
    x_hat: Vec<f64>,
    support_true: Vec<usize>,
    support_found: Vec<usize>,
    exact: bool,
    rel_error: f64,
    nmat: u64,
    trace: Vec<TracePoint>,
}

pub fn sparse_recovery_impl(m: usize, n: usize, k: usize, seed: u64, max_iter: usize) -> Result<SparseResult, String> {
    let inst = generate::gaussian_spikes(m, n, k, seed, 0.0, 1e-3).map_err(|e| e.to_string())?;
    let limits = Limits { max_iter, ..Default::default() };
    let rep = run_retrieval(&inst.spec, OracleChoice::Auto, &limits).map_err(|e| e.to_string())?;
    let x_hat = rep.x.clone().unwrap_or_else(|| Mat::zeros(n, 1));
    let nonzero = |x: &Mat, tol: f64| -> Vec<usize> {
        x.iter().enumerate().filter(|(_, v)| v.abs() > tol).map(|(i, _)| i).collect()
    };
    let support_true = nonzero(&inst.x_true, 0.0);
    let support_found = nonzero(&x_hat, 1e-6);
    Ok(SparseResult {
        status: format!("{:?}", rep.status),
        iterations: rep.iterations,
        exact: support_true == support_found,
        rel_error: (&x_hat - &inst.x_true).norm() / inst.x_true.norm(),
        x_true: inst.x_true.iter().copied().collect(),
        x_hat: x_hat.iter().copied().collect(),
        support_true,
        support_found,
        nmat: rep.nmat,
        trace: trace(&rep),
    })
}

#[derive(Serialize)]
pub struct CounterexamplePoint {
    eps: f64,
    excess: f64,
    bound: f64,
    dual_gap: f64,
}

/// Retrieval from the axis-aligned dual point of the partial-SVD
/// counterexample, for each tilt in `eps`.
pub fn counterexample_impl(n: usize, eps: &[f64]) -> Result<Vec<CounterexamplePoint>, String> {
    let s = |e: atomret::error::Error| e.to_string();
    eps.iter()
        .map(|&e| {
            let ce = generate::partial_svd_counterexample(n, e).map_err(s)?;
            let spec = &ce.spec;
            let model = spec.set.ess_model(&ce.y_hat, &spec.budget).map_err(s)?;
            let opts = ReducedOptions { radius: Some(1.0), ..Default::default() };
            let sol = solve_reduced_with(spec, &model, &opts).map_err(s)?;
            let f_star = 0.5 * (&spec.b - &ce.x_star).norm_squared();
            let d_hat = dual_objective(spec, &ce.y_hat, None).map_err(s)?;
            let state = DualState { y: ce.y_hat.clone(), beta_bracket: None, d_value: d_hat, gap_bound: None };
            let eps_i = epsilon_bound(spec, &state, -f_star).map_err(s)?;
            let svd = truncated_svd(&ce.y_hat, 1, 1e-12).map_err(s)?;
            let bound = hausdorff_recovery_bound(&svd, eps_i, 1, ce.x_star.norm(), 1.0, 1.0, f_star);
            Ok(CounterexamplePoint { eps: e, excess: sol.f_value - f_star, bound, dual_gap: d_hat + f_star })
        })
        .collect()
}

#[derive(Serialize)]
pub struct RpcaResult {
    status: String,
    iterations: usize,
    observed: Vec<Vec<f64>>,
    low_rank_true: Vec<Vec<f64>>,
    low_rank_hat: Vec<Vec<f64>>,
    sparse_hat: Vec<Vec<f64>>,
    rel_error_low_rank: f64,
    trace: Vec<TracePoint>,
}

pub fn rpca_impl(m: usize, rank: usize, sparsity: f64, seed: u64, max_iter: usize) -> Result<RpcaResult, String> {
    let params = RpcaParams { m, n: m, rank, sparsity, ..Default::default() };
    let inst = generate::rpca(&params, seed, Formulation::P3).map_err(|e| e.to_string())?;
    let limits = Limits { max_iter, ..Default::default() };
    let rep = run_retrieval(&inst.spec, OracleChoice::Auto, &limits).map_err(|e| e.to_string())?;
    let l = &inst.components[0];
    let zero = Mat::zeros(m, m);
    let lh = rep.block_x.first().unwrap_or(&zero);
    let sh = rep.block_x.get(1).unwrap_or(&zero);
    Ok(RpcaResult {
        status: format!("{:?}", rep.status),
        iterations: rep.iterations,
        observed: rows(&inst.spec.b),
        low_rank_true: rows(l),
        low_rank_hat: rows(lh),
        sparse_hat: rows(sh),
        rel_error_low_rank: (lh - l).norm() / l.norm(),
        trace: trace(&rep),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sparse_recovery(m: usize, n: usize, k: usize, seed: u64, max_iter: usize) -> Result<String, JsValue> {
    to_js(sparse_recovery_impl(m, n, k, seed, max_iter))
}

/// `eps` is a list of tilts, e.g. `[0.1, 0.01, 0.001]`.
#[wasm_bindgen]
pub fn counterexample_curve(n: usize, eps: Vec<f64>) -> Result<String, JsValue> {
    to_js(counterexample_impl(n, &eps))
}

#[wasm_bindgen]
pub fn rpca(m: usize, rank: usize, sparsity: f64, seed: u64, max_iter: usize) -> Result<String, JsValue> {
    to_js(rpca_impl(m, rank, sparsity, seed, max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_demo_recovers_support() {
        let r = sparse_recovery_impl(60, 200, 5, 1, 2000).unwrap();
        assert_eq!(r.status, "FeasibleFound");
        assert!(r.exact, "{:?} vs {:?}", r.support_found, r.support_true);
    }

    #[test]
    fn counterexample_excess_is_linear() {
        let pts = counterexample_impl(10, &[0.1, 0.01]).unwrap();
        for p in &pts {
            assert!(p.excess > 0.0 && p.excess <= p.bound);
        }
        let ratio = pts[0].excess / pts[1].excess;
        assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn rpca_demo_runs() {
        let r = rpca_impl(16, 1, 0.05, 0, 400).unwrap();
        assert_eq!(r.low_rank_hat.len(), 16);
        assert!(r.rel_error_low_rank.is_finite());
    }

    #[test]
    fn bad_arguments_are_errors() {
        assert!(sparse_recovery_impl(10, 5, 8, 0, 10).is_err());
        assert!(rpca_impl(4, 9, 0.1, 0, 10).is_err());
    }
}
