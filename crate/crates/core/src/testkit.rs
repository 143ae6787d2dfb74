//! Brute-force reference oracles for tests.
//!
//! Everything here is deliberately naive and only depends on the main
//! modules for data types and operator application. The spectral kernels
//! are a separate cyclic Jacobi implementation, and the polyhedral solves
//! enumerate supports.

use nalgebra::{DMatrix, DVector};

use crate::atoms::{AtomicSet, ModelBlock, ReducedModel};
use crate::error::{Error, Result};
use crate::linops::Mat;
use crate::objectives::{Formulation, ProblemSpec};

/// Caps and tolerances for the exhaustive modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub seed: u64,
    /// Largest dimension for support enumeration (at most 8).
    pub max_poly_dim: usize,
    /// Largest side of a spectral reference solve (at most 6).
    pub max_spectral_dim: usize,
    pub kkt_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { seed: 0, max_poly_dim: 8, max_spectral_dim: 6, kkt_tol: 1e-8 }
    }
}

/// Columns are the atoms of a finite set, with the gauge cost of each.
fn dictionary(set: &AtomicSet) -> Result<(Mat, Vec<f64>)> {
    match set {
        AtomicSet::SignedCanonical { shape } => {
            let n = shape.len();
            let mut d = Mat::zeros(n, 2 * n);
            for i in 0..n {
                d[(i, 2 * i)] = 1.0;
                d[(i, 2 * i + 1)] = -1.0;
            }
            Ok((d, vec![1.0; 2 * n]))
        }
        // the cone case: membership only
        AtomicSet::NonnegCanonical { shape } => Ok((Mat::identity(shape.len(), shape.len()), vec![0.0; shape.len()])),
        _ => Err(Error::Unsupported("LP oracle needs a finite canonical set".into())),
    }
}

fn subsets(n: usize, max: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, max: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        visit(cur);
        if cur.len() == max {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, max, cur, visit);
            cur.pop();
        }
    }
    rec(0, n, max, &mut Vec::new(), &mut visit);
}

/// `inf { sum c_a w_a : x = sum c_a a, c >= 0 }` by enumerating bases: every
/// vertex of the LP uses at most `n` linearly independent atoms. Returns
/// `f64::INFINITY` when `x` is outside the cone.
pub fn gauge_lp_oracle(set: &AtomicSet, x: &Mat) -> Result<f64> {
    let (d, cost) = dictionary(set)?;
    let n = d.nrows();
    if n > 8 || x.len() != n {
        return Err(Error::Argument(format!("LP oracle needs n <= 8 matching x, got n = {n}")));
    }
    let xv = DVector::from_column_slice(x.as_slice());
    let tol = 1e-10 * (1.0 + xv.amax());
    let mut best = f64::INFINITY;
    subsets(d.ncols(), n, |s| {
        let a = DMatrix::from_fn(n, s.len(), |i, j| d[(i, s[j])]);
        let g = a.transpose() * &a;
        let c = if s.is_empty() {
            DVector::zeros(0)
        } else {
            match g.clone().lu().solve(&(a.transpose() * &xv)) {
                Some(c) if (&g * &c - a.transpose() * &xv).amax() <= 1e-12 * (1.0 + xv.amax()) => c,
                _ => return,
            }
        };
        if (&a * &c - &xv).amax() > tol || c.iter().any(|&v| v < -tol) {
            return;
        }
        let v: f64 = s.iter().zip(c.iter()).map(|(&j, &cj)| cost[j] * cj.max(0.0)).sum();
        best = best.min(v);
    });
    Ok(best)
}

/// Full symmetric eigendecomposition by cyclic two-sided Jacobi rotations,
/// eigenvalues in decreasing order.
pub fn dense_eig_oracle(z: &Mat) -> (Vec<f64>, Mat) {
    let n = z.nrows();
    assert_eq!(n, z.ncols(), "square input");
    let mut a = (z + z.transpose()) * 0.5;
    let mut v = Mat::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    (vals, vecs)
}

/// Thin SVD `Z = U diag(s) V^T` with `min(m, n)` terms, from the Jacobi
/// eigendecomposition of the symmetric embedding `[0 Z; Z^T 0]`.
pub fn dense_svd_oracle(z: &Mat) -> (Mat, Vec<f64>, Mat) {
    let (m, n) = z.shape();
    let k = m.min(n);
    let mut h = Mat::zeros(m + n, m + n);
    h.view_mut((0, m), (m, n)).copy_from(z);
    h.view_mut((m, 0), (n, m)).copy_from(&z.transpose());
    let (vals, vecs) = dense_eig_oracle(&h);
    let smax = vals.first().copied().unwrap_or(0.0).max(0.0);
    let tiny = 1e-13 * smax.max(f64::MIN_POSITIVE);
    let mut u = Mat::zeros(m, k);
    let mut v = Mat::zeros(n, k);
    let mut s = vec![0.0; k];
    for j in 0..k {
        let w = vecs.column(j);
        let mut uj = w.rows(0, m).into_owned();
        let mut vj = w.rows(m, n).into_owned();
        if vals[j] > tiny && uj.norm() > 0.5 && vj.norm() > 0.5 {
            uj /= uj.norm();
            vj /= vj.norm();
            // one more half-step against Z sharpens the pairing
            let zv = z * &vj;
            s[j] = uj.dot(&zv).max(0.0);
            u.set_column(j, &uj);
            v.set_column(j, &vj);
        }
    }
    complete_orthonormal(&mut u, &s, tiny);
    complete_orthonormal(&mut v, &s, tiny);
    (u, s, v)
}

/// Replace the columns with zero singular value by an orthonormal
/// completion of the others.
fn complete_orthonormal(q: &mut Mat, s: &[f64], tiny: f64) {
    let (rows, k) = q.shape();
    let mut basis: Vec<DVector<f64>> = (0..k).filter(|&j| s[j] > tiny).map(|j| q.column(j).into_owned()).collect();
    let mut next = 0;
    for j in 0..k {
        if s[j] > tiny {
            continue;
        }
        while next < rows {
            let mut e = DVector::zeros(rows);
            e[next] = 1.0;
            next += 1;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&e);
                    e -= b * c;
                }
            }
            if e.norm() > 1e-8 {
                e /= e.norm();
                q.set_column(j, &e);
                basis.push(e);
                break;
            }
        }
    }
}

/// Certified optimum of a small instance.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: Mat,
    /// Dual optimum in the convention of the matching dual.
    pub y: Mat,
    pub primal: f64,
    pub dual: f64,
    pub kkt_residual: f64,
}

/// Independent dual value of `y` under the formulation of `spec`.
pub fn reference_dual_value(spec: &ProblemSpec, y: &Mat) -> Result<f64> {
    let m = dense_operator(spec)?;
    let yv = y.as_slice();
    let b = spec.b.as_slice();
    let yb: f64 = yv.iter().zip(b).map(|(a, c)| a * c).sum();
    let yy: f64 = yv.iter().map(|a| a * a).sum();
    let z = m.transpose() * DVector::from_column_slice(yv);
    let sigma = support(spec, &z)?;
    Ok(match spec.formulation {
        Formulation::P1 { .. } => 0.5 * yy - yb,
        Formulation::P2 { tau } => 0.5 * yy - yb + tau * sigma,
        Formulation::P3 => (2.0 * spec.alpha).sqrt() * yy.sqrt() - yb,
    })
}

/// Columns are `M e_j` in column-major order of the domain.
fn dense_operator(spec: &ProblemSpec) -> Result<DMatrix<f64>> {
    let dom = spec.op.domain();
    let rows = spec.op.range().len();
    let mut m = DMatrix::zeros(rows, dom.len());
    for j in 0..dom.len() {
        let mut e = dom.zeros();
        e[j] = 1.0;
        let col = spec.op.forward_uncounted(&e)?;
        m.column_mut(j).copy_from_slice(col.as_slice());
    }
    Ok(m)
}

fn support(spec: &ProblemSpec, z: &DVector<f64>) -> Result<f64> {
    let shape = spec.set.shape();
    Ok(match &spec.set {
        AtomicSet::SignedCanonical { .. } => z.amax(),
        AtomicSet::NonnegCanonical { .. } => z.max().max(0.0),
        AtomicSet::SpectralAsym { .. } => {
            let zm = Mat::from_column_slice(shape.rows, shape.cols, z.as_slice());
            dense_svd_oracle(&zm).1.first().copied().unwrap_or(0.0)
        }
        AtomicSet::SpectralPsd { .. } => {
            let zm = Mat::from_column_slice(shape.rows, shape.cols, z.as_slice());
            dense_eig_oracle(&zm).0[0].max(0.0)
        }
        AtomicSet::WeightedSum { .. } => return Err(Error::Unsupported("reference solve of a weighted sum".into())),
    })
}

/// Gauge in the solvers' convention (sum of entries on the nonnegative
/// cone), infinite off the domain.
fn gauge(set: &AtomicSet, x: &DVector<f64>) -> f64 {
    let shape = set.shape();
    match set {
        AtomicSet::SignedCanonical { .. } => x.iter().map(|v| v.abs()).sum(),
        AtomicSet::NonnegCanonical { .. } => {
            if x.iter().all(|&v| v >= -1e-14) {
                x.sum()
            } else {
                f64::INFINITY
            }
        }
        AtomicSet::SpectralAsym { .. } => {
            dense_svd_oracle(&Mat::from_column_slice(shape.rows, shape.cols, x.as_slice())).1.iter().sum()
        }
        AtomicSet::SpectralPsd { .. } => {
            let xm = Mat::from_column_slice(shape.rows, shape.cols, x.as_slice());
            let (vals, _) = dense_eig_oracle(&xm);
            if vals.iter().any(|&l| l < -1e-12 * (1.0 + xm.amax())) {
                f64::INFINITY
            } else {
                xm.trace()
            }
        }
        AtomicSet::WeightedSum { .. } => f64::INFINITY,
    }
}

/// Reference optimum for a tiny instance: support enumeration for the
/// canonical sets (n <= 8), dense accelerated proximal gradient for
/// spectral sets (sides <= 6, P1 and P2 only). Fails when the KKT residual
/// of the result exceeds `cfg.kkt_tol`.
pub fn small_instance_reference_solve(spec: &ProblemSpec, cfg: &OracleConfig) -> Result<ReferenceSolution> {
    let m = dense_operator(spec)?;
    let b = DVector::from_column_slice(spec.b.as_slice());
    let x = match &spec.set {
        AtomicSet::SignedCanonical { .. } | AtomicSet::NonnegCanonical { .. } => {
            if m.ncols() > cfg.max_poly_dim.min(8) {
                return Err(Error::Argument(format!("enumeration capped at n = {}", cfg.max_poly_dim.min(8))));
            }
            enumerate_supports(spec, &m, &b)?
        }
        AtomicSet::SpectralAsym { m: r, n: c } if (*r).max(*c) <= cfg.max_spectral_dim.min(6) => {
            spectral_solve(spec, &m, &b, cfg)?
        }
        AtomicSet::SpectralPsd { n } if *n <= cfg.max_spectral_dim.min(6) => spectral_solve(spec, &m, &b, cfg)?,
        _ => return Err(Error::Unsupported("no reference solve for this set or size".into())),
    };
    certify(spec, &m, &b, x, cfg)
}

fn certify(spec: &ProblemSpec, m: &DMatrix<f64>, b: &DVector<f64>, x: DVector<f64>, cfg: &OracleConfig) -> Result<ReferenceSolution> {
    let r = b - m * &x;
    let z = m.transpose() * &r;
    let sigma = support(spec, &z)?;
    let g = gauge(&spec.set, &x);
    let zx = z.dot(&x);
    let fit = 0.5 * r.norm_squared();
    let (primal, y, kkt) = match spec.formulation {
        Formulation::P1 { lambda } => {
            (fit + lambda * g, r.clone(), (sigma - lambda).max(0.0) + (zx - lambda * g).abs())
        }
        Formulation::P2 { tau } => (fit, r.clone(), (g - tau).max(0.0) + (zx - tau * sigma).abs()),
        Formulation::P3 => {
            if 0.5 * b.norm_squared() <= spec.alpha {
                (0.0, DVector::zeros(b.len()), 0.0)
            } else if sigma > 0.0 {
                (g, &r / sigma, (fit - spec.alpha).abs() + (zx / sigma - g).abs())
            } else {
                (g, DVector::zeros(b.len()), f64::INFINITY)
            }
        }
    };
    let kkt = if g.is_finite() { kkt } else { f64::INFINITY };
    if !(kkt <= cfg.kkt_tol) {
        return Err(Error::Numerical(format!("reference solve KKT residual {kkt:e} exceeds {:e}", cfg.kkt_tol)));
    }
    let shape = spec.set.shape();
    let range = spec.op.range();
    let y = Mat::from_column_slice(range.rows, range.cols, y.as_slice());
    let dual = reference_dual_value(spec, &y)?;
    Ok(ReferenceSolution { x: Mat::from_column_slice(shape.rows, shape.cols, x.as_slice()), y, primal, dual, kkt_residual: kkt })
}

/// Try every signed support; on each, the optimality conditions with all
/// coefficients strictly positive are a linear system (plus one scalar
/// equation for P2 and P3).
fn enumerate_supports(spec: &ProblemSpec, m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = m.ncols();
    let signed = matches!(spec.set, AtomicSet::SignedCanonical { .. });
    let choices: i64 = if signed { 3 } else { 2 };
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |x: DVector<f64>| {
        let r = b - m * &x;
        let fit = 0.5 * r.norm_squared();
        let g: f64 = x.iter().map(|v| v.abs()).sum();
        let val = match spec.formulation {
            Formulation::P1 { lambda } => fit + lambda * g,
            Formulation::P2 { tau } if g <= tau * (1.0 + 1e-12) => fit,
            Formulation::P3 if fit <= spec.alpha * (1.0 + 1e-12) + 1e-15 => g,
            _ => return,
        };
        if best.as_ref().is_none_or(|(v, _)| val < *v) {
            best = Some((val, x));
        }
    };
    consider(DVector::zeros(n));
    for code in 0..choices.pow(n as u32) {
        let mut c = code;
        let mut idx = Vec::new();
        let mut sgn = Vec::new();
        for i in 0..n {
            match c % choices {
                1 => {
                    idx.push(i);
                    sgn.push(1.0);
                }
                2 => {
                    idx.push(i);
                    sgn.push(-1.0);
                }
                _ => {}
            }
            c /= choices;
        }
        if idx.is_empty() || idx.len() > m.nrows() {
            continue;
        }
        let k = idx.len();
        let a = DMatrix::from_fn(m.nrows(), k, |i, j| m[(i, idx[j])] * sgn[j]);
        let g = a.transpose() * &a;
        let Some(chol) = g.clone().cholesky() else { continue };
        let atb = a.transpose() * b;
        let ones = DVector::from_element(k, 1.0);
        let c0 = chol.solve(&atb);
        let w = chol.solve(&ones);
        let mut cands = Vec::new();
        match spec.formulation {
            Formulation::P1 { lambda } => cands.push(&c0 - &w * lambda),
            Formulation::P2 { tau } => {
                cands.push(c0.clone());
                // active ball: 1^T (c0 - mu w) = tau
                let mu = (c0.sum() - tau) / w.sum();
                if mu >= 0.0 {
                    cands.push(&c0 - &w * mu);
                }
            }
            Formulation::P3 => {
                // residual r0 + lam A w with r0 orthogonal to range(A)
                let r0 = b - &a * &c0;
                let q = &a * &w;
                let slack = 2.0 * spec.alpha - r0.norm_squared();
                if slack >= 0.0 && q.norm_squared() > 0.0 {
                    let lam = (slack / q.norm_squared()).sqrt();
                    cands.push(&c0 - &w * lam);
                }
            }
        }
        for cvec in cands {
            if cvec.iter().all(|&v| v > 0.0) {
                let mut x = DVector::zeros(n);
                for (j, &i) in idx.iter().enumerate() {
                    x[i] = sgn[j] * cvec[j];
                }
                consider(x);
            }
        }
    }
    best.map(|(_, x)| x).ok_or_else(|| Error::Numerical("no feasible support found".into()))
}

/// Accelerated proximal gradient with restarts on the full matrix.
fn spectral_solve(spec: &ProblemSpec, m: &DMatrix<f64>, b: &DVector<f64>, cfg: &OracleConfig) -> Result<DVector<f64>> {
    let shape = spec.set.shape();
    let psd = matches!(spec.set, AtomicSet::SpectralPsd { .. });
    let gram = m.transpose() * m;
    let (gv, _) = dense_eig_oracle(&gram);
    let lip = gv[0].max(f64::MIN_POSITIVE);
    let h = m.transpose() * b;
    // spectral map applied to singular values (or eigenvalues when PSD)
    let spectral_map = |w: &DVector<f64>, f: &dyn Fn(&[f64]) -> Vec<f64>| -> DVector<f64> {
        let wm = Mat::from_column_slice(shape.rows, shape.cols, w.as_slice());
        let out = if psd {
            let (vals, vecs) = dense_eig_oracle(&wm);
            let nv = f(&vals);
            &vecs * Mat::from_diagonal(&DVector::from_vec(nv)) * vecs.transpose()
        } else {
            let (u, s, v) = dense_svd_oracle(&wm);
            let ns = f(&s);
            &u * Mat::from_diagonal(&DVector::from_vec(ns)) * v.transpose()
        };
        DVector::from_column_slice(out.as_slice())
    };
    let step: Box<dyn Fn(&DVector<f64>) -> DVector<f64>> = match spec.formulation {
        Formulation::P1 { lambda } => {
            let t = lambda / lip;
            Box::new(move |w| spectral_map(w, &|s| s.iter().map(|&v| (v - t).max(0.0)).collect()))
        }
        Formulation::P2 { tau } => Box::new(move |w| spectral_map(w, &|s| project_capped(s, tau))),
        Formulation::P3 => return Err(Error::Unsupported("spectral reference solve covers P1 and P2".into())),
    };
    let obj = |x: &DVector<f64>| {
        let fit = 0.5 * (b - m * x).norm_squared();
        match spec.formulation {
            Formulation::P1 { lambda } => fit + lambda * gauge(&spec.set, x),
            _ => fit,
        }
    };
    let n = m.ncols();
    let mut x = DVector::zeros(n);
    let mut v = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = obj(&x);
    for it in 0..200_000 {
        let grad = &gram * &v - &h;
        let x_new = step(&(&v - grad / lip));
        let f_new = obj(&x_new);
        if f_new > f_prev {
            v = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        x = x_new;
        f_prev = f_new;
        if it % 100 == 0 && certify(spec, m, b, x.clone(), &OracleConfig { kkt_tol: 0.01 * cfg.kkt_tol, ..*cfg }).is_ok() {
            break;
        }
    }
    Ok(x)
}

/// Euclidean projection of `s` onto `{ v >= 0, sum v <= tau }`.
fn project_capped(s: &[f64], tau: f64) -> Vec<f64> {
    let pos: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
    if pos.iter().sum::<f64>() <= tau {
        return pos;
    }
    // bisection on the shift keeps this independent of the sort-based path
    let (mut lo, mut hi) = (0.0, pos.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let total: f64 = pos.iter().map(|v| (v - mid).max(0.0)).sum();
        if total > tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    pos.iter().map(|v| (v - hi).max(0.0)).collect()
}

/// `sup_{a in A1} inf_{a2 in A2} ||a - a2||_F`, where `A2` holds the unit
/// atoms of the model. For spectral blocks the inner infimum has the closed
/// form `sqrt(2 - 2 s)` with `s` the top singular value of `U^T a V`.
pub fn one_sided_hausdorff(a1: &[Mat], model: &ReducedModel) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for a in a1 {
        let mut best = f64::INFINITY;
        for block in &model.blocks {
            let d = match block {
                ModelBlock::Spectral { left, right, .. } => {
                    let w = left.transpose() * a * right;
                    let s = dense_svd_oracle(&w).1.first().copied().unwrap_or(0.0);
                    (2.0 - 2.0 * s.min(1.0)).max(0.0).sqrt()
                }
                ModelBlock::Polyhedral { .. } => {
                    let mut d = f64::INFINITY;
                    for atom in block.basis(model.shape)? {
                        // the free domain spans both signs
                        d = d.min((a - &atom).norm()).min((a + &atom).norm());
                    }
                    d
                }
            };
            best = best.min(d);
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::{Atom, Budget, Domain};
    use crate::linops::{LinOp, Shape};
    use crate::objectives::Loss;
    use std::sync::Arc;

    fn v(x: &[f64]) -> Mat {
        Mat::from_column_slice(x.len(), 1, x)
    }

    #[test]
    fn lp_oracle_small_cases() {
        assert_eq!(gauge_lp_oracle(&AtomicSet::signed(2), &v(&[1.0, -1.0])).unwrap(), 2.0);
        assert_eq!(gauge_lp_oracle(&AtomicSet::nonneg(1), &v(&[-1.0])).unwrap(), f64::INFINITY);
        assert_eq!(gauge_lp_oracle(&AtomicSet::nonneg(2), &v(&[1.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn jacobi_oracles() {
        let d = Mat::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (vals, _) = dense_eig_oracle(&d);
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        let (u, s, w) = dense_svd_oracle(&Mat::zeros(3, 2));
        assert_eq!(s, vec![0.0, 0.0]);
        assert!((u.transpose() * &u - Mat::identity(2, 2)).amax() < 1e-12);
        assert!((w.transpose() * &w - Mat::identity(2, 2)).amax() < 1e-12);
        let z = Mat::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let (u, s, w) = dense_svd_oracle(&z);
        let rec = &u * Mat::from_diagonal(&DVector::from_vec(s)) * w.transpose();
        assert!((rec - &z).amax() < 1e-11);
    }

    #[test]
    fn one_dimensional_closed_forms() {
        let op = Arc::new(LinOp::identity(1));
        let b = v(&[2.0]);
        let mk = |f| ProblemSpec::new(Loss::HalfSqNorm, op.clone(), b.clone(), AtomicSet::signed(1), f, 0.5, Budget::uniform(1), 0.0).unwrap();
        let cfg = OracleConfig::default();
        // soft threshold, clip, and b - sqrt(2 alpha)
        let s1 = small_instance_reference_solve(&mk(Formulation::P1 { lambda: 0.5 }), &cfg).unwrap();
        assert!((s1.x[0] - 1.5).abs() < 1e-12);
        let s2 = small_instance_reference_solve(&mk(Formulation::P2 { tau: 1.0 }), &cfg).unwrap();
        assert!((s2.x[0] - 1.0).abs() < 1e-12);
        let s3 = small_instance_reference_solve(&mk(Formulation::P3), &cfg).unwrap();
        assert!((s3.x[0] - 1.0).abs() < 1e-12);
        for s in [s1, s2, s3] {
            assert!((s.primal + s.dual).abs() < 1e-10, "{s:?}");
        }
    }

    #[test]
    fn spectral_p1_matches_singular_value_threshold() {
        let b = Mat::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let op = Arc::new(LinOp::identity_on(Shape::matrix(3, 3)));
        let spec = ProblemSpec::new(Loss::HalfSqNorm, op, b, AtomicSet::spectral(3, 3), Formulation::P1 { lambda: 0.5 }, 0.0, Budget::uniform(1), 0.0)
            .unwrap();
        let s = small_instance_reference_solve(&spec, &OracleConfig::default()).unwrap();
        let want = Mat::from_diagonal(&DVector::from_vec(vec![2.5, 0.5, 0.0]));
        assert!((s.x - want).amax() < 1e-8);
    }

    #[test]
    fn hausdorff_examples() {
        let e = |i: usize| {
            let mut m = Mat::zeros(3, 3);
            m[(i, i)] = 1.0;
            m
        };
        let model = ReducedModel {
            shape: Shape::matrix(3, 3),
            blocks: vec![ModelBlock::Spectral { left: Mat::identity(3, 1), right: Mat::identity(3, 1), domain: Domain::FreeMatrix(1) }],
        };
        assert!(one_sided_hausdorff(&[e(0)], &model).unwrap() < 1e-12);
        assert!((one_sided_hausdorff(&[e(1)], &model).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let poly = ReducedModel {
            shape: Shape::vector(2),
            blocks: vec![ModelBlock::Polyhedral { atoms: vec![Atom::SignedUnit { index: 0, sign: crate::atoms::Sign::Plus }], domain: Domain::Free }],
        };
        assert!(one_sided_hausdorff(&[v(&[-1.0, 0.0])], &poly).unwrap() < 1e-12);
    }
}
