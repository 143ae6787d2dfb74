//! Truncated SVD and symmetric eigendecomposition.
//!
//! Small problems (min dimension up to [`DENSE_THRESHOLD`]) use a one-sided
//! Jacobi SVD and a dense symmetric eigensolver. Larger ones use Lanczos
//! with full reorthogonalization and a seeded starting vector.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linops::Mat;

pub const DENSE_THRESHOLD: usize = 64;
const LANCZOS_SEED: u64 = 0x5eed_1a2c;

#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// m x k, orthonormal columns.
    pub u: Mat,
    /// Nonincreasing singular values.
    pub s: Vec<f64>,
    /// n x k, orthonormal columns.
    pub v: Mat,
    /// Upper bound on the (k+1)-th singular value (0 when k = min(m, n)).
    pub sigma_next_bound: f64,
}

impl TruncatedSvd {
    pub fn k(&self) -> usize {
        self.s.len()
    }

    /// Leading singular value, 0 for an empty decomposition.
    pub fn sigma1(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedEig {
    /// n x k, orthonormal columns.
    pub v: Mat,
    /// Largest k eigenvalues, nonincreasing.
    pub values: Vec<f64>,
    /// Upper bound on the (k+1)-th eigenvalue; `None` when k = n.
    pub lambda_next_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dense below the threshold, Lanczos above.
    Auto,
    Dense,
    Lanczos,
}

pub fn truncated_svd(z: &Mat, k: usize, tol: f64) -> Result<TruncatedSvd> {
    truncated_svd_with(z, k, tol, Mode::Auto)
}

pub fn truncated_svd_with(z: &Mat, k: usize, tol: f64, mode: Mode) -> Result<TruncatedSvd> {
    let (m, n) = z.shape();
    let r = m.min(n);
    if k == 0 || k > r {
        return Err(Error::Argument(format!("rank {k} not in 1..={r}")));
    }
    check_finite(z)?;
    let dense = match mode {
        Mode::Auto => r <= DENSE_THRESHOLD,
        Mode::Dense => true,
        Mode::Lanczos => false,
    };
    if dense {
        let (u, s, v) = jacobi_svd(z);
        let next = s.get(k).copied().unwrap_or(0.0);
        Ok(TruncatedSvd {
            u: u.columns(0, k).into_owned(),
            s: s[..k].to_vec(),
            v: v.columns(0, k).into_owned(),
            sigma_next_bound: next,
        })
    } else {
        lanczos_svd(z, k, tol)
    }
}

/// All singular values, nonincreasing.
pub fn singular_values(z: &Mat) -> Vec<f64> {
    jacobi_svd(z).1
}

/// Thin SVD by one-sided (Hestenes) Jacobi: returns `(U, s, V)` with
/// `U` m x r, `V` n x r, r = min(m, n), and `s` nonincreasing.
pub fn jacobi_svd(z: &Mat) -> (Mat, Vec<f64>, Mat) {
    let (m, n) = z.shape();
    if m < n {
        let (u, s, v) = jacobi_svd(&z.transpose());
        return (v, s, u);
    }
    let mut w = z.clone();
    let mut v = Mat::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut a, mut b, mut g) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    a += x * x;
                    b += y * y;
                    g += x * y;
                }
                if g == 0.0 || g.abs() <= 1e-15 * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (b - a) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms.iter().copied().fold(0.0, f64::max);
    let mut u = Mat::zeros(m, n);
    let mut vs = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut filled = Vec::new();
    for (col, &i) in order.iter().enumerate() {
        s.push(norms[i]);
        vs.set_column(col, &v.column(i));
        if norms[i] > smax * 1e-14 && norms[i] > 0.0 {
            u.set_column(col, &(w.column(i) / norms[i]));
            filled.push(col);
        }
    }
    complete_basis(&mut u, &filled);
    (u, s, vs)
}

/// Fill the columns of `q` not listed in `filled` with unit vectors
/// orthogonal to everything else.
fn complete_basis(q: &mut Mat, filled: &[usize]) {
    let (m, k) = q.shape();
    let mut have: Vec<usize> = filled.to_vec();
    let mut candidate = 0;
    for col in 0..k {
        if filled.contains(&col) {
            continue;
        }
        loop {
            let mut e = nalgebra::DVector::zeros(m);
            e[candidate % m] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &h in &have {
                    let c = q.column(h);
                    let d = c.dot(&e);
                    e -= c * d;
                }
            }
            let nrm = e.norm();
            if nrm > 1e-8 {
                q.set_column(col, &(e / nrm));
                have.push(col);
                break;
            }
            if candidate > 2 * m + k {
                break;
            }
        }
    }
}

/// Top-k algebraic eigenpairs of the symmetric part of `z`.
pub fn truncated_eig_sym(z: &Mat, k: usize, tol: f64) -> Result<TruncatedEig> {
    truncated_eig_sym_with(z, k, tol, Mode::Auto)
}

pub fn truncated_eig_sym_with(z: &Mat, k: usize, tol: f64, mode: Mode) -> Result<TruncatedEig> {
    let (m, n) = z.shape();
    if m != n {
        return Err(Error::Dimension { expected: (n, n), got: (m, n) });
    }
    if k == 0 || k > n {
        return Err(Error::Argument(format!("rank {k} not in 1..={n}")));
    }
    check_finite(z)?;
    let asym = (z - z.transpose()).amax();
    if asym > 1e-10 * (1.0 + z.amax()) {
        return Err(Error::Argument(format!("matrix is not symmetric (skew part {asym:.3e})")));
    }
    let sym = (z + z.transpose()) * 0.5;
    let dense = match mode {
        Mode::Auto => n <= DENSE_THRESHOLD,
        Mode::Dense => true,
        Mode::Lanczos => false,
    };
    if dense {
        let (vals, vecs) = sorted_eigen(&sym);
        Ok(TruncatedEig {
            v: vecs.columns(0, k).into_owned(),
            values: vals[..k].to_vec(),
            lambda_next_bound: vals.get(k).copied(),
        })
    } else {
        lanczos_eig(&sym, k, tol)
    }
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues nonincreasing.
pub fn sorted_eigen(sym: &Mat) -> (Vec<f64>, Mat) {
    let eig = SymmetricEigen::new(sym.clone());
    let n = sym.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

fn check_finite(z: &Mat) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("matrix has nonfinite entries".into()))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, basis: &[nalgebra::DVector<f64>]) -> nalgebra::DVector<f64> {
    for _ in 0..10 {
        let mut x = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        reorthogonalize(&mut x, basis);
        let nrm = x.norm();
        if nrm > 1e-8 {
            return x / nrm;
        }
    }
    nalgebra::DVector::zeros(n)
}

fn reorthogonalize(x: &mut nalgebra::DVector<f64>, basis: &[nalgebra::DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let d = q.dot(x);
            x.axpy(-d, q, 1.0);
        }
    }
}

/// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization.
fn lanczos_svd(z: &Mat, k: usize, tol: f64) -> Result<TruncatedSvd> {
    let (m, n) = z.shape();
    let r = m.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let scale = z.norm().max(f64::MIN_POSITIVE);
    let mut us: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut vs: Vec<nalgebra::DVector<f64>> = vec![random_unit(&mut rng, n, &[])];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut p_target = (2 * k + 10).min(r);
    let tol = tol.max(1e-14);
    loop {
        while alphas.len() < p_target {
            let j = alphas.len();
            let mut u = z * &vs[j];
            if j > 0 {
                u.axpy(-betas[j - 1], &us[j - 1], 1.0);
            }
            reorthogonalize(&mut u, &us);
            let mut a = u.norm();
            if a <= 1e-14 * scale {
                u = random_unit(&mut rng, m, &us);
                a = 0.0;
            } else {
                u /= a;
            }
            alphas.push(a);
            us.push(u);
            let mut v = z.tr_mul(&us[j]);
            v.axpy(-a, &vs[j], 1.0);
            reorthogonalize(&mut v, &vs);
            let mut b = v.norm();
            if b <= 1e-14 * scale {
                v = random_unit(&mut rng, n, &vs);
                b = 0.0;
            } else {
                v /= b;
            }
            betas.push(b);
            vs.push(v);
        }
        let p = alphas.len();
        let mut bmat = Mat::zeros(p, p);
        for j in 0..p {
            bmat[(j, j)] = alphas[j];
            if j + 1 < p {
                bmat[(j, j + 1)] = betas[j];
            }
        }
        let (pb, sb, qb) = jacobi_svd(&bmat);
        let beta_p = betas[p - 1];
        let kk = (k + 1).min(p);
        let resid: Vec<f64> = (0..kk).map(|i| (beta_p * pb[(p - 1, i)]).abs()).collect();
        let converged = resid.iter().all(|&e| e <= tol * scale.max(sb[0]));
        if converged || p >= r {
            let umat = Mat::from_columns(&us[..p]);
            let vmat = Mat::from_columns(&vs[..p]);
            let uk = &umat * pb.columns(0, k);
            let vk = &vmat * qb.columns(0, k);
            let next = if k < p { sb[k] + resid[k] } else { 0.0 };
            if !converged && p < r {
                return Err(Error::Numerical(format!(
                    "Lanczos SVD did not converge (max residual {:.3e})",
                    resid.iter().copied().fold(0.0, f64::max)
                )));
            }
            return Ok(TruncatedSvd { u: uk, s: sb[..k].to_vec(), v: vk, sigma_next_bound: next });
        }
        p_target = (p_target * 2).min(r);
    }
}

/// Symmetric Lanczos with full reorthogonalization for the largest eigenvalues.
fn lanczos_eig(sym: &Mat, k: usize, tol: f64) -> Result<TruncatedEig> {
    let n = sym.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let scale = sym.norm().max(f64::MIN_POSITIVE);
    let mut qs: Vec<nalgebra::DVector<f64>> = vec![random_unit(&mut rng, n, &[])];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut p_target = (2 * k + 10).min(n);
    let tol = tol.max(1e-14);
    loop {
        while alphas.len() < p_target {
            let j = alphas.len();
            let mut w = sym * &qs[j];
            let a = qs[j].dot(&w);
            w.axpy(-a, &qs[j], 1.0);
            if j > 0 {
                w.axpy(-betas[j - 1], &qs[j - 1], 1.0);
            }
            reorthogonalize(&mut w, &qs);
            alphas.push(a);
            if qs.len() == n {
                betas.push(0.0);
                break;
            }
            let mut b = w.norm();
            if b <= 1e-14 * scale {
                w = random_unit(&mut rng, n, &qs);
                b = 0.0;
            } else {
                w /= b;
            }
            betas.push(b);
            qs.push(w);
        }
        let p = alphas.len();
        let mut t = Mat::zeros(p, p);
        for j in 0..p {
            t[(j, j)] = alphas[j];
            if j + 1 < p {
                t[(j, j + 1)] = betas[j];
                t[(j + 1, j)] = betas[j];
            }
        }
        let (vals, vecs) = sorted_eigen(&t);
        let beta_p = betas[p - 1];
        let kk = (k + 1).min(p);
        let resid: Vec<f64> = (0..kk).map(|i| (beta_p * vecs[(p - 1, i)]).abs()).collect();
        let converged = resid.iter().all(|&e| e <= tol * scale);
        if converged || p >= n {
            if !converged {
                return Err(Error::Numerical("Lanczos eigensolver did not converge".into()));
            }
            let qmat = Mat::from_columns(&qs[..p]);
            let vk = &qmat * vecs.columns(0, k);
            let next = if k < p { Some(vals[k] + resid[k]) } else if p < n { Some(vals[p - 1]) } else { None };
            return Ok(TruncatedEig { v: vk, values: vals[..k].to_vec(), lambda_next_bound: next });
        }
        p_target = (p_target * 2).min(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_mat(seed: u64, m: usize, n: usize) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_svd(z: &Mat, t: &TruncatedSvd, tol: f64) {
        let k = t.k();
        assert!((t.u.tr_mul(&t.u) - Mat::identity(k, k)).amax() < 1e-8);
        assert!((t.v.tr_mul(&t.v) - Mat::identity(k, k)).amax() < 1e-8);
        for i in 0..k {
            if i > 0 {
                assert!(t.s[i] <= t.s[i - 1]);
            }
            let r = z * t.v.column(i) - t.u.column(i) * t.s[i];
            assert!(r.norm() <= tol, "residual {}", r.norm());
        }
    }

    #[test]
    fn diagonal_example() {
        let z = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = truncated_svd(&z, 2, 1e-12).unwrap();
        assert!((t.s[0] - 3.0).abs() < 1e-14 && (t.s[1] - 2.0).abs() < 1e-14);
        assert!(t.sigma_next_bound >= 1.0 - 1e-14);
    }

    #[test]
    fn zero_matrix() {
        let t = truncated_svd(&Mat::zeros(4, 3), 3, 1e-12).unwrap();
        assert!(t.s.iter().all(|&s| s == 0.0));
        check_svd(&Mat::zeros(4, 3), &t, 1e-12);
    }

    #[test]
    fn dense_residuals_small() {
        for seed in 0..10 {
            let z = rand_mat(seed, 8, 6);
            let t = truncated_svd(&z, 3, 1e-12).unwrap();
            check_svd(&z, &t, 1e-12);
            let zt = z.transpose();
            let t = truncated_svd(&zt, 6, 1e-12).unwrap();
            check_svd(&zt, &t, 1e-12);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for seed in 0..4 {
            let z = rand_mat(100 + seed, 90, 70);
            let d = truncated_svd_with(&z, 5, 1e-12, Mode::Dense).unwrap();
            let l = truncated_svd_with(&z, 5, 1e-12, Mode::Lanczos).unwrap();
            for i in 0..5 {
                assert!((d.s[i] - l.s[i]).abs() < 1e-8);
            }
            assert!(l.sigma_next_bound >= d.sigma_next_bound - 1e-10);
            check_svd(&z, &l, 1e-8);
        }
        // low rank exercises the breakdown path
        let a = rand_mat(7, 80, 3);
        let b = rand_mat(8, 3, 75);
        let z = &a * &b;
        let l = truncated_svd_with(&z, 4, 1e-12, Mode::Lanczos).unwrap();
        assert!(l.s[3] < 1e-8);
        check_svd(&z, &l, 1e-8);
    }

    #[test]
    fn eig_examples() {
        let z = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, -1.0]));
        let e = truncated_eig_sym(&z, 1, 1e-12).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-14);
        assert!((e.v[(0, 0)].abs() - 1.0).abs() < 1e-14);
        let e = truncated_eig_sym(&Mat::identity(3, 3), 2, 1e-12).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn lanczos_eig_agrees_with_dense() {
        let a = rand_mat(3, 80, 80);
        let z = &a + a.transpose();
        let d = truncated_eig_sym_with(&z, 4, 1e-12, Mode::Dense).unwrap();
        let l = truncated_eig_sym_with(&z, 4, 1e-12, Mode::Lanczos).unwrap();
        for i in 0..4 {
            assert!((d.values[i] - l.values[i]).abs() < 1e-8);
            let r = &z * l.v.column(i) - l.v.column(i) * l.values[i];
            assert!(r.norm() < 1e-7);
        }
        assert!(l.lambda_next_bound.unwrap() >= d.lambda_next_bound.unwrap() - 1e-10);
    }

    #[test]
    fn rejects_bad_rank_and_asymmetry() {
        assert!(truncated_svd(&Mat::zeros(3, 2), 3, 1e-12).is_err());
        assert!(truncated_svd(&Mat::zeros(3, 2), 0, 1e-12).is_err());
        let z = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(truncated_eig_sym(&z, 1, 1e-12).is_err());
    }
}
