//! Proximal maps of the gauge and projections onto gauge balls.
//!
//! The nonnegative cone uses the gauge of `{e_i}` (sum of entries on the
//! orthant), matching the solver semantics in `objectives::solver_gauge`.

use crate::atoms::AtomicSet;
use crate::error::{Error, Result};
use crate::linops::Mat;
use crate::spectral::{jacobi_svd, sorted_eigen};

/// `argmin_x ||x - w||^2 / 2 + t gamma(x)`.
pub fn prox_gauge(set: &AtomicSet, w: &Mat, t: f64) -> Result<Mat> {
    match set {
        AtomicSet::SignedCanonical { .. } => Ok(w.map(|v| v.signum() * (v.abs() - t).max(0.0))),
        AtomicSet::NonnegCanonical { .. } => Ok(w.map(|v| (v - t).max(0.0))),
        AtomicSet::SpectralAsym { .. } => {
            let (u, s, v) = jacobi_svd(w);
            let s: Vec<f64> = s.iter().map(|x| (x - t).max(0.0)).collect();
            Ok(recompose(&u, &s, &v))
        }
        AtomicSet::SpectralPsd { .. } => {
            let (vals, vecs) = sorted_eigen(&((w + w.transpose()) * 0.5));
            let l: Vec<f64> = vals.iter().map(|x| (x - t).max(0.0)).collect();
            Ok(recompose(&vecs, &l, &vecs))
        }
        AtomicSet::WeightedSum { .. } => Err(Error::Unsupported("prox of a weighted-sum gauge".into())),
    }
}

/// Euclidean projection onto `{ x : gamma(x) <= r }`.
pub fn project_gauge_ball(set: &AtomicSet, w: &Mat, r: f64) -> Result<Mat> {
    match set {
        AtomicSet::SignedCanonical { .. } => {
            let p = project_l1_ball(w.as_slice(), r);
            Ok(Mat::from_column_slice(w.nrows(), w.ncols(), &p))
        }
        AtomicSet::NonnegCanonical { .. } => {
            let clipped: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
            let p = project_l1_ball(&clipped, r);
            Ok(Mat::from_column_slice(w.nrows(), w.ncols(), &p))
        }
        AtomicSet::SpectralAsym { .. } => {
            let (u, s, v) = jacobi_svd(w);
            Ok(recompose(&u, &project_l1_ball(&s, r), &v))
        }
        AtomicSet::SpectralPsd { .. } => {
            let (vals, vecs) = sorted_eigen(&((w + w.transpose()) * 0.5));
            let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
            Ok(recompose(&vecs, &project_l1_ball(&clipped, r), &vecs))
        }
        AtomicSet::WeightedSum { .. } => Err(Error::Unsupported("projection onto a weighted-sum ball".into())),
    }
}

fn recompose(u: &Mat, s: &[f64], v: &Mat) -> Mat {
    let mut out = Mat::zeros(u.nrows(), v.nrows());
    for (i, &si) in s.iter().enumerate() {
        if si != 0.0 {
            out += u.column(i) * v.column(i).transpose() * si;
        }
    }
    out
}

/// Projection onto the l1 ball of radius `r` (sort-based).
pub fn project_l1_ball(v: &[f64], r: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= r {
        return v.to_vec();
    }
    if r <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - r) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::Shape;
    use proptest::prelude::*;

    #[test]
    fn l1_projection_basics() {
        assert_eq!(project_l1_ball(&[0.5, -0.2], 1.0), vec![0.5, -0.2]);
        let p = project_l1_ball(&[3.0, -1.0], 1.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let p = project_l1_ball(&[1.0, 1.0], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn l1_projection_is_optimal(v in proptest::collection::vec(-5.0f64..5.0, 1..8), r in 0.1f64..4.0) {
            let p = project_l1_ball(&v, r);
            let l1: f64 = p.iter().map(|x| x.abs()).sum();
            prop_assert!(l1 <= r + 1e-12);
            // variational inequality: <v - p, q - p> <= 0 for ball vertices q
            for i in 0..v.len() {
                for s in [-1.0, 1.0] {
                    let mut q = vec![0.0; v.len()];
                    q[i] = s * r;
                    let ip: f64 = (0..v.len()).map(|j| (v[j] - p[j]) * (q[j] - p[j])).sum();
                    prop_assert!(ip <= 1e-10);
                }
            }
        }

        #[test]
        fn prox_satisfies_moreau(w in proptest::collection::vec(-3.0f64..3.0, 9), t in 0.05f64..2.0) {
            // prox_{t gamma}(w) + t * proj_{polar ball}(w / t) = w, polar ball = {sigma <= 1}
            let wm = Mat::from_column_slice(3, 3, &w);
            for set in [AtomicSet::signed_on(Shape::matrix(3, 3)), AtomicSet::spectral(3, 3)] {
                let p = prox_gauge(&set, &wm, t).unwrap();
                let resid = (&wm - &p) / t;
                prop_assert!(set.support_value(&resid).unwrap() <= 1.0 + 1e-9);
                // <resid, p> = gamma(p)
                let g = set.gauge_value(&p).unwrap().finite().unwrap();
                prop_assert!((resid.dot(&p) - g).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn spectral_ball_projection() {
        let w = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, -2.0]));
        let p = project_gauge_ball(&AtomicSet::spectral(3, 3), &w, 2.0).unwrap();
        let s = crate::spectral::singular_values(&p);
        assert!((s.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let p = project_gauge_ball(&AtomicSet::psd(3), &w, 2.0).unwrap();
        assert!((p[(0, 0)] - 2.0).abs() < 1e-12 && p[(2, 2)].abs() < 1e-12);
    }
}
