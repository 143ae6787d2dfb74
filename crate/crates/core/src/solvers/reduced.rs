//! Least-squares fit over a reduced model.
//!
//! The reduced problem is tiny (a few dozen coefficients), so it is solved
//! on the Gram matrix of the basis images. Unconstrained models go through
//! an SVD least-squares solve; models with sign or PSD constraints, or a
//! gauge-ball constraint, use projected FISTA with restarts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::atoms::{AtomicSet, Domain, ModelBlock, ReducedModel};
use crate::error::{Error, Result};
use crate::linops::Mat;
use crate::objectives::{Loss, ProblemSpec};

use super::gauge_ops::project_gauge_ball;

/// Stopping rule for the projected-gradient path. The tolerance applies to
/// the gradient-mapping norm relative to `max(1, ||M_k^T b||)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Optional bound on the gauge of the coefficients (single block only).
    pub radius: Option<f64>,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        ReducedOptions { tol: 1e-11, max_iter: 20_000, radius: None }
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSolution {
    /// Coefficients, one vector per block.
    pub coeffs: Vec<Vec<f64>>,
    /// Misfit `f(b - M x)` at the solution.
    pub f_value: f64,
    /// Ambient reconstruction.
    pub x: Mat,
    pub iterations: usize,
    pub converged: bool,
}

/// `min_c f(b - M x(c))` over the coefficient domains of `model`.
pub fn solve_reduced(spec: &ProblemSpec, model: &ReducedModel) -> Result<ReducedSolution> {
    solve_reduced_with(spec, model, &ReducedOptions::default())
}

pub fn solve_reduced_with(spec: &ProblemSpec, model: &ReducedModel, opts: &ReducedOptions) -> Result<ReducedSolution> {
    if let Some(radius) = opts.radius {
        if model.blocks.len() != 1 {
            return Err(Error::Unsupported("gauge-ball reduced solve needs a single block".into()));
        }
        if !(radius >= 0.0) {
            return Err(Error::Argument(format!("radius {radius} must be nonnegative")));
        }
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Argument("need tol > 0 and max_iter >= 1".into()));
    }
    solve(spec, model, opts)
}

fn block_ball_set(block: &ModelBlock) -> AtomicSet {
    match block.domain() {
        Domain::Free => AtomicSet::signed(block.n_coeffs()),
        Domain::Nonnegative => AtomicSet::nonneg(block.n_coeffs()),
        Domain::FreeMatrix(k) => AtomicSet::spectral(k, k),
        Domain::PsdMatrix(k) => AtomicSet::psd(k),
    }
}

fn project_block(block: &ModelBlock, c: &mut [f64]) {
    match block.domain() {
        Domain::Free | Domain::FreeMatrix(_) => {}
        Domain::Nonnegative => c.iter_mut().for_each(|v| *v = v.max(0.0)),
        Domain::PsdMatrix(k) => {
            let m = Mat::from_column_slice(k, k, c);
            let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
            let mut out = Mat::zeros(k, k);
            for (i, &l) in eig.eigenvalues.iter().enumerate() {
                if l > 0.0 {
                    let v = eig.eigenvectors.column(i);
                    out += v * v.transpose() * l;
                }
            }
            c.copy_from_slice(out.as_slice());
        }
    }
}

fn solve(spec: &ProblemSpec, model: &ReducedModel, opts: &ReducedOptions) -> Result<ReducedSolution> {
    let radius = opts.radius;
    let Loss::HalfSqNorm = spec.loss;
    let mut images = Vec::with_capacity(model.n_coeffs());
    for block in &model.blocks {
        images.extend(block.basis_images(&spec.op)?);
    }
    let k = images.len();
    let rows = spec.b.len();
    let mut design = DMatrix::zeros(rows, k);
    for (j, img) in images.iter().enumerate() {
        design.column_mut(j).copy_from_slice(img.as_slice());
    }
    let b = DVector::from_column_slice(spec.b.as_slice());

    let unconstrained = radius.is_none()
        && model.blocks.iter().all(|bl| matches!(bl.domain(), Domain::Free | Domain::FreeMatrix(_)));
    let (c, iterations, converged) = if k == 0 {
        (DVector::zeros(0), 0, true)
    } else if unconstrained {
        let svd = design.clone().svd(true, true);
        let tol = f64::EPSILON * (rows.max(k) as f64) * svd.singular_values.max();
        let c = svd.solve(&b, tol).map_err(|e| Error::Numerical(e.to_string()))?;
        (c, 1, true)
    } else {
        fista(model, &design, &b, opts)?
    };

    let mut coeffs = Vec::with_capacity(model.blocks.len());
    let mut x = model.shape.zeros();
    let mut offset = 0;
    for block in &model.blocks {
        let n = block.n_coeffs();
        let part = c.as_slice()[offset..offset + n].to_vec();
        x += block.synthesize(model.shape, &part)?;
        coeffs.push(part);
        offset += n;
    }
    let resid = &b - &design * &c;
    let f_value = 0.5 * resid.norm_squared();
    if !f_value.is_finite() {
        return Err(Error::Numerical("nonfinite reduced objective".into()));
    }
    Ok(ReducedSolution { coeffs, f_value, x, iterations, converged })
}

fn fista(
    model: &ReducedModel,
    design: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &ReducedOptions,
) -> Result<(DVector<f64>, usize, bool)> {
    let radius = opts.radius;
    let gram = design.transpose() * design;
    let h = design.transpose() * b;
    let lip = SymmetricEigen::new(gram.clone()).eigenvalues.max().max(f64::MIN_POSITIVE);
    let k = h.len();
    let project = |c: &mut DVector<f64>| -> Result<()> {
        let mut offset = 0;
        for block in &model.blocks {
            let n = block.n_coeffs();
            let part = &mut c.as_mut_slice()[offset..offset + n];
            match radius {
                Some(r) => {
                    let set = block_ball_set(block);
                    let shape = set.shape();
                    let w = Mat::from_column_slice(shape.rows, shape.cols, part);
                    part.copy_from_slice(project_gauge_ball(&set, &w, r)?.as_slice());
                }
                None => project_block(block, part),
            }
            offset += n;
        }
        Ok(())
    };
    let obj = |c: &DVector<f64>| 0.5 * c.dot(&(&gram * c)) - h.dot(c);
    let scale = h.norm().max(1.0);

    let mut c = DVector::zeros(k);
    project(&mut c)?;
    let mut v = c.clone();
    let mut t = 1.0f64;
    let mut f_prev = obj(&c);
    for it in 1..=opts.max_iter {
        let g = &gram * &v - &h;
        let mut c_new = &v - g * (1.0 / lip);
        project(&mut c_new)?;
        // gradient mapping at v
        let gm = (&v - &c_new).norm() * lip;
        let f_new = obj(&c_new);
        if gm <= opts.tol * scale {
            return Ok((if f_new <= f_prev { c_new } else { c }, it, true));
        }
        if f_new > f_prev {
            // restart the momentum from the last iterate
            v = c.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &c_new + (&c_new - &c) * ((t - 1.0) / t_new);
        t = t_new;
        c = c_new;
        f_prev = f_new;
    }
    Ok((c, opts.max_iter, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::{Atom, Budget, Sign};
    use crate::linops::{LinOp, Shape};
    use crate::objectives::Formulation;
    use std::sync::Arc;

    fn spec(op: LinOp, b: Mat, set: AtomicSet) -> ProblemSpec {
        ProblemSpec::new(Loss::HalfSqNorm, Arc::new(op), b, set, Formulation::P3, 1e-6, Budget::uniform(2), 0.0).unwrap()
    }

    #[test]
    fn free_and_nonneg_fits() {
        let b = Mat::from_column_slice(4, 1, &[1.0, -2.0, 0.5, 0.0]);
        let s = spec(LinOp::identity(4), b.clone(), AtomicSet::signed(4));
        let atoms = vec![
            Atom::SignedUnit { index: 0, sign: Sign::Plus },
            Atom::SignedUnit { index: 1, sign: Sign::Plus },
        ];
        let model = ReducedModel {
            shape: Shape::vector(4),
            blocks: vec![ModelBlock::Polyhedral { atoms: atoms.clone(), domain: Domain::Free }],
        };
        let sol = solve_reduced(&s, &model).unwrap();
        assert!((sol.coeffs[0][0] - 1.0).abs() < 1e-12 && (sol.coeffs[0][1] + 2.0).abs() < 1e-12);
        assert!((sol.f_value - 0.125).abs() < 1e-12);

        let model = ReducedModel {
            shape: Shape::vector(4),
            blocks: vec![ModelBlock::Polyhedral { atoms, domain: Domain::Nonnegative }],
        };
        let sol = solve_reduced(&s, &model).unwrap();
        assert!(sol.converged);
        assert!((sol.coeffs[0][0] - 1.0).abs() < 1e-9 && sol.coeffs[0][1].abs() < 1e-12);
        assert!((sol.f_value - 0.5 * (4.0 + 0.25)).abs() < 1e-9);
    }

    #[test]
    fn psd_block_clips_negative_directions() {
        let b = Mat::from_diagonal(&DVector::from_vec(vec![2.0, -1.0, 0.0]));
        let s = spec(LinOp::identity_on(Shape::matrix(3, 3)), b, AtomicSet::psd(3));
        let left = Mat::identity(3, 2);
        let model = ReducedModel {
            shape: Shape::matrix(3, 3),
            blocks: vec![ModelBlock::Spectral { left: left.clone(), right: left, domain: Domain::PsdMatrix(2) }],
        };
        let sol = solve_reduced(&s, &model).unwrap();
        assert!(sol.converged);
        assert!((sol.x[(0, 0)] - 2.0).abs() < 1e-9 && sol.x[(1, 1)].abs() < 1e-9);
        assert!((sol.f_value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ball_constraint_binds() {
        let b = Mat::from_column_slice(3, 1, &[3.0, 1.0, 0.0]);
        let s = spec(LinOp::identity(3), b, AtomicSet::signed(3));
        let atoms = (0..3).map(|i| Atom::SignedUnit { index: i, sign: Sign::Plus }).collect();
        let model = ReducedModel {
            shape: Shape::vector(3),
            blocks: vec![ModelBlock::Polyhedral { atoms, domain: Domain::Free }],
        };
        let opts = ReducedOptions { radius: Some(2.0), ..Default::default() };
        let sol = solve_reduced_with(&s, &model, &opts).unwrap();
        // projection of (3, 1, 0) onto the l1 ball of radius 2 is (2, 0, 0)
        assert!((sol.coeffs[0][0] - 2.0).abs() < 1e-9 && sol.coeffs[0][1].abs() < 1e-9);
    }
}
