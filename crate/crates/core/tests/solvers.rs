use std::sync::Arc;

use atomret::atoms::{Atom, AtomicSet, Budget, Domain, ModelBlock, ReducedModel, Sign};
use atomret::linops::{LinOp, Mat, Shape};
use atomret::objectives::{Formulation, Loss, ProblemSpec};
use atomret::solvers::{solve_reduced, DualOracle, LevelSetOracle, ProxOptions, ProxOracle};
use atomret::testkit::{small_instance_reference_solve, OracleConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(op: LinOp, b: &[f64], set: AtomicSet, form: Formulation, alpha: f64) -> ProblemSpec {
    let b = Mat::from_column_slice(b.len(), 1, b);
    ProblemSpec::new(Loss::HalfSqNorm, Arc::new(op), b, set, form, alpha, Budget::uniform(1), 0.0).unwrap()
}

#[test]
fn first_prox_step_clips_toward_b() {
    let s = spec(LinOp::identity(2), &[2.0, -0.1], AtomicSet::signed(2), Formulation::P1 { lambda: 0.5 }, 0.0);
    let mut o = ProxOracle::new(s, ProxOptions::default()).unwrap();
    let eta = o.step_size();
    assert!((eta - 0.5).abs() < 1e-12);
    let y = o.step().unwrap().dual.y.clone();
    // w = eta b = (1, -0.05), clipped to the unit box of radius lambda
    assert!((y[0] - 0.5).abs() < 1e-9 && (y[1] + 0.05).abs() < 1e-9, "{y}");
}

#[test]
fn prox_oracle_fixed_point() {
    let op = LinOp::dense(Mat::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0])).unwrap();
    let s = spec(op, &[1.0, 1.5], AtomicSet::signed(2), Formulation::P1 { lambda: 0.3 }, 0.0);
    let reference = small_instance_reference_solve(&s, &OracleConfig::default()).unwrap();
    let mut o = ProxOracle::starting_at(s, ProxOptions { inner_max_iter: 2000, ..Default::default() }, reference.y.clone()).unwrap();
    let y = o.step().unwrap().dual.y.clone();
    assert!((&y - &reference.y).amax() < 1e-8, "{y} vs {}", reference.y);
}

#[test]
fn level_set_one_dimensional() {
    let s = spec(LinOp::identity(1), &[2.0], AtomicSet::signed(1), Formulation::P3, 0.0);
    let mut o = LevelSetOracle::new(s).unwrap();
    for _ in 0..100 {
        if o.step().unwrap().converged {
            break;
        }
    }
    let lvl = o.state().level.unwrap();
    assert!((lvl.tau_lo - 2.0).abs() < 1e-6, "{lvl:?}");
    assert!((lvl.tau_hi.unwrap() - 2.0).abs() < 1e-6, "{lvl:?}");
}

#[test]
fn level_set_bracket_moves_up_from_feasible_level() {
    // any tau at or above the gauge of a feasible point bounds tau* from above
    let s = spec(LinOp::identity(2), &[1.0, -1.0], AtomicSet::signed(2), Formulation::P3, 0.02);
    let mut o = LevelSetOracle::new(s).unwrap();
    o.offer_primal(2.0);
    let hi0 = o.state().level.unwrap().tau_hi.unwrap();
    for _ in 0..200 {
        o.step().unwrap();
    }
    let lvl = o.state().level.unwrap();
    // the residual of norm 0.2 splits evenly: tau* = 2 - 0.2 sqrt(2)
    let tau_star = 2.0 - 0.2 * 2f64.sqrt();
    assert!(lvl.tau_hi.unwrap() <= hi0, "{lvl:?}");
    assert!(lvl.tau_lo <= tau_star + 1e-9 && lvl.tau_hi.unwrap() >= tau_star - 1e-9, "{lvl:?}");
    assert!((lvl.tau_lo - tau_star).abs() < 1e-3, "{lvl:?}");
}

#[test]
fn reduced_nonneg_single_atom() {
    let s = spec(LinOp::identity(2), &[2.0, 0.0], AtomicSet::nonneg(2), Formulation::P3, 0.0);
    let model = ReducedModel {
        shape: Shape::vector(2),
        blocks: vec![ModelBlock::Polyhedral { atoms: vec![Atom::NonnegUnit { index: 0 }], domain: Domain::Nonnegative }],
    };
    let sol = solve_reduced(&s, &model).unwrap();
    assert!((sol.coeffs[0][0] - 2.0).abs() < 1e-9 && sol.f_value < 1e-15);
}

#[test]
fn reduced_psd_negative_target_is_zero() {
    let b = -Mat::identity(3, 3);
    let s = ProblemSpec::new(
        Loss::HalfSqNorm,
        Arc::new(LinOp::identity_on(Shape::matrix(3, 3))),
        b,
        AtomicSet::psd(3),
        Formulation::P3,
        0.0,
        Budget::uniform(1),
        0.0,
    )
    .unwrap();
    let v = Mat::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
    let model = ReducedModel {
        shape: Shape::matrix(3, 3),
        blocks: vec![ModelBlock::Spectral { left: v.clone(), right: v, domain: Domain::PsdMatrix(1) }],
    };
    let sol = solve_reduced(&s, &model).unwrap();
    assert_eq!(sol.coeffs[0], vec![0.0]);
}

#[test]
fn reduced_least_squares_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-1.0..1.0));
    let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = spec(LinOp::dense(m.clone()).unwrap(), &b, AtomicSet::signed(5), Formulation::P3, 0.0);
    let atoms = (0..5).map(|i| Atom::SignedUnit { index: i, sign: Sign::Plus }).collect();
    let model = ReducedModel { shape: Shape::vector(5), blocks: vec![ModelBlock::Polyhedral { atoms, domain: Domain::Free }] };
    let sol = solve_reduced(&s, &model).unwrap();
    let bv = nalgebra::DVector::from_vec(b);
    let want = (m.transpose() * &m).cholesky().unwrap().solve(&(m.transpose() * bv));
    for (got, want) in sol.coeffs[0].iter().zip(want.iter()) {
        assert!((got - want).abs() < 1e-8);
    }
}
