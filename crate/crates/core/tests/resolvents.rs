//! Resolvent solves and their certificates.

mod common;

use linflow::diffop::{DualField, Grid, GridFunction, OperatorKind, OperatorSpec};
use linflow::energy::{dual_energy, relaxed_energy, AscentOptions, Boundary, DirichletData, Problem};
use linflow::integrand::Integrand;
use linflow::resolvent::{resolve, verify_certificate, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(cells: usize, f: &Integrand) -> Problem {
    let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 1).unwrap();
    Problem::new(op, Grid::unit(1, cells).unwrap(), f).unwrap()
}

fn step(p: &Problem) -> GridFunction {
    GridFunction::from_fn(*p.grid(), 1, |x| vec![if (0.25..=0.75).contains(&x[0]) { 1.0 } else { 0.0 }])
}

fn random(p: &Problem, rng: &mut ChaCha8Rng, amp: f64) -> GridFunction {
    let n = p.grid().nodes() * p.m();
    GridFunction::new(*p.grid(), p.m(), (0..n).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
}

fn tight() -> SolverOptions {
    SolverOptions { residual_tol: 1e-9, gap_tol: 1e-11, ..SolverOptions::default() }
}

#[test]
fn constant_data_is_its_own_resolvent() {
    for f in [Integrand::euclid(), Integrand::area(), Integrand::euclid().qpower(1.5).unwrap()] {
        let p = line(32, &f);
        let w = GridFunction::from_fn(*p.grid(), 1, |_| vec![-0.3]);
        let r = resolve(&p, &w, 0.1, &Boundary::Neumann, &SolverOptions::default(), None).unwrap();
        assert!(r.converged && r.u == w, "{}", f.id());
        let c = &r.certificate;
        assert!(c.euler_lagrange_residual <= 1e-10 && c.normal_trace_residual <= 1e-10 && c.fenchel_gap <= 1e-10);
    }
}

#[test]
fn step_plateaus_match_the_dual_oracle() {
    let p = line(64, &Integrand::euclid());
    let w = step(&p);
    let r = resolve(&p, &w, 0.01, &Boundary::Neumann, &tight(), None).unwrap();
    assert!(r.converged);
    let oracle = common::tv_denoise_1d(w.values(), p.grid().h(), 0.01, 1e-15);
    let err = r.u.values().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-4, "{err}");
    let h = p.grid().h();
    let (a, b) = (common::tv_objective_1d(r.u.values(), w.values(), h, 0.01), common::tv_objective_1d(&oracle, w.values(), h, 0.01));
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn step_certificate_passes_an_independent_recheck() {
    let p = line(64, &Integrand::euclid());
    let w = step(&p);
    let r = resolve(&p, &w, 0.01, &Boundary::Neumann, &SolverOptions::default(), None).unwrap();
    let c = verify_certificate(&p, &w, 0.01, &r.u, &r.z, &Boundary::Neumann).unwrap();
    assert_eq!(c, r.certificate);
    assert!(c.fenchel_gap <= 1e-6 * (1.0 + c.energy));
}

#[test]
fn hand_built_optimal_pair_has_zero_residuals() {
    let p = line(8, &Integrand::euclid());
    let u = GridFunction::from_fn(*p.grid(), 1, |_| vec![2.0]);
    let z = DualField::zeros(*p.grid(), 1, 1);
    let c = verify_certificate(&p, &u, 0.5, &u, &z, &Boundary::Neumann).unwrap();
    assert_eq!(
        (c.euler_lagrange_residual, c.normal_trace_residual, c.fenchel_gap, c.boundary_subgradient_residual),
        (0.0, 0.0, 0.0, 0.0)
    );
}

#[test]
fn corrupted_field_is_flagged_with_its_cell() {
    let p = line(32, &Integrand::euclid());
    let w = step(&p);
    let r = resolve(&p, &w, 0.01, &Boundary::Neumann, &SolverOptions::default(), None).unwrap();
    let mut z = r.z.clone();
    // cells next to a jump sit on the boundary of the unit ball
    let c = 7;
    z.cell_values_mut()[c] += 0.5 * z.cell_values()[c].signum();
    let cert = verify_certificate(&p, &w, 0.01, &r.u, &z, &Boundary::Neumann).unwrap();
    assert_eq!(cert.inadmissible_cell, Some(c));
    assert!(!cert.admissible());
}

#[test]
fn resolvent_is_non_expansive() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for f in [Integrand::euclid(), Integrand::area()] {
        let p = line(32, &f);
        for _ in 0..10 {
            let (w, v) = (random(&p, &mut rng, 1.0), random(&p, &mut rng, 1.0));
            let lambda = rng.gen_range(0.005..0.05);
            let a = resolve(&p, &w, lambda, &Boundary::Neumann, &tight(), None).unwrap();
            let b = resolve(&p, &v, lambda, &Boundary::Neumann, &tight(), None).unwrap();
            assert!(a.converged && b.converged);
            assert!(a.u.distance(&b.u) <= w.distance(&v) * (1.0 + 1e-8));
        }
    }
}

#[test]
fn energy_inequality_of_the_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let p = line(32, &Integrand::euclid());
    for _ in 0..10 {
        let w = random(&p, &mut rng, 1.0);
        let lambda = 0.02;
        let r = resolve(&p, &w, lambda, &Boundary::Neumann, &tight(), None).unwrap();
        let fw = relaxed_energy(&p, &w, &Boundary::Neumann, AscentOptions::default()).unwrap().dual;
        let d = r.u.distance(&w);
        assert!(0.5 * d * d / lambda + r.certificate.energy <= fw + 1e-7);
    }
}

#[test]
fn residual_history_trends_down() {
    let p = line(64, &Integrand::euclid());
    let r = resolve(&p, &step(&p), 0.01, &Boundary::Neumann, &tight(), None).unwrap();
    let h = &r.history;
    assert!(h.len() >= 10);
    let tail = &h[h.len() - 10..];
    assert!(tail[9] <= tail[0], "{tail:?}");
    assert!(*tail.last().unwrap() <= 1e-9);
}

#[test]
fn certificate_field_attains_the_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for f in [Integrand::euclid(), Integrand::area()] {
        let p = line(32, &f);
        let w = random(&p, &mut rng, 1.0);
        let r = resolve(&p, &w, 0.02, &Boundary::Neumann, &tight(), None).unwrap();
        let d = dual_energy(&p, &r.u, &r.z, &Boundary::Neumann).unwrap();
        let c = &r.certificate;
        assert!((c.energy - d - c.fenchel_gap).abs() < 1e-12, "{}", f.id());
    }
}

#[test]
fn relaxed_boundary_inclusion_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for f in [Integrand::euclid(), Integrand::area()] {
        let p = line(32, &f);
        for _ in 0..5 {
            let w = random(&p, &mut rng, 1.0);
            let bc = Boundary::Dirichlet(DirichletData::new(vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]));
            let r = resolve(&p, &w, 0.02, &bc, &SolverOptions::default(), None).unwrap();
            assert!(r.converged, "{}: {:?}", f.id(), r.certificate);
            assert!(r.certificate.boundary_subgradient_residual <= 1e-7);
        }
    }
}

#[test]
fn extension_data_on_a_norm_integrand_stays_relaxed() {
    let p = line(64, &Integrand::euclid());
    let ext = GridFunction::from_fn(*p.grid(), 1, |_| vec![0.5]);
    let bc = Boundary::Dirichlet(DirichletData::from_extension(ext));
    let r = resolve(&p, &step(&p), 1e-3, &bc, &SolverOptions::default(), None).unwrap();
    assert!(r.converged, "{:?}", r.certificate);
    // the boundary node is not forced onto the data
    assert!(r.u.values()[0] < 0.1);
}

#[test]
fn symmetric_gradient_in_two_dimensions() {
    let op = OperatorSpec::new(OperatorKind::SymmetricGradient, 2, 2).unwrap();
    let p = Problem::new(op, Grid::unit(2, 8).unwrap(), &Integrand::euclid()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let w = random(&p, &mut rng, 1.0);
    let r = resolve(&p, &w, 0.01, &Boundary::Neumann, &SolverOptions::default(), None).unwrap();
    assert!(r.converged, "{:?}", r.certificate);
    let a = relaxed_energy(&p, &w, &Boundary::Neumann, AscentOptions::default()).unwrap().dual;
    assert!(r.certificate.energy < a);
}

#[test]
fn large_step_projects_onto_constants() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let p = line(16, &Integrand::euclid());
    let w = random(&p, &mut rng, 1.0);
    let r = resolve(&p, &w, 100.0, &Boundary::Neumann, &SolverOptions::default(), None).unwrap();
    assert!(r.converged);
    let mean = w.mass()[0] / p.grid().volume();
    assert!(r.u.values().iter().all(|v| (v - mean).abs() < 1e-6));
}
