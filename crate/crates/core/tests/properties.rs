//! Randomized invariants of the integrands, operators and energies.

use linflow::diffop::{BoundaryMode, DualField, Grid, GridFunction, OperatorKind, OperatorSpec};
use linflow::energy::{boundary_integrand_h, relaxed_energy, AscentOptions, Boundary, Problem};
use linflow::integrand::{ConjugateValue, Integrand, Point};
use proptest::prelude::*;

fn catalog() -> Vec<Integrand> {
    vec![
        Integrand::euclid(),
        Integrand::area(),
        Integrand::xweight(0.5, 1.0).unwrap(),
        Integrand::kweight(7, Some(6)),
        Integrand::perturbed(Integrand::euclid(), 0.25, 1.0).unwrap(),
        Integrand::euclid().qpower(1.5).unwrap(),
        Integrand::area().qpower(1.3).unwrap(),
        Integrand::euclid().moreau_of(0.1).unwrap(),
    ]
}

fn linear_growth() -> Vec<Integrand> {
    catalog().into_iter().filter(|f| f.growth().is_some()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

prop_compose! {
    fn point()(a in 0.0..1.0f64, b in 0.0..1.0f64) -> Point { [a, b] }
}

prop_compose! {
    fn vector(r: f64)(a in -r..r, b in -r..r) -> Vec<f64> { vec![a, b] }
}

fn operator() -> impl Strategy<Value = (OperatorKind, usize, usize)> {
    prop_oneof![
        Just((OperatorKind::FullGradient, 1, 1)),
        Just((OperatorKind::FullGradient, 1, 2)),
        Just((OperatorKind::FullGradient, 2, 2)),
        Just((OperatorKind::SymmetricGradient, 2, 2)),
        Just((OperatorKind::Divergence, 2, 2)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_identity((kind, m, n) in operator(), cells in 2usize..7, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let op = OperatorSpec::new(kind, m, n).unwrap();
        let grid = Grid::unit(n, cells).unwrap();
        let d = m * n;
        let u = GridFunction::new(grid, m, (0..grid.nodes() * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let z = DualField::new(
            &op,
            grid,
            (0..grid.cells() * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..grid.faces().len() * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let lhs = op.apply(&u).unwrap().inner_cells(&z);
        let neumann = u.inner(&op.adjoint_div(&z, BoundaryMode::Neumann).unwrap());
        prop_assert!((lhs + neumann).abs() <= 1e-12 * (1.0 + lhs.abs()));
        if op.c_elliptic() {
            let tc = u.inner(&op.adjoint_div(&z, BoundaryMode::TraceCarrying).unwrap());
            let b = op.boundary_pairing(&z, &u.trace()).unwrap();
            prop_assert!((lhs + tc - b).abs() <= 1e-12 * (1.0 + lhs.abs() + b.abs()));
        }
    }

    #[test]
    fn fenchel_young(i in 0usize..8, x in point(), y in vector(4.0), z in vector(2.5)) {
        let f = &catalog()[i];
        if let ConjugateValue::Finite(c) = f.conjugate(x, &z).unwrap() {
            prop_assert!(f.evaluate(x, &y) + c >= dot(&y, &z) - 1e-9, "{}", f.id());
        }
        let g = f.subgradient(x, &y);
        let c = f.conjugate(x, &g).unwrap().value();
        prop_assert!(c.is_some(), "{}: subgradient outside the domain", f.id());
        let defect = f.evaluate(x, &y) + c.unwrap() - dot(&y, &g);
        prop_assert!(defect.abs() <= 1e-6 * (1.0 + norm(&y)), "{}: {defect}", f.id());
    }

    #[test]
    fn biconjugate_recovers_the_integrand(i in 0usize..5, x in point(), t in -4.0..4.0f64) {
        let f = &linear_growth()[i % linear_growth().len()];
        // dom f* lies in the ball of radius C₀
        let r = f.lipschitz();
        let n = 20_000;
        let sup = (0..=n)
            .filter_map(|k| {
                let s = -r + 2.0 * r * k as f64 / n as f64;
                f.conjugate(x, &[s]).unwrap().value().map(|c| t * s - c)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let v = f.evaluate(x, &[t]);
        // a sample step of 2r/n misses the maximizer by at most |t|·2r/n
        let resolution = (1.0 + t.abs()) * 2.0 * r / n as f64;
        prop_assert!(sup <= v + 1e-9 && v - sup <= resolution, "{}: {sup} vs {v}", f.id());
    }

    #[test]
    fn moreau_sandwich(i in 0usize..8, x in point(), y in vector(5.0), lambda in prop_oneof![Just(1e-3), Just(0.1), Just(1.0), 1e-3..1.0f64]) {
        let f = &catalog()[i];
        let c0 = f.lipschitz();
        let (fy, env) = (f.evaluate(x, &y), f.moreau(lambda, x, &y));
        prop_assert!(env <= fy + 1e-12);
        if f.growth().is_some() {
            prop_assert!(fy - c0 * c0 * lambda / 2.0 <= env + 1e-12, "{}", f.id());
        }
    }

    #[test]
    fn prox_is_non_expansive(i in 0usize..8, x in point(), a in vector(5.0), b in vector(5.0), lambda in 1e-3..1.0f64) {
        let f = &catalog()[i];
        let (pa, pb) = (f.prox(lambda, x, &a), f.prox(lambda, x, &b));
        let d: Vec<f64> = pa.iter().zip(&pb).map(|(s, t)| s - t).collect();
        let e: Vec<f64> = a.iter().zip(&b).map(|(s, t)| s - t).collect();
        prop_assert!(norm(&d) <= norm(&e) * (1.0 + 1e-9) + 1e-12, "{}", f.id());
    }

    #[test]
    fn recession_is_homogeneous_and_coercive(i in 0usize..5, x in point(), y in vector(5.0), t in 0.0..100.0f64) {
        let f = &linear_growth()[i % linear_growth().len()];
        let (c0, _) = f.growth().unwrap();
        let r = f.recession(x, &y).unwrap();
        let ty: Vec<f64> = y.iter().map(|v| t * v).collect();
        prop_assert!((f.recession(x, &ty).unwrap() - t * r).abs() <= 1e-12 * (1.0 + t * r));
        prop_assert!(r >= c0 * norm(&f.project(&y)) - 1e-12);
    }

    #[test]
    fn boundary_integrand_is_homogeneous(i in 0usize..5, x in point(), v in vector(3.0), t in 0.0..10.0f64, side in 0usize..4) {
        let f = &linear_growth()[i % linear_growth().len()];
        let normal = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]][side];
        let a = boundary_integrand_h(f, x, &v, &normal).unwrap();
        let tv: Vec<f64> = v.iter().map(|s| t * s).collect();
        let b = boundary_integrand_h(f, x, &tv, &normal).unwrap();
        prop_assert!(a >= 0.0 && (b - t * a).abs() <= 1e-12 * (1.0 + t * a));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_duality(i in 0usize..5, values in proptest::collection::vec(-2.0..2.0f64, 17)) {
        let f = &linear_growth()[i % linear_growth().len()];
        let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 1).unwrap();
        let p = Problem::new(op, Grid::unit(1, 16).unwrap(), f).unwrap();
        let u = GridFunction::new(*p.grid(), 1, values).unwrap();
        let r = relaxed_energy(&p, &u, &Boundary::Neumann, AscentOptions::default()).unwrap();
        prop_assert!(r.dual <= r.primal + 1e-8, "{}: {} > {}", f.id(), r.dual, r.primal);
    }
}
