//! Discrete operators, their adjoints and the boundary pairing.

use linflow::diffop::{BoundaryMode, DualField, Grid, GridFunction, OperatorKind, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(op: &OperatorSpec, grid: Grid, rng: &mut ChaCha8Rng) -> (GridFunction, DualField) {
    let u = GridFunction::new(grid, op.m(), (0..grid.nodes() * op.m()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let d = op.m() * op.n();
    let cells = (0..grid.cells() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let faces = (0..grid.faces().len() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (u, DualField::new(op, grid, cells, faces).unwrap())
}

#[test]
fn three_node_hand_example() {
    let grid = Grid::line(2, 0.5).unwrap();
    let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 1).unwrap();
    let u = GridFunction::new(grid, 1, vec![0.0, 1.0, 0.0]).unwrap();
    let z = DualField::new(&op, grid, vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
    let du = op.apply(&u).unwrap();
    assert_eq!(du.cell_values(), &[2.0, -2.0]);
    assert_eq!(du.inner_cells(&z), 0.0);
    let div = op.adjoint_div(&z, BoundaryMode::Neumann).unwrap();
    assert_eq!(div.values()[1], 0.0);
    assert_eq!(u.inner(&div), 0.0);
}

#[test]
fn divergence_of_zero_is_zero() {
    for (kind, m, n) in [(OperatorKind::FullGradient, 2, 2), (OperatorKind::SymmetricGradient, 2, 2), (OperatorKind::Divergence, 2, 2)] {
        let op = OperatorSpec::new(kind, m, n).unwrap();
        let grid = Grid::unit(2, 4).unwrap();
        let z = DualField::zeros(grid, m, n);
        assert!(op.adjoint_div(&z, BoundaryMode::Neumann).unwrap().values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn green_identity_on_eight_by_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = Grid::unit(2, 8).unwrap();
    for (kind, m) in [(OperatorKind::FullGradient, 1), (OperatorKind::FullGradient, 2), (OperatorKind::SymmetricGradient, 2), (OperatorKind::Divergence, 2)] {
        let op = OperatorSpec::new(kind, m, 2).unwrap();
        for _ in 0..10 {
            let (u, z) = random_pair(&op, grid, &mut rng);
            let lhs = op.apply(&u).unwrap().inner_cells(&z);
            let rhs = u.inner(&op.adjoint_div(&z, BoundaryMode::Neumann).unwrap());
            let scale = lhs.abs() + rhs.abs() + 1.0;
            assert!((lhs + rhs).abs() <= 1e-12 * scale, "{kind:?}: {}", lhs + rhs);
            if op.c_elliptic() {
                let tc = u.inner(&op.adjoint_div(&z, BoundaryMode::TraceCarrying).unwrap());
                let pairing = op.boundary_pairing(&z, &u.trace()).unwrap();
                assert!((lhs + tc - pairing).abs() <= 1e-12 * (scale + pairing.abs()));
            }
        }
    }
}

#[test]
fn divergence_kind_has_no_trace() {
    let op = OperatorSpec::new(OperatorKind::Divergence, 2, 2).unwrap();
    assert!(!op.c_elliptic());
    let grid = Grid::unit(2, 4).unwrap();
    let z = DualField::zeros(grid, 2, 2);
    assert!(op.adjoint_div(&z, BoundaryMode::TraceCarrying).is_err());
    assert!(op.boundary_pairing(&z, &vec![0.0; grid.faces().len() * 2]).is_err());
}

#[test]
fn projection_is_symmetric_and_idempotent() {
    for (kind, m, n) in [
        (OperatorKind::FullGradient, 1, 1),
        (OperatorKind::FullGradient, 2, 2),
        (OperatorKind::SymmetricGradient, 2, 2),
        (OperatorKind::Divergence, 2, 2),
    ] {
        let op = OperatorSpec::new(kind, m, n).unwrap();
        let a = op.projection();
        let d = m * n;
        let col = |j: usize| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            a.apply(&e)
        };
        for i in 0..d {
            let ci = col(i);
            assert!(a.apply(&ci).iter().zip(&ci).all(|(x, y)| (x - y).abs() < 1e-14));
            for (j, cij) in ci.iter().enumerate() {
                assert!((cij - col(j)[i]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn one_dimensional_pairing_orientation() {
    let grid = Grid::unit(1, 4).unwrap();
    let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 1).unwrap();
    let (za, zb, a, b) = (0.7, -1.3, 2.0, 5.0);
    let z = DualField::new(&op, grid, vec![0.0; 4], vec![za, zb]).unwrap();
    assert_eq!(op.boundary_pairing(&z, &[a, b]).unwrap(), zb * b - za * a);
    let zeros = DualField::zeros(grid, 1, 1);
    assert_eq!(op.boundary_pairing(&zeros, &[a, b]).unwrap(), 0.0);
}

#[test]
fn square_pairing_matches_side_integrals() {
    // Side length L = 1 with nx = ny = 4: the perimeter integral of ⟨v, zν⟩
    // for constant z and v vanishes, and v supported on the right side gives
    // L·⟨v, z e₁⟩.
    let grid = Grid::unit(2, 4).unwrap();
    let op = OperatorSpec::new(OperatorKind::FullGradient, 2, 2).unwrap();
    let zc = [0.3, -0.2, 0.5, 0.9];
    let faces = grid.faces();
    let z = DualField::new(&op, grid, zc.repeat(grid.cells()), zc.repeat(faces.len())).unwrap();
    let v = [1.5, -0.5];
    let total = op.boundary_pairing(&z, &v.repeat(faces.len())).unwrap();
    assert!(total.abs() < 1e-15);
    let right: Vec<f64> = faces.iter().flat_map(|f| if f.normal[0] > 0.5 { v.to_vec() } else { vec![0.0, 0.0] }).collect();
    let expected = v[0] * zc[0] + v[1] * zc[2];
    assert!((op.boundary_pairing(&z, &right).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn constants_and_rigid_motions_are_in_the_kernel() {
    let grid = Grid::unit(2, 6).unwrap();
    let grad = OperatorSpec::new(OperatorKind::FullGradient, 2, 2).unwrap();
    let c = GridFunction::from_fn(grid, 2, |_| vec![0.4, -1.1]);
    assert!(grad.apply(&c).unwrap().max_cell_norm() == 0.0);
    let sym = OperatorSpec::new(OperatorKind::SymmetricGradient, 2, 2).unwrap();
    let rigid = GridFunction::from_fn(grid, 2, |x| vec![0.2 - 0.7 * x[1], 1.0 + 0.7 * x[0]]);
    assert!(sym.apply(&rigid).unwrap().max_cell_norm() < 1e-14);
}

#[test]
fn neumann_adjoint_of_constant_field_is_boundary_supported() {
    // With the face layer ignored, a constant cell field has divergence only
    // at the boundary nodes, where the missing face flux shows up.
    let grid = Grid::unit(2, 5).unwrap();
    let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 2).unwrap();
    let z = DualField::new(&op, grid, [1.0, 2.0].repeat(grid.cells()), vec![0.0; grid.faces().len() * 2]).unwrap();
    let div = op.adjoint_div(&z, BoundaryMode::Neumann).unwrap();
    for i in 0..grid.nodes() {
        if !grid.is_boundary_node(i) {
            assert!(div.values()[i].abs() < 1e-12);
        }
    }
    let mut filled = z.clone();
    filled.extend_to_faces();
    let tc = op.adjoint_div(&filled, BoundaryMode::TraceCarrying).unwrap();
    assert!(tc.values().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let op = OperatorSpec::new(OperatorKind::FullGradient, 1, 2).unwrap();
    let u = GridFunction::zeros(Grid::unit(1, 4).unwrap(), 1);
    assert!(op.apply(&u).is_err());
    assert!(GridFunction::new(Grid::unit(1, 4).unwrap(), 1, vec![0.0; 3]).is_err());
    assert!(GridFunction::new(Grid::unit(1, 2).unwrap(), 1, vec![0.0, f64::NAN, 0.0]).is_err());
}
