//! Primal, dual and relaxed energies, with Neumann or relaxed Dirichlet
//! boundary conditions.

use rayon::prelude::*;
use serde::Serialize;

use crate::diffop::{BoundaryMode, DualField, Face, Grid, GridFunction, OperatorSpec};
use crate::error::{Error, Result};
use crate::integrand::{CellIntegrand, ConjugateValue, Integrand, Point, DOMAIN_TOL};
use crate::linalg::{dot, norm, outer};

/// An integrand discretized on a grid for a given operator.
#[derive(Debug, Clone)]
pub struct Problem {
    op: OperatorSpec,
    grid: Grid,
    f: Integrand,
    cells: Vec<CellIntegrand>,
    faces: Vec<Face>,
    face_radius: Vec<f64>,
}

impl Problem {
    pub fn new(op: OperatorSpec, grid: Grid, f: &Integrand) -> Result<Self> {
        if grid.dim() != op.n() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}-dimensional, grid is {}-dimensional",
                op.n(),
                grid.dim()
            )));
        }
        let f = f.clone().with_projection(op.projection().clone()).for_cells(grid.shape()[0]);
        let cells: Vec<CellIntegrand> = (0..grid.cells())
            .map(|c| {
                let (lo, hi, centre) = grid.cell_box(c);
                f.cell(lo, hi, centre)
            })
            .collect();
        let faces = grid.faces();
        let face_radius = faces.iter().map(|face| cells[face.cell].trace_radius()).collect();
        Ok(Problem { op, grid, f, cells, faces, face_radius })
    }

    pub fn op(&self) -> &OperatorSpec {
        &self.op
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The integrand bound to this operator's projection and grid.
    pub fn integrand(&self) -> &Integrand {
        &self.f
    }

    pub fn cell(&self, c: usize) -> &CellIntegrand {
        &self.cells[c]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Bound on admissible `|z_f|` for the boundary layer; `+∞` when the
    /// integrand has superlinear growth.
    pub fn face_radius(&self, face: usize) -> f64 {
        self.face_radius[face]
    }

    /// Whether every boundary face carries a finite trace bound (otherwise
    /// Dirichlet data must be imposed strongly).
    pub fn has_relaxed_boundary(&self) -> bool {
        self.face_radius.iter().all(|r| r.is_finite())
    }

    /// `A(v ⊗ ν_f)` for boundary data `v` on face `fi`.
    pub fn boundary_jump(&self, fi: usize, v: &[f64]) -> Vec<f64> {
        let n = self.op.n();
        self.op.projection().apply(&outer(v, &self.faces[fi].normal[..n]))
    }

    /// Boundary penalty `h_f(v) = sup_{|ζ| ≤ r_f} −⟨ζν, v⟩ = r_f |A(v ⊗ ν)|`.
    pub fn boundary_h(&self, fi: usize, v: &[f64]) -> f64 {
        let jump = norm(&self.boundary_jump(fi, v));
        if jump == 0.0 {
            0.0
        } else {
            self.face_radius[fi] * jump
        }
    }

    pub fn m(&self) -> usize {
        self.op.m()
    }

    fn entry_dim(&self) -> usize {
        self.op.m() * self.op.n()
    }
}

/// Boundary values `u₁`, one `m`-vector per boundary face.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletData {
    pub u1: Vec<f64>,
    /// Interior extension of the data, required where the boundary
    /// condition has to be imposed strongly.
    pub extension: Option<GridFunction>,
}

impl DirichletData {
    pub fn new(u1: Vec<f64>) -> Self {
        DirichletData { u1, extension: None }
    }

    /// Samples `g` at face midpoints.
    pub fn from_fn(grid: &Grid, g: impl Fn(Point) -> Vec<f64>) -> Self {
        DirichletData::new(grid.faces().iter().flat_map(|f| g(f.midpoint)).collect())
    }

    /// Boundary data given as the trace of an extension.
    pub fn from_extension(ext: GridFunction) -> Self {
        DirichletData { u1: ext.trace(), extension: Some(ext) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Boundary {
    #[default]
    Neumann,
    Dirichlet(DirichletData),
}

impl Boundary {
    pub fn mode(&self) -> BoundaryMode {
        match self {
            Boundary::Neumann => BoundaryMode::Neumann,
            Boundary::Dirichlet(_) => BoundaryMode::TraceCarrying,
        }
    }

    pub fn dirichlet(&self) -> Option<&DirichletData> {
        match self {
            Boundary::Dirichlet(d) => Some(d),
            Boundary::Neumann => None,
        }
    }

    pub(crate) fn check(&self, p: &Problem) -> Result<()> {
        if let Boundary::Dirichlet(d) = self {
            if !p.op.c_elliptic() {
                return Err(Error::NotCElliptic(p.op.kind().name()));
            }
            let expected = p.faces.len() * p.m();
            if d.u1.len() != expected {
                return Err(Error::DimensionMismatch(format!(
                    "boundary data has {} values, expected {expected}",
                    d.u1.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { max_iters: 10_000, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    #[serde(skip)]
    pub z: DualField,
    pub boundary_term: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Direct dual supremum, reported alongside the representation value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direct_dual: Option<f64>,
}

impl EnergyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("energy report serializes")
    }
}

/// `Σ_c hⁿ f_c(𝔸u)`, the integral of the unrelaxed integrand.
pub fn primal_energy(p: &Problem, u: &GridFunction) -> Result<f64> {
    let y = p.op.apply(u)?;
    let d = p.entry_dim();
    Ok(p.grid.cell_volume()
        * y.cell_values().chunks(d).zip(&p.cells).map(|(yc, cell)| cell.primal(yc)).sum::<f64>())
}

/// `Σ_c hⁿ g_c(𝔸u)` with the relaxed cell integrand; this is the exact dual
/// supremum in Neumann mode.
pub fn relaxed_value(p: &Problem, y: &DualField) -> f64 {
    let d = p.entry_dim();
    p.grid.cell_volume()
        * y.cell_values().chunks(d).zip(&p.cells).map(|(yc, cell)| cell.relaxed(yc)).sum::<f64>()
}

/// `Σ_c hⁿ f*_c(z_c)`, rejecting the first cell where it is infinite.
pub fn conjugate_sum(p: &Problem, z: &DualField) -> Result<f64> {
    let mut total = 0.0;
    for (c, cell) in p.cells.iter().enumerate() {
        match cell.conjugate(z.cell(c))? {
            ConjugateValue::Finite(v) => total += v,
            ConjugateValue::Infinite => return Err(Error::InadmissibleCell { cell: c }),
        }
    }
    Ok(p.grid.cell_volume() * total)
}

/// Rejects the first boundary face with `|ζ_f|` beyond its trace bound.
pub fn check_faces(p: &Problem, z: &DualField) -> Result<()> {
    for fi in 0..p.faces.len() {
        if norm(z.face(fi)) > p.face_radius[fi] * (1.0 + DOMAIN_TOL) {
            return Err(Error::InadmissibleFace { face: fi });
        }
    }
    Ok(())
}

/// Dual energy of an admissible field `z`.
///
/// Neumann: `−Σ hⁿ f*(z) + ⟨z, 𝔸u⟩`. Dirichlet:
/// `−Σ hⁿ f*(z) − ⟨u, div z⟩ + Σ_f w_f ⟨z_f ν_f, u₁⟩` with the trace-carrying
/// divergence, which equals the Neumann value minus `Σ_f w_f ⟨z_f ν_f, u − u₁⟩`.
pub fn dual_energy(p: &Problem, u: &GridFunction, z: &DualField, bc: &Boundary) -> Result<f64> {
    bc.check(p)?;
    let conj = conjugate_sum(p, z)?;
    match bc {
        Boundary::Neumann => {
            let y = p.op.apply(u)?;
            Ok(z.inner_cells(&y) - conj)
        }
        Boundary::Dirichlet(d) => {
            check_faces(p, z)?;
            let div = p.op.adjoint_div(z, BoundaryMode::TraceCarrying)?;
            let boundary: f64 = z
                .normal_traces()
                .chunks(p.m())
                .zip(d.u1.chunks(p.m()))
                .zip(&p.faces)
                .map(|((zn, u1), face)| face.weight * dot(zn, u1))
                .sum();
            Ok(-conj - u.inner(&div) + boundary)
        }
    }
}

/// Cellwise proximal ascent `z ← prox_{τ f*}(z + τ y)` from the minimal-norm
/// subgradient; returns the number of sweeps and whether it settled.
fn ascend_cells(p: &Problem, y: &DualField, z: &mut DualField, opts: AscentOptions) -> (usize, bool) {
    let d = p.entry_dim();
    let results: Vec<(usize, bool)> = z
        .cell_values_mut()
        .par_chunks_mut(d)
        .zip(y.cell_values().par_chunks(d))
        .zip(p.cells.par_iter())
        .map(|((zc, yc), cell)| {
            zc.copy_from_slice(&cell.maximizer(yc));
            let tau = 1.0;
            let mut next = vec![0.0; d];
            for it in 1..=opts.max_iters {
                for k in 0..d {
                    next[k] = zc[k] + tau * yc[k];
                }
                cell.prox_conjugate(tau, &mut next);
                let change = next.iter().zip(zc.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                zc.copy_from_slice(&next);
                if change <= opts.tol * (1.0 + norm(zc)) {
                    return (it, true);
                }
            }
            (opts.max_iters, false)
        })
        .collect();
    results.iter().fold((0, true), |(it, ok), &(i, c)| (it.max(i), ok && c))
}

/// Maximizes the dual energy over admissible fields.
///
/// In Dirichlet mode the face layer is set to the exact maximizer of
/// `−⟨ζν, u − u₁⟩` on its ball and the dual value is the direct supremum.
pub fn relaxed_energy(p: &Problem, u: &GridFunction, bc: &Boundary, opts: AscentOptions) -> Result<EnergyReport> {
    bc.check(p)?;
    let y = p.op.apply(u)?;
    let mut z = DualField::zeros(p.grid, p.op.m(), p.op.n());
    let (iterations, converged) = ascend_cells(p, &y, &mut z, opts);
    let primal_cells = primal_energy(p, u)?;
    match bc {
        Boundary::Neumann => {
            let dual = dual_energy(p, u, &z, bc)?;
            Ok(EnergyReport {
                primal: primal_cells,
                dual,
                gap: primal_cells - dual,
                z,
                boundary_term: 0.0,
                iterations,
                converged,
                direct_dual: None,
            })
        }
        Boundary::Dirichlet(data) => {
            let mismatch = boundary_mismatch(u, data);
            let m = p.m();
            let mut boundary_term = 0.0;
            let d = p.entry_dim();
            let mut pinned_violation = false;
            for fi in 0..p.faces.len() {
                let v = &mismatch[fi * m..(fi + 1) * m];
                let jump = p.boundary_jump(fi, v);
                let jn = norm(&jump);
                let radius = p.face_radius[fi];
                let zf = &mut z.face_values_mut()[fi * d..(fi + 1) * d];
                if jn == 0.0 {
                    zf.iter_mut().for_each(|x| *x = 0.0);
                } else if radius.is_finite() {
                    zf.iter_mut().zip(&jump).for_each(|(x, j)| *x = -radius * j / jn);
                    boundary_term += p.faces[fi].weight * radius * jn;
                } else {
                    pinned_violation = true;
                }
            }
            let dual = if pinned_violation { f64::INFINITY } else { dual_energy(p, u, &z, bc)? };
            if pinned_violation {
                boundary_term = f64::INFINITY;
            }
            let primal = primal_cells + boundary_term;
            Ok(EnergyReport {
                primal,
                dual,
                gap: primal - dual,
                z,
                boundary_term,
                iterations,
                converged,
                direct_dual: None,
            })
        }
    }
}

/// `u − u₁` on boundary faces.
pub fn boundary_mismatch(u: &GridFunction, data: &DirichletData) -> Vec<f64> {
    u.trace().iter().zip(&data.u1).map(|(t, b)| t - b).collect()
}

/// `h(x, v) = f^∞(x, −v ⊗ ν)`.
pub fn boundary_integrand_h(f: &Integrand, x: Point, v: &[f64], normal: &[f64]) -> Result<f64> {
    let jump: Vec<f64> = outer(v, normal).iter().map(|e| -e).collect();
    f.recession(x, &jump)
}

/// `F(𝔸u) + Σ_f w_f h_f(u − u₁)`, cross-checked against the direct dual
/// supremum (reported as `direct_dual`).
pub fn dirichlet_energy(p: &Problem, u: &GridFunction, data: &DirichletData, opts: AscentOptions) -> Result<EnergyReport> {
    let bc = Boundary::Dirichlet(data.clone());
    bc.check(p)?;
    let neumann = relaxed_energy(p, u, &Boundary::Neumann, opts)?;
    let mismatch = boundary_mismatch(u, data);
    let m = p.m();
    let boundary_term: f64 = (0..p.faces.len())
        .map(|fi| p.faces[fi].weight * p.boundary_h(fi, &mismatch[fi * m..(fi + 1) * m]))
        .sum();
    let direct = relaxed_energy(p, u, &bc, opts)?;
    let dual = neumann.dual + boundary_term;
    let primal = neumann.primal + boundary_term;
    Ok(EnergyReport {
        primal,
        dual,
        gap: primal - dual,
        z: direct.z,
        boundary_term,
        iterations: neumann.iterations.max(direct.iterations),
        converged: neumann.converged && direct.converged,
        direct_dual: Some(direct.dual),
    })
}

/// `‖𝔸u‖₁ = Σ_c hⁿ |𝔸u|`.
pub fn total_variation(p: &Problem, u: &GridFunction) -> Result<f64> {
    Ok(p.op.apply(u)?.l1())
}
