//! First-order operators `𝔸 = A·D` on regular grids in one and two
//! dimensions, with an exactly adjoint discrete divergence.
//!
//! Fields `u` live on grid nodes and carry the trapezoidal node weights.
//! `𝔸u` lives on cells (weight `hⁿ`): the forward difference in 1D, the
//! cell-averaged (bilinear) gradient in 2D. A dual field additionally holds
//! one `m × n` matrix per boundary face; that layer is what the trace-carrying
//! divergence pairs with `u` on the boundary. Neumann mode treats it as zero.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::integrand::Point;
use crate::linalg::{dot, mat_vec, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    FullGradient,
    SymmetricGradient,
    Divergence,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::FullGradient => "full-gradient",
            OperatorKind::SymmetricGradient => "symmetric-gradient",
            OperatorKind::Divergence => "divergence",
        }
    }
}

/// The operator `𝔸 = A·D` acting on `m`-component fields in `n` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    kind: OperatorKind,
    proj: Projection,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, m: usize, n: usize) -> Result<Self> {
        if m == 0 || !(1..=2).contains(&n) {
            return Err(Error::DimensionMismatch(format!("unsupported field shape m={m}, n={n}")));
        }
        let proj = match kind {
            OperatorKind::FullGradient => Projection::identity(m, n),
            OperatorKind::SymmetricGradient | OperatorKind::Divergence if m != n => {
                return Err(Error::DimensionMismatch(format!(
                    "{} needs m = n, got m={m}, n={n}",
                    kind.name()
                )))
            }
            OperatorKind::SymmetricGradient => Projection::symmetric(n),
            OperatorKind::Divergence => Projection::trace_part(n),
        };
        Ok(OperatorSpec { kind, proj })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn projection(&self) -> &Projection {
        &self.proj
    }

    /// Components of `u`.
    pub fn m(&self) -> usize {
        self.proj.rows()
    }

    /// Spatial dimension.
    pub fn n(&self) -> usize {
        self.proj.cols()
    }

    /// Whether the operator admits boundary traces. The divergence is
    /// ℂ-elliptic only in one dimension, where it is the ordinary derivative.
    pub fn c_elliptic(&self) -> bool {
        match self.kind {
            OperatorKind::FullGradient | OperatorKind::SymmetricGradient => true,
            OperatorKind::Divergence => self.n() == 1,
        }
    }

    fn require_c_elliptic(&self) -> Result<()> {
        if self.c_elliptic() {
            Ok(())
        } else {
            Err(Error::NotCElliptic(self.kind.name()))
        }
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {}-dimensional, grid is {}-dimensional",
                self.n(),
                grid.dim()
            )));
        }
        Ok(())
    }

    /// `𝔸u` on cells; the face layer of the result is zero.
    pub fn apply(&self, u: &GridFunction) -> Result<DualField> {
        self.check(&u.grid)?;
        let (m, n) = (self.m(), self.n());
        if u.m != m {
            return Err(Error::DimensionMismatch(format!("field has {} components, operator expects {m}", u.m)));
        }
        let grid = u.grid;
        let mut cells = vec![0.0; grid.cells() * m * n];
        self.apply_into(&grid, &u.values, &mut cells);
        Ok(DualField { grid, m, n, cells, faces: vec![0.0; grid.faces().len() * m * n] })
    }

    /// Slice form of [`OperatorSpec::apply`]: node values in, cell values out.
    pub fn apply_into(&self, grid: &Grid, u: &[f64], cells: &mut [f64]) {
        let (m, n) = (self.m(), self.n());
        let d = m * n;
        for (c, out) in cells.chunks_mut(d).enumerate() {
            out.iter_mut().for_each(|v| *v = 0.0);
            grid.for_each_stencil(c, |node, dir, coef| {
                for a in 0..m {
                    out[a * n + dir] += coef * u[node * m + a];
                }
            });
            self.proj.apply_in_place(out);
        }
    }

    /// Negative weighted adjoint of [`OperatorSpec::apply`].
    ///
    /// With `BoundaryMode::Neumann` the face layer is ignored and
    /// `⟨𝔸u, z⟩ + ⟨u, div z⟩ = 0` holds exactly; with
    /// `BoundaryMode::TraceCarrying` the defect equals
    /// [`OperatorSpec::boundary_pairing`] of `z` with the trace of `u`.
    pub fn adjoint_div(&self, z: &DualField, mode: BoundaryMode) -> Result<GridFunction> {
        self.check(&z.grid)?;
        if z.m != self.m() || z.n != self.n() {
            return Err(Error::DimensionMismatch("dual field shape does not match operator".into()));
        }
        if mode == BoundaryMode::TraceCarrying {
            self.require_c_elliptic()?;
        }
        let grid = z.grid;
        let mut g = vec![0.0; grid.nodes() * z.m];
        self.adjoint_div_into(&grid, &z.cells, &z.faces, mode, &mut g);
        Ok(GridFunction { grid, m: z.m, values: g })
    }

    /// Slice form of [`OperatorSpec::adjoint_div`]; the mode is not checked
    /// against ℂ-ellipticity here.
    pub fn adjoint_div_into(&self, grid: &Grid, cells: &[f64], faces: &[f64], mode: BoundaryMode, out: &mut [f64]) {
        let (m, n) = (self.m(), self.n());
        let d = m * n;
        let vol = grid.cell_volume();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut az = vec![0.0; d];
        for c in 0..grid.cells() {
            az.copy_from_slice(&cells[c * d..(c + 1) * d]);
            self.proj.apply_in_place(&mut az);
            grid.for_each_stencil(c, |node, dir, coef| {
                for a in 0..m {
                    out[node * m + a] -= vol * coef * az[a * n + dir];
                }
            });
        }
        if mode == BoundaryMode::TraceCarrying {
            for (fi, face) in grid.faces().iter().enumerate() {
                let zn = mat_vec(&faces[fi * d..(fi + 1) * d], &face.normal[..n]);
                for &node in face.nodes() {
                    for a in 0..m {
                        out[node * m + a] += face.weight * face.node_share() * zn[a];
                    }
                }
            }
        }
        for (i, chunk) in out.chunks_mut(m).enumerate() {
            let w = grid.node_weight(i);
            chunk.iter_mut().for_each(|v| *v /= w);
        }
    }

    /// `Σ_f w_f ⟨v_f, z_f ν_f⟩` over boundary faces, `v` given as `m` values per face.
    pub fn boundary_pairing(&self, z: &DualField, v: &[f64]) -> Result<f64> {
        self.require_c_elliptic()?;
        let faces = z.grid.faces();
        let m = z.m;
        if v.len() != faces.len() * m {
            return Err(Error::DimensionMismatch(format!(
                "boundary data has {} values, expected {}",
                v.len(),
                faces.len() * m
            )));
        }
        Ok(faces
            .iter()
            .enumerate()
            .map(|(fi, face)| {
                let zn = mat_vec(z.face(fi), &face.normal[..z.n]);
                face.weight * dot(&v[fi * m..(fi + 1) * m], &zn)
            })
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    Neumann,
    TraceCarrying,
}

/// One boundary face: an endpoint in 1D, a boundary edge in 2D.
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    nodes: [usize; 2],
    pub normal: [f64; 2],
    pub weight: f64,
    /// Cell adjacent to the face.
    pub cell: usize,
    pub midpoint: Point,
}

impl Face {
    pub fn nodes(&self) -> &[usize] {
        if self.nodes[0] == self.nodes[1] {
            &self.nodes[..1]
        } else {
            &self.nodes
        }
    }

    /// Weight of each node in the face trace (the trace averages the nodes).
    pub fn node_share(&self) -> f64 {
        1.0 / self.nodes().len() as f64
    }
}

/// A uniform grid on `[0, nx·h] (× [0, ny·h])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    nx: usize,
    ny: usize,
    h: f64,
}

impl Grid {
    pub fn line(cells: usize, h: f64) -> Result<Self> {
        Self::validate(&[cells], h)?;
        Ok(Grid { dim: 1, nx: cells, ny: 0, h })
    }

    pub fn square(nx: usize, ny: usize, h: f64) -> Result<Self> {
        Self::validate(&[nx, ny], h)?;
        Ok(Grid { dim: 2, nx, ny, h })
    }

    /// Unit interval or unit square with `cells` cells per axis.
    pub fn unit(dim: usize, cells: usize) -> Result<Self> {
        match dim {
            1 => Self::line(cells, 1.0 / cells as f64),
            2 => Self::square(cells, cells, 1.0 / cells as f64),
            _ => Err(invalid("dim", "must be 1 or 2")),
        }
    }

    fn validate(shape: &[usize], h: f64) -> Result<()> {
        if shape.contains(&0) {
            return Err(invalid("shape", "needs at least one cell per axis"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("h", "must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Vec<usize> {
        if self.dim == 1 {
            vec![self.nx]
        } else {
            vec![self.nx, self.ny]
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> usize {
        if self.dim == 1 {
            self.nx
        } else {
            self.nx * self.ny
        }
    }

    pub fn nodes(&self) -> usize {
        if self.dim == 1 {
            self.nx + 1
        } else {
            (self.nx + 1) * (self.ny + 1)
        }
    }

    /// `|Ω|`
    pub fn volume(&self) -> f64 {
        self.cells() as f64 * self.cell_volume()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    fn node_index(&self, i: usize, j: usize) -> usize {
        if self.dim == 1 {
            i
        } else {
            i * (self.ny + 1) + j
        }
    }

    pub fn node_coords(&self, node: usize) -> Point {
        if self.dim == 1 {
            [node as f64 * self.h, 0.0]
        } else {
            let (i, j) = (node / (self.ny + 1), node % (self.ny + 1));
            [i as f64 * self.h, j as f64 * self.h]
        }
    }

    fn trapezoid(k: usize, last: usize, h: f64) -> f64 {
        if k == 0 || k == last {
            0.5 * h
        } else {
            h
        }
    }

    /// Trapezoidal quadrature weight of a node.
    pub fn node_weight(&self, node: usize) -> f64 {
        if self.dim == 1 {
            Self::trapezoid(node, self.nx, self.h)
        } else {
            let (i, j) = (node / (self.ny + 1), node % (self.ny + 1));
            Self::trapezoid(i, self.nx, self.h) * Self::trapezoid(j, self.ny, self.h)
        }
    }

    pub fn node_weights(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.node_weight(i)).collect()
    }

    /// Whether a node lies on `∂Ω`.
    pub fn is_boundary_node(&self, node: usize) -> bool {
        if self.dim == 1 {
            node == 0 || node == self.nx
        } else {
            let (i, j) = (node / (self.ny + 1), node % (self.ny + 1));
            i == 0 || i == self.nx || j == 0 || j == self.ny
        }
    }

    /// Lower and upper `x₁` of a cell, and its centre.
    pub fn cell_box(&self, c: usize) -> (f64, f64, Point) {
        let h = self.h;
        if self.dim == 1 {
            let lo = c as f64 * h;
            (lo, lo + h, [lo + 0.5 * h, 0.0])
        } else {
            let (i, j) = (c / self.ny, c % self.ny);
            let lo = i as f64 * h;
            (lo, lo + h, [lo + 0.5 * h, (j as f64 + 0.5) * h])
        }
    }

    /// Calls `visit(node, direction, coefficient)` for every term of the
    /// cell Jacobian stencil.
    fn for_each_stencil(&self, c: usize, mut visit: impl FnMut(usize, usize, f64)) {
        let inv = 1.0 / self.h;
        if self.dim == 1 {
            visit(c, 0, -inv);
            visit(c + 1, 0, inv);
        } else {
            let (i, j) = (c / self.ny, c % self.ny);
            let n00 = self.node_index(i, j);
            let n10 = self.node_index(i + 1, j);
            let n01 = self.node_index(i, j + 1);
            let n11 = self.node_index(i + 1, j + 1);
            let half = 0.5 * inv;
            visit(n00, 0, -half);
            visit(n01, 0, -half);
            visit(n10, 0, half);
            visit(n11, 0, half);
            visit(n00, 1, -half);
            visit(n10, 1, -half);
            visit(n01, 1, half);
            visit(n11, 1, half);
        }
    }

    /// Boundary faces. In 1D: the left then the right endpoint. In 2D:
    /// bottom, top, left, right edges, each ordered along the side.
    pub fn faces(&self) -> Vec<Face> {
        let h = self.h;
        if self.dim == 1 {
            let len = self.nx as f64 * h;
            return vec![
                Face { nodes: [0, 0], normal: [-1.0, 0.0], weight: 1.0, cell: 0, midpoint: [0.0, 0.0] },
                Face {
                    nodes: [self.nx, self.nx],
                    normal: [1.0, 0.0],
                    weight: 1.0,
                    cell: self.nx - 1,
                    midpoint: [len, 0.0],
                },
            ];
        }
        let (nx, ny) = (self.nx, self.ny);
        let mut faces = Vec::with_capacity(2 * (nx + ny));
        for (j, cj, normal) in [(0, 0, [0.0, -1.0]), (ny, ny - 1, [0.0, 1.0])] {
            for i in 0..nx {
                faces.push(Face {
                    nodes: [self.node_index(i, j), self.node_index(i + 1, j)],
                    normal,
                    weight: h,
                    cell: i * ny + cj,
                    midpoint: [(i as f64 + 0.5) * h, j as f64 * h],
                });
            }
        }
        for (i, ci, normal) in [(0, 0, [-1.0, 0.0]), (nx, nx - 1, [1.0, 0.0])] {
            for j in 0..ny {
                faces.push(Face {
                    nodes: [self.node_index(i, j), self.node_index(i, j + 1)],
                    normal,
                    weight: h,
                    cell: ci * ny + j,
                    midpoint: [i as f64 * h, (j as f64 + 0.5) * h],
                });
            }
        }
        faces
    }
}

/// An `m`-component field on grid nodes, stored `[node][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    m: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() * m {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} nodes × {m} components",
                values.len(),
                grid.nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("values", "grid functions must be finite"));
        }
        Ok(GridFunction { grid, m, values })
    }

    pub fn zeros(grid: Grid, m: usize) -> Self {
        GridFunction { grid, m, values: vec![0.0; grid.nodes() * m] }
    }

    /// Samples `g` at the nodes.
    pub fn from_fn(grid: Grid, m: usize, g: impl Fn(Point) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * m);
        for node in 0..grid.nodes() {
            let v = g(grid.node_coords(node));
            assert_eq!(v.len(), m, "sampling function returned the wrong number of components");
            values.extend(v);
        }
        GridFunction { grid, m, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    /// Weighted inner product `Σ W_i ⟨u_i, v_i⟩`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        self.values
            .chunks(self.m)
            .zip(other.values.chunks(self.m))
            .enumerate()
            .map(|(i, (a, b))| self.grid.node_weight(i) * dot(a, b))
            .sum()
    }

    /// Weighted `L²` norm.
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn distance(&self, other: &GridFunction) -> f64 {
        let diff = GridFunction {
            grid: self.grid,
            m: self.m,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        };
        diff.norm()
    }

    /// Componentwise `Σ W_i u_i`.
    pub fn mass(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (i, chunk) in self.values.chunks(self.m).enumerate() {
            let w = self.grid.node_weight(i);
            out.iter_mut().zip(chunk).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Face traces (average of the face nodes), `m` values per face.
    pub fn trace(&self) -> Vec<f64> {
        let m = self.m;
        let mut out = Vec::new();
        for face in self.grid.faces() {
            let mut t = vec![0.0; m];
            for &node in face.nodes() {
                let share = face.node_share();
                t.iter_mut().zip(&self.values[node * m..(node + 1) * m]).for_each(|(ta, v)| *ta += share * v);
            }
            out.extend(t);
        }
        out
    }
}

/// A matrix field on cells plus a boundary face layer, `m × n` row-major per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    grid: Grid,
    m: usize,
    n: usize,
    cells: Vec<f64>,
    faces: Vec<f64>,
}

impl DualField {
    pub fn zeros(grid: Grid, m: usize, n: usize) -> Self {
        let d = m * n;
        DualField { grid, m, n, cells: vec![0.0; grid.cells() * d], faces: vec![0.0; grid.faces().len() * d] }
    }

    /// Builds a field and projects every entry by the operator's `A`.
    pub fn new(op: &OperatorSpec, grid: Grid, mut cells: Vec<f64>, mut faces: Vec<f64>) -> Result<Self> {
        let d = op.m() * op.n();
        if grid.dim() != op.n() || cells.len() != grid.cells() * d || faces.len() != grid.faces().len() * d {
            return Err(Error::DimensionMismatch("dual field size does not match grid and operator".into()));
        }
        cells.chunks_mut(d).chain(faces.chunks_mut(d)).for_each(|c| op.projection().apply_in_place(c));
        Ok(DualField { grid, m: op.m(), n: op.n(), cells, faces })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry_dim(&self) -> usize {
        self.m * self.n
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let d = self.entry_dim();
        &self.cells[c * d..(c + 1) * d]
    }

    pub fn face(&self, f: usize) -> &[f64] {
        let d = self.entry_dim();
        &self.faces[f * d..(f + 1) * d]
    }

    pub fn cell_values(&self) -> &[f64] {
        &self.cells
    }

    pub fn cell_values_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn face_values(&self) -> &[f64] {
        &self.faces
    }

    pub fn face_values_mut(&mut self) -> &mut [f64] {
        &mut self.faces
    }

    /// Copies each adjacent cell value into the face layer.
    pub fn extend_to_faces(&mut self) {
        let d = self.entry_dim();
        for (fi, face) in self.grid.faces().iter().enumerate() {
            let src = face.cell * d;
            let (cells, faces) = (&self.cells, &mut self.faces);
            faces[fi * d..(fi + 1) * d].copy_from_slice(&cells[src..src + d]);
        }
    }

    /// `Σ_c hⁿ ⟨self_c, other_c⟩` over cells.
    pub fn inner_cells(&self, other: &DualField) -> f64 {
        self.grid.cell_volume() * dot(&self.cells, &other.cells)
    }

    /// `Σ_c hⁿ |self_c|`, the discrete total variation when `self = 𝔸u`.
    pub fn l1(&self) -> f64 {
        self.grid.cell_volume() * self.cells.chunks(self.entry_dim()).map(crate::linalg::norm).sum::<f64>()
    }

    pub fn max_cell_norm(&self) -> f64 {
        self.cells.chunks(self.entry_dim()).map(crate::linalg::norm).fold(0.0, f64::max)
    }

    /// `z_f ν_f` per face, `m` values each.
    pub fn normal_traces(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.grid.faces().len() * self.m);
        for (fi, face) in self.grid.faces().iter().enumerate() {
            out.extend(mat_vec(self.face(fi), &face.normal[..self.n]));
        }
        out
    }
}
