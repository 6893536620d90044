//! Dense helpers for `m × n` matrices stored row-major as flat slices, and
//! the projection `A` acting on them.

/// Frobenius inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Frobenius norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v ⊗ ν` as an `m × n` matrix, row-major.
pub fn outer(v: &[f64], nu: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() * nu.len());
    for &vi in v {
        for &nj in nu {
            out.push(vi * nj);
        }
    }
    out
}

/// `M ν` for an `m × n` matrix `M`.
pub fn mat_vec(mat: &[f64], nu: &[f64]) -> Vec<f64> {
    let n = nu.len();
    mat.chunks(n).map(|row| dot(row, nu)).collect()
}

/// Scales `y` onto the closed ball of radius `radius` (in place).
pub fn project_ball(y: &mut [f64], radius: f64) {
    let r = norm(y);
    if r > radius {
        let s = if r > 0.0 { radius / r } else { 0.0 };
        y.iter_mut().for_each(|v| *v *= s);
    }
}

/// A symmetric idempotent linear map on `m × n` matrices, stored as a
/// `(mn) × (mn)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    m: usize,
    n: usize,
    mat: Vec<f64>,
    identity: bool,
}

impl Projection {
    pub fn identity(m: usize, n: usize) -> Self {
        let d = m * n;
        let mut mat = vec![0.0; d * d];
        for i in 0..d {
            mat[i * d + i] = 1.0;
        }
        Projection { m, n, mat, identity: true }
    }

    fn from_matrix(m: usize, n: usize, mat: Vec<f64>) -> Self {
        let d = m * n;
        let identity = (0..d * d).all(|k| mat[k] == if k / d == k % d { 1.0 } else { 0.0 });
        Projection { m, n, mat, identity }
    }

    /// `y ↦ (y + yᵀ)/2` on square matrices.
    pub fn symmetric(n: usize) -> Self {
        let d = n * n;
        let mut mat = vec![0.0; d * d];
        for a in 0..n {
            for b in 0..n {
                let row = a * n + b;
                mat[row * d + a * n + b] += 0.5;
                mat[row * d + b * n + a] += 0.5;
            }
        }
        Projection::from_matrix(n, n, mat)
    }

    /// `y ↦ (tr y / n) I`, the orthogonal projection onto multiples of the
    /// identity. Applied to a Jacobian this encodes `(div u) I / n`.
    pub fn trace_part(n: usize) -> Self {
        let d = n * n;
        let mut mat = vec![0.0; d * d];
        let w = 1.0 / n as f64;
        for a in 0..n {
            for b in 0..n {
                mat[(a * n + a) * d + b * n + b] = w;
            }
        }
        Projection::from_matrix(n, n, mat)
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        debug_assert_eq!(y.len(), d);
        if self.is_identity() {
            return y.to_vec();
        }
        self.mat.chunks(d).map(|row| dot(row, y)).collect()
    }

    pub fn apply_in_place(&self, y: &mut [f64]) {
        if !self.is_identity() {
            let out = self.apply(y);
            y.copy_from_slice(&out);
        }
    }

    /// Largest entry of `|A² − A|` and `|A − Aᵀ|`.
    pub fn defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let sq: f64 = (0..d).map(|k| self.mat[i * d + k] * self.mat[k * d + j]).sum();
                worst = worst.max((sq - self.mat[i * d + j]).abs());
                worst = worst.max((self.mat[i * d + j] - self.mat[j * d + i]).abs());
            }
        }
        worst
    }
}
