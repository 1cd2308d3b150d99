//! Steering vectors, 1-D grids and the dictionaries built from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, max_abs_diff, CMatrix, CVector, C64};
use crate::signal_model::is_visible;

/// Strictly increasing grid of direction cosines inside `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    points: Vec<f64>,
}

impl Grid1D {
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("grid must not be empty".into()));
        }
        if points.iter().any(|p| !(-1.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("grid points must lie in [-1, 1]".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the grid point closest to `x` (lower index on ties).
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, p) in self.points.iter().enumerate() {
            if (p - x).abs() < (self.points[best] - x).abs() {
                best = i;
            }
        }
        best
    }
}

impl std::ops::Index<usize> for Grid1D {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.points[i]
    }
}

/// `m` equally spaced points from `lo` to `hi`, both endpoints included.
pub fn uniform_grid(m: usize, lo: f64, hi: f64) -> Result<Grid1D> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {m}")));
    }
    if !(lo < hi) || lo < -1.0 || hi > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "grid range [{lo}, {hi}] must be a non-empty subset of [-1, 1]"
        )));
    }
    let step = (hi - lo) / (m - 1) as f64;
    let mut points: Vec<f64> = (0..m).map(|i| lo + step * i as f64).collect();
    points[m - 1] = hi;
    Grid1D::from_points(points)
}

/// Array response `[1, e^{j pi f}, ..., e^{j pi (n-1) f}]`.
pub fn steering(freq: f64, n: usize) -> CVector {
    CVector::from_fn(n, |p, _| C64::from_polar(1.0, PI * p as f64 * freq))
}

/// Matrix whose columns are the steering vectors of `grid`.
pub fn steering_matrix(grid: &Grid1D, n: usize) -> CMatrix {
    CMatrix::from_fn(n, grid.len(), |p, m| {
        C64::from_polar(1.0, PI * p as f64 * grid[m])
    })
}

/// The two 1-D dictionaries of a rectangular array.
#[derive(Debug, Clone)]
pub struct DictionaryPair {
    pub phi_u: CMatrix,
    pub phi_v: CMatrix,
    pub grid_u: Grid1D,
    pub grid_v: Grid1D,
}

impl DictionaryPair {
    pub fn new(grid_u: Grid1D, grid_v: Grid1D, nx: usize, ny: usize) -> Self {
        Self {
            phi_u: steering_matrix(&grid_u, nx),
            phi_v: steering_matrix(&grid_v, ny),
            grid_u,
            grid_v,
        }
    }

    pub fn nx(&self) -> usize {
        self.phi_u.nrows()
    }

    pub fn ny(&self) -> usize {
        self.phi_v.nrows()
    }
}

/// `Phi_u ⊗ I_ny`, materialised. Only meant for small problems and oracles;
/// the solver works with the block structure directly.
pub fn effective_dictionary(phi_u: &CMatrix, ny: usize) -> CMatrix {
    kron(phi_u, &CMatrix::identity(ny, ny))
}

/// Two-dimensional dictionary over `(u, v)` grid pairs.
#[derive(Debug, Clone)]
pub struct KronDictionary {
    pub matrix: CMatrix,
    pub column_labels: Vec<(f64, f64)>,
}

impl KronDictionary {
    pub fn len(&self) -> usize {
        self.column_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.column_labels.is_empty()
    }
}

/// Builds `Phi_u ⊗ Phi_v` column by column; column `m * Mv + n` pairs
/// `grid_u[m]` with `grid_v[n]`. With `prune`, pairs outside the visible
/// disk are dropped and the remaining columns keep their relative order.
pub fn kron_dictionary(pair: &DictionaryPair, prune: bool) -> KronDictionary {
    let (mu, mv) = (pair.grid_u.len(), pair.grid_v.len());
    let (nx, ny) = (pair.nx(), pair.ny());
    let mut labels = Vec::with_capacity(mu * mv);
    for m in 0..mu {
        for n in 0..mv {
            let (u, v) = (pair.grid_u[m], pair.grid_v[n]);
            if !prune || is_visible(u, v) {
                labels.push((m, n));
            }
        }
    }
    let mut matrix = CMatrix::zeros(nx * ny, labels.len());
    for (col, &(m, n)) in labels.iter().enumerate() {
        for p in 0..nx {
            let a = pair.phi_u[(p, m)];
            for q in 0..ny {
                matrix[(p * ny + q, col)] = a * pair.phi_v[(q, n)];
            }
        }
    }
    KronDictionary {
        matrix,
        column_labels: labels
            .into_iter()
            .map(|(m, n)| (pair.grid_u[m], pair.grid_v[n]))
            .collect(),
    }
}

/// `max |(Phi_u ⊗ I)(I ⊗ Phi_v) - Phi_u ⊗ Phi_v|`, a self-test of the mixed
/// product identity the reduced model relies on.
pub fn kron_factorization_check(phi_u: &CMatrix, phi_v: &CMatrix) -> f64 {
    let ny = phi_v.nrows();
    let mu = phi_u.ncols();
    let left = kron(phi_u, &CMatrix::identity(ny, ny));
    let right = kron(&CMatrix::identity(mu, mu), phi_v);
    max_abs_diff(&(left * right), &kron(phi_u, phi_v))
}

/// Unit-modulus check used by tests and self-checks.
pub fn is_unit_modulus(m: &CMatrix, tol: f64) -> bool {
    m.iter().all(|z| (z.norm() - 1.0).abs() <= tol)
}
