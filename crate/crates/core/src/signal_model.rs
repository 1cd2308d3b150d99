//! Synthetic snapshot generation for a uniform rectangular array.
//!
//! Sensor `(n_x, n_y)` at snapshot `l` observes
//! `sum_k s[k,l] * exp(j*pi*(n_x*u_k + n_y*v_k))` plus circular white Gaussian
//! noise. Snapshots are stacked as columns of `Y`, each column being the
//! row-major flattening of the `nx x ny` sensor image (the `n_y` index varies
//! fastest). Every dictionary in this crate uses the same ordering.
//!
//! Symbols are unit-power circular complex Gaussians and the per-element noise
//! variance is `10^(-snr_db/10)`, so the SNR is per source and per element.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, CMatrix, C64};

const SYMBOL_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Array geometry: `nx` by `ny` sensors at half-wavelength spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UraConfig {
    pub nx: usize,
    pub ny: usize,
}

impl UraConfig {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        let cfg = Self { nx, ny };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "array dimensions must be positive, got {}x{}",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn num_sensors(&self) -> usize {
        self.nx * self.ny
    }
}

/// A far-field source in direction-cosine coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub u: f64,
    pub v: f64,
}

impl Source {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        let s = Self { u, v };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u.is_finite() && self.v.is_finite()) {
            return Err(Error::Domain(format!("non-finite source ({}, {})", self.u, self.v)));
        }
        if self.u.abs() > 1.0 || self.v.abs() > 1.0 || !is_visible(self.u, self.v) {
            return Err(Error::Domain(format!(
                "source ({}, {}) violates u^2 + v^2 <= 1",
                self.u, self.v
            )));
        }
        Ok(())
    }
}

/// Visible-region test `u^2 + v^2 <= 1`, inclusive.
#[inline]
pub fn is_visible(u: f64, v: f64) -> bool {
    u * u + v * v <= 1.0
}

/// Ground truth for one Monte-Carlo draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sources: Vec<Source>,
    pub snr_db: f64,
    pub num_snapshots: usize,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidArgument("scene needs at least one source".into()));
        }
        if self.num_snapshots == 0 {
            return Err(Error::InvalidArgument("scene needs at least one snapshot".into()));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument("snr_db must be finite".into()));
        }
        for s in &self.sources {
            s.validate()?;
        }
        Ok(())
    }

    /// Per-element noise variance implied by `snr_db`.
    pub fn noise_variance(&self) -> f64 {
        noise_variance_from_snr(self.snr_db)
    }
}

pub fn noise_variance_from_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Measurement matrix with one column per snapshot.
///
/// `num_snapshots` is the `L` used to normalise second moments. It equals the
/// column count except after [`crate::hmsbl::compress_snapshots`], which keeps
/// the original `L` while thinning the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub y: CMatrix,
    pub num_snapshots: usize,
}

impl SnapshotSet {
    pub fn new(y: CMatrix) -> Self {
        let num_snapshots = y.ncols();
        Self { y, num_snapshots }
    }

    pub fn num_sensors(&self) -> usize {
        self.y.nrows()
    }

    /// Row index of sensor `(n_x, n_y)` in a column of `y`.
    #[inline]
    pub fn sensor_index(ny: usize, n_x: usize, n_y: usize) -> usize {
        n_x * ny + n_y
    }
}

/// Converts elevation/azimuth in degrees to direction cosines.
pub fn angles_to_uv(theta_deg: f64, phi_deg: f64) -> Result<(f64, f64)> {
    if !(0.0..=90.0).contains(&theta_deg) {
        return Err(Error::Domain(format!("elevation {theta_deg} outside [0, 90]")));
    }
    if !(0.0..360.0).contains(&phi_deg) {
        return Err(Error::Domain(format!("azimuth {phi_deg} outside [0, 360)")));
    }
    let (theta, phi) = (theta_deg.to_radians(), phi_deg.to_radians());
    Ok((phi.cos() * theta.sin(), phi.sin() * theta.sin()))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws an `rows x cols` matrix of i.i.d. circular complex Gaussians with the
/// given per-entry variance.
pub fn circular_gaussian(rows: usize, cols: usize, variance: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let scale = (variance / 2.0).sqrt();
    // Fill column by column so the draw order is independent of storage layout.
    let mut m = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = c64(re * scale, im * scale);
        }
    }
    m
}

/// Source symbols `S` (K x L) for a scene, from the symbol substream.
pub fn draw_symbols(scene: &Scene) -> CMatrix {
    let mut rng = rng_for(scene.seed, SYMBOL_STREAM);
    circular_gaussian(scene.sources.len(), scene.num_snapshots, 1.0, &mut rng)
}

/// Generates snapshots for `scene`, drawing the symbols from the seed.
pub fn synthesize_snapshots(scene: &Scene, config: &UraConfig) -> SnapshotSet {
    let symbols = draw_symbols(scene);
    synthesize_with_symbols(scene, config, &symbols, scene.noise_variance())
}

/// Generates snapshots from an explicit `K x L` symbol matrix and noise
/// variance. Noise is drawn from the scene seed's noise substream; a zero
/// variance produces exactly noiseless data.
pub fn synthesize_with_symbols(
    scene: &Scene,
    config: &UraConfig,
    symbols: &CMatrix,
    noise_variance: f64,
) -> SnapshotSet {
    let k = scene.sources.len();
    let l = scene.num_snapshots;
    assert_eq!(symbols.shape(), (k, l), "symbol matrix must be K x L");
    let (nx, ny) = (config.nx, config.ny);

    // Per-source spatial signature, indexed by the flattened sensor position.
    let signatures: Vec<Vec<C64>> = scene
        .sources
        .iter()
        .map(|s| {
            let mut sig = Vec::with_capacity(nx * ny);
            for n_x in 0..nx {
                for n_y in 0..ny {
                    let phase = std::f64::consts::PI * (n_x as f64 * s.u + n_y as f64 * s.v);
                    sig.push(C64::from_polar(1.0, phase));
                }
            }
            sig
        })
        .collect();

    let mut y = if noise_variance > 0.0 {
        let mut rng = rng_for(scene.seed, NOISE_STREAM);
        circular_gaussian(nx * ny, l, noise_variance, &mut rng)
    } else {
        CMatrix::zeros(nx * ny, l)
    };
    for col in 0..l {
        for (src, sig) in signatures.iter().enumerate() {
            let s = symbols[(src, col)];
            for (row, a) in sig.iter().enumerate() {
                y[(row, col)] += s * a;
            }
        }
    }
    SnapshotSet::new(y)
}

/// Sample covariance `Y Y^H / L`.
pub fn sample_covariance(snapshots: &SnapshotSet) -> CMatrix {
    let l = snapshots.num_snapshots.max(1) as f64;
    let mut s = &snapshots.y * snapshots.y.adjoint();
    s /= c64(l, 0.0);
    crate::linalg::hermitize(&mut s);
    s
}
