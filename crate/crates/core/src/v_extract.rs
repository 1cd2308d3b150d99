//! Pairing `u` peaks with gridless `v` estimates.
//!
//! Peaks of the learned `gamma` give the `u` components on the grid. The
//! correlation matrix `B_i` of each selected block is a covariance over the
//! `y` axis of the array, so root-MUSIC on it yields the `v` values of the
//! sources sharing that `u`, already paired.

use serde::{Deserialize, Serialize};

use crate::dictionary::Grid1D;
use crate::error::{Error, Result};
use crate::hmsbl::HMsblState;
use crate::linalg::{hermitian_eigh, polynomial_roots, CMatrix, CVector, C64};

/// Relative eigen-gap below which a root-MUSIC result is flagged.
pub const LOW_CONFIDENCE_GAP: f64 = 1e-3;

/// Eigenvalue ratio used by [`auto_allocate`] to count dominant components.
pub const AUTO_ALLOCATION_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakSelection {
    /// Block indices, strongest first.
    pub indices: Vec<usize>,
    /// Set when there were too few strict local maxima and the largest
    /// values were taken instead.
    pub fallback: bool,
}

/// Strict local maxima of `gamma` (endpoints compare one-sided), the
/// `k_peaks` largest first, ties to the lower index.
pub fn select_peaks(gamma: &[f64], k_peaks: usize) -> Result<PeakSelection> {
    if k_peaks == 0 {
        return Err(Error::InvalidArgument("k_peaks must be at least 1".into()));
    }
    if gamma.len() < k_peaks {
        return Err(Error::InvalidArgument(format!(
            "{k_peaks} peaks requested from {} values",
            gamma.len()
        )));
    }
    let n = gamma.len();
    let by_value = |a: &usize, b: &usize| gamma[*b].total_cmp(&gamma[*a]).then(a.cmp(b));
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || gamma[i] > gamma[i - 1];
            let right = i + 1 == n || gamma[i] > gamma[i + 1];
            left && right
        })
        .collect();
    if maxima.len() >= k_peaks {
        maxima.sort_by(by_value);
        maxima.truncate(k_peaks);
        return Ok(PeakSelection {
            indices: maxima,
            fallback: false,
        });
    }
    let mut all: Vec<usize> = (0..n).collect();
    all.sort_by(by_value);
    all.truncate(k_peaks);
    Ok(PeakSelection {
        indices: all,
        fallback: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootMusic {
    pub v: Vec<f64>,
    /// `(lambda_k - lambda_{k+1}) / lambda_1` over descending eigenvalues.
    pub eigen_gap: f64,
    pub low_confidence: bool,
}

/// Coefficients, highest power first, of `z^{n-1} a(z)^H C a(z)` with
/// `C = E_n E_n^H` and `a(z) = [1, z, ..., z^{n-1}]`.
fn music_polynomial(projector: &CMatrix) -> Vec<C64> {
    let n = projector.nrows();
    // index m + (n-1) holds the sum of the m-th diagonal (q - p = m)
    let mut diag_sums = vec![C64::default(); 2 * n - 1];
    for p in 0..n {
        for q in 0..n {
            diag_sums[q + n - 1 - p] += projector[(p, q)];
        }
    }
    diag_sums.reverse();
    diag_sums
}

/// Groups roots into conjugate-reciprocal pairs `(r, 1/conj(r))` and returns,
/// per pair, the member on or inside the unit circle.
fn inner_roots(roots: &[C64]) -> Vec<C64> {
    let reflect = |z: C64| {
        if z.norm_sqr() == 0.0 {
            C64::new(f64::INFINITY, f64::INFINITY)
        } else {
            C64::new(1.0, 0.0) / z.conj()
        }
    };
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..roots.len() {
        for j in (i + 1)..roots.len() {
            let d = (roots[i] - reflect(roots[j])).norm() + (roots[j] - reflect(roots[i])).norm();
            let d = if d.is_finite() { d } else { f64::MAX };
            candidates.push((d, i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used = vec![false; roots.len()];
    let mut out = Vec::with_capacity(roots.len() / 2 + 1);
    for (_, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        out.push(if roots[i].norm() <= roots[j].norm() {
            roots[i]
        } else {
            roots[j]
        });
    }
    out.extend(
        roots
            .iter()
            .zip(&used)
            .filter(|(r, &u)| !u && r.norm() <= 1.0)
            .map(|(r, _)| *r),
    );
    out
}

/// Roots this close to the unit circle are double roots of a noiseless
/// spectrum; rooting only resolves them to ~sqrt(eps), so they are refined.
const POLISH_RADIUS: f64 = 1e-4;

/// Newton refinement of a minimum of `a(v)^H C a(v)`. Keeps `v` unchanged
/// if the iteration leaves the basin.
fn polish_null(projector: &CMatrix, v0: f64) -> f64 {
    let n = projector.nrows();
    let pi = std::f64::consts::PI;
    let mut v = v0;
    for _ in 0..8 {
        let a = CVector::from_fn(n, |m, _| C64::from_polar(1.0, pi * m as f64 * v));
        let da = CVector::from_fn(n, |m, _| a[m] * C64::new(0.0, pi * m as f64));
        let dda = CVector::from_fn(n, |m, _| -a[m] * (pi * m as f64).powi(2));
        let qa = projector * &a;
        let qda = projector * &da;
        let d1 = 2.0 * da.dotc(&qa).re;
        let d2 = 2.0 * (da.dotc(&qda).re + dda.dotc(&qa).re);
        if !(d2 > 0.0) {
            return v0;
        }
        let step = d1 / d2;
        v -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    if (v - v0).abs() < POLISH_RADIUS && v.is_finite() {
        v
    } else {
        v0
    }
}

/// Root-MUSIC on an `ny x ny` correlation matrix for `k` sources along the
/// array's `y` axis. Returns `v = arg(z) / pi` for the `k` inner roots closest
/// to the unit circle, ordered by that distance.
pub fn root_music_v(b: &CMatrix, k: usize) -> Result<RootMusic> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(Error::InvalidArgument("correlation matrix must be square".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "root-MUSIC needs 1 <= k <= ny - 1, got k = {k}, ny = {n}"
        )));
    }
    let (values, vectors) = hermitian_eigh(b);
    let top = values[0].abs();
    let eigen_gap = if top > 0.0 {
        (values[k - 1] - values[k]) / top
    } else {
        0.0
    };
    let noise = vectors.columns(k, n - k);
    let projector = noise * noise.adjoint();
    let roots = polynomial_roots(&music_polynomial(&projector))?;
    let mut inner = inner_roots(&roots);
    inner.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()));
    if inner.len() < k {
        return Err(Error::solver(0, format!("root-MUSIC found {} usable roots, need {k}", inner.len())));
    }
    let v = inner[..k]
        .iter()
        .map(|z| {
            let v = z.arg() / std::f64::consts::PI;
            let v = if (1.0 - z.norm()).abs() < POLISH_RADIUS {
                polish_null(&projector, v)
            } else {
                v
            };
            v.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(RootMusic {
        v,
        eigen_gap,
        low_confidence: !(eigen_gap >= LOW_CONFIDENCE_GAP),
    })
}

/// Number of sources assigned to each selected block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakAllocation {
    pub entries: Vec<(usize, usize)>,
}

impl PeakAllocation {
    /// Zips peak indices with per-peak source counts.
    pub fn from_peaks(peaks: &[usize], counts: &[usize]) -> Result<Self> {
        if peaks.len() != counts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} peaks but {} source counts",
                peaks.len(),
                counts.len()
            )));
        }
        Ok(Self {
            entries: peaks.iter().copied().zip(counts.iter().copied()).collect(),
        })
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn validate(&self, ny: usize) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &(block, k) in &self.entries {
            if k == 0 || k + 1 > ny {
                return Err(Error::InvalidArgument(format!(
                    "block {block}: source count {k} outside 1..={}",
                    ny.saturating_sub(1)
                )));
            }
            if !seen.insert(block) {
                return Err(Error::InvalidArgument(format!("block {block} allocated twice")));
            }
        }
        Ok(())
    }
}

/// Counts eigenvalues of each block's `B_i` above `AUTO_ALLOCATION_RATIO`
/// of its largest, clamped to `1..=ny-1`. Diagnostic only.
pub fn auto_allocate(state: &HMsblState, peaks: &[usize]) -> PeakAllocation {
    let entries = peaks
        .iter()
        .map(|&i| {
            let b = &state.b_mats[i];
            let n = b.nrows();
            let (values, _) = hermitian_eigh(b);
            let count = values
                .iter()
                .filter(|&&v| v >= AUTO_ALLOCATION_RATIO * values[0])
                .count();
            (i, count.clamp(1, n.saturating_sub(1).max(1)))
        })
        .collect();
    PeakAllocation { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedPair {
    pub u: f64,
    pub v: f64,
    /// Source block and root-MUSIC eigen-gap; absent for grid read-outs.
    pub block: Option<usize>,
    pub eigen_gap: Option<f64>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedEstimates {
    pub pairs: Vec<EstimatedPair>,
}

impl PairedEstimates {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.pairs.iter().map(|p| (p.u, p.v)).collect()
    }

    pub fn from_points(points: &[(f64, f64)]) -> Self {
        Self {
            pairs: points
                .iter()
                .map(|&(u, v)| EstimatedPair {
                    u,
                    v,
                    block: None,
                    eigen_gap: None,
                    low_confidence: false,
                })
                .collect(),
        }
    }
}

/// One `(grid_u[i], v)` pair per source allocated to block `i`.
pub fn pair_estimates(state: &HMsblState, grid_u: &Grid1D, alloc: &PeakAllocation) -> Result<PairedEstimates> {
    let ny = state.b_mats.first().map_or(0, |b| b.nrows());
    alloc.validate(ny)?;
    let mut pairs = Vec::with_capacity(alloc.total());
    for &(block, k) in &alloc.entries {
        if block >= state.active.len() || !state.active[block] {
            return Err(Error::InvalidArgument(format!("block {block} is not active")));
        }
        let rm = root_music_v(&state.b_mats[block], k)?;
        for v in rm.v {
            pairs.push(EstimatedPair {
                u: grid_u[block],
                v,
                block: Some(block),
                eigen_gap: Some(rm.eigen_gap),
                low_confidence: rm.low_confidence,
            });
        }
    }
    Ok(PairedEstimates { pairs })
}
