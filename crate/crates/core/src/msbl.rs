//! EM-MSBL over the pruned two-dimensional Kronecker dictionary.
//!
//! This is the block engine of [`crate::hmsbl`] with scalar blocks and
//! `B_i = 1`, so every `(u, v)` grid pair carries its own variance.

use crate::error::{Error, Result};
use crate::hmsbl::{self, BlockModel, Diagnostics, HMsblParams, HMsblState};
use crate::dictionary::KronDictionary;
use crate::linalg::CMatrix;
use crate::signal_model::SnapshotSet;

#[derive(Debug, Clone, PartialEq)]
pub struct MsblState {
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub active: Vec<bool>,
    pub cost_trace: Vec<f64>,
}

impl From<&HMsblState> for MsblState {
    fn from(s: &HMsblState) -> Self {
        Self {
            gamma: s.gamma.clone(),
            lambda: s.lambda,
            active: s.active.clone(),
            cost_trace: s.cost_trace.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MsblFit {
    pub state: MsblState,
    /// Posterior mean, one row per dictionary column.
    pub mean: CMatrix,
    pub labels: Vec<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

pub fn msbl_run(y: &SnapshotSet, kdict: &KronDictionary, params: &HMsblParams) -> Result<MsblFit> {
    msbl_run_observed(y, kdict, params, |_| {})
}

/// As [`msbl_run`], calling `observer` with the state after each iteration.
pub fn msbl_run_observed<F>(
    y: &SnapshotSet,
    kdict: &KronDictionary,
    params: &HMsblParams,
    mut observer: F,
) -> Result<MsblFit>
where
    F: FnMut(&MsblState),
{
    if kdict.is_empty() {
        return Err(Error::InvalidArgument("Kronecker dictionary has no columns".into()));
    }
    let model = BlockModel::scalar(&kdict.matrix);
    let fit = hmsbl::run_observed(y, &model, params, |st| observer(&MsblState::from(st)))?;
    Ok(MsblFit {
        state: MsblState::from(&fit.state),
        mean: fit.posterior.mu,
        labels: kdict.column_labels.clone(),
        diagnostics: fit.diagnostics,
    })
}

/// Labels of the `k` largest variances, largest first; ties go to the lower
/// column index.
pub fn msbl_estimates(state: &MsblState, labels: &[(f64, f64)], k: usize) -> Result<Vec<(f64, f64)>> {
    let mut idx: Vec<usize> = (0..state.gamma.len()).filter(|&i| state.active[i]).collect();
    if idx.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} active grid points, {k} requested",
            idx.len()
        )));
    }
    idx.sort_by(|&a, &b| state.gamma[b].total_cmp(&state.gamma[a]).then(a.cmp(&b)));
    Ok(idx[..k].iter().map(|&i| labels[i]).collect())
}
