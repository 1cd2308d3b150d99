//! Two-dimensional harmonic retrieval on uniform rectangular arrays with
//! block-sparse Bayesian learning.
//!
//! The `u` frequencies are recovered on a 1-D grid through a block-sparse
//! model whose blocks carry learned correlation matrices; the `v` frequency
//! paired with each `u` is then read off its block gridlessly by root-MUSIC.
//! EM-MSBL on the full 2-D Kronecker dictionary is provided as the baseline.
//!
//! ```
//! use hmsbl_core::hmsbl::{self, BlockModel, HMsblParams, LambdaMode};
//! use hmsbl_core::*;
//!
//! # fn main() -> hmsbl_core::Result<()> {
//! let ura = UraConfig::new(3, 6)?;
//! let scene = Scene {
//!     sources: vec![Source::new(-0.5, -0.4)?, Source::new(-0.5, 0.4)?],
//!     snr_db: 20.0,
//!     num_snapshots: 50,
//!     seed: 1,
//! };
//! let y = synthesize_snapshots(&scene, &ura);
//!
//! let grid_u = uniform_grid(101, -1.0, 1.0)?;
//! let pair = DictionaryPair::new(grid_u.clone(), uniform_grid(101, -1.0, 1.0)?, 3, 6);
//! let params = HMsblParams::new(LambdaMode::Fixed(scene.noise_variance()));
//! let fit = hmsbl::run(&y, &BlockModel::new(&pair.phi_u, 6), &params)?;
//!
//! let peaks = select_peaks(&fit.state.gamma, 1)?;
//! let alloc = PeakAllocation::from_peaks(&peaks.indices, &[2])?;
//! let est = pair_estimates(&fit.state, &grid_u, &alloc)?;
//! let truth = [(-0.5, -0.4), (-0.5, 0.4)];
//! assert!(match_and_rmse(&est.points(), &truth)?.rmse < 0.05);
//! # Ok(())
//! # }
//! ```

pub mod dictionary;
pub mod error;
pub mod hmsbl;
pub mod linalg;
pub mod metrics;
pub mod msbl;
pub mod signal_model;
pub mod v_extract;

pub use dictionary::{
    effective_dictionary, kron_dictionary, kron_factorization_check, steering, uniform_grid,
    DictionaryPair, Grid1D, KronDictionary,
};
pub use error::{Error, Result};
pub use hmsbl::{
    compress_snapshots, BlockModel, Diagnostics, Fit, GammaRule, HMsblParams, HMsblState, LambdaMode,
    Posterior, PruneMode, Pruning,
};
pub use linalg::{CMatrix, C64};
pub use metrics::{aggregate_trials, match_and_rmse, MatchReport, TrialSummary};
pub use msbl::{msbl_estimates, msbl_run, MsblFit, MsblState};
pub use signal_model::{
    angles_to_uv, sample_covariance, synthesize_snapshots, Scene, SnapshotSet, Source, UraConfig,
};
pub use v_extract::{pair_estimates, root_music_v, select_peaks, PairedEstimates, PeakAllocation};
