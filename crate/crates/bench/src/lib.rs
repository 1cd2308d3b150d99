//! Fixtures shared by the benchmarks: a fixed 4 x 4 scene and dictionaries
//! over a varying v-grid.

use hmsbl_core::hmsbl::{HMsblParams, LambdaMode};
use hmsbl_core::{
    kron_dictionary, synthesize_snapshots, uniform_grid, DictionaryPair, KronDictionary, Scene, SnapshotSet, Source,
    UraConfig,
};

pub const NX: usize = 4;
pub const NY: usize = 4;
pub const MU: usize = 100;

pub fn snapshots() -> SnapshotSet {
    let sources = [(-0.6, 0.2), (-0.2, -0.5), (0.0, 0.7), (0.3, 0.1), (0.5, -0.4), (0.8, 0.3)]
        .iter()
        .map(|&(u, v)| Source::new(u, v).unwrap())
        .collect();
    let scene = Scene {
        sources,
        snr_db: 20.0,
        num_snapshots: 50,
        seed: 1,
    };
    synthesize_snapshots(&scene, &UraConfig::new(NX, NY).unwrap())
}

pub fn dictionaries(mv: usize) -> (DictionaryPair, KronDictionary) {
    let pair = DictionaryPair::new(
        uniform_grid(MU, -1.0, 1.0).unwrap(),
        uniform_grid(mv, -1.0, 1.0).unwrap(),
        NX,
        NY,
    );
    let kd = kron_dictionary(&pair, true);
    (pair, kd)
}

/// Exactly `iters` EM iterations: no pruning, no early stop.
pub fn fixed_params(iters: usize) -> HMsblParams {
    let mut p = HMsblParams::new(LambdaMode::Fixed(0.01));
    p.max_iters = iters;
    p.prune = None;
    p.cost_tol = 0.0;
    p
}
