use hmsbl_core::hmsbl::{self, BlockModel, HMsblParams, LambdaMode};
use hmsbl_core::{
    kron_dictionary, match_and_rmse, msbl_estimates, msbl_run, pair_estimates, select_peaks, synthesize_snapshots,
    uniform_grid, DictionaryPair, PeakAllocation, Scene, Source, UraConfig,
};

fn scene(points: &[(f64, f64)], seed: u64) -> Scene {
    Scene {
        sources: points.iter().map(|&(u, v)| Source::new(u, v).unwrap()).collect(),
        snr_db: 30.0,
        num_snapshots: 40,
        seed,
    }
}

#[test]
fn hmsbl_recovers_sources_sharing_a_u_coordinate() {
    let ura = UraConfig::new(3, 5).unwrap();
    let grid_u = uniform_grid(41, -1.0, 1.0).unwrap();
    // on-grid u values, v off any grid
    let truth = [(-0.5, -0.33), (-0.5, 0.41), (0.35, 0.07)];
    let y = synthesize_snapshots(&scene(&truth, 5), &ura);
    let pair = DictionaryPair::new(grid_u.clone(), uniform_grid(41, -1.0, 1.0).unwrap(), 3, 5);
    let params = HMsblParams::new(LambdaMode::Fixed(1e-3));
    let fit = hmsbl::run(&y, &BlockModel::new(&pair.phi_u, 5), &params).unwrap();

    let peaks = select_peaks(&fit.state.gamma, 2).unwrap();
    // strongest-first peaks; the shared-u peak carries two sources
    let counts: Vec<usize> = peaks
        .indices
        .iter()
        .map(|&i| if (grid_u[i] + 0.5).abs() < 1e-9 { 2 } else { 1 })
        .collect();
    let alloc = PeakAllocation::from_peaks(&peaks.indices, &counts).unwrap();
    let est = pair_estimates(&fit.state, &grid_u, &alloc).unwrap();
    let report = match_and_rmse(&est.points(), &truth).unwrap();
    assert!(report.rmse < 0.02, "{report:?}");
}

#[test]
fn msbl_recovers_on_grid_sources() {
    let ura = UraConfig::new(4, 4).unwrap();
    let pair = DictionaryPair::new(uniform_grid(21, -1.0, 1.0).unwrap(), uniform_grid(21, -1.0, 1.0).unwrap(), 4, 4);
    let truth = [(-0.4, 0.3), (0.5, -0.6)];
    let y = synthesize_snapshots(&scene(&truth, 9), &ura);
    let kd = kron_dictionary(&pair, true);
    let mut params = HMsblParams::new(LambdaMode::Fixed(1e-3));
    params.max_iters = 1000;
    let fit = msbl_run(&y, &kd, &params).unwrap();
    let est = msbl_estimates(&fit.state, &fit.labels, 2).unwrap();
    let report = match_and_rmse(&est, &truth).unwrap();
    assert!(report.rmse < 1e-9, "{report:?}");
}

#[test]
fn runs_are_reproducible_from_the_scene_seed() {
    let ura = UraConfig::new(3, 3).unwrap();
    let pair = DictionaryPair::new(uniform_grid(25, -1.0, 1.0).unwrap(), uniform_grid(25, -1.0, 1.0).unwrap(), 3, 3);
    let run = || {
        let y = synthesize_snapshots(&scene(&[(0.2, 0.1)], 77), &ura);
        hmsbl::run(&y, &BlockModel::new(&pair.phi_u, 3), &HMsblParams::new(LambdaMode::Fixed(1e-3)))
            .unwrap()
            .state
    };
    assert_eq!(run(), run());
}

#[test]
fn repeated_timing_is_stable() {
    let ura = UraConfig::new(3, 3).unwrap();
    let pair = DictionaryPair::new(uniform_grid(25, -1.0, 1.0).unwrap(), uniform_grid(25, -1.0, 1.0).unwrap(), 3, 3);
    let y = synthesize_snapshots(&scene(&[(0.2, 0.1)], 3), &ura);
    let model = BlockModel::new(&pair.phi_u, 3);
    let mut params = HMsblParams::new(LambdaMode::Fixed(1e-3));
    params.max_iters = 20;
    params.prune = None;
    params.cost_tol = 0.0;
    let mut samples = Vec::new();
    let t = hmsbl_core::metrics::timeit(
        || {
            let start = std::time::Instant::now();
            let n = hmsbl::run(&y, &model, &params).unwrap().diagnostics.iterations;
            samples.push(start.elapsed().as_secs_f64());
            n
        },
        5,
    )
    .unwrap();
    // first sample is the discarded warm-up
    let min = samples[1..].iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(t.iterations, 20);
    assert!(t.median_seconds <= 2.0 * min, "median {} vs min {min}", t.median_seconds);
}
