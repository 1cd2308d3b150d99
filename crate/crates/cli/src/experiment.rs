//! Experiment execution and the result record.

use std::time::{SystemTime, UNIX_EPOCH};

use hmsbl_core::dictionary::{kron_dictionary, uniform_grid, DictionaryPair, Grid1D, KronDictionary};
use hmsbl_core::hmsbl::{self, BlockModel, Diagnostics, HMsblParams, HMsblState};
use hmsbl_core::linalg::CMatrix;
use hmsbl_core::metrics::{aggregate_trials, match_and_rmse, timeit_interleaved, MatchReport, TrialSummary};
use hmsbl_core::msbl::{msbl_estimates, msbl_run_observed, MsblState};
use hmsbl_core::signal_model::{synthesize_snapshots, Scene, SnapshotSet, Source, UraConfig};
use hmsbl_core::v_extract::{pair_estimates, select_peaks, PairedEstimates, PeakAllocation};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, SolverConfig, SourcePoint};
use crate::CliError;

/// Environment variable overriding the trial worker count.
pub const WORKERS_ENV: &str = "HMSBL_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hmsbl,
    Msbl,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Hmsbl => "hmsbl",
            Algorithm::Msbl => "msbl",
        }
    }
}

// JSON has no NaN; serde_json writes it as null, so read null back as NaN.
fn nan_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nan_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Ok(Vec::<Option<f64>>::deserialize(d)?
        .into_iter()
        .map(|x| x.unwrap_or(f64::NAN))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmOutcome {
    pub algorithm: Algorithm,
    pub estimates: Option<PairedEstimates>,
    pub report: Option<MatchReport>,
    /// Solver or read-out failure; the other fields hold what was reached.
    pub error: Option<String>,
    pub diagnostics: Option<Diagnostics>,
    /// RMSE of the read-out after each iteration (exp3 only).
    #[serde(default, skip_serializing_if = "Vec::is_empty", deserialize_with = "nan_vec")]
    pub rmse_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub scene_seed: u64,
    pub truth: Vec<SourcePoint>,
    pub outcomes: Vec<AlgorithmOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    pub mv: usize,
    /// Dictionary columns the solver iterates over.
    pub grid_size: usize,
    pub iterations: usize,
    pub median_seconds: f64,
    pub per_iteration_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub algorithm: Algorithm,
    pub iteration: usize,
    /// Mean over trials with a defined read-out at this iteration.
    #[serde(deserialize_with = "nan_f64")]
    pub mean_rmse: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: usize,
    pub algorithm: Algorithm,
    #[serde(deserialize_with = "nan_f64")]
    pub mean_rmse: f64,
    #[serde(deserialize_with = "nan_f64")]
    pub std_rmse: f64,
    /// Trials without a defined read-out at this budget.
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub summary: Option<TrialSummary>,
    /// Trials in which every source was matched within the success threshold.
    pub recovered_trials: usize,
    pub failed_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRecord>,
    #[serde(default)]
    pub timing: Vec<TimingRow>,
    #[serde(default)]
    pub convergence: Vec<ConvergenceRow>,
    #[serde(default)]
    pub budgets: Vec<BudgetRow>,
    pub summary: Vec<AlgorithmSummary>,
}

impl ResultRecord {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config,
            trials: Vec::new(),
            timing: Vec::new(),
            convergence: Vec::new(),
            budgets: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn outcomes(&self, algorithm: Algorithm) -> impl Iterator<Item = &AlgorithmOutcome> {
        self.trials
            .iter()
            .flat_map(|t| t.outcomes.iter())
            .filter(move |o| o.algorithm == algorithm)
    }

    pub fn has_failures(&self) -> bool {
        self.trials
            .iter()
            .any(|t| t.outcomes.iter().any(|o| o.error.is_some()))
    }
}

/// Worker count: explicit value, else `HMSBL_WORKERS`, else all cores.
pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok()?.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Grids, array and dictionaries shared by all trials of one config.
pub struct Setup<'a> {
    pub config: &'a ExperimentConfig,
    pub ura: UraConfig,
    pub grid_u: Grid1D,
    pub grid_v: Grid1D,
    pub pair: DictionaryPair,
    pub kdict: Option<KronDictionary>,
}

impl<'a> Setup<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self, CliError> {
        let ura = UraConfig::new(config.array.nx, config.array.ny)?;
        let grid_u = uniform_grid(config.grids.mu, -1.0, 1.0)?;
        let grid_v = uniform_grid(config.grids.mv, -1.0, 1.0)?;
        let pair = DictionaryPair::new(grid_u.clone(), grid_v.clone(), ura.nx, ura.ny);
        let kdict = config.msbl.as_ref().map(|_| kron_dictionary(&pair, true));
        Ok(Self {
            config,
            ura,
            grid_u,
            grid_v,
            pair,
            kdict,
        })
    }

    /// Scene of trial `trial`; randomness comes from substream `trial` of
    /// the config seed.
    pub fn scene(&self, trial: usize) -> Result<Scene, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(trial as u64);
        let scene_seed = rng.next_u64();
        let sc = &self.config.scene;
        let mut points: Vec<(f64, f64)> = if let Some(list) = &sc.sources {
            list.iter().map(|s| (s.u, s.v)).collect()
        } else if let Some(p) = &sc.product {
            p.u.iter().flat_map(|&u| p.v.iter().map(move |&v| (u, v))).collect()
        } else if let Some(r) = &sc.random {
            self.random_points(r.k, r.min_u_separation, r.max_radius, &mut rng)?
        } else {
            return Err(CliError::Other("scene has no source specification".into()));
        };
        if sc.snap_to_grid {
            for p in &mut points {
                *p = self.snap(*p);
            }
        }
        let sources = points
            .iter()
            .map(|&(u, v)| Source::new(u, v))
            .collect::<hmsbl_core::Result<Vec<_>>>()?;
        let scene = Scene {
            sources,
            snr_db: sc.snr_db,
            num_snapshots: sc.num_snapshots,
            seed: scene_seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    fn snap(&self, (u, v): (f64, f64)) -> (f64, f64) {
        (self.grid_u[self.grid_u.nearest(u)], self.grid_v[self.grid_v.nearest(v)])
    }

    fn random_points(
        &self,
        k: usize,
        min_sep: f64,
        radius: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(f64, f64)>, CliError> {
        const ATTEMPTS: usize = 100_000;
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(k);
        for _ in 0..ATTEMPTS {
            if points.len() == k {
                break;
            }
            let (u, v) = (rng.random_range(-radius..=radius), rng.random_range(-radius..=radius));
            if u * u + v * v > radius * radius {
                continue;
            }
            let (u, v) = if self.config.scene.snap_to_grid {
                self.snap((u, v))
            } else {
                (u, v)
            };
            let clear = points
                .iter()
                .all(|&(pu, pv)| (pu - u).abs() >= min_sep && (pu, pv) != (u, v));
            if clear && u * u + v * v <= 1.0 {
                points.push((u, v));
            }
        }
        if points.len() < k {
            return Err(CliError::Other(format!(
                "could not place {k} sources with u separation {min_sep}"
            )));
        }
        Ok(points)
    }

    fn truth(scene: &Scene) -> Vec<(f64, f64)> {
        scene.sources.iter().map(|s| (s.u, s.v)).collect()
    }

    /// H-MSBL read-out: `u` peaks of `gamma`, then root-MUSIC per peak.
    pub fn hmsbl_readout(&self, state: &HMsblState) -> hmsbl_core::Result<PairedEstimates> {
        let counts = self
            .config
            .hmsbl
            .as_ref()
            .and_then(|h| h.peak_counts.as_deref())
            .unwrap_or(&[]);
        let peaks = select_peaks(&state.gamma, counts.len())?;
        let alloc = PeakAllocation::from_peaks(&peaks.indices, counts)?;
        pair_estimates(state, &self.grid_u, &alloc)
    }

    pub fn run_hmsbl(&self, y: &SnapshotSet, scene: &Scene, params: &HMsblParams, trace: bool) -> AlgorithmOutcome {
        let truth = Self::truth(scene);
        let model = BlockModel::new(&self.pair.phi_u, self.ura.ny);
        let mut rmse_trace = Vec::new();
        let fit = hmsbl::run_observed(y, &model, params, |st| {
            if trace {
                rmse_trace.push(readout_rmse(self.hmsbl_readout(st), &truth));
            }
        });
        let fit = match fit {
            Ok(f) => f,
            Err(e) => return failed(Algorithm::Hmsbl, e.to_string(), rmse_trace),
        };
        let estimates = self.hmsbl_readout(&fit.state);
        finish(Algorithm::Hmsbl, estimates, &truth, fit.diagnostics, rmse_trace)
    }

    pub fn run_msbl(&self, y: &SnapshotSet, scene: &Scene, params: &HMsblParams, trace: bool) -> AlgorithmOutcome {
        let truth = Self::truth(scene);
        let Some(kdict) = &self.kdict else {
            return failed(Algorithm::Msbl, "no msbl section in config".into(), Vec::new());
        };
        let k = truth.len();
        let readout = |st: &MsblState| msbl_estimates(st, &kdict.column_labels, k).map(|p| PairedEstimates::from_points(&p));
        let mut rmse_trace = Vec::new();
        let fit = msbl_run_observed(y, kdict, params, |st| {
            if trace {
                rmse_trace.push(readout_rmse(readout(st), &truth));
            }
        });
        let fit = match fit {
            Ok(f) => f,
            Err(e) => return failed(Algorithm::Msbl, e.to_string(), rmse_trace),
        };
        let estimates = readout(&fit.state);
        finish(Algorithm::Msbl, estimates, &truth, fit.diagnostics, rmse_trace)
    }

    fn run_trial(&self, trial: usize, trace_iters: Option<usize>) -> TrialRecord {
        let cfg = self.config;
        let scene = match self.scene(trial) {
            Ok(s) => s,
            Err(e) => {
                return TrialRecord {
                    trial,
                    scene_seed: 0,
                    truth: Vec::new(),
                    outcomes: [cfg.hmsbl.as_ref().map(|_| Algorithm::Hmsbl), cfg.msbl.as_ref().map(|_| Algorithm::Msbl)]
                        .into_iter()
                        .flatten()
                        .map(|a| failed(a, e.to_string(), Vec::new()))
                        .collect(),
                }
            }
        };
        let y = synthesize_snapshots(&scene, &self.ura);
        let params_for = |s: &SolverConfig| {
            let mut p = s.params(scene.snr_db);
            if let Some(n) = trace_iters {
                p.max_iters = n;
            }
            p
        };
        let mut outcomes = Vec::new();
        if let Some(h) = &cfg.hmsbl {
            outcomes.push(self.run_hmsbl(&y, &scene, &params_for(h), trace_iters.is_some()));
        }
        if let Some(m) = &cfg.msbl {
            outcomes.push(self.run_msbl(&y, &scene, &params_for(m), trace_iters.is_some()));
        }
        TrialRecord {
            trial,
            scene_seed: scene.seed,
            truth: scene.sources.iter().map(|s| SourcePoint { u: s.u, v: s.v }).collect(),
            outcomes,
        }
    }
}

fn readout_rmse(est: hmsbl_core::Result<PairedEstimates>, truth: &[(f64, f64)]) -> f64 {
    est.and_then(|e| match_and_rmse(&e.points(), truth))
        .map_or(f64::NAN, |r| r.rmse)
}

fn failed(algorithm: Algorithm, error: String, rmse_trace: Vec<f64>) -> AlgorithmOutcome {
    AlgorithmOutcome {
        algorithm,
        estimates: None,
        report: None,
        error: Some(error),
        diagnostics: None,
        rmse_trace,
    }
}

fn finish(
    algorithm: Algorithm,
    estimates: hmsbl_core::Result<PairedEstimates>,
    truth: &[(f64, f64)],
    diagnostics: Diagnostics,
    rmse_trace: Vec<f64>,
) -> AlgorithmOutcome {
    let (estimates, report, error) = match estimates {
        Ok(e) => match match_and_rmse(&e.points(), truth) {
            Ok(r) => (Some(e), Some(r), None),
            Err(err) => (Some(e), None, Some(err.to_string())),
        },
        Err(err) => (None, None, Some(err.to_string())),
    };
    AlgorithmOutcome {
        algorithm,
        estimates,
        report,
        error,
        diagnostics: Some(diagnostics),
        rmse_trace,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
}

/// Runs the experiment named by `config.experiment`.
pub fn run_experiment(config: &ExperimentConfig, opts: RunOptions) -> Result<ResultRecord, CliError> {
    let setup = Setup::new(config)?;
    let mut record = ResultRecord::empty(config.clone());
    let trace_iters = match config.experiment {
        ExperimentKind::Exp3 => config.budgets.as_ref().and_then(|b| b.iter().copied().max()),
        _ => None,
    };
    if config.experiment == ExperimentKind::Exp1 {
        record.timing = timing_sweep(config)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(opts.workers))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    // indexed collect keeps trial order regardless of scheduling
    record.trials = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| setup.run_trial(t, trace_iters))
            .collect()
    });

    let algorithms: Vec<Algorithm> = [
        config.hmsbl.as_ref().map(|_| Algorithm::Hmsbl),
        config.msbl.as_ref().map(|_| Algorithm::Msbl),
    ]
    .into_iter()
    .flatten()
    .collect();
    record.summary = algorithms
        .iter()
        .map(|&a| summarise(&record, a, config.success_threshold))
        .collect();
    if let Some(n) = trace_iters {
        for &a in &algorithms {
            record.convergence.extend(convergence_rows(&record, a, n));
        }
        for &b in config.budgets.as_deref().unwrap_or(&[]) {
            for &a in &algorithms {
                record.budgets.push(budget_row(&record, a, b));
            }
        }
    }
    Ok(record)
}

fn summarise(record: &ResultRecord, algorithm: Algorithm, threshold: f64) -> AlgorithmSummary {
    let reports: Vec<MatchReport> = record
        .outcomes(algorithm)
        .filter_map(|o| o.report.clone())
        .collect();
    let failed_trials = record.outcomes(algorithm).filter(|o| o.report.is_none()).count();
    let recovered_trials = reports
        .iter()
        .filter(|r| r.per_source_sq_err.iter().all(|e| e.sqrt() < threshold))
        .count();
    AlgorithmSummary {
        algorithm,
        summary: aggregate_trials(&reports, threshold).ok(),
        recovered_trials,
        failed_trials,
    }
}

/// RMSE after `iteration` (1-based); runs that stopped early hold their
/// last value.
fn trace_at(trace: &[f64], iteration: usize, converged: bool) -> f64 {
    match trace.get(iteration - 1) {
        Some(&r) => r,
        None if converged => trace.last().copied().unwrap_or(f64::NAN),
        None => f64::NAN,
    }
}

fn traces(record: &ResultRecord, algorithm: Algorithm) -> Vec<(&[f64], bool)> {
    record
        .outcomes(algorithm)
        .map(|o| {
            let converged = o.error.is_none() && o.diagnostics.as_ref().is_some_and(|d| d.converged);
            (o.rmse_trace.as_slice(), converged)
        })
        .collect()
}

fn convergence_rows(record: &ResultRecord, algorithm: Algorithm, iterations: usize) -> Vec<ConvergenceRow> {
    let tr = traces(record, algorithm);
    (1..=iterations)
        .map(|it| {
            let vals: Vec<f64> = tr
                .iter()
                .map(|&(t, c)| trace_at(t, it, c))
                .filter(|x| x.is_finite())
                .collect();
            ConvergenceRow {
                algorithm,
                iteration: it,
                mean_rmse: mean(&vals),
                trials: vals.len(),
            }
        })
        .collect()
}

fn budget_row(record: &ResultRecord, algorithm: Algorithm, budget: usize) -> BudgetRow {
    let tr = traces(record, algorithm);
    let vals: Vec<f64> = tr
        .iter()
        .map(|&(t, c)| trace_at(t, budget, c))
        .filter(|x| x.is_finite())
        .collect();
    let m = mean(&vals);
    let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len().max(1) as f64;
    BudgetRow {
        budget,
        algorithm,
        mean_rmse: m,
        std_rmse: var.sqrt(),
        missing: tr.len() - vals.len(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Median time of fixed-length runs of both solvers for every `Mv` in the
/// sweep, on the scene of trial 0. Pruning and early stopping are disabled
/// so each run does exactly `timing.iterations` iterations. Runs are
/// interleaved across the sweep so machine-speed drift affects every grid
/// size alike.
pub fn timing_sweep(config: &ExperimentConfig) -> Result<Vec<TimingRow>, CliError> {
    let timing = config
        .timing
        .ok_or_else(|| CliError::Other("timing section required".into()))?;
    let sweep = config
        .grids
        .mv_sweep
        .clone()
        .ok_or_else(|| CliError::Other("grids.mv_sweep required".into()))?;
    let setup = Setup::new(config)?;
    let scene = setup.scene(0)?;
    let y = synthesize_snapshots(&scene, &setup.ura);
    let fixed = |s: &SolverConfig| {
        let mut p = s.params(scene.snr_db);
        p.max_iters = timing.iterations;
        p.prune = None;
        p.cost_tol = 0.0;
        p
    };

    // (algorithm, mv, atoms, learns B_i, params)
    let mut cases: Vec<(Algorithm, usize, CMatrix, bool, HMsblParams)> = Vec::new();
    if let Some(h) = &config.hmsbl {
        for &mv in &sweep {
            cases.push((Algorithm::Hmsbl, mv, setup.pair.phi_u.clone(), true, fixed(h)));
        }
    }
    if let Some(m) = &config.msbl {
        for &mv in &sweep {
            let grid_v = uniform_grid(mv, -1.0, 1.0)?;
            let pair = DictionaryPair::new(setup.grid_u.clone(), grid_v, setup.ura.nx, setup.ura.ny);
            cases.push((Algorithm::Msbl, mv, kron_dictionary(&pair, true).matrix, false, fixed(m)));
        }
    }

    let failure = std::cell::RefCell::new(None);
    let mut workloads: Vec<Box<dyn FnMut() -> usize + '_>> = cases
        .iter()
        .map(|(_, _, atoms, blocked, params)| {
            let model = if *blocked {
                BlockModel::new(atoms, setup.ura.ny)
            } else {
                BlockModel::scalar(atoms)
            };
            let (y, failure) = (&y, &failure);
            Box::new(move || match hmsbl::run(y, &model, params) {
                Ok(f) => f.diagnostics.iterations,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0
                }
            }) as Box<dyn FnMut() -> usize + '_>
        })
        .collect();
    let mut refs: Vec<&mut dyn FnMut() -> usize> = workloads.iter_mut().map(|b| &mut **b as _).collect();
    let times = timeit_interleaved(&mut refs, timing.repetitions)?;
    drop(refs);
    drop(workloads);
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    Ok(cases
        .iter()
        .zip(times)
        .map(|((a, mv, atoms, _, _), t)| timing_row(*a, *mv, atoms.ncols(), t))
        .collect())
}

fn timing_row(algorithm: Algorithm, mv: usize, grid_size: usize, t: hmsbl_core::metrics::Timing) -> TimingRow {
    TimingRow {
        algorithm,
        mv,
        grid_size,
        iterations: t.iterations,
        median_seconds: t.median_seconds,
        per_iteration_seconds: t.per_iteration_seconds,
    }
}
