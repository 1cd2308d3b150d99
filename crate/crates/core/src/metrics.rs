//! Estimate-to-truth matching, RMSE and timing helpers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest problem solved by enumerating permutations; bigger ones use the
/// Hungarian algorithm.
const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `assignment[e]` is the truth index matched to estimate `e`.
    pub assignment: Vec<usize>,
    /// Squared error `(u - û)^2 + (v - v̂)^2` per matched estimate.
    pub per_source_sq_err: Vec<f64>,
    pub rmse: f64,
    /// True when the report covers only part of a mismatched set.
    pub unmatched: bool,
}

fn sq_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn report(est: &[(f64, f64)], truth: &[(f64, f64)], assignment: Vec<usize>, unmatched: bool) -> MatchReport {
    let per: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(e, &t)| sq_dist(est[e], truth[t]))
        .collect();
    let rmse = if per.is_empty() {
        0.0
    } else {
        (per.iter().sum::<f64>() / per.len() as f64).sqrt()
    };
    MatchReport {
        assignment,
        per_source_sq_err: per,
        rmse,
        unmatched,
    }
}

/// Minimum total squared error bijection between estimates and truth.
pub fn match_and_rmse(est: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<MatchReport> {
    if est.is_empty() {
        return Err(Error::InvalidArgument("no estimates to match".into()));
    }
    if est.len() != truth.len() {
        let partial = greedy_match(est, truth);
        return Err(Error::CountMismatch {
            estimates: est.len(),
            truth: truth.len(),
            partial: Box::new(partial),
        });
    }
    let cost: Vec<Vec<f64>> = est
        .iter()
        .map(|&e| truth.iter().map(|&t| sq_dist(e, t)).collect())
        .collect();
    let assignment = if est.len() <= EXHAUSTIVE_LIMIT {
        exhaustive_assignment(&cost)
    } else {
        hungarian(&cost)
    };
    Ok(report(est, truth, assignment, false))
}

/// Repeatedly pairs the globally closest unmatched estimate and truth point.
/// Covers `min(|est|, |truth|)` points; unmatched is set when counts differ.
pub fn greedy_match(est: &[(f64, f64)], truth: &[(f64, f64)]) -> MatchReport {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(est.len() * truth.len());
    for (e, &ep) in est.iter().enumerate() {
        for (t, &tp) in truth.iter().enumerate() {
            pairs.push((sq_dist(ep, tp), e, t));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = Vec::new();
    for (_, e, t) in pairs {
        if !used_e[e] && !used_t[t] {
            used_e[e] = true;
            used_t[t] = true;
            matched.push((e, t));
        }
    }
    matched.sort();
    let sub_est: Vec<(f64, f64)> = matched.iter().map(|&(e, _)| est[e]).collect();
    let assignment = matched.iter().map(|&(_, t)| t).collect();
    report(&sub_est, truth, assignment, est.len() != truth.len())
}

fn exhaustive_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    let total = |p: &[usize]| p.iter().enumerate().map(|(e, &t)| cost[e][t]).sum::<f64>();
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut visit = |p: &[usize]| {
        let t = total(p);
        if t < best_cost {
            best_cost = t;
            best.copy_from_slice(p);
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Square assignment by the Hungarian method with row/column potentials.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; p[j] is the row matched to column j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub mean_rmse: f64,
    /// Population standard deviation.
    pub std_rmse: f64,
    /// Fraction of trials with `rmse < threshold`.
    pub success_rate: f64,
    pub threshold: f64,
}

pub fn aggregate_trials(reports: &[MatchReport], threshold: f64) -> Result<TrialSummary> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no trials to aggregate".into()));
    }
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.rmse).sum::<f64>() / n;
    let var = reports.iter().map(|r| (r.rmse - mean).powi(2)).sum::<f64>() / n;
    let hits = reports.iter().filter(|r| r.rmse < threshold).count();
    Ok(TrialSummary {
        trials: reports.len(),
        mean_rmse: mean,
        std_rmse: var.sqrt(),
        success_rate: hits as f64 / n,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_seconds: f64,
    /// `median_seconds / iterations`; absent when the run did no iterations.
    pub per_iteration_seconds: Option<f64>,
    pub iterations: usize,
}

/// Runs `f` once to warm up, then `repetitions` more times, and reports the
/// median wall time. `f` returns the iteration count of its run.
pub fn timeit<F>(mut f: F, repetitions: usize) -> Result<Timing>
where
    F: FnMut() -> usize,
{
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    f();
    let mut samples = Vec::with_capacity(repetitions);
    let mut iterations = 0;
    for _ in 0..repetitions {
        let start = Instant::now();
        iterations = f();
        samples.push(start.elapsed().as_secs_f64());
    }
    let median = median(&mut samples);
    Ok(Timing {
        median_seconds: median,
        per_iteration_seconds: (iterations > 0).then(|| median / iterations as f64),
        iterations,
    })
}

/// As [`timeit`] for several workloads measured round-robin: each
/// repetition runs every workload once, in order. Slow drifts in machine
/// speed then hit all workloads alike instead of whichever one happened to
/// be measured during them.
pub fn timeit_interleaved(workloads: &mut [&mut dyn FnMut() -> usize], repetitions: usize) -> Result<Vec<Timing>> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    for f in workloads.iter_mut() {
        f();
    }
    let mut samples = vec![Vec::with_capacity(repetitions); workloads.len()];
    let mut iterations = vec![0; workloads.len()];
    for _ in 0..repetitions {
        for (k, f) in workloads.iter_mut().enumerate() {
            let start = Instant::now();
            iterations[k] = f();
            samples[k].push(start.elapsed().as_secs_f64());
        }
    }
    Ok(samples
        .iter_mut()
        .zip(iterations)
        .map(|(s, iterations)| {
            let median = median(s);
            Timing {
                median_seconds: median,
                per_iteration_seconds: (iterations > 0).then(|| median / iterations as f64),
                iterations,
            }
        })
        .collect())
}

pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}
