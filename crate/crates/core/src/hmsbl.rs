//! Block-sparse Bayesian learning with learned intra-block correlation.
//!
//! The measurement model is `Y = (Phi ⊗ I_b) X + V`, where `Phi` is an
//! `n_a x M` dictionary of 1-D atoms and every block `x^i` of `b` rows carries
//! the prior `N(0, gamma_i B_i)`. For harmonic retrieval on an `nx x ny` array
//! the atoms are the `u`-steering vectors and `b = ny`; each learned `B_i`
//! then encodes the `v` content coupled to grid point `u_i`. With `b = 1` and
//! a Kronecker dictionary the same engine is plain EM-MSBL.
//!
//! The `(Mu b) x (Mu b)` posterior covariance is never formed: only its
//! diagonal `b x b` blocks are computed, and the marginal covariance
//! `lambda I + D Sigma_0 D^H` is assembled block by block.

use std::time::Instant;

use nalgebra::{Cholesky, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, frobenius_sq, hermitian_eigh, hermitize, CMatrix, C64};
use crate::signal_model::SnapshotSet;

/// Dictionary view consumed by the solver: `Phi ⊗ I_block`.
#[derive(Debug, Clone, Copy)]
pub struct BlockModel<'a> {
    atoms: &'a CMatrix,
    block: usize,
    learn_correlation: bool,
}

impl<'a> BlockModel<'a> {
    /// Harmonic-retrieval model: `u` dictionary with blocks of size `ny`.
    pub fn new(atoms: &'a CMatrix, block: usize) -> Self {
        assert!(block >= 1, "block size must be positive");
        Self {
            atoms,
            block,
            learn_correlation: true,
        }
    }

    /// Scalar-block model with `B_i` pinned to 1.
    pub fn scalar(atoms: &'a CMatrix) -> Self {
        Self {
            atoms,
            block: 1,
            learn_correlation: false,
        }
    }

    pub fn atoms(&self) -> &CMatrix {
        self.atoms
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn num_blocks(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom_len(&self) -> usize {
        self.atoms.nrows()
    }

    /// Row dimension of the effective dictionary.
    pub fn dim(&self) -> usize {
        self.atom_len() * self.block
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// Prune when `gamma_i < tol * max_j gamma_j`.
    Relative,
    /// Prune when `gamma_i < tol`.
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    pub tol: f64,
    pub mode: PruneMode,
}

impl Default for Pruning {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            mode: PruneMode::Relative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Noise variance held at the given value.
    Fixed(f64),
    /// Noise variance re-estimated every iteration (experimental).
    Adaptive,
}

/// How `gamma_i` is re-estimated from the block moment `M_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `gamma_i = ||M_i||_F`: the exact EM maximiser of the prior block
    /// `gamma_i B_i = M_i`, split so that `B_i` has unit norm. Needs no
    /// inversion, so rank-deficient blocks keep their weight.
    Joint,
    /// `gamma_i = tr(B_i^{-1} M_i) / b` with the previous `B_i`, diagonally
    /// loaded. Same fixed points as `Joint`, but once a `B_i` becomes
    /// singular below the loading level its null directions stop
    /// contributing and `gamma_i` decays.
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HMsblParams {
    pub max_iters: usize,
    /// `None` disables pruning.
    pub prune: Option<Pruning>,
    pub gamma_rule: GammaRule,
    /// Diagonal loading added to `B_i` before it is inverted.
    pub b_loading: f64,
    /// Relative cost-change stopping threshold; non-positive disables it.
    pub cost_tol: f64,
    pub lambda_mode: LambdaMode,
    /// Replace `Y` by a thin factor of `Y Y^H` before iterating.
    pub compress: bool,
}

impl HMsblParams {
    pub fn new(lambda_mode: LambdaMode) -> Self {
        Self {
            max_iters: 500,
            prune: Some(Pruning::default()),
            gamma_rule: GammaRule::Joint,
            b_loading: 1e-10,
            cost_tol: 1e-8,
            lambda_mode,
            compress: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.prune {
            if !(p.tol > 0.0) {
                return Err(Error::InvalidArgument("prune tolerance must be positive".into()));
            }
        }
        if !(self.b_loading >= 0.0) {
            return Err(Error::InvalidArgument("b_loading must be non-negative".into()));
        }
        if self.cost_tol.is_nan() {
            return Err(Error::InvalidArgument("cost_tol must not be NaN".into()));
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument("fixed lambda must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the block prior and the noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct HMsblState {
    pub gamma: Vec<f64>,
    pub b_mats: Vec<CMatrix>,
    pub lambda: f64,
    pub active: Vec<bool>,
    pub cost_trace: Vec<f64>,
    /// Completed EM iterations.
    pub iteration: usize,
    lambda_floor: f64,
}

impl HMsblState {
    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    /// Prior covariance block `gamma_i B_i`.
    pub fn prior_block(&self, i: usize) -> CMatrix {
        if self.active[i] {
            &self.b_mats[i] * c64(self.gamma[i], 0.0)
        } else {
            CMatrix::zeros(self.b_mats[i].nrows(), self.b_mats[i].ncols())
        }
    }

    /// Dense block-diagonal `Sigma_0`; for tests and small problems only.
    pub fn prior_covariance(&self) -> CMatrix {
        let b = self.b_mats.first().map_or(0, |m| m.nrows());
        let n = b * self.gamma.len();
        let mut s = CMatrix::zeros(n, n);
        for i in 0..self.gamma.len() {
            s.view_mut((i * b, i * b), (b, b)).copy_from(&self.prior_block(i));
        }
        s
    }
}

#[cfg(test)]
impl HMsblState {
    pub(crate) fn for_tests(gamma: Vec<f64>, b_mats: Vec<CMatrix>) -> Self {
        let n = gamma.len();
        Self {
            gamma,
            b_mats,
            lambda: 1.0,
            active: vec![true; n],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        }
    }
}

/// Posterior mean and the diagonal blocks of the posterior covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// `(M b) x cols`; block `i` occupies rows `i*b .. (i+1)*b`.
    pub mu: CMatrix,
    pub sigma_blocks: Vec<CMatrix>,
}

impl Posterior {
    pub fn mean_block(&self, i: usize) -> CMatrix {
        let b = self.sigma_blocks[i].nrows();
        self.mu.rows(i * b, b).into_owned()
    }

    /// `Sigma^i + mu^i (mu^i)^H / L`, the second moment the M-step uses.
    pub fn moment(&self, i: usize, num_snapshots: usize) -> CMatrix {
        let m = self.mean_block(i);
        let mut out = &self.sigma_blocks[i] + (&m * m.adjoint()) / c64(num_snapshots as f64, 0.0);
        hermitize(&mut out);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Wall-clock seconds spent in each EM iteration.
    pub iteration_seconds: Vec<f64>,
    /// Active block count after each iteration.
    pub active_history: Vec<usize>,
    pub lambda_trace: Vec<f64>,
}

impl Diagnostics {
    pub fn total_seconds(&self) -> f64 {
        self.iteration_seconds.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub state: HMsblState,
    pub posterior: Posterior,
    pub diagnostics: Diagnostics,
}

/// Factorised marginal covariance `Sigma_y = lambda I + D Sigma_0 D^H`.
struct Marginal {
    chol: Cholesky<C64, Dyn>,
    log_det: f64,
}

impl Marginal {
    fn new(model: &BlockModel<'_>, state: &HMsblState) -> Result<Self> {
        let sigma_y = marginal_covariance(model, state);
        let chol = Cholesky::new(sigma_y).ok_or_else(|| {
            Error::solver(state.iteration, "marginal covariance is not positive definite")
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::solver(state.iteration, "non-finite log-determinant"));
        }
        Ok(Self { chol, log_det })
    }

    fn cost(&self, y: &SnapshotSet, iteration: usize) -> Result<f64> {
        let z = self.chol.solve(&y.y);
        let quad: f64 = y.y.iter().zip(z.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        let cost = self.log_det + quad / y.num_snapshots as f64;
        if !cost.is_finite() {
            return Err(Error::solver(iteration, "non-finite likelihood cost"));
        }
        Ok(cost)
    }
}

fn active_atoms(model: &BlockModel<'_>, active: &[usize]) -> CMatrix {
    model.atoms.select_columns(active)
}

/// `Phi diag(w) Phi^H` over the listed atoms.
fn weighted_gram(atoms: &CMatrix, weights: &[f64]) -> CMatrix {
    let mut scaled = atoms.clone();
    for (j, w) in weights.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*w);
    }
    let mut g = scaled * atoms.adjoint();
    hermitize(&mut g);
    g
}

/// `lambda I + sum_i gamma_i (a_i a_i^H) ⊗ B_i` without forming `D`.
pub fn marginal_covariance(model: &BlockModel<'_>, state: &HMsblState) -> CMatrix {
    let n = model.dim();
    let active = state.active_indices();
    let mut sigma = if model.block == 1 && !active.is_empty() {
        let weights: Vec<f64> = active
            .iter()
            .map(|&i| state.gamma[i] * state.b_mats[i][(0, 0)].re)
            .collect();
        weighted_gram(&active_atoms(model, &active), &weights)
    } else {
        blockwise_gram(model, state, &active)
    };
    for d in 0..n {
        sigma[(d, d)] += c64(state.lambda, 0.0);
    }
    sigma
}

fn blockwise_gram(model: &BlockModel<'_>, state: &HMsblState, active: &[usize]) -> CMatrix {
    let (na, b) = (model.atom_len(), model.block);
    let mut sigma = CMatrix::zeros(na * b, na * b);
    for &i in active {
        let prior = state.prior_block(i);
        let a = model.atoms.column(i);
        for r in 0..na {
            for rp in 0..na {
                let coef = a[r] * a[rp].conj();
                let mut dst = sigma.view_mut((r * b, rp * b), (b, b));
                dst.zip_apply(&prior, |d, p| *d += coef * p);
            }
        }
    }
    hermitize(&mut sigma);
    sigma
}

fn check_snapshots(model: &BlockModel<'_>, y: &SnapshotSet) -> Result<()> {
    if y.num_sensors() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "snapshot dimension {} does not match dictionary dimension {}",
            y.num_sensors(),
            model.dim()
        )));
    }
    if y.num_snapshots == 0 || y.y.ncols() == 0 {
        return Err(Error::InvalidArgument("no snapshots".into()));
    }
    Ok(())
}

/// Uniform starting point: every `gamma_i` equals
/// `||Y Y^H / L||_F / ||D D^H||_F`, `B_i = I / sqrt(b)`, all blocks active.
pub fn init_state(y: &SnapshotSet, model: &BlockModel<'_>, params: &HMsblParams) -> Result<HMsblState> {
    check_snapshots(model, y)?;
    params.validate()?;
    let l = y.num_snapshots as f64;
    let data_norm = (frobenius_sq(&(&y.y * y.y.adjoint())).sqrt()) / l;
    if data_norm == 0.0 {
        return Err(Error::DegenerateInput("all-zero snapshots".into()));
    }
    // ||(Phi Phi^H) ⊗ I_b||_F = sqrt(b) ||Phi Phi^H||_F
    let gram = model.atoms * model.atoms.adjoint();
    let dict_norm = frobenius_sq(&gram).sqrt() * (model.block as f64).sqrt();
    if dict_norm == 0.0 {
        return Err(Error::DegenerateInput("empty or zero dictionary".into()));
    }
    let gamma0 = data_norm / dict_norm;

    let b = model.block;
    let b0 = CMatrix::identity(b, b) / c64((b as f64).sqrt(), 0.0);
    let mean_power = y.y.iter().map(|z| z.norm_sqr()).sum::<f64>() / (l * model.dim() as f64);
    let lambda_floor = 1e-12 * mean_power;
    let lambda = match params.lambda_mode {
        LambdaMode::Fixed(v) => v,
        LambdaMode::Adaptive => 0.01 * mean_power,
    };
    let m = model.num_blocks();
    Ok(HMsblState {
        gamma: vec![gamma0; m],
        b_mats: vec![b0; m],
        lambda,
        active: vec![true; m],
        cost_trace: Vec::new(),
        iteration: 0,
        lambda_floor,
    })
}

/// Posterior of the block coefficients given the current hyperparameters.
pub fn e_step(y: &SnapshotSet, state: &HMsblState, model: &BlockModel<'_>) -> Result<Posterior> {
    check_snapshots(model, y)?;
    if !(state.lambda > 0.0) {
        return Err(Error::solver(state.iteration, "noise variance must be positive"));
    }
    let marginal = Marginal::new(model, state)?;
    Ok(posterior_from(&marginal, y, state, model))
}

fn posterior_from(
    marginal: &Marginal,
    y: &SnapshotSet,
    state: &HMsblState,
    model: &BlockModel<'_>,
) -> Posterior {
    if model.block == 1 {
        scalar_posterior(marginal, y, state, model)
    } else {
        block_posterior(marginal, y, state, model)
    }
}

fn scalar_posterior(
    marginal: &Marginal,
    y: &SnapshotSet,
    state: &HMsblState,
    model: &BlockModel<'_>,
) -> Posterior {
    let m = model.num_blocks();
    let cols = y.y.ncols();
    let mut mu = CMatrix::zeros(m, cols);
    let mut sigma_blocks = vec![CMatrix::zeros(1, 1); m];
    let active = state.active_indices();
    if active.is_empty() {
        return Posterior { mu, sigma_blocks };
    }
    let a = active_atoms(model, &active);
    let z = marginal.chol.solve(&y.y);
    let h = a.adjoint() * z;
    let w = marginal.chol.inverse();
    let wa = w * &a;
    for (j, &i) in active.iter().enumerate() {
        let prior = state.gamma[i] * state.b_mats[i][(0, 0)].re;
        let g: f64 = a
            .column(j)
            .iter()
            .zip(wa.column(j).iter())
            .map(|(x, y)| (x.conj() * y).re)
            .sum();
        for l in 0..cols {
            mu[(i, l)] = h[(j, l)] * prior;
        }
        sigma_blocks[i][(0, 0)] = c64(prior - prior * prior * g, 0.0);
    }
    Posterior { mu, sigma_blocks }
}

fn block_posterior(
    marginal: &Marginal,
    y: &SnapshotSet,
    state: &HMsblState,
    model: &BlockModel<'_>,
) -> Posterior {
    let (na, b, m) = (model.atom_len(), model.block, model.num_blocks());
    let cols = y.y.ncols();
    let z = marginal.chol.solve(&y.y);
    let w = marginal.chol.inverse();
    let mut mu = CMatrix::zeros(m * b, cols);
    let mut sigma_blocks = vec![CMatrix::zeros(b, b); m];

    for i in state.active_indices() {
        let a = model.atoms.column(i);
        // h = (a ⊗ I)^H Z
        let mut h = CMatrix::zeros(b, cols);
        for r in 0..na {
            let ac = a[r].conj();
            h += z.rows(r * b, b) * ac;
        }
        // T = W (a ⊗ I), then G = (a ⊗ I)^H T
        let mut t = CMatrix::zeros(na * b, b);
        for rp in 0..na {
            t += w.columns(rp * b, b) * a[rp];
        }
        let mut g = CMatrix::zeros(b, b);
        for r in 0..na {
            g += t.rows(r * b, b) * a[r].conj();
        }
        let prior = state.prior_block(i);
        mu.rows_mut(i * b, b).copy_from(&(&prior * h));
        let mut sigma = &prior - &prior * g * &prior;
        hermitize(&mut sigma);
        sigma_blocks[i] = sigma;
    }
    Posterior { mu, sigma_blocks }
}

/// `gamma_i <- tr(B_i^{-1} (Sigma^i + mu^i mu^iH / L)) / b` for active blocks,
/// using the current `B_i` with diagonal loading.
pub fn update_gamma(
    post: &Posterior,
    state: &HMsblState,
    num_snapshots: usize,
    b_loading: f64,
) -> Result<Vec<f64>> {
    let mut gamma = state.gamma.clone();
    for i in 0..gamma.len() {
        if !state.active[i] {
            gamma[i] = 0.0;
            continue;
        }
        let b = state.b_mats[i].nrows();
        let moment = post.moment(i, num_snapshots);
        let mut loaded = state.b_mats[i].clone();
        for d in 0..b {
            loaded[(d, d)] += c64(b_loading, 0.0);
        }
        let chol = Cholesky::new(loaded).ok_or_else(|| {
            Error::solver(state.iteration, format!("correlation matrix B_{i} is singular"))
        })?;
        let tr = crate::linalg::trace(&chol.solve(&moment));
        let g = tr.re / b as f64;
        if !g.is_finite() {
            return Err(Error::solver(state.iteration, format!("non-finite gamma_{i}")));
        }
        gamma[i] = g.max(0.0);
    }
    Ok(gamma)
}

/// `gamma_i <- ||Sigma^i + mu^i mu^iH / L||_F` for active blocks.
pub fn update_gamma_joint(post: &Posterior, state: &HMsblState, num_snapshots: usize) -> Result<Vec<f64>> {
    let mut gamma = state.gamma.clone();
    for i in 0..gamma.len() {
        gamma[i] = if state.active[i] {
            frobenius_sq(&post.moment(i, num_snapshots)).sqrt()
        } else {
            0.0
        };
        if !gamma[i].is_finite() {
            return Err(Error::solver(state.iteration, format!("non-finite gamma_{i}")));
        }
    }
    Ok(gamma)
}

/// `B_i <- (Sigma^i + mu^i mu^iH / L) / gamma_i`, then scaled to unit
/// Frobenius norm. `gamma` is this iteration's freshly updated vector. Blocks
/// whose `gamma_i` is zero are returned in `dead` for pruning.
pub fn update_b(
    post: &Posterior,
    state: &HMsblState,
    gamma: &[f64],
    num_snapshots: usize,
) -> (Vec<CMatrix>, Vec<usize>) {
    let mut b_mats = state.b_mats.clone();
    let mut dead = Vec::new();
    for i in 0..gamma.len() {
        if !state.active[i] {
            continue;
        }
        if !(gamma[i] > 0.0) {
            dead.push(i);
            continue;
        }
        let mut b = post.moment(i, num_snapshots) / c64(gamma[i], 0.0);
        let norm = frobenius_sq(&b).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            dead.push(i);
            continue;
        }
        b /= c64(norm, 0.0);
        hermitize(&mut b);
        b_mats[i] = b;
    }
    (b_mats, dead)
}

/// Residual term plus `lambda / n_a * tr(Phi Gamma Phi^H (Phi Gamma Phi^H + lambda I)^{-1})`,
/// floored at a small fraction of the mean data power.
pub fn update_lambda(
    y: &SnapshotSet,
    post: &Posterior,
    state: &HMsblState,
    model: &BlockModel<'_>,
) -> Result<f64> {
    let (na, b) = (model.atom_len(), model.block);
    let active = state.active_indices();

    let mut fit = CMatrix::zeros(na * b, y.y.ncols());
    if b == 1 {
        if !active.is_empty() {
            fit = active_atoms(model, &active) * post.mu.select_rows(&active);
        }
    } else {
        for &i in &active {
            let a = model.atoms.column(i);
            let mu_i = post.mu.rows(i * b, b);
            for r in 0..na {
                let mut dst = fit.rows_mut(r * b, b);
                dst += mu_i * a[r];
            }
        }
    }
    let residual = frobenius_sq(&(&y.y - fit)) / ((na * b) as f64 * y.num_snapshots as f64);

    let mut gram = if active.is_empty() {
        CMatrix::zeros(na, na)
    } else {
        let weights: Vec<f64> = active.iter().map(|&i| state.gamma[i]).collect();
        weighted_gram(&active_atoms(model, &active), &weights)
    };
    let gram_copy = gram.clone();
    for d in 0..na {
        gram[(d, d)] += c64(state.lambda, 0.0);
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::solver(state.iteration, "noise-update matrix not positive definite"))?;
    let ratio = crate::linalg::trace(&chol.solve(&gram_copy)).re;
    let lambda = residual + state.lambda / na as f64 * ratio;
    if !lambda.is_finite() {
        return Err(Error::solver(state.iteration, "non-finite noise variance"));
    }
    Ok(lambda.max(state.lambda_floor))
}

/// `log det Sigma_y + tr(Sigma_y^{-1} S_y)` at the current state.
pub fn ml_cost(y: &SnapshotSet, state: &HMsblState, model: &BlockModel<'_>) -> Result<f64> {
    check_snapshots(model, y)?;
    Marginal::new(model, state)?.cost(y, state.iteration)
}

/// Permanently deactivates blocks below the pruning threshold; returns the
/// indices pruned by this call.
pub fn prune(state: &mut HMsblState, rule: &Pruning) -> Result<Vec<usize>> {
    let max = state
        .gamma
        .iter()
        .zip(&state.active)
        .filter(|(_, &a)| a)
        .map(|(g, _)| *g)
        .fold(0.0, f64::max);
    let threshold = match rule.mode {
        PruneMode::Relative => rule.tol * max,
        PruneMode::Absolute => rule.tol,
    };
    let mut pruned = Vec::new();
    for i in 0..state.gamma.len() {
        if state.active[i] && state.gamma[i] < threshold {
            state.active[i] = false;
            state.gamma[i] = 0.0;
            pruned.push(i);
        }
    }
    if state.num_active() == 0 {
        return Err(Error::AllPruned {
            iteration: state.iteration,
        });
    }
    Ok(pruned)
}

/// Thin factor `Ỹ` with `Ỹ Ỹ^H = Y Y^H` and at most `min(N, L)` columns.
/// `num_snapshots` is carried over so second moments stay normalised by the
/// original `L`.
pub fn compress_snapshots(y: &SnapshotSet) -> SnapshotSet {
    let n = y.num_sensors();
    if y.y.ncols() <= n {
        return y.clone();
    }
    let mut outer = &y.y * y.y.adjoint();
    hermitize(&mut outer);
    let (values, vectors) = hermitian_eigh(&outer);
    let top = values.first().copied().unwrap_or(0.0);
    let cutoff = top * n as f64 * f64::EPSILON;
    let keep: Vec<usize> = (0..n).filter(|&k| values[k] > cutoff && values[k] > 0.0).collect();
    let thin = if keep.is_empty() {
        CMatrix::zeros(n, 1)
    } else {
        let mut t = vectors.select_columns(&keep);
        for (j, &k) in keep.iter().enumerate() {
            t.column_mut(j).scale_mut(values[k].sqrt());
        }
        t
    };
    SnapshotSet {
        y: thin,
        num_snapshots: y.num_snapshots,
    }
}

/// Runs EM until `max_iters` or the relative cost change drops below
/// `cost_tol`.
pub fn run(y: &SnapshotSet, model: &BlockModel<'_>, params: &HMsblParams) -> Result<Fit> {
    run_observed(y, model, params, |_| {})
}

/// As [`run`], calling `observer` with the state after every iteration.
pub fn run_observed<F>(
    y: &SnapshotSet,
    model: &BlockModel<'_>,
    params: &HMsblParams,
    mut observer: F,
) -> Result<Fit>
where
    F: FnMut(&HMsblState),
{
    let data = if params.compress {
        compress_snapshots(y)
    } else {
        y.clone()
    };
    let mut state = init_state(&data, model, params)?;
    let mut diagnostics = Diagnostics::default();
    let l = data.num_snapshots;

    let mut marginal = Marginal::new(model, &state)?;
    state.cost_trace.push(marginal.cost(&data, 0)?);

    while state.iteration < params.max_iters {
        let started = Instant::now();
        let post = posterior_from(&marginal, &data, &state, model);
        let gamma = match (params.gamma_rule, model.learn_correlation) {
            (GammaRule::Joint, true) => update_gamma_joint(&post, &state, l)?,
            (GammaRule::Trace, true) => update_gamma(&post, &state, l, params.b_loading)?,
            // pinned B_i = 1: the unloaded trace rule is the exact EM step
            (_, false) => update_gamma(&post, &state, l, 0.0)?,
        };
        let dead = if model.learn_correlation {
            let (b_mats, dead) = update_b(&post, &state, &gamma, l);
            state.b_mats = b_mats;
            dead
        } else {
            (0..gamma.len())
                .filter(|&i| state.active[i] && !(gamma[i] > 0.0))
                .collect()
        };
        if let LambdaMode::Adaptive = params.lambda_mode {
            // uses the gamma that produced this posterior
            state.lambda = update_lambda(&data, &post, &state, model)?;
        }
        state.gamma = gamma;
        for i in dead {
            state.active[i] = false;
            state.gamma[i] = 0.0;
        }
        state.iteration += 1;
        if let Some(rule) = &params.prune {
            prune(&mut state, rule)?;
        } else if state.num_active() == 0 {
            return Err(Error::AllPruned {
                iteration: state.iteration,
            });
        }

        marginal = Marginal::new(model, &state)?;
        let cost = marginal.cost(&data, state.iteration)?;
        let previous = *state.cost_trace.last().expect("cost trace seeded");
        state.cost_trace.push(cost);
        diagnostics.iteration_seconds.push(started.elapsed().as_secs_f64());
        diagnostics.active_history.push(state.num_active());
        diagnostics.lambda_trace.push(state.lambda);
        observer(&state);

        if params.cost_tol > 0.0 && (cost - previous).abs() / previous.abs().max(1.0) < params.cost_tol {
            diagnostics.converged = true;
            break;
        }
    }
    diagnostics.iterations = state.iteration;
    let posterior = posterior_from(&marginal, &data, &state, model);
    Ok(Fit {
        state,
        posterior,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{effective_dictionary, steering, uniform_grid, DictionaryPair};
    use crate::linalg::{max_abs, max_abs_diff, CVector};
    use crate::signal_model::{circular_gaussian, synthesize_snapshots, Scene, Source, UraConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(nx: usize, ny: usize, mu: usize, l: usize, seed: u64) -> (SnapshotSet, CMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid: Vec<f64> = {
            let mut g: Vec<f64> = (0..mu).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.sort_by(f64::total_cmp);
            g
        };
        let phi = CMatrix::from_fn(nx, mu, |p, m| {
            C64::from_polar(1.0, std::f64::consts::PI * p as f64 * grid[m])
        });
        let y = circular_gaussian(nx * ny, l, 1.0, &mut rng);
        (SnapshotSet::new(y), phi)
    }

    fn random_state(model: &BlockModel<'_>, seed: u64, lambda: f64) -> HMsblState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = model.block();
        let m = model.num_blocks();
        let b_mats = (0..m)
            .map(|_| {
                let f = circular_gaussian(b, b + 1, 1.0, &mut rng);
                let mut bm = &f * f.adjoint();
                bm /= c64(frobenius_sq(&bm).sqrt(), 0.0);
                bm
            })
            .collect();
        HMsblState {
            gamma: (0..m).map(|_| rng.random_range(0.1..2.0)).collect(),
            b_mats,
            lambda,
            active: vec![true; m],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 1e-12,
        }
    }

    /// Dense Gaussian conditioning on the full `(M b)`-dimensional prior.
    fn dense_posterior(y: &SnapshotSet, state: &HMsblState, model: &BlockModel<'_>) -> (CMatrix, CMatrix) {
        let d = effective_dictionary(model.atoms(), model.block());
        let s0 = state.prior_covariance();
        let n = d.nrows();
        let sy = CMatrix::identity(n, n) * c64(state.lambda, 0.0) + &d * &s0 * d.adjoint();
        let sy_inv = sy.try_inverse().unwrap();
        let sx = &s0 - &s0 * d.adjoint() * &sy_inv * &d * &s0;
        let mu = &sx * d.adjoint() * &y.y / c64(state.lambda, 0.0);
        (mu, sx)
    }

    #[test]
    fn posterior_matches_dense_oracle() {
        for seed in 0..20u64 {
            let (nx, ny, mu, l) = (2, 2, 2, 3);
            let (y, phi) = random_problem(nx, ny, mu, l, seed);
            let model = BlockModel::new(&phi, ny);
            let state = random_state(&model, seed + 100, 0.3);
            let post = e_step(&y, &state, &model).unwrap();
            let (mu_d, sx_d) = dense_posterior(&y, &state, &model);
            assert!(max_abs_diff(&post.mu, &mu_d) < 1e-10);
            for i in 0..mu {
                let blk = sx_d.view((i * ny, i * ny), (ny, ny)).into_owned();
                assert!(max_abs_diff(&post.sigma_blocks[i], &blk) < 1e-10);
            }
        }
    }

    #[test]
    fn scalar_and_block_paths_agree() {
        let (y, phi) = random_problem(5, 1, 7, 4, 9);
        let model = BlockModel::new(&phi, 1);
        let mut state = random_state(&model, 3, 0.2);
        state.active[2] = false;
        let marginal = Marginal::new(&model, &state).unwrap();
        let a = scalar_posterior(&marginal, &y, &state, &model);
        let b = block_posterior(&marginal, &y, &state, &model);
        assert!(max_abs_diff(&a.mu, &b.mu) < 1e-13);
        for (p, q) in a.sigma_blocks.iter().zip(&b.sigma_blocks) {
            assert!(max_abs_diff(p, q) < 1e-13);
        }
        let active = state.active_indices();
        let g1 = blockwise_gram(&model, &state, &active);
        let weights: Vec<f64> = active.iter().map(|&i| state.gamma[i]).collect();
        let g2 = weighted_gram(&active_atoms(&model, &active), &weights);
        assert!(max_abs_diff(&g1, &g2) < 1e-13);
    }

    #[test]
    fn zero_gamma_gives_zero_posterior() {
        let (y, phi) = random_problem(3, 2, 4, 5, 1);
        let model = BlockModel::new(&phi, 2);
        let mut state = random_state(&model, 2, 1.0);
        state.gamma.iter_mut().for_each(|g| *g = 0.0);
        let post = e_step(&y, &state, &model).unwrap();
        assert_eq!(max_abs(&post.mu), 0.0);
        assert!(post.sigma_blocks.iter().all(|s| max_abs(s) == 0.0));
    }

    #[test]
    fn inactive_blocks_are_zero() {
        let (y, phi) = random_problem(3, 2, 4, 5, 8);
        let model = BlockModel::new(&phi, 2);
        let mut state = random_state(&model, 2, 1.0);
        state.active[1] = false;
        let post = e_step(&y, &state, &model).unwrap();
        assert_eq!(max_abs(&post.mean_block(1)), 0.0);
        assert_eq!(max_abs(&post.sigma_blocks[1]), 0.0);
        let (mu_d, _) = dense_posterior(&y, &state, &model);
        assert!(max_abs_diff(&post.mu, &mu_d) < 1e-10);
    }

    #[test]
    fn scalar_woodbury() {
        // one atom d with ||d||^2 = n, gamma = B = lambda = 1
        let n = 4;
        let d = CMatrix::from_column_slice(n, 1, steering(0.3, n).as_slice());
        let model = BlockModel::new(&d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = SnapshotSet::new(circular_gaussian(n, 2, 1.0, &mut rng));
        let state = HMsblState {
            gamma: vec![1.0],
            b_mats: vec![CMatrix::identity(1, 1)],
            lambda: 1.0,
            active: vec![true],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let post = e_step(&y, &state, &model).unwrap();
        let var = 1.0 - n as f64 / (1.0 + n as f64);
        assert!((post.sigma_blocks[0][(0, 0)].re - var).abs() < 1e-14);
        let dy = d.adjoint() * &y.y;
        for l in 0..2 {
            assert!((post.mu[(0, l)] - dy[(0, l)] * var).norm() < 1e-13);
        }
    }

    #[test]
    fn init_formula() {
        let (y, phi) = random_problem(2, 2, 3, 6, 42);
        let model = BlockModel::new(&phi, 2);
        let params = HMsblParams::new(LambdaMode::Fixed(0.1));
        let state = init_state(&y, &model, &params).unwrap();
        // hand-rolled: ||Y Y^H / L||_F / ||D D^H||_F with D formed densely
        let s = &y.y * y.y.adjoint() / c64(6.0, 0.0);
        let d = effective_dictionary(&phi, 2);
        let dd = &d * d.adjoint();
        let expect = s.norm() / dd.norm();
        for g in &state.gamma {
            assert!((g - expect).abs() < 1e-12 * expect);
        }
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        for b in &state.b_mats {
            assert!((b[(0, 0)].re - inv_sqrt2).abs() < 1e-15);
            assert!((frobenius_sq(b) - 1.0).abs() < 1e-15);
        }
        assert_eq!(state.lambda, 0.1);
        assert!(state.active.iter().all(|&a| a));

        let zero = SnapshotSet::new(CMatrix::zeros(4, 3));
        assert!(matches!(init_state(&zero, &model, &params), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn init_ratio_one_and_scale() {
        // Y = D D^H / ||D D^H||_F * c, L = 1 ... pick Y with Y Y^H = D D^H
        let (_, phi) = random_problem(3, 1, 4, 1, 5);
        let model = BlockModel::new(&phi, 1);
        let params = HMsblParams::new(LambdaMode::Fixed(0.1));
        let y = SnapshotSet::new(phi.clone()); // L = 4, so YY^H / L = DD^H / 4
        let mut yy = y.clone();
        yy.num_snapshots = 1;
        let st = init_state(&yy, &model, &params).unwrap();
        assert!(st.gamma.iter().all(|g| (g - 1.0).abs() < 1e-14));

        let base = init_state(&y, &model, &params).unwrap().gamma[0];
        let scaled = SnapshotSet::new(&y.y * c64(0.0, 3.0));
        let g = init_state(&scaled, &model, &params).unwrap().gamma[0];
        assert!((g / base - 9.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_update_examples() {
        // fixed point: moment = c B
        let b = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = circular_gaussian(b, b + 2, 1.0, &mut rng);
        let mut bm = &f * f.adjoint();
        bm /= c64(frobenius_sq(&bm).sqrt(), 0.0);
        let c = 2.5;
        let post = Posterior {
            mu: CMatrix::zeros(b, 1),
            sigma_blocks: vec![&bm * c64(c, 0.0)],
        };
        let state = HMsblState {
            gamma: vec![1.0],
            b_mats: vec![bm],
            lambda: 1.0,
            active: vec![true],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let g = update_gamma(&post, &state, 1, 0.0).unwrap();
        assert!((g[0] - c).abs() < 1e-10);

        // 2x2 diagonal moment with B = I/sqrt(2)
        let (a, bb) = (0.7, 1.9);
        let mut sig = CMatrix::zeros(2, 2);
        sig[(0, 0)] = c64(a, 0.0);
        sig[(1, 1)] = c64(bb, 0.0);
        let post = Posterior {
            mu: CMatrix::zeros(2, 1),
            sigma_blocks: vec![sig],
        };
        let state = HMsblState {
            gamma: vec![1.0],
            b_mats: vec![CMatrix::identity(2, 2) / c64(2f64.sqrt(), 0.0)],
            lambda: 1.0,
            active: vec![true],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let g = update_gamma(&post, &state, 1, 0.0).unwrap();
        assert!((g[0] - 2f64.sqrt() * (a + bb) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn gamma_update_reduces_to_msbl() {
        let (y, phi) = random_problem(4, 1, 6, 5, 12);
        let model = BlockModel::new(&phi, 1);
        let state = random_state(&model, 13, 0.4);
        let post = e_step(&y, &state, &model).unwrap();
        let g = update_gamma(&post, &state, 5, 0.0).unwrap();
        // MSBL: gamma_i = Sigma_ii + ||mu_i||^2 / L
        for i in 0..6 {
            let norm: f64 = post.mu.row(i).iter().map(|z| z.norm_sqr()).sum();
            let expect = post.sigma_blocks[i][(0, 0)].re + norm / 5.0;
            assert!((g[i] - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    fn moment_posterior(moment: &CMatrix) -> Posterior {
        Posterior {
            mu: CMatrix::zeros(moment.nrows(), 1),
            sigma_blocks: vec![moment.clone()],
        }
    }

    #[test]
    fn joint_gamma_reproduces_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = circular_gaussian(4, 2, 1.0, &mut rng);
        let mut moment = &f * f.adjoint();
        hermitize(&mut moment);
        let post = moment_posterior(&moment);
        let state = HMsblState::for_tests(vec![0.7], vec![CMatrix::identity(4, 4) * c64(0.5, 0.0)]);
        let g = update_gamma_joint(&post, &state, 1).unwrap();
        let (b, dead) = update_b(&post, &state, &g, 1);
        assert!(dead.is_empty());
        // exact EM: the new prior block equals the moment
        assert!(max_abs_diff(&(&b[0] * c64(g[0], 0.0)), &moment) < 1e-12);
    }

    #[test]
    fn gamma_rules_agree_at_fixed_point_but_not_when_singular() {
        let m = CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 1.0), c64(-1.0, 0.0)]);
        let mut b_old = &m * m.adjoint() + CMatrix::identity(3, 3) * c64(0.2, 0.0);
        b_old /= c64(b_old.norm(), 0.0);
        let moment = &b_old * c64(2.5, 0.0);
        let state = HMsblState::for_tests(vec![1.0], vec![b_old]);
        let post = moment_posterior(&moment);
        let trace = update_gamma(&post, &state, 1, 0.0).unwrap()[0];
        let joint = update_gamma_joint(&post, &state, 1).unwrap()[0];
        assert!((trace - 2.5).abs() < 1e-12 && (joint - 2.5).abs() < 1e-12);

        // rank 1 of 3: the loaded inverse discards the null directions
        let mut b_old = &m * m.adjoint();
        b_old /= c64(b_old.norm(), 0.0);
        let moment = &b_old * c64(2.5, 0.0);
        let state = HMsblState::for_tests(vec![1.0], vec![b_old]);
        let post = moment_posterior(&moment);
        let trace = update_gamma(&post, &state, 1, 1e-10).unwrap()[0];
        let joint = update_gamma_joint(&post, &state, 1).unwrap()[0];
        assert!((joint - 2.5).abs() < 1e-12);
        assert!((trace - 2.5 / 3.0).abs() < 1e-6, "{trace}");
    }

    #[test]
    fn b_update_examples() {
        let post = Posterior {
            mu: CMatrix::zeros(2, 1),
            sigma_blocks: vec![CMatrix::identity(2, 2)],
        };
        let state = HMsblState {
            gamma: vec![1.0],
            b_mats: vec![CMatrix::identity(2, 2)],
            lambda: 1.0,
            active: vec![true],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let (b, dead) = update_b(&post, &state, &[7.0], 1);
        assert!(dead.is_empty());
        let expect = CMatrix::identity(2, 2) / c64(2f64.sqrt(), 0.0);
        assert!(max_abs_diff(&b[0], &expect) < 1e-15);

        // rank one: moment = m m^H (via the mean term with L = 1)
        let m = CVector::from_vec(vec![c64(1.0, 2.0), c64(-0.5, 0.0), c64(0.0, 1.0)]);
        let post = Posterior {
            mu: CMatrix::from_column_slice(3, 1, m.as_slice()),
            sigma_blocks: vec![CMatrix::zeros(3, 3)],
        };
        let state3 = HMsblState {
            b_mats: vec![CMatrix::identity(3, 3)],
            ..state.clone()
        };
        let (b, _) = update_b(&post, &state3, &[0.3], 1);
        let expect = &m * m.adjoint() / c64(m.norm_squared(), 0.0);
        assert!(max_abs_diff(&b[0], &expect) < 1e-15);

        // zero gamma: reported for pruning
        let (_, dead) = update_b(&post, &state3, &[0.0], 1);
        assert_eq!(dead, vec![0]);
    }

    #[test]
    fn b_update_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = circular_gaussian(3, 3, 1.0, &mut rng);
        let mut moment = &f * f.adjoint();
        hermitize(&mut moment);
        let post = Posterior {
            mu: CMatrix::zeros(3, 1),
            sigma_blocks: vec![moment.clone()],
        };
        let state = HMsblState {
            gamma: vec![1.0],
            b_mats: vec![CMatrix::identity(3, 3)],
            lambda: 1.0,
            active: vec![true],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let (b, _) = update_b(&post, &state, &[0.8], 1);
        let scaled = &moment / c64(0.8, 0.0);
        let oracle = &scaled / c64(scaled.norm(), 0.0);
        assert!(max_abs_diff(&b[0], &oracle) < 1e-12);
        let (vals, _) = hermitian_eigh(&b[0]);
        assert!(vals.iter().all(|&v| v >= -1e-12));
    }

    fn dense_lambda(y: &SnapshotSet, post: &Posterior, state: &HMsblState, model: &BlockModel<'_>) -> f64 {
        let d = effective_dictionary(model.atoms(), model.block());
        let resid = (&y.y - &d * &post.mu).norm_squared();
        let n = d.nrows() as f64;
        let na = model.atom_len();
        let gam = CMatrix::from_diagonal(&CVector::from_iterator(
            state.gamma.len(),
            state.gamma.iter().map(|&g| c64(g, 0.0)),
        ));
        let pgp = model.atoms() * gam * model.atoms().adjoint();
        let inv = (&pgp + CMatrix::identity(na, na) * c64(state.lambda, 0.0)).try_inverse().unwrap();
        let tr = crate::linalg::trace(&(pgp * inv)).re;
        resid / (n * y.num_snapshots as f64) + state.lambda / na as f64 * tr
    }

    #[test]
    fn lambda_update_matches_dense_formula() {
        for (ny, seed) in [(1usize, 31u64), (1, 32), (3, 33)] {
            let (y, phi) = random_problem(2, ny, 2, 4, seed);
            let model = BlockModel::new(&phi, ny);
            let state = random_state(&model, seed + 1, 0.5);
            let post = e_step(&y, &state, &model).unwrap();
            let got = update_lambda(&y, &post, &state, &model).unwrap();
            let want = dense_lambda(&y, &post, &state, &model);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn lambda_update_limits() {
        // exact fit and gamma = 0: both terms vanish, floor applies
        let (_, phi) = random_problem(3, 1, 3, 1, 2);
        let model = BlockModel::new(&phi, 1);
        let mut state = random_state(&model, 3, 0.5);
        let mu = CMatrix::from_fn(3, 2, |i, j| c64(i as f64 + 1.0, j as f64));
        let y = SnapshotSet::new(&phi * &mu);
        let post = Posterior {
            mu,
            sigma_blocks: vec![CMatrix::zeros(1, 1); 3],
        };
        state.gamma = vec![0.0; 3];
        state.lambda_floor = 1e-9;
        assert_eq!(update_lambda(&y, &post, &state, &model).unwrap(), 1e-9);

        // huge gamma: the trace term saturates at n_a, giving residual + lambda
        state.gamma = vec![1e12; 3];
        let got = update_lambda(&y, &post, &state, &model).unwrap();
        assert!((got - 0.5).abs() < 1e-9);
    }

    fn dense_cost(y: &SnapshotSet, state: &HMsblState, model: &BlockModel<'_>) -> f64 {
        let d = effective_dictionary(model.atoms(), model.block());
        let n = d.nrows();
        let sy = CMatrix::identity(n, n) * c64(state.lambda, 0.0) + &d * state.prior_covariance() * d.adjoint();
        let (vals, _) = hermitian_eigh(&sy);
        let logdet: f64 = vals.iter().map(|v| v.ln()).sum();
        let s = &y.y * y.y.adjoint() / c64(y.num_snapshots as f64, 0.0);
        logdet + crate::linalg::trace(&(sy.try_inverse().unwrap() * s)).re
    }

    #[test]
    fn cost_examples() {
        let (y, phi) = random_problem(2, 2, 3, 4, 50);
        let model = BlockModel::new(&phi, 2);
        let mut state = random_state(&model, 51, 1.0);
        let tr_s = crate::linalg::trace(&(&y.y * y.y.adjoint())).re / 4.0;
        state.gamma = vec![0.0; 3];
        assert!((ml_cost(&y, &state, &model).unwrap() - tr_s).abs() < 1e-12);
        state.lambda = std::f64::consts::E;
        let c = ml_cost(&y, &state, &model).unwrap();
        assert!((c - (4.0 + tr_s / std::f64::consts::E)).abs() < 1e-12);

        let state = random_state(&model, 52, 0.3);
        let c = ml_cost(&y, &state, &model).unwrap();
        assert!((c - dense_cost(&y, &state, &model)).abs() < 1e-10);
    }

    #[test]
    fn prune_examples() {
        let mut state = HMsblState {
            gamma: vec![1.0, 1e-5, 0.5],
            b_mats: vec![CMatrix::identity(1, 1); 3],
            lambda: 1.0,
            active: vec![true; 3],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        let pruned = prune(&mut state, &Pruning::default()).unwrap();
        assert_eq!(pruned, vec![1]);
        assert_eq!(state.active, vec![true, false, true]);

        state.gamma = vec![0.2; 3];
        state.active = vec![true; 3];
        assert!(prune(&mut state, &Pruning::default()).unwrap().is_empty());

        let rule = Pruning {
            tol: 1.0,
            mode: PruneMode::Absolute,
        };
        assert!(matches!(prune(&mut state, &rule), Err(Error::AllPruned { .. })));
    }

    #[test]
    fn prune_matches_scalar_comparison() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let gamma: Vec<f64> = (0..200).map(|_| 10f64.powf(rng.random_range(-6.0..1.0))).collect();
        let mut state = HMsblState {
            gamma: gamma.clone(),
            b_mats: vec![CMatrix::identity(1, 1); 200],
            lambda: 1.0,
            active: vec![true; 200],
            cost_trace: vec![],
            iteration: 0,
            lambda_floor: 0.0,
        };
        prune(&mut state, &Pruning::default()).unwrap();
        let max = gamma.iter().cloned().fold(0.0, f64::max);
        for i in 0..200 {
            assert_eq!(state.active[i], gamma[i] >= 1e-3 * max);
        }
    }

    #[test]
    fn compression_preserves_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = SnapshotSet::new(circular_gaussian(4, 40, 1.0, &mut rng));
        let c = compress_snapshots(&y);
        assert!(c.y.ncols() <= 4);
        assert_eq!(c.num_snapshots, 40);
        let a = &y.y * y.y.adjoint();
        let b = &c.y * c.y.adjoint();
        assert!((a - b).norm() / (&y.y * y.y.adjoint()).norm() < 1e-10);

        // short data is returned as-is
        let short = SnapshotSet::new(circular_gaussian(4, 3, 1.0, &mut rng));
        assert_eq!(compress_snapshots(&short), short);

        // zero data collapses to a single zero column
        let zero = SnapshotSet::new(CMatrix::zeros(3, 10));
        let c = compress_snapshots(&zero);
        assert_eq!(c.y.shape(), (3, 1));
        assert_eq!(max_abs(&c.y), 0.0);
    }

    #[test]
    fn compression_keeps_rank() {
        // two orthogonal equal-norm columns repeated 5 times each
        let mut base = CMatrix::zeros(4, 2);
        base[(0, 0)] = c64(1.0, 1.0);
        base[(1, 1)] = c64(0.0, 2f64.sqrt());
        let y = SnapshotSet::new(CMatrix::from_fn(4, 10, |i, j| base[(i, j % 2)]));
        let c = compress_snapshots(&y);
        assert_eq!(c.y.ncols(), 2);
        assert!(max_abs_diff(&(&c.y * c.y.adjoint()), &(&y.y * y.y.adjoint())) < 1e-12);
    }

    fn scene_problem(nx: usize, ny: usize, l: usize, seed: u64) -> (SnapshotSet, DictionaryPair) {
        let pair = DictionaryPair::new(
            uniform_grid(24, -1.0, 1.0).unwrap(),
            uniform_grid(24, -1.0, 1.0).unwrap(),
            nx,
            ny,
        );
        let scene = Scene {
            sources: vec![
                Source::new(pair.grid_u[6], 0.3).unwrap(),
                Source::new(pair.grid_u[15], -0.5).unwrap(),
            ],
            snr_db: 10.0,
            num_snapshots: l,
            seed,
        };
        (synthesize_snapshots(&scene, &UraConfig::new(nx, ny).unwrap()), pair)
    }

    #[test]
    fn max_iters_zero_returns_initial_state() {
        let (y, pair) = scene_problem(3, 3, 20, 1);
        let model = BlockModel::new(&pair.phi_u, 3);
        let mut params = HMsblParams::new(LambdaMode::Fixed(0.1));
        params.max_iters = 0;
        let fit = run(&y, &model, &params).unwrap();
        let init = init_state(&compress_snapshots(&y), &model, &params).unwrap();
        assert_eq!(fit.state.gamma, init.gamma);
        assert_eq!(fit.state.b_mats, init.b_mats);
        assert_eq!(fit.state.cost_trace.len(), 1);
        assert_eq!(fit.diagnostics.iterations, 0);
    }

    #[test]
    fn em_cost_is_monotone_and_b_normalised() {
        for (seed, rule) in (0..4).flat_map(|s| [(s, GammaRule::Joint), (s, GammaRule::Trace)]) {
            let (y, pair) = scene_problem(3, 3, 15, seed);
            let model = BlockModel::new(&pair.phi_u, 3);
            let mut params = HMsblParams::new(LambdaMode::Fixed(0.1));
            params.gamma_rule = rule;
            params.prune = None;
            params.cost_tol = 0.0;
            params.max_iters = 60;
            let fit = run_observed(&y, &model, &params, |st| {
                for b in &st.b_mats {
                    assert!((frobenius_sq(b).sqrt() - 1.0).abs() < 1e-12);
                    assert!(max_abs_diff(b, &b.adjoint()) < 1e-12);
                }
            })
            .unwrap();
            for w in fit.state.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "{rule:?}: cost rose {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn adaptive_lambda_stays_positive() {
        let (y, pair) = scene_problem(3, 3, 30, 4);
        let model = BlockModel::new(&pair.phi_u, 3);
        let mut params = HMsblParams::new(LambdaMode::Adaptive);
        params.max_iters = 40;
        let fit = run(&y, &model, &params).unwrap();
        assert!(fit.diagnostics.lambda_trace.iter().all(|&l| l > 0.0 && l.is_finite()));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (y, pair) = scene_problem(3, 3, 5, 4);
        let model = BlockModel::new(&pair.phi_u, 2);
        let params = HMsblParams::new(LambdaMode::Fixed(0.1));
        assert!(matches!(run(&y, &model, &params), Err(Error::InvalidArgument(_))));
    }
}
