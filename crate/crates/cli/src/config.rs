//! Experiment configuration: a TOML file per experiment.
//!
//! Parsing walks the TOML tree by hand rather than deriving `Deserialize`, so
//! that every problem in a file is reported at once, each tagged with the
//! dotted path of the offending field.

use std::fmt;
use std::path::PathBuf;

use hmsbl_core::hmsbl::{GammaRule, HMsblParams, LambdaMode, PruneMode, Pruning};
use hmsbl_core::signal_model::noise_variance_from_snr;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Run time against the `v`-grid size, plus one localisation scatter.
    Exp1,
    /// Sources sharing grid coordinates; paired estimates against truth.
    Exp2,
    /// RMSE against EM iteration.
    Exp3,
    /// Monte-Carlo trials reported like `exp2`.
    Custom,
}

impl ExperimentKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "exp1" => Some(Self::Exp1),
            "exp2" => Some(Self::Exp2),
            "exp3" => Some(Self::Exp3),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePoint {
    pub u: f64,
    pub v: f64,
}

/// Every `(u, v)` combination of the two lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `k` sources drawn uniformly in the disk of radius `max_radius`, with
/// pairwise `u` separation at least `min_u_separation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub k: usize,
    pub min_u_separation: f64,
    pub max_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub snr_db: f64,
    pub num_snapshots: usize,
    /// Move each source to the nearest `(u, v)` grid point.
    pub snap_to_grid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<SourcePoint>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<ProductSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSpec>,
}

impl SceneConfig {
    pub fn num_sources(&self) -> usize {
        if let Some(s) = &self.sources {
            s.len()
        } else if let Some(p) = &self.product {
            p.u.len() * p.v.len()
        } else {
            self.random.map_or(0, |r| r.k)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub mu: usize,
    pub mv: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mv_sweep: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaName {
    /// The true per-element noise variance of the scene.
    Oracle,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Named(LambdaName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iterations: usize,
    pub prune: bool,
    pub prune_tol: f64,
    pub prune_mode: PruneMode,
    pub lambda: LambdaSpec,
    pub gamma_rule: GammaRule,
    pub cost_tol: f64,
    pub compress: bool,
    pub b_loading: f64,
    /// Sources per selected `u` peak, strongest peak first (H-MSBL only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_counts: Option<Vec<usize>>,
}

impl SolverConfig {
    pub fn params(&self, snr_db: f64) -> HMsblParams {
        let lambda_mode = match self.lambda {
            LambdaSpec::Value(v) => LambdaMode::Fixed(v),
            LambdaSpec::Named(LambdaName::Oracle) => LambdaMode::Fixed(noise_variance_from_snr(snr_db)),
            LambdaSpec::Named(LambdaName::Adaptive) => LambdaMode::Adaptive,
        };
        HMsblParams {
            max_iters: self.iterations,
            prune: self.prune.then_some(Pruning {
                tol: self.prune_tol,
                mode: self.prune_mode,
            }),
            gamma_rule: self.gamma_rule,
            b_loading: self.b_loading,
            cost_tol: self.cost_tol,
            lambda_mode,
            compress: self.compress,
        }
    }
}

/// Fixed-length runs used for the timing sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub repetitions: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub output: PathBuf,
    /// A trial succeeds when every matched source is closer than this.
    pub success_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budgets: Option<Vec<usize>>,
    pub array: ArrayConfig,
    pub scene: SceneConfig,
    pub grids: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmsbl: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msbl: Option<SolverConfig>,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Parses and validates a config, collecting every error found.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<ConfigError>> {
    let mut root: Table = match raw.parse() {
        Ok(t) => t,
        Err(e) => {
            return Err(vec![ConfigError {
                path: String::new(),
                message: format!("invalid TOML: {}", e.message()),
            }])
        }
    };
    let mut w = Walker::default();
    let cfg = w.experiment(&mut root);
    match cfg {
        Some(cfg) if w.errors.is_empty() => Ok(cfg),
        _ => Err(w.errors),
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

#[derive(Default)]
struct Walker {
    errors: Vec<ConfigError>,
}

impl Walker {
    fn err(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ConfigError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn required(&mut self, t: &mut Table, path: &str, key: &str) -> Option<Value> {
        let v = t.remove(key);
        if v.is_none() {
            self.err(join(path, key), "missing required field");
        }
        v
    }

    fn uint_value(&mut self, v: Value, path: &str) -> Option<u64> {
        match v {
            Value::Integer(i) if i >= 0 => Some(i as u64),
            Value::Integer(i) => {
                self.err(path, format!("must be non-negative, got {i}"));
                None
            }
            other => {
                self.err(path, format!("expected an integer, got {}", other.type_str()));
                None
            }
        }
    }

    fn float_value(&mut self, v: Value, path: &str) -> Option<f64> {
        match v {
            Value::Float(f) if f.is_finite() => Some(f),
            Value::Float(f) => {
                self.err(path, format!("must be finite, got {f}"));
                None
            }
            Value::Integer(i) => Some(i as f64),
            other => {
                self.err(path, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn req_uint(&mut self, t: &mut Table, path: &str, key: &str) -> Option<usize> {
        let v = self.required(t, path, key)?;
        self.uint_value(v, &join(path, key)).map(|x| x as usize)
    }

    fn opt_uint(&mut self, t: &mut Table, path: &str, key: &str, default: usize) -> Option<usize> {
        match t.remove(key) {
            None => Some(default),
            Some(v) => self.uint_value(v, &join(path, key)).map(|x| x as usize),
        }
    }

    fn req_float(&mut self, t: &mut Table, path: &str, key: &str) -> Option<f64> {
        let v = self.required(t, path, key)?;
        self.float_value(v, &join(path, key))
    }

    fn opt_float(&mut self, t: &mut Table, path: &str, key: &str, default: f64) -> Option<f64> {
        match t.remove(key) {
            None => Some(default),
            Some(v) => self.float_value(v, &join(path, key)),
        }
    }

    fn opt_bool(&mut self, t: &mut Table, path: &str, key: &str, default: bool) -> Option<bool> {
        match t.remove(key) {
            None => Some(default),
            Some(Value::Boolean(b)) => Some(b),
            Some(other) => {
                self.err(join(path, key), format!("expected a boolean, got {}", other.type_str()));
                None
            }
        }
    }

    fn opt_table(&mut self, t: &mut Table, path: &str, key: &str) -> Option<Option<Table>> {
        match t.remove(key) {
            None => Some(None),
            Some(Value::Table(tbl)) => Some(Some(tbl)),
            Some(other) => {
                self.err(join(path, key), format!("expected a table, got {}", other.type_str()));
                None
            }
        }
    }

    fn req_table(&mut self, t: &mut Table, path: &str, key: &str) -> Option<Table> {
        match self.opt_table(t, path, key)? {
            Some(tbl) => Some(tbl),
            None => {
                self.err(join(path, key), "missing required table");
                None
            }
        }
    }

    fn array(&mut self, v: Value, path: &str) -> Option<Vec<Value>> {
        match v {
            Value::Array(a) => Some(a),
            other => {
                self.err(path, format!("expected an array, got {}", other.type_str()));
                None
            }
        }
    }

    fn uint_list(&mut self, v: Value, path: &str) -> Option<Vec<usize>> {
        let items = self.array(v, path)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.into_iter().enumerate() {
            match self.uint_value(item, &format!("{path}[{i}]")) {
                Some(x) => out.push(x as usize),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn float_list(&mut self, v: Value, path: &str) -> Option<Vec<f64>> {
        let items = self.array(v, path)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.into_iter().enumerate() {
            match self.float_value(item, &format!("{path}[{i}]")) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// Reports keys left in `t` after all known ones were taken.
    fn no_extra(&mut self, t: Table, path: &str) {
        for key in t.keys() {
            self.err(join(path, key), "unknown field");
        }
    }

    fn experiment(&mut self, root: &mut Table) -> Option<ExperimentConfig> {
        let mut name = String::from("run");
        let experiment = match self.required(root, "", "experiment") {
            Some(Value::String(s)) => {
                name.clone_from(&s);
                let kind = ExperimentKind::parse(&s);
                if kind.is_none() {
                    self.err("experiment", format!("unknown experiment '{s}' (expected exp1, exp2, exp3 or custom)"));
                }
                kind
            }
            Some(other) => {
                self.err("experiment", format!("expected a string, got {}", other.type_str()));
                None
            }
            None => None,
        };
        let seed = self.required(root, "", "seed").and_then(|v| self.uint_value(v, "seed"));
        let trials = self.req_uint(root, "", "trials");
        if trials == Some(0) {
            self.err("trials", "must be at least 1");
        }
        let output = match root.remove("output") {
            None => Some(PathBuf::from(format!("results/{name}"))),
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => {
                self.err("output", format!("expected a string, got {}", other.type_str()));
                None
            }
        };
        let success_threshold = self.opt_float(root, "", "success_threshold", 0.05);
        if matches!(success_threshold, Some(t) if t <= 0.0) {
            self.err("success_threshold", "must be positive");
        }
        let budgets = match root.remove("budgets") {
            None => Some(None),
            Some(v) => self.uint_list(v, "budgets").map(Some),
        };
        if let Some(Some(b)) = &budgets {
            if b.is_empty() {
                self.err("budgets", "must not be empty");
            }
            for (i, &x) in b.iter().enumerate() {
                if x == 0 {
                    self.err(format!("budgets[{i}]"), "must be at least 1");
                }
            }
        }

        let array = self.req_table(root, "", "array").and_then(|t| self.array_config(t));
        let grids = self.req_table(root, "", "grids").and_then(|t| self.grid_config(t));
        let scene = self.req_table(root, "", "scene").and_then(|t| self.scene_config(t));
        let timing = self.opt_table(root, "", "timing").map(|t| t.and_then(|t| self.timing_config(t)));
        let hmsbl = self
            .opt_table(root, "", "hmsbl")
            .map(|t| t.and_then(|t| self.solver_config(t, "hmsbl")));
        let msbl = self
            .opt_table(root, "", "msbl")
            .map(|t| t.and_then(|t| self.solver_config(t, "msbl")));
        self.no_extra(std::mem::take(root), "");

        self.cross_checks(Partial {
            experiment,
            array: array.as_ref(),
            scene: scene.as_ref(),
            grids: grids.as_ref(),
            timing: timing.as_ref(),
            budgets: budgets.as_ref(),
            hmsbl: hmsbl.as_ref(),
            msbl: msbl.as_ref(),
        });
        let cfg = ExperimentConfig {
            experiment: experiment?,
            seed: seed?,
            trials: trials?,
            output: output?,
            success_threshold: success_threshold?,
            budgets: budgets?,
            array: array?,
            scene: scene?,
            grids: grids?,
            timing: timing?,
            hmsbl: hmsbl?,
            msbl: msbl?,
        };
        Some(cfg)
    }

    fn array_config(&mut self, mut t: Table) -> Option<ArrayConfig> {
        let nx = self.req_uint(&mut t, "array", "nx");
        let ny = self.req_uint(&mut t, "array", "ny");
        self.no_extra(t, "array");
        for (name, v) in [("nx", nx), ("ny", ny)] {
            if v == Some(0) {
                self.err(format!("array.{name}"), "must be at least 1");
            }
        }
        Some(ArrayConfig { nx: nx?, ny: ny? })
    }

    fn grid_config(&mut self, mut t: Table) -> Option<GridConfig> {
        let mu = self.req_uint(&mut t, "grids", "mu");
        let mv = self.req_uint(&mut t, "grids", "mv");
        let mv_sweep = match t.remove("mv_sweep") {
            None => Some(None),
            Some(v) => self.uint_list(v, "grids.mv_sweep").map(Some),
        };
        self.no_extra(t, "grids");
        for (name, v) in [("mu", mu), ("mv", mv)] {
            if matches!(v, Some(m) if m < 2) {
                self.err(format!("grids.{name}"), "grid needs at least 2 points");
            }
        }
        if let Some(Some(sweep)) = &mv_sweep {
            if sweep.is_empty() {
                self.err("grids.mv_sweep", "must not be empty");
            }
            for (i, &m) in sweep.iter().enumerate() {
                if m < 2 {
                    self.err(format!("grids.mv_sweep[{i}]"), "grid needs at least 2 points");
                }
            }
        }
        Some(GridConfig {
            mu: mu?,
            mv: mv?,
            mv_sweep: mv_sweep?,
        })
    }

    fn check_point(&mut self, path: &str, u: f64, v: f64) {
        if !(-1.0..=1.0).contains(&u) || !(-1.0..=1.0).contains(&v) {
            self.err(path, format!("u = {u}, v = {v} must lie in [-1, 1]"));
        }
        let r2 = u * u + v * v;
        if r2 > 1.0 {
            self.err(path, format!("u^2 + v^2 = {r2} violates u^2 + v^2 <= 1"));
        }
    }

    fn scene_config(&mut self, mut t: Table) -> Option<SceneConfig> {
        let snr_db = self.req_float(&mut t, "scene", "snr_db");
        let num_snapshots = self.req_uint(&mut t, "scene", "num_snapshots");
        if num_snapshots == Some(0) {
            self.err("scene.num_snapshots", "must be at least 1");
        }
        let snap_to_grid = self.opt_bool(&mut t, "scene", "snap_to_grid", false);

        let sources = match t.remove("sources") {
            None => Some(None),
            Some(v) => self.explicit_sources(v).map(Some),
        };
        let product = match self.opt_table(&mut t, "scene", "product") {
            Some(Some(p)) => self.product_spec(p).map(Some),
            Some(None) => Some(None),
            None => None,
        };
        let random = match self.opt_table(&mut t, "scene", "random") {
            Some(Some(r)) => self.random_spec(r).map(Some),
            Some(None) => Some(None),
            None => None,
        };
        self.no_extra(t, "scene");

        let given = [sources.as_ref().map(|s| s.is_some()), product.as_ref().map(|p| p.is_some()), random.map(|r| r.is_some())];
        // only judge the count when every layout parsed
        if given.iter().all(Option::is_some) {
            let n = given.iter().filter(|g| g == &&Some(true)).count();
            if n != 1 {
                self.err("scene", format!("exactly one of sources, product or random is required, found {n}"));
            }
        }
        Some(SceneConfig {
            snr_db: snr_db?,
            num_snapshots: num_snapshots?,
            snap_to_grid: snap_to_grid?,
            sources: sources?,
            product: product?,
            random: random?,
        })
    }

    fn explicit_sources(&mut self, v: Value) -> Option<Vec<SourcePoint>> {
        let items = self.array(v, "scene.sources")?;
        if items.is_empty() {
            self.err("scene.sources", "must list at least one source");
        }
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.into_iter().enumerate() {
            let path = format!("scene.sources[{i}]");
            let Value::Table(mut tbl) = item else {
                self.err(path, "expected a table { u = .., v = .. }");
                ok = false;
                continue;
            };
            let u = self.req_float(&mut tbl, &path, "u");
            let v = self.req_float(&mut tbl, &path, "v");
            self.no_extra(tbl, &path);
            match (u, v) {
                (Some(u), Some(v)) => {
                    self.check_point(&path, u, v);
                    out.push(SourcePoint { u, v });
                }
                _ => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn product_spec(&mut self, mut t: Table) -> Option<ProductSpec> {
        let u = self
            .required(&mut t, "scene.product", "u")
            .and_then(|v| self.float_list(v, "scene.product.u"));
        let v = self
            .required(&mut t, "scene.product", "v")
            .and_then(|v| self.float_list(v, "scene.product.v"));
        self.no_extra(t, "scene.product");
        let (u, v) = (u?, v?);
        if u.is_empty() || v.is_empty() {
            self.err("scene.product", "u and v lists must be non-empty");
        }
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                self.check_point(&format!("scene.product(u[{i}], v[{j}])"), a, b);
            }
        }
        Some(ProductSpec { u, v })
    }

    fn random_spec(&mut self, mut t: Table) -> Option<RandomSpec> {
        let k = self.req_uint(&mut t, "scene.random", "k");
        let sep = self.opt_float(&mut t, "scene.random", "min_u_separation", 0.0);
        let radius = self.opt_float(&mut t, "scene.random", "max_radius", 1.0);
        self.no_extra(t, "scene.random");
        if k == Some(0) {
            self.err("scene.random.k", "must be at least 1");
        }
        if matches!(sep, Some(s) if s < 0.0) {
            self.err("scene.random.min_u_separation", "must be non-negative");
        }
        if matches!(radius, Some(r) if !(r > 0.0 && r <= 1.0)) {
            self.err("scene.random.max_radius", "must lie in (0, 1]");
        }
        if let (Some(k), Some(s), Some(r)) = (k, sep, radius) {
            if k > 1 && (k - 1) as f64 * s > 2.0 * r {
                self.err(
                    "scene.random",
                    format!("{k} sources cannot be separated by {s} in u within radius {r}"),
                );
            }
        }
        Some(RandomSpec {
            k: k?,
            min_u_separation: sep?,
            max_radius: radius?,
        })
    }

    fn timing_config(&mut self, mut t: Table) -> Option<TimingConfig> {
        let repetitions = self.opt_uint(&mut t, "timing", "repetitions", 5);
        let iterations = self.opt_uint(&mut t, "timing", "iterations", 20);
        self.no_extra(t, "timing");
        if repetitions == Some(0) {
            self.err("timing.repetitions", "must be at least 1");
        }
        if iterations == Some(0) {
            self.err("timing.iterations", "must be at least 1");
        }
        Some(TimingConfig {
            repetitions: repetitions?,
            iterations: iterations?,
        })
    }

    fn solver_config(&mut self, mut t: Table, path: &str) -> Option<SolverConfig> {
        let iterations = self.opt_uint(&mut t, path, "iterations", 500);
        let prune = self.opt_bool(&mut t, path, "prune", true);
        let prune_tol = self.opt_float(&mut t, path, "prune_tol", 1e-3);
        let prune_mode = match t.remove("prune_mode") {
            None => Some(PruneMode::Relative),
            Some(Value::String(s)) if s == "relative" => Some(PruneMode::Relative),
            Some(Value::String(s)) if s == "absolute" => Some(PruneMode::Absolute),
            Some(other) => {
                self.err(join(path, "prune_mode"), format!("expected \"relative\" or \"absolute\", got {other}"));
                None
            }
        };
        let lambda = match t.remove("lambda") {
            None => Some(LambdaSpec::Named(LambdaName::Oracle)),
            Some(Value::String(s)) if s == "oracle" => Some(LambdaSpec::Named(LambdaName::Oracle)),
            Some(Value::String(s)) if s == "adaptive" => Some(LambdaSpec::Named(LambdaName::Adaptive)),
            Some(v @ (Value::Float(_) | Value::Integer(_))) => {
                let x = self.float_value(v, &join(path, "lambda"));
                if matches!(x, Some(x) if x <= 0.0) {
                    self.err(join(path, "lambda"), "must be positive");
                }
                x.map(LambdaSpec::Value)
            }
            Some(other) => {
                self.err(
                    join(path, "lambda"),
                    format!("expected \"oracle\", \"adaptive\" or a positive number, got {other}"),
                );
                None
            }
        };
        let gamma_rule = match t.remove("gamma_rule") {
            None => Some(GammaRule::Joint),
            Some(Value::String(s)) if s == "joint" => Some(GammaRule::Joint),
            Some(Value::String(s)) if s == "trace" => Some(GammaRule::Trace),
            Some(other) => {
                self.err(join(path, "gamma_rule"), format!("expected \"joint\" or \"trace\", got {other}"));
                None
            }
        };
        let cost_tol = self.opt_float(&mut t, path, "cost_tol", 1e-8);
        let compress = self.opt_bool(&mut t, path, "compress", true);
        let b_loading = self.opt_float(&mut t, path, "b_loading", 1e-10);
        let peak_counts = match t.remove("peak_counts") {
            None => Some(None),
            Some(v) => self.uint_list(v, &join(path, "peak_counts")).map(Some),
        };
        self.no_extra(t, path);

        if iterations == Some(0) {
            self.err(join(path, "iterations"), "must be at least 1");
        }
        if matches!(prune_tol, Some(x) if x <= 0.0) {
            self.err(join(path, "prune_tol"), "must be positive");
        }
        if matches!(b_loading, Some(x) if x < 0.0) {
            self.err(join(path, "b_loading"), "must be non-negative");
        }
        Some(SolverConfig {
            iterations: iterations?,
            prune: prune?,
            prune_tol: prune_tol?,
            prune_mode: prune_mode?,
            lambda: lambda?,
            gamma_rule: gamma_rule?,
            cost_tol: cost_tol?,
            compress: compress?,
            b_loading: b_loading?,
            peak_counts: peak_counts?,
        })
    }

    /// Constraints spanning several sections, checked on whatever parsed.
    fn cross_checks(&mut self, p: Partial<'_>) {
        if let (Some(Some(h)), Some(scene), Some(array)) = (p.hmsbl, p.scene, p.array) {
            let (k, ny) = (scene.num_sources(), array.ny);
            match &h.peak_counts {
                None => self.err("hmsbl.peak_counts", "missing required field"),
                Some(counts) => {
                    if counts.is_empty() {
                        self.err("hmsbl.peak_counts", "must not be empty");
                    }
                    for (i, &c) in counts.iter().enumerate() {
                        if c == 0 || c >= ny {
                            self.err(
                                format!("hmsbl.peak_counts[{i}]"),
                                format!("{c} violates 1 <= count <= ny - 1 = {}", ny.saturating_sub(1)),
                            );
                        }
                    }
                    let total: usize = counts.iter().sum();
                    if total != k {
                        self.err("hmsbl.peak_counts", format!("counts sum to {total} but the scene has {k} sources"));
                    }
                    if p.grids.is_some_and(|g| counts.len() > g.mu) {
                        self.err("hmsbl.peak_counts", "more peaks than u-grid points");
                    }
                }
            }
        }
        if let Some(Some(m)) = p.msbl {
            if m.peak_counts.is_some() {
                self.err("msbl.peak_counts", "only applies to hmsbl");
            }
        }
        let Some(kind) = p.experiment else { return };
        let need_both = matches!(kind, ExperimentKind::Exp1 | ExperimentKind::Exp3);
        let has = |s: Option<&Option<SolverConfig>>| !matches!(s, Some(None));
        if !has(p.hmsbl) && (need_both || !has(p.msbl)) {
            self.err("hmsbl", "missing required table");
        }
        if !has(p.msbl) && need_both {
            self.err("msbl", "missing required table");
        }
        match kind {
            ExperimentKind::Exp1 => {
                if matches!(p.grids, Some(g) if g.mv_sweep.is_none()) {
                    self.err("grids.mv_sweep", "required for exp1");
                }
                if matches!(p.timing, Some(None)) {
                    self.err("timing", "required for exp1");
                }
            }
            ExperimentKind::Exp3 => {
                if matches!(p.budgets, Some(None)) {
                    self.err("budgets", "required for exp3");
                }
            }
            _ => {}
        }
    }
}

/// Sections that parsed; `None` where parsing already reported an error.
struct Partial<'a> {
    experiment: Option<ExperimentKind>,
    array: Option<&'a ArrayConfig>,
    scene: Option<&'a SceneConfig>,
    grids: Option<&'a GridConfig>,
    timing: Option<&'a Option<TimingConfig>>,
    budgets: Option<&'a Option<Vec<usize>>>,
    hmsbl: Option<&'a Option<SolverConfig>>,
    msbl: Option<&'a Option<SolverConfig>>,
}
