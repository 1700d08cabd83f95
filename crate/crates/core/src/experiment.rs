//! Experiment configuration and the train / predict / measure pipeline.
//!
//! A config is a TOML file with `system`, `reservoir`, `training`, `evaluation` and
//! `seeds` tables plus optional `schedule`, `sweep` and `stability` tables. Unknown keys
//! are rejected. The SHA-256 of the config's canonical JSON form identifies a run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynsys::{DynSystem, OdeKind, OdeSystem, PdeKind, PdeSystem, TrajectoryBuffer};
use crate::error::{Error, Result};
use crate::metrics::{error_series, ErrorSeries};
use crate::reservoir::{
    build, predict_closed_loop, Connectivity, InputLayout, ReservoirModel, ReservoirParams, TrainReport,
};
use crate::updating::{UpdatePlan, UpdateSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemConfig,
    pub reservoir: ReservoirConfig,
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub seeds: SeedsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Kse,
    Cgle,
    Rossler,
    Lorenz,
    HindmarshRose,
    FoodWeb,
}

/// Target system. Omitted fields take the documented defaults for the named system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: SystemName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// RK4 substeps per output step (flows only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    /// Transient steps discarded before recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<usize>,
}

impl SystemConfig {
    pub fn named(name: SystemName) -> Self {
        Self { name, dt: None, length: None, grid: None, alpha: None, beta: None, substeps: None, transient: None }
    }

    pub fn build(&self) -> Result<DynSystem> {
        let ode = |kind: OdeKind| -> Result<DynSystem> {
            if self.length.is_some() || self.grid.is_some() || self.alpha.is_some() || self.beta.is_some() {
                return Err(Error::Config(format!("{:?} takes no length, grid, alpha or beta", self.name)));
            }
            let mut s = OdeSystem::new(kind);
            if let Some(dt) = self.dt {
                s.dt = dt;
            }
            if let Some(n) = self.substeps {
                s.substeps = n;
            }
            if !(s.dt > 0.0) || s.substeps == 0 {
                return Err(Error::Config("dt and substeps must be positive".into()));
            }
            Ok(DynSystem::Ode(s))
        };
        let pde = |mut s: PdeSystem| -> Result<DynSystem> {
            if self.substeps.is_some() {
                return Err(Error::Config("substeps applies to flows only".into()));
            }
            s.dt = self.dt.unwrap_or(s.dt);
            s.length = self.length.unwrap_or(s.length);
            s.grid = self.grid.unwrap_or(s.grid);
            match (&mut s.kind, self.alpha, self.beta) {
                (PdeKind::Kse, None, None) => {}
                (PdeKind::Kse, _, _) => return Err(Error::Config("kse takes no alpha or beta".into())),
                (PdeKind::Cgle { alpha, beta }, a, b) => {
                    *alpha = a.unwrap_or(*alpha);
                    *beta = b.unwrap_or(*beta);
                }
            }
            s.validate()?;
            Ok(DynSystem::Pde(s))
        };
        match self.name {
            SystemName::Kse => pde(PdeSystem::kse_default()),
            SystemName::Cgle => pde(PdeSystem::cgle_default()),
            SystemName::Rossler => ode(OdeKind::Rossler),
            SystemName::Lorenz => ode(OdeKind::Lorenz),
            SystemName::HindmarshRose => ode(OdeKind::HindmarshRose),
            SystemName::FoodWeb => ode(OdeKind::FoodWeb),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub size: usize,
    pub sigma: f64,
    /// Average degree; exclusive with `density`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<f64>,
    /// Link probability; exclusive with `degree`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    pub rho: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "is_dense")]
    pub input_layout: InputLayout,
}

fn is_dense(layout: &InputLayout) -> bool {
    *layout == InputLayout::Dense
}

impl ReservoirConfig {
    pub fn params(&self, channels: usize, seed: u64) -> Result<ReservoirParams> {
        let connectivity = match (self.degree, self.density) {
            (Some(d), None) => Connectivity::Degree(d),
            (None, Some(p)) => Connectivity::Density(p),
            _ => return Err(Error::Config("reservoir needs exactly one of degree or density".into())),
        };
        let p = ReservoirParams {
            size: self.size,
            inputs: channels,
            outputs: channels,
            sigma: self.sigma,
            input_layout: self.input_layout,
            connectivity,
            rho: self.rho,
            eta: self.eta,
            seed,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Rows of training data.
    pub steps: usize,
    #[serde(default = "default_washout")]
    pub washout: usize,
}

fn default_washout() -> usize {
    1000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Regular,
    Random,
}

/// Flat form of an [`UpdateSchedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub mode: ScheduleKind,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<usize>,
    /// Number of equally spaced coupled sites; exclusive with `sites`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_sites: Option<usize>,
    /// Explicit coupled site indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_s: Option<f64>,
}

impl ScheduleConfig {
    pub fn to_schedule(&self, total_sites: usize, seed: u64) -> Result<UpdateSchedule> {
        let s = match self.mode {
            ScheduleKind::Regular => {
                let (Some(period), Some(active)) = (self.period, self.active) else {
                    return Err(Error::Config("regular schedule needs period and active".into()));
                };
                if self.p_t.is_some() || self.p_s.is_some() {
                    return Err(Error::Config("p_t/p_s belong to random schedules".into()));
                }
                match (self.coupled_sites, &self.sites) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Config("give coupled_sites or sites, not both".into()))
                    }
                    (_, Some(idx)) => UpdateSchedule::regular_on(period, active, idx.clone(), self.c),
                    (mc, None) => UpdateSchedule::regular(period, active, mc.unwrap_or(total_sites), self.c),
                }
            }
            ScheduleKind::Random => {
                let (Some(p_t), Some(p_s)) = (self.p_t, self.p_s) else {
                    return Err(Error::Config("random schedule needs p_t and p_s".into()));
                };
                if self.period.is_some() || self.active.is_some() || self.sites.is_some() || self.coupled_sites.is_some() {
                    return Err(Error::Config("random schedules take only c, p_t and p_s".into()));
                }
                UpdateSchedule::random(p_t, p_s, seed, self.c)
            }
        };
        s.validate(total_sites).map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Reference maximum Lyapunov exponent used to express times in Lyapunov units.
    pub lambda_max: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_confirm")]
    pub confirm: usize,
    /// Prediction window in Lyapunov times.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Explicit prediction length in steps; overrides `window`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

fn default_tolerance() -> f64 {
    crate::metrics::DEFAULT_TOLERANCE
}
fn default_confirm() -> usize {
    crate::metrics::DEFAULT_CONFIRM
}
fn default_window() -> f64 {
    100.0
}
fn default_warmup() -> usize {
    100
}

impl EvaluationConfig {
    pub fn prediction_steps(&self, dt: f64) -> usize {
        self.steps.unwrap_or_else(|| (self.window / (self.lambda_max * dt)).ceil() as usize)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    #[serde(default)]
    pub data: u64,
    #[serde(default)]
    pub reservoir: u64,
    #[serde(default)]
    pub schedule: u64,
}

impl SeedsConfig {
    /// Replaces every seed by one derived from `seed`.
    pub fn override_with(&mut self, seed: u64) {
        self.data = seed;
        self.reservoir = seed.wrapping_add(1);
        self.schedule = seed.wrapping_add(2);
    }
}

/// Grid of update schedules evaluated by [`crate::sweep::run_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: ScheduleKind,
    pub c: f64,
    /// Regular mode: update steps per window.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub active: Vec<usize>,
    /// Regular mode: window lengths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub period: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
    /// Random mode axes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_s: Vec<f64>,
    /// Schedule seeds averaged per random cell.
    #[serde(default = "default_random_seeds")]
    pub random_seeds: usize,
    #[serde(default = "default_true")]
    pub reuse_model: bool,
}

fn default_random_seeds() -> usize {
    4
}
fn default_true() -> bool {
    true
}

/// Transverse-exponent map of the on-off coupled flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub c: f64,
    pub active: Vec<usize>,
    pub period: Vec<usize>,
    /// Coupled variable indices (e.g. `[1]` for y only).
    pub channels: Vec<usize>,
    /// Integration length in time units.
    #[serde(default = "default_stability_time")]
    pub time: f64,
}

fn default_stability_time() -> f64 {
    20_000.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let sys = self.system.build()?;
        self.reservoir.params(sys.channels(), self.seeds.reservoir)?;
        if self.training.steps <= self.training.washout + 1 {
            return Err(Error::Config("training.steps must exceed washout + 1".into()));
        }
        let ev = &self.evaluation;
        if !(ev.lambda_max > 0.0) || !(ev.tolerance > 0.0) || ev.warmup == 0 || ev.warmup > self.training.steps {
            return Err(Error::Config(
                "evaluation needs lambda_max > 0, tolerance > 0 and 0 < warmup <= training.steps".into(),
            ));
        }
        if ev.prediction_steps(sys.dt()) == 0 {
            return Err(Error::Config("prediction window is empty".into()));
        }
        if let Some(s) = &self.schedule {
            s.to_schedule(sys.sites(), self.seeds.schedule)?;
        }
        if let Some(sw) = &self.sweep {
            let ok = match sw.mode {
                ScheduleKind::Regular => !sw.active.is_empty() && !sw.period.is_empty(),
                ScheduleKind::Random => !sw.p_t.is_empty() && !sw.p_s.is_empty() && sw.random_seeds > 0,
            };
            if !ok {
                return Err(Error::Config("sweep axes are empty".into()));
            }
        }
        if let Some(st) = &self.stability {
            if !matches!(sys, DynSystem::Ode(_)) {
                return Err(Error::Config("stability maps need a flow system".into()));
            }
            if st.active.is_empty() || st.period.is_empty() || st.channels.iter().any(|&c| c >= 3) {
                return Err(Error::Config("stability needs axes and channel indices below 3".into()));
            }
        }
        Ok(())
    }

    /// Canonical form: JSON with object keys sorted.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        serde_json::to_string(&value).expect("value serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// First 16 hex digits of the hash, used to name result directories.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

/// Data segments of one run: training rows, warmup (the last training rows) and the
/// truth that follows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub system: DynSystem,
    pub train: TrajectoryBuffer,
    pub warmup: TrajectoryBuffer,
    pub truth: TrajectoryBuffer,
}

impl Dataset {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let system = cfg.system.build()?;
        let n_train = cfg.training.steps;
        let n_pred = cfg.evaluation.prediction_steps(system.dt());
        let transient = cfg.system.transient.unwrap_or_else(|| system.default_transient());
        let all = system.generate(cfg.seeds.data, n_train + n_pred, transient)?;
        Ok(Self::split(system, &all, n_train, cfg.evaluation.warmup))
    }

    pub fn split(system: DynSystem, all: &TrajectoryBuffer, n_train: usize, warmup: usize) -> Self {
        Self {
            system,
            train: all.slice_rows(0, n_train),
            warmup: all.slice_rows(n_train - warmup, n_train),
            truth: all.slice_rows(n_train, all.len()),
        }
    }
}

/// Builds and trains the reservoir described by `cfg` on `data.train`.
pub fn train_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<(ReservoirModel, TrainReport)> {
    let params = cfg.reservoir.params(data.system.channels(), cfg.seeds.reservoir)?;
    let mut model = build(&params)?;
    let report = model.train(&data.train, cfg.training.washout)?;
    Ok((model, report))
}

/// Closed-loop prediction over the evaluation window and its error series.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &mut ReservoirModel,
    data: &Dataset,
    plan: Option<&UpdatePlan>,
) -> Result<(TrajectoryBuffer, ErrorSeries)> {
    let n = cfg.evaluation.prediction_steps(data.system.dt()).min(data.truth.len());
    let truth = data.truth.slice_rows(0, n);
    let pred = predict_closed_loop(model, &data.warmup, n, plan, Some(&truth))?;
    let series = error_series(&pred, &truth, cfg.evaluation.lambda_max)?;
    Ok((pred, series))
}

/// The update plan of `cfg.schedule`, if any.
pub fn plan_for(cfg: &ExperimentConfig, system: &DynSystem) -> Result<Option<UpdatePlan>> {
    cfg.schedule
        .as_ref()
        .map(|s| s.to_schedule(system.sites(), cfg.seeds.schedule)?.realize(system.sites()))
        .transpose()
}
