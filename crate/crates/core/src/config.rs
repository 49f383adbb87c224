//! Run configuration: layered JSON (scenario defaults, files, flags,
//! `--set` overrides), scenario assembly, single runs and parameter sweeps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::control::{default_hurwitz_gains, default_observer_gains, GainSet, ObserverSet};
use crate::error::{Error, Result};
use crate::game::{nash_solve, Game, QuadraticGame};
use crate::graph::{Digraph, GraphSpec};
use crate::linalg::inf_norm;
use crate::report::RunSummary;
use crate::scenarios::{
    build_turbine_market_with, build_vehicle_formation_with, default_cycle_graph, turbine_nash_oracle,
    vehicle_nash_oracle, FormationSpec, GeneratorParams, VehicleParams, AIR_DENSITY, GENERATOR_TABLE, VEHICLE_TABLE,
};
use crate::sim::{
    fit_exponential_rate, mid_decay_window, settle_time, ClosedLoop, InitialConditions, Mode, Plant, SimConfig,
    Trajectory,
};

/// Caps sweep parallelism when set to a positive integer.
pub const THREADS_ENV: &str = "NASHSEEK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[serde(alias = "vehicles")]
    VehicleFormation,
    #[serde(alias = "turbines")]
    TurbineMarket,
    /// `F(x) = x` on integrator plants; Nash profile at the origin.
    Quadratic,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "vehicle_formation" | "vehicles" => Some(Self::VehicleFormation),
            "turbine_market" | "turbines" => Some(Self::TurbineMarket),
            "quadratic" => Some(Self::Quadratic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::VehicleFormation => "vehicle_formation",
            Self::TurbineMarket => "turbine_market",
            Self::Quadratic => "quadratic",
        }
    }
}

/// Either `"auto"` (binomial defaults) or explicit coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Auto(String),
    Values(Vec<f64>),
}

impl Coefficients {
    fn resolve(&self, what: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self {
            Self::Values(v) => Ok(v.clone()),
            Self::Auto(s) if s == "auto" => Ok(default),
            Self::Auto(s) => Err(Error::ConfigInvalid(format!("{what} must be \"auto\" or a list, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub epsilon: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub k: Coefficients,
    pub beta: Coefficients,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    /// `null` picks `min(1e-3, μ/10 in output mode, state-mode guidance)`.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
    pub record_stride: usize,
    /// Settling band, relative to `max(1, ‖x*‖_∞)`.
    pub settle_tol: f64,
    /// Observer error is reported from this time on.
    pub transient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    /// Decisions drawn uniformly from `[lo, hi]` with the run seed.
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
    /// Explicit `N·m` decisions; overrides the box.
    #[serde(default)]
    pub decisions: Option<Vec<f64>>,
}

/// Scenario parameters; unset fields keep the built-in tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<Vec<VehicleParams>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub star_outer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub star_inner: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<GeneratorParams>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_intercept: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub players: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    pub algo: Mode,
    pub gains: GainsConfig,
    pub sim: SimBlock,
    pub init: InitBlock,
    #[serde(default)]
    pub params: ScenarioParams,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Full default configuration for a scenario.
pub fn default_config(kind: ScenarioKind) -> RunConfig {
    let auto = || Coefficients::Auto("auto".into());
    let (epsilon, alpha1, alpha2, alpha3, mu) = match kind {
        ScenarioKind::VehicleFormation => (2.0, 3.0, 2.2, 18.0, 0.02),
        ScenarioKind::TurbineMarket => (2.0, 14.0, 10.0, 40.0, 0.01),
        ScenarioKind::Quadratic => (2.0, 1.5, 1.2, 5.0, 0.02),
    };
    let (horizon, settle_tol, bounds) = match kind {
        ScenarioKind::VehicleFormation => (60.0, 1e-3, [-20.0, 20.0]),
        ScenarioKind::TurbineMarket => (400.0, 1e-2, [0.0, 50.0]),
        ScenarioKind::Quadratic => (30.0, 1e-3, [-5.0, 5.0]),
    };
    RunConfig {
        scenario: kind,
        algo: Mode::StateBased,
        gains: GainsConfig { epsilon, alpha1, alpha2, alpha3, k: auto(), beta: auto(), mu },
        sim: SimBlock { dt: None, horizon, seed: 1, record_stride: 10, settle_tol, transient: 1.0 },
        init: InitBlock { bounds, decisions: None },
        params: ScenarioParams::default(),
        graph: None,
        output_dir: None,
    }
}

/// Inputs to [`resolve`], in increasing precedence: scenario defaults,
/// scenario file, `--config` file, flags, then `--set` overrides.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    /// Scenario name or path to a JSON config.
    pub scenario: Option<String>,
    pub config_file: Option<PathBuf>,
    pub algo: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// Raw `key=value` overrides.
    pub sets: Vec<String>,
}

pub fn read_json_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))
}

pub fn resolve(sources: &ConfigSources) -> Result<RunConfig> {
    let mut layers: Vec<Value> = Vec::new();
    let mut scenario_name = None;
    if let Some(s) = &sources.scenario {
        if ScenarioKind::parse(s).is_some() {
            scenario_name = Some(s.clone());
        } else if Path::new(s).is_file() {
            layers.push(read_json_file(Path::new(s))?);
        } else {
            return Err(Error::ConfigInvalid(format!("unknown scenario {s:?}")));
        }
    }
    if let Some(path) = &sources.config_file {
        layers.push(read_json_file(path)?);
    }
    let mut top = Value::Object(Map::new());
    for layer in &layers {
        if !layer.is_object() {
            return Err(Error::ConfigInvalid("config file must hold a JSON object".into()));
        }
        merge(&mut top, layer);
    }
    if let Some(name) = scenario_name {
        top["scenario"] = Value::String(name);
    }
    if let Some(algo) = &sources.algo {
        top["algo"] = Value::String(algo.clone());
    }
    if let Some(seed) = sources.seed {
        set_path(&mut top, "sim.seed", Value::from(seed))?;
    }
    if let Some(dir) = &sources.output_dir {
        top["output_dir"] = Value::String(dir.display().to_string());
    }
    for raw in &sources.sets {
        apply_set(&mut top, raw)?;
    }

    let kind = match top.get("scenario") {
        Some(Value::String(s)) => {
            ScenarioKind::parse(s).ok_or_else(|| Error::ConfigInvalid(format!("unknown scenario {s:?}")))?
        }
        Some(other) => return Err(Error::ConfigInvalid(format!("scenario must be a string, got {other}"))),
        None => return Err(Error::ConfigInvalid("no scenario given".into())),
    };
    let mut full = serde_json::to_value(default_config(kind)).expect("defaults serialize");
    merge(&mut full, &top);
    let cfg: RunConfig = serde_json::from_value(full).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive object merge; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// Dotted path for a shorthand key, or the key itself.
pub fn expand_key(key: &str) -> String {
    let block = match key {
        "epsilon" | "alpha1" | "alpha2" | "alpha3" | "k" | "beta" | "mu" => "gains",
        "dt" | "horizon" | "seed" | "record_stride" | "settle_tol" | "transient" => "sim",
        "rho" | "star_outer" | "star_inner" | "price_intercept" | "price_slope" | "players" | "dim" | "order" => {
            "params"
        }
        _ => return key.to_string(),
    };
    format!("{block}.{key}")
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
pub fn parse_set(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::ConfigInvalid(format!("override {raw:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::ConfigInvalid(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((expand_key(key), parsed))
}

pub fn apply_set(top: &mut Value, raw: &str) -> Result<()> {
    let (path, value) = parse_set(raw)?;
    set_path(top, &path, value)
}

fn set_path(top: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = top;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if part.is_empty() {
            return Err(Error::ConfigInvalid(format!("bad key path {path:?}")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::ConfigInvalid(format!("{path:?} descends into a non-object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::ConfigInvalid(format!("{path:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let misplaced = match self.scenario {
            ScenarioKind::VehicleFormation => {
                p.generators.is_some() || p.price_intercept.is_some() || p.price_slope.is_some() || p.players.is_some()
            }
            ScenarioKind::TurbineMarket => {
                p.rho.is_some() || p.vehicles.is_some() || p.star_outer.is_some() || p.offsets.is_some()
            }
            ScenarioKind::Quadratic => p.rho.is_some() || p.vehicles.is_some() || p.generators.is_some(),
        };
        if misplaced {
            return Err(Error::ConfigInvalid(format!(
                "params contain keys that do not apply to scenario {}",
                self.scenario.name()
            )));
        }
        if !(self.sim.settle_tol.is_finite() && self.sim.settle_tol > 0.0) {
            return Err(Error::ConfigInvalid("settle_tol must be positive".into()));
        }
        let [lo, hi] = self.init.bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::ConfigInvalid(format!("init box [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// A scenario's game, plants and graph.
pub struct ScenarioModel {
    pub game: Box<dyn Game>,
    pub plants: Vec<Plant>,
    pub graph: Digraph,
    /// Nash profile from the scenario's own oracle.
    pub x_star: Vec<f64>,
    /// Formation anchors, vehicle scenario only.
    pub formation: Option<FormationSpec>,
}

pub fn build_scenario(cfg: &RunConfig) -> Result<ScenarioModel> {
    let p = &cfg.params;
    let graph = cfg.graph.as_ref().map(Digraph::from_spec).transpose()?;
    match cfg.scenario {
        ScenarioKind::VehicleFormation => {
            let formation = match (&p.offsets, p.star_outer) {
                (Some(offsets), _) => FormationSpec { offsets: offsets.clone() },
                (None, Some(outer)) => {
                    FormationSpec::star(outer, p.star_inner.unwrap_or(FormationSpec::regular_inner_radius(outer)))
                }
                (None, None) => match p.star_inner {
                    Some(inner) => FormationSpec::star(10.0, inner),
                    None => FormationSpec::default(),
                },
            };
            let params = p.vehicles.clone().unwrap_or_else(|| VEHICLE_TABLE.to_vec());
            let v = build_vehicle_formation_with(&params, p.rho.unwrap_or(AIR_DENSITY), formation, graph)?;
            let x_star = vehicle_nash_oracle(&v.formation);
            Ok(ScenarioModel {
                game: Box::new(v.game),
                plants: v.plants,
                graph: v.graph,
                x_star,
                formation: Some(v.formation),
            })
        }
        ScenarioKind::TurbineMarket => {
            let gens = p.generators.clone().unwrap_or_else(|| GENERATOR_TABLE.to_vec());
            let t = build_turbine_market_with(
                &gens,
                p.price_intercept.unwrap_or(200.0),
                p.price_slope.unwrap_or(0.1),
                graph,
            )?;
            let x_star = turbine_nash_oracle(&t.game)?;
            Ok(ScenarioModel { game: Box::new(t.game), plants: t.plants, graph: t.graph, x_star, formation: None })
        }
        ScenarioKind::Quadratic => {
            let n = p.players.unwrap_or(3);
            let dim = p.dim.unwrap_or(2);
            let order = p.order.unwrap_or(1);
            if n < 2 || dim == 0 || order == 0 {
                return Err(Error::ConfigInvalid("quadratic scenario needs players >= 2, dim >= 1, order >= 1".into()));
            }
            let graph = match graph {
                Some(g) => g,
                None => default_cycle_graph(n)?,
            };
            let game = QuadraticGame { n_players: n, dim };
            let x_star = nash_solve(&game, &vec![1.0; n * dim], 1e-12)?;
            Ok(ScenarioModel {
                game: Box::new(game),
                plants: vec![Plant::integrator_chain(order, dim); n],
                graph,
                x_star,
                formation: None,
            })
        }
    }
}

/// Everything needed to integrate one configuration.
pub struct PreparedRun {
    pub config: RunConfig,
    pub model: ScenarioModel,
    pub gains: GainSet,
    pub observer: Option<ObserverSet>,
    pub sim: SimConfig,
    pub init: InitialConditions,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let model = build_scenario(cfg)?;
    let n = model.plants[0].order();
    let g = &cfg.gains;
    let k = g.k.resolve("k", default_hurwitz_gains(n))?;
    if k.len() + 1 != n {
        return Err(Error::ConfigInvalid(format!("k needs {} entries for order {n}, got {}", n - 1, k.len())));
    }
    let gains = GainSet::new(k, g.epsilon, g.alpha1, g.alpha2, g.alpha3)?;
    let observer = match cfg.algo {
        Mode::StateBased => None,
        Mode::OutputBased => {
            let beta = g.beta.resolve("beta", default_observer_gains(n))?;
            if beta.len() != n {
                return Err(Error::ConfigInvalid(format!("beta needs {n} entries, got {}", beta.len())));
            }
            Some(ObserverSet::new(beta, g.mu)?)
        }
    };
    let dt = match cfg.sim.dt {
        Some(dt) => dt,
        None => {
            let mut dt = 1e-3f64.min(SimConfig::state_mode_dt_guidance(&gains));
            if let Some(obs) = &observer {
                dt = dt.min(obs.mu / 10.0);
            }
            dt
        }
    };
    let sim = SimConfig {
        dt,
        horizon: cfg.sim.horizon,
        mode: cfg.algo,
        record_stride: cfg.sim.record_stride,
        snapshot_stride: None,
    };
    sim.validate(observer.as_ref())?;
    let len = model.game.profile_len();
    let init = match &cfg.init.decisions {
        Some(d) if d.len() == len => InitialConditions::from_decisions(d.clone()),
        Some(d) => {
            return Err(Error::ConfigInvalid(format!("init.decisions needs {len} values, got {}", d.len())));
        }
        None => InitialConditions::uniform_box(len, cfg.init.bounds[0], cfg.init.bounds[1], cfg.sim.seed),
    };
    Ok(PreparedRun { config: cfg.clone(), model, gains, observer, sim, init })
}

/// Result of [`PreparedRun::execute`]. `trajectory` is `None` after divergence.
pub struct RunOutcome {
    pub trajectory: Option<Trajectory>,
    pub summary: RunSummary,
    /// Largest observer error after the configured transient (output mode).
    pub observer_error: Option<f64>,
}

impl RunOutcome {
    pub fn settled(&self) -> bool {
        !self.summary.diverged && self.summary.settle_time.is_some()
    }
}

impl PreparedRun {
    pub fn closed_loop(&self) -> Result<ClosedLoop<'_>> {
        ClosedLoop::new(
            self.model.game.as_ref(),
            &self.model.plants,
            &self.model.graph,
            &self.gains,
            self.observer.as_ref(),
            self.sim.mode,
        )
    }

    pub fn execute(&self) -> Result<RunOutcome> {
        let cl = self.closed_loop()?;
        let x_star = &self.model.x_star;
        let warnings: Vec<String> = self.gains.check_ordering().warning.into_iter().collect();
        let mut summary = RunSummary {
            settle_time: None,
            lambda_hat: None,
            r_squared: None,
            final_residual: None,
            diverged: false,
            config_echo: self.config.to_json(),
            gain_ordering_warnings: warnings,
        };
        let traj = match cl.run(&self.sim, &self.init, Some(x_star)) {
            Ok(traj) => traj,
            Err(Error::Diverged { .. }) => {
                summary.diverged = true;
                return Ok(RunOutcome { trajectory: None, summary, observer_error: None });
            }
            Err(e) => return Err(e),
        };
        summary.settle_time = settle_time(&traj, x_star, self.config.sim.settle_tol);
        if let Some(window) = mid_decay_window(&traj, 0.1, 0.9) {
            if let Ok(fit) = fit_exponential_rate(&traj, window) {
                summary.lambda_hat = Some(fit.lambda_hat);
                summary.r_squared = Some(fit.r_squared);
            }
        }
        let gap: Vec<f64> = traj.final_decisions().iter().zip(x_star).map(|(a, b)| a - b).collect();
        summary.final_residual = Some(inf_norm(&gap));
        let observer_error = traj.observer_error_after(self.config.sim.transient);
        Ok(RunOutcome { trajectory: Some(traj), summary, observer_error })
    }
}

pub fn run_config(cfg: &RunConfig) -> Result<RunOutcome> {
    prepare(cfg)?.execute()
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub value: String,
    pub settle_time: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub observer_error: Option<f64>,
    pub final_residual: Option<f64>,
    /// `settled`, `not_settled`, `diverged`, or `error: …`.
    pub status: String,
}

/// Thread cap from [`THREADS_ENV`]; `None` when unset or not a positive integer.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n: &usize| *n > 0)
}

/// Runs `base` once per value of `key`, in parallel. Failed cells are
/// recorded and the sweep continues. Output order follows `values`.
pub fn sweep(base: &RunConfig, key: &str, values: &[String], threads: Option<usize>) -> Result<Vec<SweepCell>> {
    let path = expand_key(key);
    let base_json = base.to_json();
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut doc = base_json.clone();
        apply_set(&mut doc, &format!("{path}={v}"))?;
        let cfg: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::ConfigInvalid(format!("{key}={v}: {e}")))?;
        cfg.validate()?;
        configs.push(cfg);
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .map(|(cfg, v)| sweep_cell(cfg, v))
            .collect()
    });
    Ok(cells)
}

fn sweep_cell(cfg: &RunConfig, value: &str) -> SweepCell {
    let mut cell = SweepCell {
        value: value.to_string(),
        settle_time: None,
        lambda_hat: None,
        observer_error: None,
        final_residual: None,
        status: String::new(),
    };
    match run_config(cfg) {
        Ok(out) => {
            cell.settle_time = out.summary.settle_time;
            cell.lambda_hat = out.summary.lambda_hat;
            cell.final_residual = out.summary.final_residual;
            cell.observer_error = out.observer_error;
            cell.status = if out.summary.diverged {
                "diverged".into()
            } else if out.settled() {
                "settled".into()
            } else {
                "not_settled".into()
            };
        }
        Err(e) => cell.status = format!("error: {e}"),
    }
    cell
}
