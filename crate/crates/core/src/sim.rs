//! Fixed-step integration of the closed loops, trajectory recording and
//! convergence metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::{self, GainSet, Neighbor, ObserverSet};
use crate::error::{check_len, Error, Result};
use crate::game::Game;
use crate::graph::Digraph;
use crate::linalg::{euclidean_norm, inf_norm};

/// Any state entry above this magnitude aborts a run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// The uncertain nonlinearity `f_i` of an integrator-chain plant. Any hidden
/// parameter `w_i` lives inside the implementor.
pub trait Drift: Send + Sync {
    /// `chain` is the `n×m` derivative chain; writes `f_i` (length `m`).
    fn eval(&self, chain: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDrift;

impl Drift for ZeroDrift {
    fn eval(&self, _chain: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `x⁽ⁿ⁾ = f(x, …, x⁽ⁿ⁻¹⁾, w) + u` with `x ∈ ℝᵐ`.
#[derive(Clone)]
pub struct Plant {
    order: usize,
    dim: usize,
    drift: Arc<dyn Drift>,
}

impl Plant {
    pub fn new(order: usize, dim: usize, drift: Arc<dyn Drift>) -> Self {
        assert!(order >= 1 && dim >= 1, "plant order and dimension must be positive");
        Self { order, dim, drift }
    }

    pub fn integrator_chain(order: usize, dim: usize) -> Self {
        Self::new(order, dim, Arc::new(ZeroDrift))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self, chain: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift.eval(chain, &mut out);
        out
    }
}

impl std::fmt::Debug for Plant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Plant").field("order", &self.order).field("dim", &self.dim).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[serde(alias = "state")]
    StateBased,
    #[serde(alias = "output")]
    OutputBased,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub mode: Mode,
    pub record_stride: usize,
    /// Full state dump every this many records, if set.
    pub snapshot_stride: Option<usize>,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, mode: Mode) -> Self {
        Self { dt, horizon, mode, record_stride: 1, snapshot_stride: None }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self, observer: Option<&ObserverSet>) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::ConfigInvalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::ConfigInvalid(format!(
                "horizon {} must be at least dt {}",
                self.horizon, self.dt
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::ConfigInvalid("record_stride must be at least 1".into()));
        }
        if self.mode == Mode::OutputBased {
            let obs = observer.ok_or_else(|| Error::ConfigInvalid("output-based mode needs an observer".into()))?;
            if self.dt > obs.mu / 10.0 * (1.0 + 1e-12) {
                return Err(Error::ConfigInvalid(format!(
                    "output-based mode needs dt <= mu/10 = {}, got {}",
                    obs.mu / 10.0,
                    self.dt
                )));
            }
        }
        Ok(())
    }

    /// Advisory step-size bound for the state-based loop,
    /// `1 / (10·εⁿ·max(k, 1))`.
    pub fn state_mode_dt_guidance(gains: &GainSet) -> f64 {
        let kmax = gains.k.iter().fold(1.0f64, |acc, v| acc.max(*v));
        1.0 / (10.0 * gains.epsilon.powi(gains.order() as i32) * kmax)
    }
}

/// Initial conditions. Unset pieces take the defaults: zero derivatives,
/// `y = 0`, `x̂ = 0`, and observer chains starting at `(x_i(0), 0, …, 0)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialConditions {
    /// `N·m` decisions.
    pub decisions: Vec<f64>,
    /// `N × (n−1) × m` derivatives `x⁽¹⁾ … x⁽ⁿ⁻¹⁾`.
    pub derivatives: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    /// `N × N × m`.
    pub x_hat: Option<Vec<f64>>,
    /// `N × n × m`.
    pub z: Option<Vec<f64>>,
}

impl InitialConditions {
    pub fn from_decisions(decisions: Vec<f64>) -> Self {
        Self { decisions, ..Default::default() }
    }

    /// Decisions drawn uniformly from `[lo, hi]` with a seeded generator.
    pub fn uniform_box(len: usize, lo: f64, hi: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::from_decisions((0..len).map(|_| rng.random_range(lo..=hi)).collect())
    }
}

/// Offsets of each block inside the flat closed-loop state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_players: usize,
    pub order: usize,
    pub dim: usize,
    pub observer: bool,
}

impl StateLayout {
    pub fn chain_len(&self) -> usize {
        self.order * self.dim
    }
    pub fn estimate_len(&self) -> usize {
        self.n_players * self.dim
    }
    pub fn plant_offset(&self, i: usize) -> usize {
        i * self.chain_len()
    }
    pub fn y_offset(&self, i: usize) -> usize {
        self.n_players * self.chain_len() + i * self.dim
    }
    pub fn x_hat_offset(&self, i: usize) -> usize {
        self.n_players * (self.chain_len() + self.dim) + i * self.estimate_len()
    }
    pub fn z_offset(&self, i: usize) -> usize {
        self.n_players * (self.chain_len() + self.dim + self.estimate_len()) + i * self.chain_len()
    }
    pub fn len(&self) -> usize {
        let per = self.chain_len() + self.dim + self.estimate_len();
        self.n_players * (per + if self.observer { self.chain_len() } else { 0 })
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn decision(&self, i: usize) -> std::ops::Range<usize> {
        let o = self.plant_offset(i);
        o..o + self.dim
    }
}

/// Closed-loop state at time `t`, stored flat according to a [`StateLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub t: f64,
    pub data: Vec<f64>,
}

/// Classical fourth-order Runge–Kutta step. Fails with `Diverged` if the
/// result is non-finite.
pub fn rk4_step<F>(mut rhs: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Vec<f64>,
{
    let n = state.len();
    let k1 = rhs(state, t);
    let mut tmp: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * k1[i]).collect();
    let k2 = rhs(&tmp, t + 0.5 * dt);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    let k3 = rhs(&tmp, t + 0.5 * dt);
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    let k4 = rhs(&tmp, t + dt);
    let next: Vec<f64> = (0..n)
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::Diverged { t: t + dt })
    }
}

/// The interconnection of game, plants, network and seeking law.
pub struct ClosedLoop<'a> {
    game: &'a dyn Game,
    plants: &'a [Plant],
    graph: &'a Digraph,
    gains: &'a GainSet,
    observer: Option<&'a ObserverSet>,
    layout: StateLayout,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl<'a> ClosedLoop<'a> {
    /// Checks dimensions and strong connectivity. The gains themselves are
    /// not re-validated, so deliberately degenerate gains can be simulated.
    pub fn new(
        game: &'a dyn Game,
        plants: &'a [Plant],
        graph: &'a Digraph,
        gains: &'a GainSet,
        observer: Option<&'a ObserverSet>,
        mode: Mode,
    ) -> Result<Self> {
        let n_players = game.n_players();
        let dim = game.decision_dim();
        check_len("plants", n_players, plants.len())?;
        check_len("graph nodes", n_players, graph.n_nodes())?;
        let order = gains.order();
        for p in plants {
            check_len("plant order", order, p.order())?;
            check_len("plant dimension", dim, p.dim())?;
        }
        if !graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        let observer = match mode {
            Mode::StateBased => None,
            Mode::OutputBased => {
                let obs = observer.ok_or_else(|| Error::ConfigInvalid("output-based mode needs an observer".into()))?;
                check_len("observer order", order, obs.order())?;
                Some(obs)
            }
        };
        let layout = StateLayout { n_players, order, dim, observer: observer.is_some() };
        let neighbors = (0..n_players).map(|i| graph.in_neighbors(i)).collect();
        Ok(Self { game, plants, graph, gains, observer, layout, neighbors })
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn graph(&self) -> &Digraph {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        if self.observer.is_some() {
            Mode::OutputBased
        } else {
            Mode::StateBased
        }
    }

    /// Packs initial conditions into a flat state vector.
    pub fn initial_state(&self, init: &InitialConditions) -> Result<Vec<f64>> {
        let l = self.layout;
        let (n, m, ord) = (l.n_players, l.dim, l.order);
        check_len("initial decisions", n * m, init.decisions.len())?;
        let mut s = vec![0.0; l.len()];
        for i in 0..n {
            let o = l.plant_offset(i);
            s[o..o + m].copy_from_slice(&init.decisions[i * m..(i + 1) * m]);
            if let Some(d) = &init.derivatives {
                check_len("initial derivatives", n * (ord - 1) * m, d.len())?;
                let w = (ord - 1) * m;
                s[o + m..o + ord * m].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
        }
        if let Some(y) = &init.y {
            check_len("initial y", n * m, y.len())?;
            let o = l.y_offset(0);
            s[o..o + n * m].copy_from_slice(y);
        }
        if let Some(xh) = &init.x_hat {
            check_len("initial estimates", n * n * m, xh.len())?;
            let o = l.x_hat_offset(0);
            s[o..o + n * n * m].copy_from_slice(xh);
        }
        if l.observer {
            match &init.z {
                Some(z) => {
                    check_len("initial observer", n * ord * m, z.len())?;
                    let o = l.z_offset(0);
                    s[o..o + n * ord * m].copy_from_slice(z);
                }
                None => {
                    for i in 0..n {
                        let o = l.z_offset(i);
                        s[o..o + m].copy_from_slice(&init.decisions[i * m..(i + 1) * m]);
                    }
                }
            }
        }
        Ok(s)
    }

    /// Closed-loop right-hand side evaluated on one synchronous snapshot.
    pub fn derivative(&self, state: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let (n, m, ord) = (l.n_players, l.dim, l.order);
        let cl = l.chain_len();
        let el = l.estimate_len();
        let mut out = vec![0.0; state.len()];
        let mut profile = vec![0.0; el];
        let mut grad = vec![0.0; m];
        let mut u = vec![0.0; m];
        let mut f = vec![0.0; m];
        let mut msgs: Vec<Neighbor> = Vec::new();

        for i in 0..n {
            let po = l.plant_offset(i);
            let chain = &state[po..po + cl];
            let own = &chain[..m];
            let yo = l.y_offset(i);
            let xo = l.x_hat_offset(i);
            let x_hat = &state[xo..xo + el];

            profile.copy_from_slice(x_hat);
            profile[i * m..(i + 1) * m].copy_from_slice(own);
            self.game.gradient(i, &profile, &mut grad);

            msgs.clear();
            msgs.extend(self.neighbors[i].iter().map(|&(j, w)| {
                let jx = l.x_hat_offset(j);
                let jp = l.plant_offset(j);
                Neighbor { index: j, weight: w, estimates: &state[jx..jx + el], decision: &state[jp..jp + m] }
            }));

            let (dy_slot, rest) = out[yo..].split_at_mut(m);
            match self.observer {
                None => {
                    control::seeking_law_into(chain, &state[yo..yo + m], &grad, self.gains, &mut u, dy_slot);
                }
                Some(obs) => {
                    let zo = l.z_offset(i);
                    let z = &state[zo..zo + cl];
                    control::seeking_law_into(z, &state[yo..yo + m], &grad, self.gains, &mut u, dy_slot);
                    let dz_start = zo - yo - m;
                    control::observer_rhs_into(own, z, self.gains, obs, &mut rest[dz_start..dz_start + cl]);
                }
            }
            control::estimate_rhs_into(x_hat, &msgs, self.gains.alpha3, m, &mut out[xo..xo + el]);

            self.plants[i].drift.eval(chain, &mut f);
            for r in 0..ord - 1 {
                out[po + r * m..po + (r + 1) * m].copy_from_slice(&chain[(r + 1) * m..(r + 2) * m]);
            }
            let top = po + (ord - 1) * m;
            for c in 0..m {
                out[top + c] = f[c] + u[c];
            }
        }
        out
    }

    /// Integrates from `init` over the configured horizon. Error norms are
    /// recorded against `x_star` when given.
    pub fn run(&self, cfg: &SimConfig, init: &InitialConditions, x_star: Option<&[f64]>) -> Result<Trajectory> {
        cfg.validate(self.observer)?;
        if cfg.mode != self.mode() {
            return Err(Error::ConfigInvalid("simulation mode does not match the closed loop".into()));
        }
        if let Some(xs) = x_star {
            check_len("x_star", self.layout.n_players * self.layout.dim, xs.len())?;
        }
        let mut state = self.initial_state(init)?;
        let mut traj = Trajectory::new(self.layout, x_star.map(<[f64]>::to_vec));
        let steps = cfg.steps();
        self.guard(&state, 0.0)?;
        traj.record(&self.layout, &state, 0.0, cfg.snapshot_stride);
        for k in 0..steps {
            let t = k as f64 * cfg.dt;
            state = rk4_step(|s, _| self.derivative(s), &state, t, cfg.dt)?;
            let t_next = (k + 1) as f64 * cfg.dt;
            self.guard(&state, t_next)?;
            if (k + 1) % cfg.record_stride == 0 || k + 1 == steps {
                traj.record(&self.layout, &state, t_next, cfg.snapshot_stride);
            }
        }
        traj.final_state = ClosedLoopState { t: steps as f64 * cfg.dt, data: state };
        Ok(traj)
    }

    fn guard(&self, state: &[f64], t: f64) -> Result<()> {
        if state.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) {
            Ok(())
        } else {
            Err(Error::Diverged { t })
        }
    }

    /// The equilibrium tuple built from a candidate Nash profile: zero
    /// derivatives, `x̂ = 1_N ⊗ x*`, `y = f*/α₂` and observers on the truth.
    pub fn equilibrium_state(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        let l = self.layout;
        let (n, m) = (l.n_players, l.dim);
        check_len("x_star", n * m, x_star.len())?;
        let mut y = vec![0.0; n * m];
        for i in 0..n {
            let mut chain = vec![0.0; l.chain_len()];
            chain[..m].copy_from_slice(&x_star[i * m..(i + 1) * m]);
            let f_star = self.plants[i].drift(&chain);
            for c in 0..m {
                y[i * m + c] = f_star[c] / self.gains.alpha2;
            }
        }
        let x_hat: Vec<f64> = (0..n).flat_map(|_| x_star.iter().copied()).collect();
        let init = InitialConditions {
            decisions: x_star.to_vec(),
            derivatives: None,
            y: Some(y),
            x_hat: Some(x_hat),
            z: None,
        };
        self.initial_state(&init)
    }

    /// `‖RHS‖_∞` at the equilibrium tuple built from `x_star`.
    pub fn equilibrium_residual(&self, x_star: &[f64]) -> Result<f64> {
        let state = self.equilibrium_state(x_star)?;
        Ok(inf_norm(&self.derivative(&state)))
    }
}

/// Recorded samples of a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub layout: StateLayout,
    pub times: Vec<f64>,
    /// `N·m` decisions per sample.
    pub decisions: Vec<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    /// `‖x(t) − x*‖₂` per sample, when `x*` was supplied.
    pub error_norms: Option<Vec<f64>>,
    /// `‖x̂ − 1_N ⊗ x‖_∞` per sample.
    pub estimate_disagreement: Vec<f64>,
    /// `max_l ‖z⁽ˡ⁾ − x⁽ˡ⁾‖_∞` per sample (output-based runs only).
    pub observer_error: Option<Vec<f64>>,
    pub snapshots: Vec<ClosedLoopState>,
    pub final_state: ClosedLoopState,
}

impl Trajectory {
    fn new(layout: StateLayout, x_star: Option<Vec<f64>>) -> Self {
        Self {
            layout,
            times: Vec::new(),
            decisions: Vec::new(),
            error_norms: x_star.as_ref().map(|_| Vec::new()),
            x_star,
            estimate_disagreement: Vec::new(),
            observer_error: layout.observer.then(Vec::new),
            snapshots: Vec::new(),
            final_state: ClosedLoopState { t: 0.0, data: Vec::new() },
        }
    }

    fn record(&mut self, l: &StateLayout, state: &[f64], t: f64, snapshot_stride: Option<usize>) {
        let (n, m) = (l.n_players, l.dim);
        let x: Vec<f64> = (0..n).flat_map(|i| state[l.decision(i)].iter().copied()).collect();

        let mut disagreement: f64 = 0.0;
        for i in 0..n {
            let o = l.x_hat_offset(i);
            for (k, xk) in x.iter().enumerate() {
                disagreement = disagreement.max((state[o + k] - xk).abs());
            }
        }
        if let Some(obs_err) = self.observer_error.as_mut() {
            let mut worst: f64 = 0.0;
            for i in 0..n {
                let (po, zo) = (l.plant_offset(i), l.z_offset(i));
                for k in 0..l.chain_len() {
                    worst = worst.max((state[zo + k] - state[po + k]).abs());
                }
            }
            obs_err.push(worst);
        }
        if let (Some(xs), Some(errs)) = (&self.x_star, self.error_norms.as_mut()) {
            let diff: Vec<f64> = x.iter().zip(xs).map(|(a, b)| a - b).collect();
            errs.push(euclidean_norm(&diff));
        }
        if let Some(stride) = snapshot_stride {
            if stride > 0 && self.times.len().is_multiple_of(stride) {
                self.snapshots.push(ClosedLoopState { t, data: state.to_vec() });
            }
        }
        debug_assert_eq!(x.len(), n * m);
        self.times.push(t);
        self.decisions.push(x);
        self.estimate_disagreement.push(disagreement);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_decisions(&self) -> &[f64] {
        self.decisions.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest recorded observer error at or after `t_from`.
    pub fn observer_error_after(&self, t_from: f64) -> Option<f64> {
        let errs = self.observer_error.as_ref()?;
        self.times
            .iter()
            .zip(errs)
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, e)| *e)
            .reduce(f64::max)
    }
}

/// Least-squares fit of `log‖x(t) − x*‖` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    /// Decay rate, minus the slope.
    pub lambda_hat: f64,
    pub r_squared: f64,
    pub samples: usize,
}

pub fn fit_exponential_rate(traj: &Trajectory, window: (f64, f64)) -> Result<ExpFit> {
    let errs = traj.error_norms.as_ref().ok_or(Error::EmptyWindow)?;
    fit_log_linear(&traj.times, errs, window)
}

/// Log-linear least squares on `(times, values)` restricted to `window`.
pub fn fit_log_linear(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<ExpFit> {
    let (lo, hi) = window;
    let mut pts = Vec::new();
    for (t, e) in times.iter().zip(values) {
        if *t >= lo && *t <= hi {
            if e.is_nan() || *e <= 0.0 {
                return Err(Error::NonPositiveError { t: *t });
            }
            pts.push((*t, e.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ml).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::EmptyWindow);
    }
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - ml - slope * (p.0 - mt)).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(ExpFit { lambda_hat: -slope, r_squared, samples: pts.len() })
}

/// Window over which the log error has fallen between `lo_frac` and
/// `hi_frac` of its total drop, measured from the peak to the final sample.
pub fn mid_decay_window(traj: &Trajectory, lo_frac: f64, hi_frac: f64) -> Option<(f64, f64)> {
    let errs = traj.error_norms.as_ref()?;
    let (peak_idx, peak) = errs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, e)| if *e > acc.1 { (k, *e) } else { acc });
    let last = *errs.last()?;
    if !(peak > 0.0 && last > 0.0 && last < peak) {
        return None;
    }
    let (lp, ll) = (peak.ln(), last.ln());
    let drop = lp - ll;
    let first_below = |frac: f64| {
        let level = lp - frac * drop;
        (peak_idx..errs.len()).find(|&k| errs[k].ln() <= level).map(|k| traj.times[k])
    };
    let t_lo = first_below(lo_frac)?;
    let t_hi = first_below(hi_frac)?;
    (t_hi > t_lo).then_some((t_lo, t_hi))
}

/// First recorded time after which `‖x − x*‖_∞ ≤ tol_rel·max(1, ‖x*‖_∞)`
/// holds through the end of the run; `None` if the last sample is outside.
pub fn settle_time(traj: &Trajectory, x_star: &[f64], tol_rel: f64) -> Option<f64> {
    let threshold = tol_rel * inf_norm(x_star).max(1.0);
    let outside = |x: &Vec<f64>| x.iter().zip(x_star).any(|(a, b)| (a - b).abs() > threshold);
    match traj.decisions.iter().rposition(outside) {
        None => traj.times.first().copied(),
        Some(k) if k + 1 < traj.len() => Some(traj.times[k + 1]),
        Some(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::QuadraticGame;

    fn synthetic(times: &[f64], err: impl Fn(f64) -> f64) -> Trajectory {
        let layout = StateLayout { n_players: 1, order: 1, dim: 1, observer: false };
        let mut traj = Trajectory::new(layout, Some(vec![0.0]));
        traj.times = times.to_vec();
        traj.decisions = times.iter().map(|t| vec![err(*t)]).collect();
        traj.error_norms = Some(times.iter().map(|t| err(*t)).collect());
        traj
    }

    #[test]
    fn rk4_constant_and_decay() {
        let x = rk4_step(|_, _| vec![0.0], &[5.0], 0.0, 0.1).unwrap();
        assert_eq!(x, vec![5.0]);
        let x = rk4_step(|s, _| vec![-s[0]], &[1.0], 0.0, 0.1).unwrap();
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!((x[0] - 0.9048374).abs() < 1e-7);
    }

    #[test]
    fn rk4_reports_divergence() {
        assert!(matches!(
            rk4_step(|_, _| vec![f64::NAN], &[1.0], 0.0, 0.1),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn fit_exact_exponential() {
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        let fit = fit_exponential_rate(&synthetic(&times, |t| (-2.0 * t).exp()), (0.0, 2.0)).unwrap();
        assert!((fit.lambda_hat - 2.0).abs() < 1e-6);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_perturbed_exponential() {
        let times: Vec<f64> = (0..500).map(|k| k as f64 * 0.01).collect();
        let traj = synthetic(&times, |t| (-2.0 * t).exp() * (1.0 + 0.01 * (10.0 * t).sin()));
        let fit = fit_exponential_rate(&traj, (0.0, 5.0)).unwrap();
        assert!((1.9..=2.1).contains(&fit.lambda_hat));
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn fit_errors() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let traj = synthetic(&times, |t| if t > 5.0 { 0.0 } else { 1.0 });
        assert!(matches!(fit_exponential_rate(&traj, (20.0, 30.0)), Err(Error::EmptyWindow)));
        assert!(matches!(
            fit_exponential_rate(&traj, (0.0, 9.0)),
            Err(Error::NonPositiveError { .. })
        ));
    }

    #[test]
    fn settle_examples() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let at_star = synthetic(&times, |_| 0.0);
        assert_eq!(settle_time(&at_star, &[0.0], 0.01), Some(0.0));

        // Decision e^{-t} around x* = 1.
        let mut traj = synthetic(&times, |t| (-t).exp());
        traj.decisions = times.iter().map(|t| vec![1.0 + (-t).exp()]).collect();
        let ts = settle_time(&traj, &[1.0], 0.01).unwrap();
        assert!((ts - 100f64.ln()).abs() <= 0.01);

        let diverging = synthetic(&times, |t| t.exp());
        assert_eq!(settle_time(&diverging, &[0.0], 0.01), None);
    }

    #[test]
    fn mid_decay_window_on_exponential() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let traj = synthetic(&times, |t| (-t).exp());
        let (lo, hi) = mid_decay_window(&traj, 0.1, 0.9).unwrap();
        assert!((lo - 1.0).abs() < 0.011);
        assert!((hi - 9.0).abs() < 0.011);
    }

    #[test]
    fn frozen_loop_holds_still() {
        let game = QuadraticGame { n_players: 3, dim: 2 };
        let plants = vec![Plant::integrator_chain(2, 2); 3];
        let graph = Digraph::directed_cycle(3, |_| 1.0).unwrap();
        let gains = GainSet { k: vec![0.0], epsilon: 1.0, alpha1: 0.0, alpha2: 0.0, alpha3: 0.0 };
        let cl = ClosedLoop::new(&game, &plants, &graph, &gains, None, Mode::StateBased).unwrap();
        let init = InitialConditions::uniform_box(6, -1.0, 1.0, 4);
        let mut cfg = SimConfig::new(0.01, 1.0, Mode::StateBased);
        cfg.record_stride = 10;
        let traj = cl.run(&cfg, &init, None).unwrap();
        assert_eq!(traj.len(), 11);
        for x in &traj.decisions {
            assert_eq!(x, &init.decisions);
        }
    }

    #[test]
    fn closed_loop_rejects_bad_setups() {
        let game = QuadraticGame { n_players: 2, dim: 1 };
        let plants = vec![Plant::integrator_chain(2, 1); 2];
        let one_way = Digraph::new(nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        let gains = GainSet::with_default_k(2, 1.0, 1.0, 0.5, 1.0).unwrap();
        assert!(matches!(
            ClosedLoop::new(&game, &plants, &one_way, &gains, None, Mode::StateBased),
            Err(Error::NotStronglyConnected)
        ));
        let cycle = Digraph::directed_cycle(2, |_| 1.0).unwrap();
        assert!(matches!(
            ClosedLoop::new(&game, &plants, &cycle, &gains, None, Mode::OutputBased),
            Err(Error::ConfigInvalid(_))
        ));
        let obs = ObserverSet::with_default_beta(2, 0.05).unwrap();
        let cl = ClosedLoop::new(&game, &plants, &cycle, &gains, Some(&obs), Mode::OutputBased).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, Mode::OutputBased);
        let init = InitialConditions::from_decisions(vec![1.0, 2.0]);
        assert!(matches!(cl.run(&cfg, &init, None), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn divergence_is_caught() {
        let game = QuadraticGame { n_players: 2, dim: 1 };
        let plants = vec![Plant::integrator_chain(2, 1); 2];
        let graph = Digraph::directed_cycle(2, |_| 1.0).unwrap();
        // A negative damping gain makes the chain blow up.
        let gains = GainSet { k: vec![-5.0], epsilon: 1.0, alpha1: 1.0, alpha2: 0.5, alpha3: 1.0 };
        let cl = ClosedLoop::new(&game, &plants, &graph, &gains, None, Mode::StateBased).unwrap();
        let cfg = SimConfig::new(0.01, 100.0, Mode::StateBased);
        let init = InitialConditions::from_decisions(vec![1.0, -1.0]);
        assert!(matches!(cl.run(&cfg, &init, None), Err(Error::Diverged { .. })));
    }
}
