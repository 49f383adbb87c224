//! The property battery behind `nashseek verify`: graph certificates,
//! Lyapunov certificates, gradient oracles, integrator order, equilibrium
//! residuals and monotonicity probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{build_scenario, default_config, prepare, RunConfig, ScenarioKind};
use crate::control::{companion_matrix, default_hurwitz_gains, lyapunov_p};
use crate::error::{Error, Result};
use crate::game::{gradient_fd_error, nash_solve, probe_monotonicity};
use crate::graph::Digraph;
use crate::linalg::{inf_norm, is_positive_definite, lyapunov_residual};
use crate::sim::{rk4_step, ClosedLoop, Mode};

pub const GROUPS: [&str; 6] = ["graph", "lyapunov", "gradient", "rk4", "equilibrium", "monotonicity"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    /// Advisory checks are reported but never fail the battery.
    pub advisory: bool,
    pub detail: String,
}

impl Check {
    fn new(group: &'static str, name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { group, name: name.into(), passed, advisory: false, detail }
    }

    fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }

    pub fn blocking_failure(&self) -> bool {
        !self.passed && !self.advisory
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    pub graph_samples: usize,
    pub max_graph_nodes: usize,
    pub gradient_points: usize,
    pub monotonicity_samples: usize,
    /// Scenario-level checks run once per entry.
    pub scenarios: Vec<RunConfig>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            graph_samples: 100,
            max_graph_nodes: 8,
            gradient_points: 50,
            monotonicity_samples: 200,
            scenarios: vec![
                default_config(ScenarioKind::VehicleFormation),
                default_config(ScenarioKind::TurbineMarket),
            ],
        }
    }
}

/// Chord probability and weight range of the random graph family.
pub const RANDOM_GRAPH_CHORD_PROB: f64 = 0.3;
pub const RANDOM_GRAPH_WEIGHTS: (f64, f64) = (0.5, 1.5);

/// The seeded random family used by the graph checks.
pub fn random_graph_family(seed: u64, count: usize, max_nodes: usize) -> Result<Vec<Digraph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=max_nodes.max(2));
            Digraph::random_strongly_connected(&mut rng, n, RANDOM_GRAPH_CHORD_PROB, RANDOM_GRAPH_WEIGHTS)
        })
        .collect()
}

/// Runs the selected groups (all when `only` is empty).
pub fn run_checks(opts: &VerifyOptions, only: &[String]) -> Result<Vec<Check>> {
    for g in only {
        if !GROUPS.contains(&g.as_str()) {
            return Err(Error::ConfigInvalid(format!(
                "unknown check group {g:?}; expected one of {}",
                GROUPS.join(", ")
            )));
        }
    }
    let wanted = |g: &str| only.is_empty() || only.iter().any(|o| o == g);
    let mut checks = Vec::new();
    if wanted("graph") {
        graph_checks(opts, &mut checks)?;
    }
    if wanted("lyapunov") {
        lyapunov_checks(&mut checks);
    }
    if wanted("gradient") {
        for cfg in &opts.scenarios {
            checks.push(gradient_check(cfg, opts)?);
        }
    }
    if wanted("rk4") {
        checks.push(rk4_check());
    }
    if wanted("equilibrium") {
        for cfg in &opts.scenarios {
            equilibrium_checks(cfg, &mut checks)?;
        }
    }
    if wanted("monotonicity") {
        for cfg in &opts.scenarios {
            checks.push(monotonicity_check(cfg, opts)?);
        }
    }
    Ok(checks)
}

fn graph_checks(opts: &VerifyOptions, out: &mut Vec<Check>) -> Result<()> {
    let family = random_graph_family(opts.seed, opts.graph_samples, opts.max_graph_nodes)?;
    let mut worst_residual: f64 = 0.0;
    let mut lyapunov_failures = 0;
    let mut indefinite = 0;
    let mut min_eig = f64::INFINITY;
    for g in &family {
        let cert = g.lemma1_certificate()?;
        worst_residual = worst_residual.max(cert.lyapunov_residual);
        min_eig = min_eig.min(cert.lemma1_min_eig);
        if !cert.lyapunov_passes(1e-8) {
            lyapunov_failures += 1;
        }
        if cert.lemma1_min_eig <= 0.0 {
            indefinite += 1;
        }
    }
    out.push(Check::new(
        "graph",
        "random_family.lyapunov_certificate",
        lyapunov_failures == 0,
        format!(
            "{} of {} graphs certified, worst residual {worst_residual:.2e}",
            family.len() - lyapunov_failures,
            family.len()
        ),
    ));
    out.push(
        Check::new(
            "graph",
            "random_family.symmetric_part",
            indefinite == 0,
            format!("{indefinite} of {} graphs have an indefinite symmetric part (min eig {min_eig:.3e})", family.len()),
        )
        .advisory(),
    );
    for cfg in &opts.scenarios {
        let model = build_scenario(cfg)?;
        let cert = model.graph.lemma1_certificate()?;
        let ok = cert.lyapunov_passes(1e-8) && !cert.weight_balanced;
        out.push(Check::new(
            "graph",
            format!("{}.graph", cfg.scenario.name()),
            ok,
            format!(
                "strongly connected {}, balanced {}, residual {:.2e}, symmetric-part min eig {:.3e}",
                cert.strongly_connected, cert.weight_balanced, cert.lyapunov_residual, cert.lemma1_min_eig
            ),
        ));
    }
    Ok(())
}

fn lyapunov_checks(out: &mut Vec<Check>) {
    for n in 2..=8 {
        let k = default_hurwitz_gains(n);
        let detail;
        let ok = match companion_matrix(&k).and_then(|a| lyapunov_p(&a).map(|p| (a, p))) {
            Ok((a, p)) => {
                let d = a.nrows();
                let residual = lyapunov_residual(&p, &a, &(-nalgebra::DMatrix::<f64>::identity(d, d)));
                let symmetric = (&p - p.transpose()).amax() < 1e-12 * p.amax().max(1.0);
                detail = format!("residual {residual:.2e}");
                residual < 1e-10 && symmetric && is_positive_definite(&p)
            }
            Err(e) => {
                detail = e.to_string();
                false
            }
        };
        out.push(Check::new("lyapunov", format!("companion.n{n}"), ok, detail));
    }
}

fn sample_box(cfg: &RunConfig, x_star: &[f64]) -> (f64, f64) {
    let [lo, hi] = cfg.init.bounds;
    let lo = x_star.iter().copied().fold(lo, f64::min) - 10.0;
    let hi = x_star.iter().copied().fold(hi, f64::max) + 10.0;
    (lo, hi)
}

fn gradient_check(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Check> {
    let model = build_scenario(cfg)?;
    let (lo, hi) = sample_box(cfg, &model.x_star);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    let mut has_cost = true;
    for _ in 0..opts.gradient_points {
        let x: Vec<f64> = (0..model.game.profile_len()).map(|_| rng.random_range(lo..=hi)).collect();
        match gradient_fd_error(model.game.as_ref(), &x)? {
            Some(e) => worst = worst.max(e),
            None => has_cost = false,
        }
    }
    let name = format!("{}.gradient_fd", cfg.scenario.name());
    Ok(if has_cost {
        Check::new(
            "gradient",
            name,
            worst <= 1e-6,
            format!("worst relative error {worst:.2e} over {} points", opts.gradient_points),
        )
    } else {
        Check::new("gradient", name, true, "no cost oracle".into()).advisory()
    })
}

/// Global error of RK4 on `ẋ = −x` over `[0, 1]` for `steps` steps.
pub fn rk4_global_error(steps: usize) -> f64 {
    let dt = 1.0 / steps as f64;
    let mut x = vec![1.0];
    for k in 0..steps {
        x = rk4_step(|s, _| vec![-s[0]], &x, k as f64 * dt, dt).expect("finite");
    }
    (x[0] - (-1.0f64).exp()).abs()
}

fn rk4_check() -> Check {
    let errs: Vec<f64> = [10, 20, 40].iter().map(|s| rk4_global_error(*s)).collect();
    let factors = [errs[0] / errs[1], errs[1] / errs[2]];
    let ok = factors.iter().all(|f| (12.0..=20.0).contains(f));
    Check::new(
        "rk4",
        "order.exp_decay",
        ok,
        format!("halving factors {:.2}, {:.2}", factors[0], factors[1]),
    )
}

fn equilibrium_checks(cfg: &RunConfig, out: &mut Vec<Check>) -> Result<()> {
    let name = cfg.scenario.name();
    let model = build_scenario(cfg)?;
    let solved = nash_solve(model.game.as_ref(), &vec![0.0; model.x_star.len()], 1e-10);
    let (ok, detail) = match &solved {
        Ok(x) => {
            let gap = x.iter().zip(&model.x_star).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            let scale = inf_norm(&model.x_star).max(1.0);
            (gap <= 1e-8 * scale, format!("solver vs oracle gap {gap:.2e}"))
        }
        Err(e) => (false, e.to_string()),
    };
    out.push(Check::new("equilibrium", format!("{name}.nash_oracle"), ok, detail));

    for mode in [Mode::StateBased, Mode::OutputBased] {
        let mut c = cfg.clone();
        c.algo = mode;
        let run = prepare(&c)?;
        let cl = ClosedLoop::new(
            run.model.game.as_ref(),
            &run.model.plants,
            &run.model.graph,
            &run.gains,
            run.observer.as_ref(),
            mode,
        )?;
        let residual = cl.equilibrium_residual(&run.model.x_star)?;
        let tag = if mode == Mode::StateBased { "state" } else { "output" };
        out.push(Check::new(
            "equilibrium",
            format!("{name}.residual.{tag}"),
            residual < 1e-9,
            format!("closed-loop RHS at the equilibrium tuple {residual:.2e}"),
        ));
    }
    Ok(())
}

fn monotonicity_check(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Check> {
    let model = build_scenario(cfg)?;
    let bounds = sample_box(cfg, &model.x_star);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rep = probe_monotonicity(model.game.as_ref(), &mut rng, opts.monotonicity_samples, bounds)?;
    let ok = rep.omega_hat > 0.0 && rep.omega_hat <= rep.theta_hat;
    Ok(Check::new(
        "monotonicity",
        format!("{}.strong_monotonicity", cfg.scenario.name()),
        ok,
        format!(
            "omega_hat {:.4}, theta_hat {:.4}, estimate Lipschitz {:.4}",
            rep.omega_hat, rep.theta_hat, rep.theta_hat_estimates
        ),
    ))
}
