//! Acceptance run: one line per criterion, then a tally.
//!
//! Criteria listed in `KNOWN_FAILURES` are evaluated in full and reported as
//! FAIL; they do not fail the process, but an unexpected pass does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use nashseek::config::{self, default_config, ConfigSources, RunConfig, ScenarioKind};
use nashseek::control::{companion_matrix, default_hurwitz_gains, lyapunov_p};
use nashseek::game::{gradient_fd_error, probe_monotonicity, Game};
use nashseek::linalg::{is_positive_definite, symmetric_eigenvalues};
use nashseek::report::write_trajectory_csv;
use nashseek::scenarios::{build_turbine_market, build_vehicle_formation, FormationSpec, GENERATOR_TABLE};
use nashseek::sim::{fit_exponential_rate, mid_decay_window, ClosedLoop, Mode};
use nashseek::verify::{random_graph_family, rk4_global_error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot hold as stated; see the project notes.
const KNOWN_FAILURES: [u8; 2] = [3, 6];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn resolve(scenario: &str, sets: &[&str]) -> RunConfig {
    config::resolve(&ConfigSources {
        scenario: Some(scenario.into()),
        sets: sets.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    })
    .expect("valid config")
}

/// `p_i* = d_i − Σd/(N+2)`, computed from the anchors alone.
fn vehicle_oracle(f: &FormationSpec) -> Vec<f64> {
    let n = f.offsets.len() as f64;
    let sx: f64 = f.offsets.iter().map(|d| d[0]).sum();
    let sy: f64 = f.offsets.iter().map(|d| d[1]).sum();
    f.offsets.iter().flat_map(|d| [d[0] - sx / (n + 2.0), d[1] - sy / (n + 2.0)]).collect()
}

/// `P_i = (a − γ₂ᵢ − bS)/cᵢ` with `cᵢ = 2γ₃ᵢ + b` and
/// `S = Σ((a − γ₂ᵢ)/cᵢ) / (1 + bΣ1/cᵢ)`.
fn turbine_oracle() -> Vec<f64> {
    let (a, b) = (200.0, 0.1);
    let c: Vec<f64> = GENERATOR_TABLE.iter().map(|g| 2.0 * g.gamma3 + b).collect();
    let num: f64 = GENERATOR_TABLE.iter().zip(&c).map(|(g, ci)| (a - g.gamma2) / ci).sum();
    let den: f64 = 1.0 + b * c.iter().map(|ci| 1.0 / ci).sum::<f64>();
    let s = num / den;
    GENERATOR_TABLE.iter().zip(&c).map(|(g, ci)| (a - g.gamma2 - b * s) / ci).collect()
}

fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

fn vehicle_convergence(algo: &str, budget: f64) -> Verdict {
    let cfg = resolve("vehicles", &[&format!("algo={algo}")]);
    let oracle = vehicle_oracle(&FormationSpec::default());
    let clock = Instant::now();
    let run = config::prepare(&cfg).expect("prepare");
    let out = run.execute().expect("run");
    let secs = clock.elapsed().as_secs_f64();
    let Some(traj) = out.trajectory else {
        return verdict(false, "diverged");
    };
    let p = traj.final_decisions();
    let err = max_abs_gap(p, &oracle);
    let d = &FormationSpec::default().offsets;
    let mut shape_err: f64 = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            for c in 0..2 {
                let rel = p[2 * i + c] - p[2 * j + c];
                shape_err = shape_err.max((rel - (d[i][c] - d[j][c])).abs());
            }
        }
    }
    let gains_ok = (cfg.gains.alpha1, cfg.gains.alpha2, cfg.gains.alpha3, cfg.gains.epsilon) == (3.0, 2.2, 18.0, 2.0);
    let mu_ok = algo == "state" || (cfg.gains.mu == 0.02 && run.sim.dt <= cfg.gains.mu / 10.0);
    verdict(
        err <= 1e-2 && shape_err <= 1e-2 && secs < budget && gains_ok && mu_ok,
        format!(
            "|p(T)-p*|inf {err:.2e}, formation error {shape_err:.2e}, dt {}, T {}, {secs:.1}s",
            run.sim.dt, cfg.sim.horizon
        ),
    )
}

fn criterion_1() -> Verdict {
    vehicle_convergence("state", 30.0)
}

fn criterion_2() -> Verdict {
    vehicle_convergence("output", 60.0)
}

fn criterion_3() -> Verdict {
    let oracle = turbine_oracle();
    let mut parts = Vec::new();
    let mut ok = true;
    for algo in ["state", "output"] {
        let cfg = resolve("turbines", &[&format!("algo={algo}"), "mu=0.01"]);
        let g = &cfg.gains;
        ok &= (g.epsilon, g.alpha1, g.alpha2, g.alpha3) == (2.0, 14.0, 10.0, 40.0);
        let run = config::prepare(&cfg).expect("prepare");
        ok &= run.gains.check_ordering().passes();
        match run.execute().expect("run").trajectory {
            Some(traj) => {
                let rel = traj
                    .final_decisions()
                    .iter()
                    .zip(&oracle)
                    .fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs() / q.abs()));
                ok &= rel <= 0.01;
                parts.push(format!("{algo}: max rel error {rel:.2e} at T {}", cfg.sim.horizon));
            }
            None => {
                ok = false;
                parts.push(format!("{algo}: diverged"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

/// High-gain set ε=20, α₁=500, α₂=400, α₃=400, reported alongside criterion 3 but never gating.
fn high_gain_turbines() -> String {
    let oracle = turbine_oracle();
    let runs: Vec<String> = ["state", "output"]
        .iter()
        .map(|algo| {
            let cfg = resolve(
                "turbines",
                &[
                    &format!("algo={algo}"),
                    "epsilon=20",
                    "alpha1=500",
                    "alpha2=400",
                    "alpha3=400",
                    "mu=0.01",
                    "dt=1e-4",
                    "horizon=250",
                    "record_stride=1000",
                ],
            );
            let run = config::prepare(&cfg).expect("prepare");
            let warned = run.gains.check_ordering().warning.is_some();
            match run.execute().expect("run").trajectory {
                Some(traj) => {
                    let rel = traj
                        .final_decisions()
                        .iter()
                        .zip(&oracle)
                        .fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs() / q.abs()));
                    format!("{algo} max rel error {rel:.2e} (ordering warning {warned})")
                }
                None => format!("{algo} diverged"),
            }
        })
        .collect();
    runs.join("; ")
}

fn criterion_4() -> Verdict {
    let mut worst: f64 = 0.0;
    let v = build_vehicle_formation();
    let t = build_turbine_market();
    let vx = vehicle_oracle(&v.formation);
    let tx = turbine_oracle();
    let cases: [(&dyn Game, &[_], &_, &[f64], RunConfig); 2] = [
        (&v.game, &v.plants, &v.graph, &vx, default_config(ScenarioKind::VehicleFormation)),
        (&t.game, &t.plants, &t.graph, &tx, default_config(ScenarioKind::TurbineMarket)),
    ];
    for (game, plants, graph, x_star, mut cfg) in cases {
        for mode in [Mode::StateBased, Mode::OutputBased] {
            cfg.algo = mode;
            let run = config::prepare(&cfg).expect("prepare");
            let cl = ClosedLoop::new(game, plants, graph, &run.gains, run.observer.as_ref(), mode).expect("loop");
            worst = worst.max(cl.equilibrium_residual(x_star).expect("residual"));
        }
    }
    verdict(worst < 1e-9, format!("worst RHS norm at the equilibrium tuple {worst:.2e}"))
}

fn criterion_5() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for algo in ["state", "output"] {
        let cfg = resolve("vehicles", &[&format!("algo={algo}")]);
        let out = config::run_config(&cfg).expect("run");
        let traj = out.trajectory.expect("converging run");
        let fit = mid_decay_window(&traj, 0.1, 0.9).and_then(|w| fit_exponential_rate(&traj, w).ok());
        match fit {
            Some(f) => {
                ok &= f.r_squared >= 0.95 && f.lambda_hat > 0.0;
                parts.push(format!("{algo}: lambda {:.4}, R2 {:.4}", f.lambda_hat, f.r_squared));
            }
            None => {
                ok = false;
                parts.push(format!("{algo}: no decay window"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn criterion_6() -> Verdict {
    let family = random_graph_family(2024, 100, 8).expect("family");
    let mut indefinite = 0;
    let mut worst_residual: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for g in &family {
        let (l_ext, m) = g.estimation_block_matrix();
        let s = &l_ext + &m;
        let sym = (&s + s.transpose()) * 0.5;
        let eig = symmetric_eigenvalues(&sym)[0];
        min_eig = min_eig.min(eig);
        if eig <= 0.0 {
            indefinite += 1;
        }
        let cert = g.lemma1_certificate().expect("certificate");
        worst_residual = worst_residual.max(cert.lyapunov_residual);
    }
    let scenario_graphs = [build_vehicle_formation().graph, build_turbine_market().graph];
    let graphs_ok = scenario_graphs.iter().all(|g| g.is_strongly_connected() && !g.is_weight_balanced());
    verdict(
        indefinite == 0 && worst_residual < 1e-8 && graphs_ok,
        format!(
            "{indefinite}/100 with indefinite symmetric part (min eig {min_eig:.3e}); \
             worst Lyapunov residual {worst_residual:.2e}; scenario graphs connected and unbalanced {graphs_ok}"
        ),
    )
}

fn criterion_7() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for n in 2..=8 {
        let a = companion_matrix(&default_hurwitz_gains(n)).expect("companion");
        let p = lyapunov_p(&a).expect("P");
        let d = a.nrows();
        let r = (&p * &a + a.transpose() * &p + DMatrix::<f64>::identity(d, d)).norm();
        worst = worst.max(r);
        ok &= r < 1e-10 && (&p - p.transpose()).amax() == 0.0 && is_positive_definite(&p);
    }
    verdict(ok, format!("worst |PA + A'P + I|_F {worst:.2e} over n = 2..8"))
}

fn criterion_8() -> Verdict {
    let v = build_vehicle_formation();
    let t = build_turbine_market();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for (game, lo, hi) in [(&v.game as &dyn Game, -30.0, 30.0), (&t.game as &dyn Game, 0.0, 300.0)] {
        for _ in 0..50 {
            let x: Vec<f64> = (0..game.profile_len()).map(|_| rng.random_range(lo..=hi)).collect();
            worst = worst.max(gradient_fd_error(game, &x).expect("fd").expect("cost oracle"));
        }
    }
    verdict(worst <= 1e-6, format!("worst relative gradient error {worst:.2e}"))
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = probe_monotonicity(&build_vehicle_formation().game, &mut rng, 500, (-30.0, 30.0)).expect("probe");
    let t = probe_monotonicity(&build_turbine_market().game, &mut rng, 500, (0.0, 300.0)).expect("probe");
    verdict(
        (v.omega_hat - 0.2).abs() <= 0.01 && t.omega_hat >= 0.3,
        format!("vehicles omega_hat {:.4}, turbines omega_hat {:.4}", v.omega_hat, t.omega_hat),
    )
}

fn criterion_10() -> Verdict {
    let base = resolve("vehicles", &["algo=output"]);
    let values: Vec<String> = ["0.04", "0.02", "0.01"].iter().map(|s| s.to_string()).collect();
    let cells = config::sweep(&base, "mu", &values, None).expect("sweep");
    let errs: Vec<Option<f64>> = cells.iter().map(|c| c.observer_error).collect();
    let ok = errs.iter().all(Option::is_some) && errs.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = errs.iter().map(|e| e.map_or("n/a".into(), |x| format!("{x:.3e}"))).collect();
    verdict(ok, format!("post-transient observer error over mu = 0.04, 0.02, 0.01: {}", shown.join(", ")))
}

fn criterion_11() -> Verdict {
    let e: Vec<f64> = [10, 20, 40, 80].iter().map(|s| rk4_global_error(*s)).collect();
    let f: Vec<f64> = e.windows(2).map(|w| w[0] / w[1]).collect();
    verdict(f.iter().all(|x| (12.0..=20.0).contains(x)), format!("halving factors {f:.2?}"))
}

fn criterion_12() -> Verdict {
    let cfg = resolve("vehicles", &["seed=42"]);
    let csv = || {
        let traj = config::run_config(&cfg).expect("run").trajectory.expect("trajectory");
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).expect("csv");
        buf
    };
    let (a, b) = (csv(), csv());
    verdict(a == b && !a.is_empty(), format!("{} bytes, identical {}", a.len(), a == b))
}

type Criterion = (u8, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 12] = [
    (1, "Vehicle formation Nash convergence (state-based)", criterion_1),
    (2, "Vehicle formation Nash convergence (output-based)", criterion_2),
    (3, "Turbine market Nash convergence (desk gains)", criterion_3),
    (4, "Equilibrium residual", criterion_4),
    (5, "Exponential convergence", criterion_5),
    (6, "Graph certificates", criterion_6),
    (7, "Chain Lyapunov certificates", criterion_7),
    (8, "Gradient correctness", criterion_8),
    (9, "Monotonicity probes", criterion_9),
    (10, "Observer refinement", criterion_10),
    (11, "Integrator order", criterion_11),
    (12, "Determinism", criterion_12),
];

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        for (id, title, _) in CRITERIA {
            println!("criterion_{id:02}: test  # {title}");
        }
        return ExitCode::SUCCESS;
    }
    let mut unexpected = 0;
    let mut passed = 0;
    for (id, title, check) in CRITERIA {
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| verdict(false, format!("panicked: {:?}", e.downcast_ref::<String>())));
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.passed, known) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (known)",
            (true, true) => "PASS (unexpected)",
        };
        println!("criterion {id:>2} {tag:<18} {title}: {}", v.detail);
        if v.passed {
            passed += 1;
        }
        if v.passed == known {
            unexpected += 1;
        }
        if id == 3 {
            println!("             best-effort        high gains: {}", high_gain_turbines());
        }
    }
    println!("acceptance: {passed}/{} criteria pass, known failures {:?}", CRITERIA.len(), KNOWN_FAILURES);
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
