use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nashseek::config::{self, ConfigSources, RunConfig};
use nashseek::game::{nash_solve, pseudo_gradient};
use nashseek::linalg::inf_norm;
use nashseek::report;
use nashseek::verify::{self, VerifyOptions};
use nashseek::Error;

/// Distributed Nash-equilibrium seeking simulations.
#[derive(Parser)]
#[command(name = "nashseek", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write trajectory.csv and summary.json.
    Run(Common),
    /// Print the Nash equilibrium from the oracle and from the iterative solver.
    Nash(Common),
    /// Run the property battery.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to these check groups (repeatable).
        #[arg(long)]
        only: Vec<String>,
    },
    /// Run once per value of a gain, observer or sim key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key to vary, e.g. `mu` or `gains.alpha3`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario name (vehicles, turbines, quadratic) or path to a JSON config.
    #[arg(long)]
    scenario: Option<String>,
    /// `state` or `output`.
    #[arg(long)]
    algo: Option<String>,
    /// JSON config layered over the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` override; dotted paths or shorthand keys such as `mu`.
    #[arg(long = "set")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn sources(&self) -> ConfigSources {
        ConfigSources {
            scenario: self.scenario.clone(),
            config_file: self.config.clone(),
            algo: self.algo.clone(),
            seed: self.seed,
            output_dir: self.out.clone(),
            sets: self.sets.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        config::resolve(&self.sources())
    }
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_)
        | Error::InvalidGraph(_)
        | Error::NotStronglyConnected
        | Error::DimensionMismatch { .. }
        | Error::NotHurwitz
        | Error::EmptyGains => EXIT_CONFIG,
        Error::Diverged { .. } | Error::NoConvergence { .. } | Error::SingularSystem | Error::SingularLyapunov => {
            EXIT_NUMERIC
        }
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Nash(common) => cmd_nash(common),
        Command::Verify { common, only } => cmd_verify(common, only),
        Command::Sweep { common, param, values } => cmd_sweep(common, param, values),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
}

fn cmd_run(common: &Common) -> Result<u8, Error> {
    let cfg = common.resolve()?;
    let run = config::prepare(&cfg)?;
    if let Some(w) = run.gains.check_ordering().warning {
        eprintln!("warning: {w}");
    }
    let outcome = run.execute()?;
    let dir = output_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    if let Some(traj) = &outcome.trajectory {
        report::write_trajectory_file(traj, &dir.join("trajectory.csv"))?;
    }
    report::write_summary_file(&outcome.summary, &dir.join("summary.json"))?;

    let s = &outcome.summary;
    println!("scenario        {} ({:?}, dt {})", cfg.scenario.name(), cfg.algo, run.sim.dt);
    if s.diverged {
        println!("diverged        yes");
        return Ok(EXIT_NUMERIC);
    }
    println!("settle_time     {}", fmt_opt(s.settle_time));
    println!("lambda_hat      {}", fmt_opt(s.lambda_hat));
    println!("r_squared       {}", fmt_opt(s.r_squared));
    println!("final_residual  {}", fmt_opt(s.final_residual));
    println!("output          {}", dir.display());
    if outcome.settled() {
        Ok(0)
    } else {
        eprintln!("error: run did not settle within the horizon");
        Ok(EXIT_NUMERIC)
    }
}

fn cmd_nash(common: &Common) -> Result<u8, Error> {
    let cfg = common.resolve()?;
    let run = config::prepare(&cfg)?;
    let model = &run.model;
    let game = model.game.as_ref();
    let oracle = &model.x_star;
    let solved = nash_solve(game, &vec![0.0; oracle.len()], 1e-10)?;
    let gap = oracle.iter().zip(&solved).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
    let m = game.decision_dim();
    println!("scenario  {}", cfg.scenario.name());
    println!("player  oracle  solver");
    for i in 0..game.n_players() {
        let o: Vec<String> = oracle[i * m..(i + 1) * m].iter().map(|v| format!("{v:.10}")).collect();
        let s: Vec<String> = solved[i * m..(i + 1) * m].iter().map(|v| format!("{v:.10}")).collect();
        println!("{:>6}  [{}]  [{}]", i + 1, o.join(", "), s.join(", "));
    }
    println!("gap             {gap:.3e}");
    println!("|F(x*)|_inf     {:.3e}", inf_norm(&pseudo_gradient(game, oracle)?));
    if let Some(formation) = &model.formation {
        println!("pair  p_i*-p_j*  d_i-d_j");
        let n = formation.n();
        for i in 0..n {
            let j = (i + 1) % n;
            let dp = [oracle[2 * i] - oracle[2 * j], oracle[2 * i + 1] - oracle[2 * j + 1]];
            let dd = [
                formation.offsets[i][0] - formation.offsets[j][0],
                formation.offsets[i][1] - formation.offsets[j][1],
            ];
            println!(
                "{}-{}  [{:.10}, {:.10}]  [{:.10}, {:.10}]",
                i + 1,
                j + 1,
                dp[0],
                dp[1],
                dd[0],
                dd[1]
            );
        }
    }
    Ok(0)
}

fn cmd_verify(common: &Common, only: &[String]) -> Result<u8, Error> {
    let mut opts = VerifyOptions::default();
    if let Some(seed) = common.seed {
        opts.seed = seed;
    }
    if common.scenario.is_some() || common.config.is_some() || !common.sets.is_empty() {
        opts.scenarios = vec![common.resolve()?];
    }
    let checks = verify::run_checks(&opts, only)?;
    let mut failures = 0;
    for c in &checks {
        let status = match (c.passed, c.advisory) {
            (true, _) => "PASS",
            (false, true) => "NOTE",
            (false, false) => "FAIL",
        };
        println!("{status}  {:<13} {:<44} {}", c.group, c.name, c.detail);
        if c.blocking_failure() {
            failures += 1;
        }
    }
    println!("{} checks, {failures} failed", checks.len());
    Ok(if failures == 0 { 0 } else { EXIT_FAILURE })
}

fn cmd_sweep(common: &Common, param: &str, values: &[String]) -> Result<u8, Error> {
    let cfg = common.resolve()?;
    let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    let cells = config::sweep(&cfg, param, &values, config::thread_cap_from_env())?;
    match &common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = Path::new(dir).join("sweep.csv");
            report::write_sweep_csv(&cells, std::fs::File::create(&path)?)?;
            println!("wrote {}", path.display());
        }
        None => report::write_sweep_csv(&cells, std::io::stdout().lock())?,
    }
    Ok(0)
}
