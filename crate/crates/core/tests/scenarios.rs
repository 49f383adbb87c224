use approx::assert_abs_diff_eq;
use nashseek::config::{self, ConfigSources, ScenarioKind};
use nashseek::game::{nash_solve, pseudo_gradient, QuadraticGame};
use nashseek::linalg::inf_norm;
use nashseek::scenarios::{
    build_turbine_market, build_vehicle_formation, turbine_nash_oracle, vehicle_nash_oracle, FormationSpec,
    GENERATOR_TABLE,
};
use nashseek::{ClosedLoop, Digraph, Error, GainSet, Mode, ObserverSet, Plant};
use nalgebra::DMatrix;

fn resolve(scenario: &str, sets: &[&str]) -> nashseek::Result<config::RunConfig> {
    config::resolve(&ConfigSources {
        scenario: Some(scenario.into()),
        sets: sets.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    })
}

#[test]
fn vehicle_nash_is_centroid_shifted_formation() {
    let spec = FormationSpec::default();
    let x = vehicle_nash_oracle(&spec);
    let n = spec.offsets.len() as f64;
    for c in 0..2 {
        let s: f64 = spec.offsets.iter().map(|d| d[c]).sum();
        for (i, d) in spec.offsets.iter().enumerate() {
            assert_abs_diff_eq!(x[2 * i + c], d[c] - s / (n + 2.0), epsilon = 1e-12);
        }
    }
    let vf = build_vehicle_formation();
    assert!(inf_norm(&pseudo_gradient(&vf.game, &x).unwrap()) < 1e-12);
}

#[test]
fn turbine_oracle_matches_aggregate_closed_form() {
    let (a, b) = (200.0, 0.1);
    let c: Vec<f64> = GENERATOR_TABLE.iter().map(|g| 2.0 * g.gamma3 + b).collect();
    let s = GENERATOR_TABLE.iter().zip(&c).map(|(g, ci)| (a - g.gamma2) / ci).sum::<f64>()
        / (1.0 + b * c.iter().map(|ci| 1.0 / ci).sum::<f64>());
    let tm = build_turbine_market();
    let x = turbine_nash_oracle(&tm.game).unwrap();
    for ((g, ci), xi) in GENERATOR_TABLE.iter().zip(&c).zip(&x) {
        assert_abs_diff_eq!(*xi, (a - g.gamma2 - b * s) / ci, epsilon = 1e-10);
    }
    let solved = nash_solve(&tm.game, &[0.0; 6], 1e-12).unwrap();
    for (p, q) in solved.iter().zip(&x) {
        assert_abs_diff_eq!(*p, *q, epsilon = 1e-8);
    }
}

#[test]
fn equilibrium_residual_vanishes_only_at_nash() {
    let cfg = resolve("turbines", &[]).unwrap();
    let run = config::prepare(&cfg).unwrap();
    let cl = run.closed_loop().unwrap();
    let x_star = &run.model.x_star;
    assert!(cl.equilibrium_residual(x_star).unwrap() < 1e-9);
    let mut off = x_star.clone();
    off[2] += 0.5;
    assert!(cl.equilibrium_residual(&off).unwrap() > 1e-3);
}

#[test]
fn zero_drift_leaves_auxiliary_state_at_zero() {
    let game = QuadraticGame { n_players: 3, dim: 1 };
    let plants: Vec<Plant> = (0..3).map(|_| Plant::integrator_chain(2, 1)).collect();
    let graph = Digraph::directed_cycle(3, |_| 1.0).unwrap();
    let gains = GainSet::with_default_k(2, 2.0, 1.5, 1.2, 5.0).unwrap();
    let cl = ClosedLoop::new(&game, &plants, &graph, &gains, None, Mode::StateBased).unwrap();
    let state = cl.equilibrium_state(&[0.0; 3]).unwrap();
    let l = cl.layout();
    assert!(state[l.y_offset(0)..l.y_offset(0) + 3].iter().all(|v| *v == 0.0));
    assert_eq!(cl.equilibrium_residual(&[0.0; 3]).unwrap(), 0.0);
}

#[test]
fn closed_loop_rejects_bad_setups() {
    let game = QuadraticGame { n_players: 3, dim: 1 };
    let plants: Vec<Plant> = (0..3).map(|_| Plant::integrator_chain(2, 1)).collect();
    let gains = GainSet::with_default_k(2, 2.0, 1.5, 1.2, 5.0).unwrap();
    let mut w = DMatrix::zeros(3, 3);
    w[(0, 1)] = 1.0;
    w[(1, 2)] = 1.0;
    let chain = Digraph::new(w).unwrap();
    assert!(matches!(
        ClosedLoop::new(&game, &plants, &chain, &gains, None, Mode::StateBased),
        Err(Error::NotStronglyConnected)
    ));
    let cycle = Digraph::directed_cycle(3, |_| 1.0).unwrap();
    assert!(matches!(
        ClosedLoop::new(&game, &plants, &cycle, &gains, None, Mode::OutputBased),
        Err(Error::ConfigInvalid(_))
    ));
    let observer = ObserverSet::with_default_beta(3, 0.01).unwrap();
    assert!(ClosedLoop::new(&game, &plants, &cycle, &gains, Some(&observer), Mode::OutputBased).is_err());
}

#[test]
fn overrides_layer_over_scenario_defaults() {
    let cfg = resolve("vehicles", &["alpha3=25", "gains.mu=0.03", "algo=output", "horizon=5"]).unwrap();
    assert_eq!(cfg.scenario, ScenarioKind::VehicleFormation);
    assert_eq!(cfg.gains.alpha3, 25.0);
    assert_eq!(cfg.gains.mu, 0.03);
    assert_eq!(cfg.algo, Mode::OutputBased);
    assert_eq!(cfg.sim.horizon, 5.0);
    assert_eq!(resolve("turbines", &[]).unwrap().scenario, ScenarioKind::TurbineMarket);
}

#[test]
fn invalid_configs_are_config_errors() {
    for (scenario, sets) in [
        ("ships", vec![]),
        ("vehicles", vec!["gains.alpha9=1"]),
        ("vehicles", vec!["price_slope=0.2"]),
        ("turbines", vec!["epsilon=-1"]),
        ("vehicles", vec!["algo=telepathy"]),
    ] {
        let err = resolve(scenario, &sets).and_then(|c| config::prepare(&c).map(|_| ()));
        assert!(matches!(err, Err(Error::ConfigInvalid(_))), "{scenario} {sets:?}: {err:?}");
    }
}

#[test]
fn quadratic_run_settles_at_origin() {
    let cfg = resolve("quadratic", &["horizon=20"]).unwrap();
    assert!(inf_norm(&config::build_scenario(&cfg).unwrap().x_star) < 1e-10);
    let out = config::run_config(&cfg).unwrap();
    assert!(out.settled(), "{:?}", out.summary);
    assert!(out.summary.final_residual.unwrap() < 1e-2);
    assert!(out.summary.lambda_hat.unwrap() > 0.0);
}

#[test]
fn divergent_step_is_reported_not_raised() {
    let cfg = resolve("vehicles", &["dt=0.5", "horizon=200"]).unwrap();
    let out = config::run_config(&cfg).unwrap();
    assert!(out.summary.diverged);
    assert!(out.trajectory.is_none());
}
