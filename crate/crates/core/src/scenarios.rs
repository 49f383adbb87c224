//! The two built-in case studies: a ten-vehicle formation game with quadratic
//! drag, and a six-generator electricity market with fourth-order turbines.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{pseudo_gradient, Game};
use crate::graph::Digraph;
use crate::linalg::inf_norm;
use crate::sim::{Drift, Plant};

/// Air density, kg/m³.
pub const AIR_DENSITY: f64 = 1.225;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// m²
    pub area: f64,
    pub drag_coeff: f64,
    /// N
    pub mech_drag: f64,
}

impl VehicleParams {
    const fn new(mass: f64, area: f64, drag_coeff: f64, mech_drag: f64) -> Self {
        Self { mass, area, drag_coeff, mech_drag }
    }
}

pub const VEHICLE_TABLE: [VehicleParams; 10] = [
    VehicleParams::new(1800.0, 2.180, 1.526, 6.412),
    VehicleParams::new(1775.0, 2.165, 1.649, 5.241),
    VehicleParams::new(825.0, 1.634, 1.052, 2.466),
    VehicleParams::new(1025.0, 1.746, 1.281, 3.969),
    VehicleParams::new(1200.0, 1.844, 1.359, 4.113),
    VehicleParams::new(1450.0, 1.983, 1.420, 4.755),
    VehicleParams::new(970.0, 1.715, 1.138, 2.842),
    VehicleParams::new(1500.0, 2.011, 1.409, 4.672),
    VehicleParams::new(1320.0, 1.911, 1.389, 4.263),
    VehicleParams::new(1670.0, 2.107, 1.514, 5.038),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    /// $
    pub gamma1: f64,
    /// $/MW
    pub gamma2: f64,
    /// $/MW²
    pub gamma3: f64,
}

impl GeneratorParams {
    const fn new(gamma1: f64, gamma2: f64, gamma3: f64) -> Self {
        Self { gamma1, gamma2, gamma3 }
    }
}

pub const GENERATOR_TABLE: [GeneratorParams; 6] = [
    GeneratorParams::new(7.0, 36.80, 0.27),
    GeneratorParams::new(20.0, 13.73, 0.15),
    GeneratorParams::new(60.0, 17.14, 0.23),
    GeneratorParams::new(15.0, 20.41, 0.10),
    GeneratorParams::new(10.0, 15.28, 0.18),
    GeneratorParams::new(55.0, 14.07, 0.32),
];

/// Formation anchors `d_i ∈ ℝ²`; the target relative positions are `d_i − d_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSpec {
    pub offsets: Vec<[f64; 2]>,
}

impl FormationSpec {
    /// Ten-point star: `d_k = r_k(cos θ_k, sin θ_k)`, `θ_k = π/2 + kπ/5`,
    /// radius `outer` on even `k` and `inner` on odd `k`.
    pub fn star(outer: f64, inner: f64) -> Self {
        let offsets = (0..10)
            .map(|k| {
                let theta = PI / 2.0 + k as f64 * (2.0 * PI / 10.0);
                let r = if k % 2 == 0 { outer } else { inner };
                [r * theta.cos(), r * theta.sin()]
            })
            .collect();
        Self { offsets }
    }

    /// Inner radius of a regular five-pointed star with outer radius `outer`.
    pub fn regular_inner_radius(outer: f64) -> f64 {
        outer * (PI / 10.0).sin() / (3.0 * PI / 10.0).sin()
    }

    pub fn n(&self) -> usize {
        self.offsets.len()
    }
}

impl Default for FormationSpec {
    fn default() -> Self {
        Self::star(10.0, Self::regular_inner_radius(10.0))
    }
}

/// `J_i = (1/2N)‖p_i − 2d_i‖² + (1/N) p_iᵀ Σ_j p_j`.
#[derive(Debug, Clone)]
pub struct VehicleFormationGame {
    offsets: Vec<[f64; 2]>,
}

impl VehicleFormationGame {
    pub fn new(spec: &FormationSpec) -> Self {
        Self { offsets: spec.offsets.clone() }
    }
}

impl Game for VehicleFormationGame {
    fn n_players(&self) -> usize {
        self.offsets.len()
    }

    fn decision_dim(&self) -> usize {
        2
    }

    fn gradient(&self, i: usize, profile: &[f64], out: &mut [f64]) {
        let n = self.offsets.len() as f64;
        for c in 0..2 {
            let total: f64 = profile.iter().skip(c).step_by(2).sum();
            out[c] = (2.0 * profile[2 * i + c] - 2.0 * self.offsets[i][c] + total) / n;
        }
    }

    fn cost(&self, i: usize, profile: &[f64]) -> Option<f64> {
        let n = self.offsets.len() as f64;
        let mut j = 0.0;
        for c in 0..2 {
            let p = profile[2 * i + c];
            let total: f64 = profile.iter().skip(c).step_by(2).sum();
            j += (p - 2.0 * self.offsets[i][c]).powi(2) / (2.0 * n) + p * total / n;
        }
        Some(j)
    }
}

/// Quadratic aerodynamic drag plus constant mechanical drag,
/// `f(p, v) = −(ρAC_d/2m) v ⊙ |v| − d_m/m`.
#[derive(Debug, Clone, Copy)]
pub struct VehicleDrag {
    quad: f64,
    constant: f64,
}

impl VehicleDrag {
    pub fn new(params: &VehicleParams, rho: f64) -> Self {
        Self {
            quad: rho * params.area * params.drag_coeff / (2.0 * params.mass),
            constant: params.mech_drag / params.mass,
        }
    }
}

impl Drift for VehicleDrag {
    fn eval(&self, chain: &[f64], out: &mut [f64]) {
        let v = &chain[2..4];
        for c in 0..2 {
            out[c] = -self.quad * v[c] * v[c].abs() - self.constant;
        }
    }
}

/// `p_i* = d_i − Σ_j d_j / (N + 2)`.
pub fn vehicle_nash_oracle(spec: &FormationSpec) -> Vec<f64> {
    let n = spec.n() as f64;
    let mut sum = [0.0; 2];
    for d in &spec.offsets {
        sum[0] += d[0];
        sum[1] += d[1];
    }
    spec.offsets
        .iter()
        .flat_map(|d| [d[0] - sum[0] / (n + 2.0), d[1] - sum[1] / (n + 2.0)])
        .collect()
}

/// `J_i = c_i(P_i) − p(σ)P_i` with `c_i = γ₁ + γ₂P + γ₃P²` and price
/// `p = a − b·Σ_j P_j` (`a = 200`, `b = 0.1` by default).
#[derive(Debug, Clone)]
pub struct TurbineMarketGame {
    generators: Vec<GeneratorParams>,
    price_intercept: f64,
    price_slope: f64,
}

impl TurbineMarketGame {
    pub fn new(generators: &[GeneratorParams], price_intercept: f64, price_slope: f64) -> Self {
        Self { generators: generators.to_vec(), price_intercept, price_slope }
    }

    pub fn price(&self, total: f64) -> f64 {
        self.price_intercept - self.price_slope * total
    }
}

impl Game for TurbineMarketGame {
    fn n_players(&self) -> usize {
        self.generators.len()
    }

    fn decision_dim(&self) -> usize {
        1
    }

    fn gradient(&self, i: usize, profile: &[f64], out: &mut [f64]) {
        let g = &self.generators[i];
        let total: f64 = profile.iter().sum();
        out[0] = g.gamma2 + 2.0 * g.gamma3 * profile[i] - self.price(total) + self.price_slope * profile[i];
    }

    fn cost(&self, i: usize, profile: &[f64]) -> Option<f64> {
        let g = &self.generators[i];
        let p = profile[i];
        let total: f64 = profile.iter().sum();
        Some(g.gamma1 + g.gamma2 * p + g.gamma3 * p * p - self.price(total) * p)
    }
}

/// Solves `(diag(2γ₃ + b) + b·11ᵀ) P = a − γ₂` directly.
pub fn turbine_nash_oracle(game: &TurbineMarketGame) -> Result<Vec<f64>> {
    let n = game.generators.len();
    let b = game.price_slope;
    let mut a = DMatrix::from_element(n, n, b);
    let mut rhs = DVector::zeros(n);
    for (i, g) in game.generators.iter().enumerate() {
        a[(i, i)] += 2.0 * g.gamma3 + b;
        rhs[i] = game.price_intercept - g.gamma2;
    }
    let sol = a.clone().lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let residual = (&a * &sol - &rhs).amax();
    let scale = rhs.amax().max(1.0);
    if !sol.iter().all(|v| v.is_finite()) || residual > 1e-10 * scale {
        return Err(Error::SingularSystem);
    }
    let x: Vec<f64> = sol.iter().copied().collect();
    debug_assert!(inf_norm(&pseudo_gradient(game, &x)?) < 1e-8 * scale);
    Ok(x)
}

/// Cycle where node `i` (one-based) receives from `(i mod N) + 1` with
/// weight `1 + 0.1(i − 1)`.
pub fn default_cycle_graph(n: usize) -> Result<Digraph> {
    Digraph::directed_cycle(n, |i| 1.0 + 0.1 * i as f64)
}

/// Six-node cycle plus the chord `(1, 4)` with weight 0.5.
pub fn default_turbine_graph() -> Result<Digraph> {
    let cycle = default_cycle_graph(6)?;
    let mut w = cycle.weights().clone();
    w[(0, 3)] = 0.5;
    Digraph::new(w)
}

pub struct VehicleFormation {
    pub game: VehicleFormationGame,
    pub plants: Vec<Plant>,
    pub graph: Digraph,
    pub formation: FormationSpec,
    pub params: Vec<VehicleParams>,
    pub rho: f64,
}

/// Ten vehicles, planar positions, second-order drag dynamics.
pub fn build_vehicle_formation() -> VehicleFormation {
    build_vehicle_formation_with(&VEHICLE_TABLE, AIR_DENSITY, FormationSpec::default(), None)
        .expect("built-in vehicle scenario is consistent")
}

pub fn build_vehicle_formation_with(
    params: &[VehicleParams],
    rho: f64,
    formation: FormationSpec,
    graph: Option<Digraph>,
) -> Result<VehicleFormation> {
    if params.len() != formation.n() || formation.n() < 2 {
        return Err(Error::ConfigInvalid(format!(
            "vehicle table has {} rows but the formation has {} anchors (need >= 2)",
            params.len(),
            formation.n()
        )));
    }
    for (k, p) in params.iter().enumerate() {
        if ![p.mass, p.area, p.drag_coeff, p.mech_drag].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::ConfigInvalid(format!("vehicle {} parameters must be positive", k + 1)));
        }
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::ConfigInvalid(format!("air density must be positive, got {rho}")));
    }
    let graph = match graph {
        Some(g) => g,
        None => default_cycle_graph(params.len())?,
    };
    let plants = params
        .iter()
        .map(|p| Plant::new(2, 2, Arc::new(VehicleDrag::new(p, rho))))
        .collect();
    Ok(VehicleFormation {
        game: VehicleFormationGame::new(&formation),
        plants,
        graph,
        formation,
        params: params.to_vec(),
        rho,
    })
}

pub struct TurbineMarket {
    pub game: TurbineMarketGame,
    pub plants: Vec<Plant>,
    pub graph: Digraph,
}

/// Six generators, scalar power, pure fourth-order integrator plants.
pub fn build_turbine_market() -> TurbineMarket {
    build_turbine_market_with(&GENERATOR_TABLE, 200.0, 0.1, None).expect("built-in turbine scenario is consistent")
}

pub fn build_turbine_market_with(
    generators: &[GeneratorParams],
    price_intercept: f64,
    price_slope: f64,
    graph: Option<Digraph>,
) -> Result<TurbineMarket> {
    if generators.is_empty() {
        return Err(Error::ConfigInvalid("turbine market needs at least one generator".into()));
    }
    let graph = match graph {
        Some(g) => g,
        None if generators.len() == GENERATOR_TABLE.len() => default_turbine_graph()?,
        None => default_cycle_graph(generators.len())?,
    };
    Ok(TurbineMarket {
        game: TurbineMarketGame::new(generators, price_intercept, price_slope),
        plants: vec![Plant::integrator_chain(4, 1); generators.len()],
        graph,
    })
}
