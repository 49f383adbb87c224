//! Cost-gradient oracles, the stacked pseudo-gradient, an independent Nash
//! solver and empirical monotonicity/Lipschitz probes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{euclidean_norm, inf_norm};

/// A smooth noncooperative game supplied through gradient oracles.
///
/// `profile` is always a full `N·m` decision profile as seen by player `i`:
/// its own decision in block `i` and (true or estimated) decisions of the
/// other players elsewhere.
pub trait Game: Send + Sync {
    fn n_players(&self) -> usize;

    fn decision_dim(&self) -> usize;

    /// Writes `∇_{x_i} J_i` evaluated at `profile` into `out` (length `m`).
    fn gradient(&self, i: usize, profile: &[f64], out: &mut [f64]);

    /// `J_i(profile)`, when the game can evaluate costs. Used only to
    /// validate gradients by finite differences.
    fn cost(&self, _i: usize, _profile: &[f64]) -> Option<f64> {
        None
    }

    fn profile_len(&self) -> usize {
        self.n_players() * self.decision_dim()
    }
}

/// `F(x)`: every player's gradient at the true profile.
pub fn pseudo_gradient(game: &dyn Game, x: &[f64]) -> Result<Vec<f64>> {
    check_len("decision profile", game.profile_len(), x.len())?;
    let m = game.decision_dim();
    let mut out = vec![0.0; x.len()];
    for (i, block) in out.chunks_mut(m).enumerate() {
        game.gradient(i, x, block);
    }
    Ok(out)
}

/// `F(x, x̂)`: player `i`'s gradient at its own decision `x_i` and its
/// estimates of the others. `x_hat` holds player `i`'s `N·m` estimate block
/// at offset `i·N·m`.
pub fn extended_pseudo_gradient(game: &dyn Game, x: &[f64], x_hat: &[f64]) -> Result<Vec<f64>> {
    let len = game.profile_len();
    check_len("decision profile", len, x.len())?;
    check_len("estimate stack", len * game.n_players(), x_hat.len())?;
    let m = game.decision_dim();
    let mut out = vec![0.0; len];
    let mut profile = vec![0.0; len];
    for i in 0..game.n_players() {
        profile.copy_from_slice(&x_hat[i * len..(i + 1) * len]);
        profile[i * m..(i + 1) * m].copy_from_slice(&x[i * m..(i + 1) * m]);
        game.gradient(i, &profile, &mut out[i * m..(i + 1) * m]);
    }
    Ok(out)
}

/// `J_i(x_i, x_{-i}) = ½‖x_i‖²`, so `F(x) = x`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    pub n_players: usize,
    pub dim: usize,
}

impl Game for QuadraticGame {
    fn n_players(&self) -> usize {
        self.n_players
    }

    fn decision_dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, i: usize, profile: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&profile[i * self.dim..(i + 1) * self.dim]);
    }

    fn cost(&self, i: usize, profile: &[f64]) -> Option<f64> {
        let own = &profile[i * self.dim..(i + 1) * self.dim];
        Some(0.5 * own.iter().map(|v| v * v).sum::<f64>())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NashOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Relative finite-difference step; the absolute step is `fd_step·max(1, ‖x‖)`.
    pub fd_step: f64,
    pub flow_max_steps: usize,
}

impl Default for NashOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            max_halvings: 40,
            fd_step: 1e-6,
            flow_max_steps: 200_000,
        }
    }
}

/// Central-difference Jacobian of the pseudo-gradient.
pub fn pseudo_gradient_jacobian(game: &dyn Game, x: &[f64], rel_step: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let h = rel_step * euclidean_norm(x).max(1.0);
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for k in 0..n {
        probe[k] = x[k] + h;
        let fp = pseudo_gradient(game, &probe)?;
        probe[k] = x[k] - h;
        let fm = pseudo_gradient(game, &probe)?;
        probe[k] = x[k];
        for r in 0..n {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Finds `x*` with `‖F(x*)‖_∞ ≤ tol` by damped Newton on `F`, falling back to
/// the forward-Euler pseudo-gradient flow `ẋ = −F(x)` if Newton stalls.
pub fn nash_solve(game: &dyn Game, x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    nash_solve_with(game, x0, tol, &NashOptions::default())
}

pub fn nash_solve_with(game: &dyn Game, x0: &[f64], tol: f64, opts: &NashOptions) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut f = pseudo_gradient(game, &x)?;

    for _ in 0..opts.max_iterations {
        if inf_norm(&f) <= tol {
            return Ok(x);
        }
        let jac = pseudo_gradient_jacobian(game, &x, opts.fd_step)?;
        let Some(step) = jac.lu().solve(&DVector::from_iterator(f.len(), f.iter().map(|v| -v))) else {
            break;
        };
        let merit = euclidean_norm(&f);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + t * di).collect();
            let f_trial = pseudo_gradient(game, &trial)?;
            if euclidean_norm(&f_trial) < merit {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, fn_)) => {
                x = xn;
                f = fn_;
            }
            None => break,
        }
    }
    if inf_norm(&f) <= tol {
        return Ok(x);
    }
    pseudo_gradient_flow(game, x, tol, opts)
}

fn pseudo_gradient_flow(game: &dyn Game, mut x: Vec<f64>, tol: f64, opts: &NashOptions) -> Result<Vec<f64>> {
    let jac = pseudo_gradient_jacobian(game, &x, opts.fd_step)?;
    let h = 1.0 / jac.norm().max(1e-12);
    let mut f = pseudo_gradient(game, &x)?;
    for _ in 0..opts.flow_max_steps {
        if inf_norm(&f) <= tol {
            return Ok(x);
        }
        if !f.iter().all(|v| v.is_finite()) {
            break;
        }
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi -= h * fi;
        }
        f = pseudo_gradient(game, &x)?;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations + opts.flow_max_steps,
        residual: inf_norm(&f),
    })
}

/// Empirical strong-monotonicity and Lipschitz constants of the pseudo-gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    /// `min (x−y)ᵀ(F(x)−F(y)) / ‖x−y‖²` over the sampled pairs.
    pub omega_hat: f64,
    /// `max ‖F(x)−F(y)‖ / ‖x−y‖` over the sampled pairs.
    pub theta_hat: f64,
    /// `max ‖F(x, x̂)−F(x, x̂')‖ / ‖x̂−x̂'‖` with `x` held fixed.
    pub theta_hat_estimates: f64,
    pub samples: usize,
}

/// Samples `n_samples` point pairs uniformly from `[lo, hi]` per coordinate.
/// Coincident pairs are skipped.
pub fn probe_monotonicity<R: Rng + ?Sized>(
    game: &dyn Game,
    rng: &mut R,
    n_samples: usize,
    bounds: (f64, f64),
) -> Result<MonotonicityReport> {
    let len = game.profile_len();
    let n = game.n_players();
    let (lo, hi) = bounds;
    let sample = |rng: &mut R, k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(lo..=hi)).collect() };

    let mut omega = f64::INFINITY;
    let mut theta: f64 = 0.0;
    let mut theta_est: f64 = 0.0;
    let mut used = 0;
    for _ in 0..n_samples {
        let x = sample(rng, len);
        let y = sample(rng, len);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist2: f64 = diff.iter().map(|d| d * d).sum();
        if dist2 > 0.0 {
            let fx = pseudo_gradient(game, &x)?;
            let fy = pseudo_gradient(game, &y)?;
            let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
            let inner: f64 = diff.iter().zip(&df).map(|(a, b)| a * b).sum();
            omega = omega.min(inner / dist2);
            theta = theta.max(euclidean_norm(&df) / dist2.sqrt());
            used += 1;
        }

        let e1 = sample(rng, len * n);
        let e2 = sample(rng, len * n);
        let de: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a - b).collect();
        let de_norm = euclidean_norm(&de);
        if de_norm > 0.0 {
            let g1 = extended_pseudo_gradient(game, &x, &e1)?;
            let g2 = extended_pseudo_gradient(game, &x, &e2)?;
            let dg: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
            theta_est = theta_est.max(euclidean_norm(&dg) / de_norm);
        }
    }
    Ok(MonotonicityReport {
        omega_hat: omega,
        theta_hat: theta,
        theta_hat_estimates: theta_est,
        samples: used,
    })
}

/// Largest relative gap, `‖∇ − ∇_fd‖_∞ / max(1, ‖∇‖_∞)`, between the gradient
/// oracle and central differences of the cost oracle at `x`. `None` when the
/// game has no cost oracle.
pub fn gradient_fd_error(game: &dyn Game, x: &[f64]) -> Result<Option<f64>> {
    check_len("decision profile", game.profile_len(), x.len())?;
    if game.cost(0, x).is_none() {
        return Ok(None);
    }
    let m = game.decision_dim();
    let h = 1e-6 * euclidean_norm(x).max(1.0);
    let analytic = pseudo_gradient(game, x)?;
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..game.n_players() {
        let mut fd = vec![0.0; m];
        for (c, slot) in fd.iter_mut().enumerate() {
            let k = i * m + c;
            probe[k] = x[k] + h;
            let jp = game.cost(i, &probe).unwrap_or(f64::NAN);
            probe[k] = x[k] - h;
            let jm = game.cost(i, &probe).unwrap_or(f64::NAN);
            probe[k] = x[k];
            *slot = (jp - jm) / (2.0 * h);
        }
        let g = &analytic[i * m..(i + 1) * m];
        let gap = g.iter().zip(&fd).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        worst = worst.max(gap / inf_norm(g).max(1.0));
    }
    Ok(Some(worst))
}
