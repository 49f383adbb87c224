//! Gain machinery and the two seeking laws.
//!
//! The right-hand sides here see only what a controller may see: its own
//! derivative chain (state feedback) or its output alone (output feedback),
//! its auxiliary and estimate states, a gradient evaluated at its estimates,
//! and in-neighbour messages. Nothing in this module can reach a plant's
//! drift or hidden parameter.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Binomial coefficients of `(s+1)^(n−1)` without the leading one, constant
/// term first: `k_1, …, k_{n−1}`.
pub fn default_hurwitz_gains(n: usize) -> Vec<f64> {
    assert!(n >= 1, "order must be at least 1");
    binomial_tail(n - 1)
}

/// Coefficients `β_1, …, β_n` of `(s+1)^n = s^n + β_1 s^{n−1} + … + β_n`.
pub fn default_observer_gains(n: usize) -> Vec<f64> {
    assert!(n >= 1, "order must be at least 1");
    let row = binomial_row(n);
    row[1..].to_vec()
}

fn binomial_row(d: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..d {
        let mut next = vec![1.0; row.len() + 1];
        for k in 1..row.len() {
            next[k] = row[k - 1] + row[k];
        }
        row = next;
    }
    row
}

fn binomial_tail(d: usize) -> Vec<f64> {
    // Symmetric, so ascending and descending orders coincide.
    let row = binomial_row(d);
    row[..d].to_vec()
}

/// Monic polynomial `s^{n−1} + k_{n−1}s^{n−2} + … + k_1`, leading coefficient first.
pub fn gain_polynomial(k: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(k.iter().rev().copied()).collect()
}

/// `s^n + β_1 s^{n−1} + … + β_n`, leading coefficient first.
pub fn observer_polynomial(beta: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(beta.iter().copied()).collect()
}

/// `[0 | I_{n−2}]` on top of the row `[−k_1, …, −k_{n−1}]`.
pub fn companion_matrix(k: &[f64]) -> Result<DMatrix<f64>> {
    let d = k.len();
    if d == 0 {
        return Err(Error::EmptyGains);
    }
    let mut a = DMatrix::zeros(d, d);
    for r in 0..d - 1 {
        a[(r, r + 1)] = 1.0;
    }
    for (c, kc) in k.iter().enumerate() {
        a[(d - 1, c)] = -kc;
    }
    Ok(a)
}

/// Routh–Hurwitz test for roots strictly in the open left half plane.
/// Any zero (or sign change) in the first column is treated as unstable.
pub fn routh_hurwitz_stable(coeffs: &[f64]) -> bool {
    let Some(&lead) = coeffs.first() else {
        return false;
    };
    if lead == 0.0 || coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let sign = lead.signum();
    let c: Vec<f64> = coeffs.iter().map(|v| v * sign).collect();
    let degree = c.len() - 1;
    if degree == 0 {
        return true;
    }
    let scale = c.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let zero_tol = 1e-12 * scale;

    let width = degree / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|j| c.get(2 * j).copied().unwrap_or(0.0)).collect();
    let mut curr: Vec<f64> = (0..width).map(|j| c.get(2 * j + 1).copied().unwrap_or(0.0)).collect();
    if prev[0] <= zero_tol {
        return false;
    }
    for _ in 1..=degree {
        if curr[0] <= zero_tol {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|j| {
                let a = prev.get(j + 1).copied().unwrap_or(0.0);
                let b = curr.get(j + 1).copied().unwrap_or(0.0);
                (curr[0] * a - prev[0] * b) / curr[0]
            })
            .collect();
        prev = curr;
        curr = next;
    }
    true
}

/// Solves `P·A + Aᵀ·P = −I` and checks that `P` is positive definite.
/// The returned `P` is exactly symmetric.
pub fn lyapunov_p(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let rhs = -DMatrix::<f64>::identity(n, n);
    let p = match linalg::solve_lyapunov(a, &rhs) {
        Ok(p) => linalg::symmetric_part(&p),
        Err(Error::SingularLyapunov) => return Err(Error::NotHurwitz),
        Err(e) => return Err(e),
    };
    if !linalg::is_positive_definite(&p) || linalg::lyapunov_residual(&p, a, &rhs) > 1e-8 {
        return Err(Error::NotHurwitz);
    }
    Ok(p)
}

/// Seeking gains for an order-`n` chain; `n = k.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSet {
    pub k: Vec<f64>,
    pub epsilon: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl GainSet {
    /// Validated constructor: positive scalars and a Hurwitz `p(s)`.
    pub fn new(k: Vec<f64>, epsilon: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        let gains = Self { k, epsilon, alpha1, alpha2, alpha3 };
        gains.validate()?;
        Ok(gains)
    }

    /// Binomial `k` for order `n`.
    pub fn with_default_k(n: usize, epsilon: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        Self::new(default_hurwitz_gains(n), epsilon, alpha1, alpha2, alpha3)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::ConfigInvalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !routh_hurwitz_stable(&gain_polynomial(&self.k)) {
            return Err(Error::ConfigInvalid(format!(
                "k = {:?} does not give a Hurwitz polynomial",
                self.k
            )));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.k.len() + 1
    }

    pub fn check_ordering(&self) -> GainOrdering {
        check_gain_ordering(self)
    }
}

/// High-gain observer coefficients `β_1…β_n` and scale `μ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObserverSet {
    pub beta: Vec<f64>,
    pub mu: f64,
}

impl ObserverSet {
    pub fn new(beta: Vec<f64>, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::ConfigInvalid(format!("mu must be positive, got {mu}")));
        }
        if beta.is_empty() || !routh_hurwitz_stable(&observer_polynomial(&beta)) {
            return Err(Error::ConfigInvalid(format!(
                "beta = {beta:?} does not give a Hurwitz polynomial"
            )));
        }
        Ok(Self { beta, mu })
    }

    pub fn with_default_beta(n: usize, mu: f64) -> Result<Self> {
        Self::new(default_observer_gains(n), mu)
    }

    pub fn order(&self) -> usize {
        self.beta.len()
    }
}

/// Advisory check of `ε^{n−1} < α₂ < α₁ < ε^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainOrdering {
    pub lower: bool,
    pub middle: bool,
    pub upper: bool,
    pub warning: Option<String>,
}

impl GainOrdering {
    pub fn passes(&self) -> bool {
        self.lower && self.middle && self.upper
    }
}

pub fn check_gain_ordering(gains: &GainSet) -> GainOrdering {
    let n = gains.order() as i32;
    let lo = gains.epsilon.powi(n - 1);
    let hi = gains.epsilon.powi(n);
    let lower = lo < gains.alpha2;
    let middle = gains.alpha2 < gains.alpha1;
    let upper = gains.alpha1 < hi;
    let mut failed = Vec::new();
    if !lower {
        failed.push(format!("eps^(n-1) = {lo} is not below alpha2 = {}", gains.alpha2));
    }
    if !middle {
        failed.push(format!("alpha2 = {} is not below alpha1 = {}", gains.alpha2, gains.alpha1));
    }
    if !upper {
        failed.push(format!("alpha1 = {} is not below eps^n = {hi}", gains.alpha1));
    }
    let warning = (!failed.is_empty()).then(|| {
        format!(
            "gain ordering eps^(n-1) < alpha2 < alpha1 < eps^n violated ({}); \
             the condition is sufficient only, continuing",
            failed.join("; ")
        )
    });
    GainOrdering { lower, middle, upper, warning }
}

/// Message from in-neighbour `index` carrying weight `a_ij`: its full
/// estimate matrix (`N·m`, row-major) and its current decision (`m`).
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub index: usize,
    pub weight: f64,
    pub estimates: &'a [f64],
    pub decision: &'a [f64],
}

/// One player's controller state, borrowed from the closed-loop state.
///
/// `x_hat` is `N×m` row-major (row `j` estimates player `j`, own row
/// included). `z_chain` is `n×m` (`z, z⁽¹⁾, …, z⁽ⁿ⁻¹⁾`) and present only for
/// output feedback.
#[derive(Debug, Clone, Copy)]
pub struct SeekerState<'a> {
    pub y: &'a [f64],
    pub x_hat: &'a [f64],
    pub z_chain: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFeedback {
    pub u: Vec<f64>,
    pub dy: Vec<f64>,
    pub dx_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFeedback {
    pub u: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz_chain: Vec<f64>,
    pub dx_hat: Vec<f64>,
}

fn check_seeker(i: usize, seeker: &SeekerState, grad: &[f64], neighbors: &[Neighbor], m: usize) -> Result<usize> {
    check_len("gradient", m, grad.len())?;
    check_len("auxiliary state y", m, seeker.y.len())?;
    if m == 0 || !seeker.x_hat.len().is_multiple_of(m) {
        return Err(Error::DimensionMismatch {
            what: "estimate matrix",
            expected: m,
            got: seeker.x_hat.len(),
        });
    }
    let n_players = seeker.x_hat.len() / m;
    if i >= n_players {
        return Err(Error::DimensionMismatch {
            what: "player index",
            expected: n_players,
            got: i,
        });
    }
    for nb in neighbors {
        check_len("neighbour estimates", n_players * m, nb.estimates.len())?;
        check_len("neighbour decision", m, nb.decision.len())?;
        if nb.index >= n_players || nb.index == i {
            return Err(Error::DimensionMismatch {
                what: "neighbour index",
                expected: n_players,
                got: nb.index,
            });
        }
    }
    Ok(n_players)
}

/// `−Σ_l ε^{n−l} k_l d_l − α₁ g − α₂ y` and `Σ_l ε^{1−l} k_l d_l + (α₁/ε^{n−1}) g`,
/// where `d_l` is the `l`-th derivative row of `chain` (row 0 unused).
pub(crate) fn seeking_law_into(chain: &[f64], y: &[f64], grad: &[f64], gains: &GainSet, u: &mut [f64], dy: &mut [f64]) {
    let m = y.len();
    let n = gains.order() as i32;
    let eps = gains.epsilon;
    let scale = gains.alpha1 / eps.powi(n - 1);
    for c in 0..m {
        u[c] = -gains.alpha1 * grad[c] - gains.alpha2 * y[c];
        dy[c] = scale * grad[c];
    }
    for (idx, kl) in gains.k.iter().enumerate() {
        let l = idx as i32 + 1;
        let row = &chain[(idx + 1) * m..(idx + 2) * m];
        let cu = eps.powi(n - l) * kl;
        let cy = eps.powi(1 - l) * kl;
        for c in 0..m {
            u[c] -= cu * row[c];
            dy[c] += cy * row[c];
        }
    }
}

/// Row-wise `−α₃(Σ_k a_ik(x̂ʲᵢ − x̂ʲ_k) + a_ij(x̂ʲᵢ − x_j))` for every `j`.
pub(crate) fn estimate_rhs_into(x_hat: &[f64], neighbors: &[Neighbor], alpha3: f64, m: usize, out: &mut [f64]) {
    out.fill(0.0);
    for nb in neighbors {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot += nb.weight * (x_hat[k] - nb.estimates[k]);
        }
        let j = nb.index;
        for c in 0..m {
            let k = j * m + c;
            out[k] += nb.weight * (x_hat[k] - nb.decision[c]);
        }
    }
    for slot in out.iter_mut() {
        *slot *= -alpha3;
    }
}

/// Observer chain derivatives: `ż⁽ˡ⁻¹⁾ = z⁽ˡ⁾ + (εˡβ_l/μˡ)(x − z)` and
/// `ż⁽ⁿ⁻¹⁾ = (εⁿβ_n/μⁿ)(x − z)`.
pub(crate) fn observer_rhs_into(output: &[f64], z: &[f64], gains: &GainSet, obs: &ObserverSet, out: &mut [f64]) {
    let m = output.len();
    let n = obs.order();
    let ratio = gains.epsilon / obs.mu;
    for l in 1..=n {
        let gain = ratio.powi(l as i32) * obs.beta[l - 1];
        for c in 0..m {
            let innovation = output[c] - z[c];
            let next = if l < n { z[l * m + c] } else { 0.0 };
            out[(l - 1) * m + c] = next + gain * innovation;
        }
    }
}

/// State-feedback seeking law: control input, auxiliary derivative and
/// estimate derivatives for player `i`.
///
/// `chain` is the `n×m` derivative chain `x_i, x_i⁽¹⁾, …, x_i⁽ⁿ⁻¹⁾`; `grad`
/// is `∇_{x_i}J_i` at the player's own decision and current estimates.
pub fn state_feedback_rhs(
    i: usize,
    chain: &[f64],
    seeker: &SeekerState,
    grad: &[f64],
    neighbors: &[Neighbor],
    gains: &GainSet,
) -> Result<StateFeedback> {
    let m = grad.len();
    check_seeker(i, seeker, grad, neighbors, m)?;
    check_len("derivative chain", gains.order() * m, chain.len())?;
    let mut u = vec![0.0; m];
    let mut dy = vec![0.0; m];
    let mut dx_hat = vec![0.0; seeker.x_hat.len()];
    seeking_law_into(chain, seeker.y, grad, gains, &mut u, &mut dy);
    estimate_rhs_into(seeker.x_hat, neighbors, gains.alpha3, m, &mut dx_hat);
    Ok(StateFeedback { u, dy, dx_hat })
}

/// Output-feedback seeking law. Only the output `x_i` reaches the
/// controller; derivative information comes from the observer chain.
pub fn output_feedback_rhs(
    i: usize,
    output: &[f64],
    seeker: &SeekerState,
    grad: &[f64],
    neighbors: &[Neighbor],
    gains: &GainSet,
    obs: &ObserverSet,
) -> Result<OutputFeedback> {
    let m = grad.len();
    check_seeker(i, seeker, grad, neighbors, m)?;
    check_len("output", m, output.len())?;
    check_len("observer order", gains.order(), obs.order())?;
    let z = seeker.z_chain.ok_or(Error::DimensionMismatch {
        what: "observer chain",
        expected: gains.order() * m,
        got: 0,
    })?;
    check_len("observer chain", gains.order() * m, z.len())?;
    let mut u = vec![0.0; m];
    let mut dy = vec![0.0; m];
    let mut dz_chain = vec![0.0; z.len()];
    let mut dx_hat = vec![0.0; seeker.x_hat.len()];
    seeking_law_into(z, seeker.y, grad, gains, &mut u, &mut dy);
    observer_rhs_into(output, z, gains, obs, &mut dz_chain);
    estimate_rhs_into(seeker.x_hat, neighbors, gains.alpha3, m, &mut dx_hat);
    Ok(OutputFeedback { u, dy, dz_chain, dx_hat })
}
