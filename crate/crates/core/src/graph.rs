//! Weighted communication digraphs, their Laplacians and the certificates that
//! justify the estimate dynamics on weight-unbalanced networks.
//!
//! Convention: `weights[(i, j)] = a_ij > 0` means node `i` receives from node
//! `j`. Indices are zero-based in code and one-based in configuration files.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute tolerance for the in-degree/out-degree comparison.
pub const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    weights: DMatrix<f64>,
}

/// One edge as written in a scenario file. `to` receives from `from`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub to: usize,
    pub from: usize,
    pub w: f64,
}

/// `{"n": N, "edges": [{"to": i, "from": j, "w": a_ij}, ...]}`, one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub n: usize,
    pub edges: Vec<EdgeSpec>,
}

impl Digraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::InvalidGraph(format!(
                "weights must be a non-empty square matrix, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weight a_{}{} = {w} must be finite and nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(Error::InvalidGraph(format!("self-loop on node {}", i + 1)));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        if spec.n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut weights = DMatrix::zeros(spec.n, spec.n);
        for e in &spec.edges {
            if e.to == 0 || e.from == 0 || e.to > spec.n || e.from > spec.n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) out of range 1..={}",
                    e.to, e.from, spec.n
                )));
            }
            if weights[(e.to - 1, e.from - 1)] != 0.0 {
                return Err(Error::InvalidGraph(format!("duplicate edge ({}, {})", e.to, e.from)));
            }
            weights[(e.to - 1, e.from - 1)] = e.w;
        }
        Self::new(weights)
    }

    pub fn to_spec(&self) -> GraphSpec {
        let n = self.n_nodes();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w > 0.0 {
                    edges.push(EdgeSpec { to: i + 1, from: j + 1, w });
                }
            }
        }
        GraphSpec { n, edges }
    }

    /// Directed cycle where node `i` receives from node `(i + 1) mod N`,
    /// with weight `weight(i)` (zero-based `i`).
    pub fn directed_cycle(n: usize, weight: impl Fn(usize) -> f64) -> Result<Self> {
        let mut weights = DMatrix::zeros(n, n);
        if n > 1 {
            for i in 0..n {
                weights[(i, (i + 1) % n)] = weight(i);
            }
        }
        Self::new(weights)
    }

    /// Random strongly connected digraph on `n` nodes: a random Hamiltonian
    /// cycle plus every other ordered pair with probability `chord_prob`,
    /// weights uniform in `weight_range`.
    pub fn random_strongly_connected<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        chord_prob: f64,
        weight_range: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = weight_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidGraph(format!("weight range [{lo}, {hi}] must be positive")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut weights = DMatrix::zeros(n, n);
        if n > 1 {
            for k in 0..n {
                weights[(order[k], order[(k + 1) % n])] = rng.random_range(lo..=hi);
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && weights[(i, j)] == 0.0 && rng.random_bool(chord_prob.clamp(0.0, 1.0)) {
                    weights[(i, j)] = rng.random_range(lo..=hi);
                }
            }
        }
        Self::new(weights)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// In-neighbours of `i` with their weights `a_ij`, in index order.
    pub fn in_neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.n_nodes())
            .filter_map(|j| {
                let w = self.weights[(i, j)];
                (w > 0.0).then_some((j, w))
            })
            .collect()
    }

    pub fn in_degrees(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.weights.row(i).iter().sum()).collect()
    }

    pub fn out_degrees(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.weights.column(i).iter().sum()).collect()
    }

    /// `L = D_in − A`. The diagonal is accumulated over the off-diagonal
    /// entries in index order, so summing a row's off-diagonal entries in that
    /// order and then adding the diagonal gives exactly zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut l = -self.weights.clone();
        for i in 0..n {
            let mut off = 0.0;
            for j in 0..n {
                if j != i {
                    off += l[(i, j)];
                }
            }
            l[(i, i)] = -off;
        }
        l
    }

    /// True when every node reaches, and is reached by, node 0 along
    /// positive-weight edges (Kosaraju's criterion for a single component).
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n_nodes();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(v) = stack.pop() {
                for (u, s) in seen.iter_mut().enumerate() {
                    let w = if forward { self.weights[(u, v)] } else { self.weights[(v, u)] };
                    if w > 0.0 && !*s {
                        *s = true;
                        stack.push(u);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    pub fn is_weight_balanced(&self) -> bool {
        self.in_degrees()
            .iter()
            .zip(self.out_degrees())
            .all(|(din, dout)| (din - dout).abs() <= BALANCE_TOL)
    }

    /// `(L ⊗ I_N, M)` for the stacked estimate vector, where the entry for
    /// player `i`'s estimate of player `j` sits at index `i·N + j`.
    pub fn estimation_block_matrix(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_nodes();
        let l_ext = self.laplacian().kronecker(&DMatrix::<f64>::identity(n, n));
        let mut m = DMatrix::zeros(n * n, n * n);
        for i in 0..n {
            for j in 0..n {
                m[(i * n + j, i * n + j)] = self.weights[(i, j)];
            }
        }
        (l_ext, m)
    }

    /// Positive-definiteness and Lyapunov certificate for `S = L ⊗ I_N + M`.
    ///
    /// `S` decouples by estimated player: for fixed `j` the entries `(·, j)`
    /// obey `L + diag(a_1j, …, a_Nj)`. `Q` is assembled from the per-block
    /// solutions and the residual is measured on the full `N²` system.
    pub fn lemma1_certificate(&self) -> Result<GraphCertificate> {
        let n = self.n_nodes();
        let laplacian = self.laplacian();
        let strongly_connected = self.is_strongly_connected();
        let weight_balanced = self.is_weight_balanced();

        let (l_ext, m) = self.estimation_block_matrix();
        let s = &l_ext + &m;
        let min_eig = linalg::symmetric_eigenvalues(&linalg::symmetric_part(&s))[0];

        let eye = DMatrix::<f64>::identity(n, n);
        let mut q = DMatrix::zeros(n * n, n * n);
        let mut solved = true;
        for j in 0..n {
            let block = &laplacian + DMatrix::from_diagonal(&self.weights.column(j).into_owned());
            match linalg::solve_lyapunov(&block, &eye) {
                Ok(qj) => {
                    for a in 0..n {
                        for b in 0..n {
                            q[(a * n + j, b * n + j)] = qj[(a, b)];
                        }
                    }
                }
                Err(Error::SingularLyapunov) if !strongly_connected => {
                    solved = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        let (lyapunov_q, lyapunov_residual, q_positive_definite) = if solved {
            let residual = linalg::lyapunov_residual(&q, &s, &DMatrix::identity(n * n, n * n));
            let pd = linalg::is_positive_definite(&q);
            (Some(q), residual, pd)
        } else {
            (None, f64::INFINITY, false)
        };

        Ok(GraphCertificate {
            laplacian,
            strongly_connected,
            weight_balanced,
            lemma1_min_eig: min_eig,
            lyapunov_q,
            lyapunov_residual,
            q_positive_definite,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GraphCertificate {
    pub laplacian: DMatrix<f64>,
    pub strongly_connected: bool,
    pub weight_balanced: bool,
    /// Smallest eigenvalue of the symmetric part of `L ⊗ I_N + M`.
    pub lemma1_min_eig: f64,
    pub lyapunov_q: Option<DMatrix<f64>>,
    /// `‖Q S + Sᵀ Q − I‖_F`, infinite when no `Q` was found.
    pub lyapunov_residual: f64,
    pub q_positive_definite: bool,
}

impl GraphCertificate {
    /// Symmetric-part test and Lyapunov certificate together.
    pub fn passes(&self, residual_tol: f64) -> bool {
        self.lemma1_min_eig > 0.0 && self.lyapunov_passes(residual_tol)
    }

    /// Only the Lyapunov certificate: `Q` positive definite with a small residual.
    pub fn lyapunov_passes(&self, residual_tol: f64) -> bool {
        self.strongly_connected && self.q_positive_definite && self.lyapunov_residual < residual_tol
    }
}
