//! Flipped Legendre–Gauss–Radau points, quadrature weights and barycentric
//! Lagrange interpolation.
//!
//! The collocation points are the negated standard (left) Radau points, so
//! the right endpoint `+1` is collocated while `-1` is carried along as the
//! extra non-collocated node `tau_0` used by the state polynomial.

use crate::error::{check_len, Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITERS: usize = 100;

/// Legendre values `P_0(x)..P_n(x)` and derivatives `P_0'(x)..P_n'(x)`.
pub fn legendre_table(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    p[0] = 1.0;
    if n >= 1 {
        p[1] = x;
        dp[1] = 1.0;
    }
    for k in 1..n {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
    }
    (p, dp)
}

/// Legendre polynomial `P_n(x)`.
pub fn legendre(n: usize, x: f64) -> f64 {
    legendre_table(n, x).0[n]
}

/// Standard (left-endpoint) Radau points and weights: `x_0 = -1` and the
/// remaining roots of `P_{N-1} + P_N`, in increasing order.
pub fn standard_lgr_points(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::ZeroCollocationPoints);
    }
    let nf = n as f64;
    let mut x = vec![-1.0; n];
    for (k, xk) in x.iter_mut().enumerate().skip(1) {
        // Chebyshev–Gauss–Radau guess
        let mut t = -(2.0 * std::f64::consts::PI * k as f64 / (2.0 * nf - 1.0)).cos();
        for _ in 0..NEWTON_MAX_ITERS {
            let (p, dp) = legendre_table(n, t);
            let g = p[n - 1] + p[n];
            let dg = dp[n - 1] + dp[n];
            let step = g / dg;
            t -= step;
            if step.abs() <= NEWTON_TOL * t.abs().max(1.0) {
                break;
            }
        }
        *xk = t;
    }
    x.sort_by(|a, b| a.total_cmp(b));
    if x.windows(2).any(|w| w[1] <= w[0]) || x[n - 1] >= 1.0 || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonConvergence {
            what: "Radau root finding",
            iterations: NEWTON_MAX_ITERS,
        });
    }

    let n2 = nf * nf;
    let w = x
        .iter()
        .enumerate()
        .map(|(k, &xk)| {
            if k == 0 {
                2.0 / n2
            } else {
                // (1 - x) / (N^2 P_{N-1}^2) rewritten through g' = P'_{N-1} + P'_N,
                // which is insensitive to the last bits of the root
                let dp = legendre_table(n, xk).1;
                let dg = dp[n - 1] + dp[n];
                4.0 / ((1.0 - xk) * dg * dg)
            }
        })
        .collect();
    Ok((x, w))
}

/// Gauss–Legendre rule with `q` points on `[-1, 1]`, exact to degree `2q - 1`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    let qf = q as f64;
    for i in 1..=q {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (qf + 0.5)).cos();
        let mut dpq = 1.0;
        for _ in 0..NEWTON_MAX_ITERS {
            let (p, dp) = legendre_table(q, x);
            dpq = dp[q];
            let step = p[q] / dpq;
            x -= step;
            if step.abs() <= NEWTON_TOL {
                let (_, dp) = legendre_table(q, x);
                dpq = dp[q];
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dpq * dpq));
    }
    (nodes, weights)
}

/// Flipped Radau collocation scheme on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationScheme {
    n_colloc: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl CollocationScheme {
    pub fn n_colloc(&self) -> usize {
        self.n_colloc
    }

    /// `tau_0 = -1, tau_1, ..., tau_N = 1`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// The collocated nodes `tau_1..tau_N`.
    pub fn collocation_nodes(&self) -> &[f64] {
        &self.nodes[1..]
    }

    /// Quadrature weights `omega_1..omega_N`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn last_weight(&self) -> f64 {
        self.weights[self.n_colloc - 1]
    }

    /// Basis on all `N + 1` nodes (state polynomials of degree `N`).
    pub fn state_basis(&self) -> LagrangeBasis {
        LagrangeBasis::new(&self.nodes)
    }

    /// Basis on the `N` collocation nodes (costate polynomials of degree `N - 1`).
    pub fn costate_basis(&self) -> LagrangeBasis {
        LagrangeBasis::new(self.collocation_nodes())
    }
}

/// Builds the flipped Radau scheme with `n` collocation points.
pub fn compute_lgr_scheme(n: usize) -> Result<CollocationScheme> {
    let (x, w) = standard_lgr_points(n)?;
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(-1.0);
    nodes.extend(x.iter().rev().map(|v| -v));
    // the flip of x_0 = -1 is exactly +1
    nodes[n] = 1.0;
    let weights = w.into_iter().rev().collect();
    Ok(CollocationScheme {
        n_colloc: n,
        nodes,
        weights,
    })
}

/// `sum_i omega_i * samples_i`, with `samples_i = g(tau_i)` for `i = 1..N`.
pub fn quadrature(scheme: &CollocationScheme, samples: &[f64]) -> Result<f64> {
    check_len("quadrature samples", scheme.n_colloc, samples.len())?;
    Ok(scheme.weights.iter().zip(samples).map(|(w, s)| w * s).sum())
}

/// Lagrange basis on a set of distinct support nodes, stored in barycentric form.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    support_nodes: Vec<f64>,
    barycentric_weights: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let (lo, hi) = nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        // rescale differences by 4 / (interval length) to keep products in range
        let scale = if hi > lo { 4.0 / (hi - lo) } else { 1.0 };
        let barycentric_weights = nodes
            .iter()
            .enumerate()
            .map(|(j, &xj)| {
                let prod: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, &xk)| scale * (xj - xk))
                    .product();
                1.0 / prod
            })
            .collect();
        Self {
            support_nodes: nodes.to_vec(),
            barycentric_weights,
        }
    }

    pub fn support_nodes(&self) -> &[f64] {
        &self.support_nodes
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.barycentric_weights
    }

    pub fn len(&self) -> usize {
        self.support_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support_nodes.is_empty()
    }

    /// Values `L_j(t)` of every basis function at `t`.
    pub fn eval_basis(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        if let Some(i) = self.support_nodes.iter().position(|&x| x == t) {
            let mut out = vec![0.0; n];
            out[i] = 1.0;
            return out;
        }
        let terms: Vec<f64> = self
            .support_nodes
            .iter()
            .zip(&self.barycentric_weights)
            .map(|(&x, &w)| w / (t - x))
            .collect();
        let denom: f64 = terms.iter().sum();
        terms.into_iter().map(|v| v / denom).collect()
    }

    /// Derivatives `L_j'(x_i)` on the support nodes.
    pub fn differentiation_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let x = &self.support_nodes;
        let w = &self.barycentric_weights;
        let mut d = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j {
                    let v = (w[j] / w[i]) / (x[i] - x[j]);
                    d[(i, j)] = v;
                    diag -= v;
                }
            }
            d[(i, i)] = diag;
        }
        d
    }
}

/// Value at `t` of the interpolating polynomial through `(support_nodes, values)`.
pub fn interpolate(basis: &LagrangeBasis, values: &[f64], t: f64) -> Result<f64> {
    check_len("interpolation values", basis.len(), values.len())?;
    if let Some(i) = basis.support_nodes.iter().position(|&x| x == t) {
        return Ok(values[i]);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&x, &w), &v) in basis
        .support_nodes
        .iter()
        .zip(&basis.barycentric_weights)
        .zip(values)
    {
        let c = w / (t - x);
        num += c * v;
        den += c;
    }
    Ok(num / den)
}
