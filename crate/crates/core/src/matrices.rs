//! State and costate differentiation matrices of the flipped Radau scheme,
//! their inverses, and the inverse-norm scans.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::radau::{compute_lgr_scheme, gauss_legendre, CollocationScheme, LagrangeBasis};

/// Differentiation matrices built from one [`CollocationScheme`].
#[derive(Debug, Clone)]
pub struct CollocationMatrices {
    /// `N x (N+1)`, `D_ij = L_j'(tau_i)` for `i = 1..N`, `j = 0..N`.
    pub d: DMatrix<f64>,
    /// Columns `1..N` of `d`.
    pub d_tail: DMatrix<f64>,
    /// Differentiation matrix for degree `N-1` polynomials on `tau_1..tau_N`.
    pub d_dagger: DMatrix<f64>,
    /// Costate matrix `-(omega_j / omega_i) D_ji`.
    pub d_ddagger: DMatrix<f64>,
    pub scheme: CollocationScheme,
}

impl CollocationMatrices {
    pub fn new(scheme: &CollocationScheme) -> Self {
        let n = scheme.n_colloc();
        let full = scheme.state_basis().differentiation_matrix();
        let d = full.rows(1, n).into_owned();
        let d_tail = d.columns(1, n).into_owned();
        let d_dagger = scheme.costate_basis().differentiation_matrix();
        let w = scheme.weights();
        let d_ddagger = DMatrix::from_fn(n, n, |i, j| -(w[j] / w[i]) * d_tail[(j, i)]);
        Self {
            d,
            d_tail,
            d_dagger,
            d_ddagger,
            scheme: scheme.clone(),
        }
    }

    pub fn n_colloc(&self) -> usize {
        self.scheme.n_colloc()
    }
}

pub fn build_matrices(scheme: &CollocationScheme) -> CollocationMatrices {
    CollocationMatrices::new(scheme)
}

/// Inverse through LU with partial pivoting.
pub(crate) fn lu_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular(context))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(context))
    }
}

pub fn invert_tail(m: &CollocationMatrices) -> Result<DMatrix<f64>> {
    lu_inverse(&m.d_tail, "D_tail inverse")
}

pub fn invert_ddagger(m: &CollocationMatrices) -> Result<DMatrix<f64>> {
    lu_inverse(&m.d_ddagger, "D_ddagger inverse")
}

/// Closed-form inverse of the costate matrix.
///
/// With `M_j` the Lagrange basis on `tau_1..tau_{N-1}`:
/// `inv_ij = omega_N M_j(1) + int_1^{tau_i} M_j` for `i, j < N`,
/// `inv_iN = -omega_N`, and `inv_Nj = omega_N M_j(1)`.
pub fn ddagger_inverse_analytic(scheme: &CollocationScheme) -> DMatrix<f64> {
    let n = scheme.n_colloc();
    let wn = scheme.last_weight();
    let mut inv = DMatrix::from_element(n, n, -wn);
    if n == 1 {
        return inv;
    }
    let tau = scheme.collocation_nodes();
    let basis = LagrangeBasis::new(&tau[..n - 1]);
    let at_one = basis.eval_basis(1.0);

    // M_j has degree N-2; q points integrate degree 2q-1 exactly
    let q = 64.max(n.div_ceil(2));
    let (gx, gw) = gauss_legendre(q);

    for i in 0..n - 1 {
        let half = 0.5 * (1.0 - tau[i]);
        let mid = 0.5 * (1.0 + tau[i]);
        let mut integral = vec![0.0; n - 1];
        for (&s, &w) in gx.iter().zip(&gw) {
            let vals = basis.eval_basis(mid + half * s);
            for (acc, v) in integral.iter_mut().zip(vals) {
                *acc += w * half * v;
            }
        }
        for j in 0..n - 1 {
            // integral runs from 1 down to tau_i
            inv[(i, j)] = wn * at_one[j] - integral[j];
        }
    }
    for j in 0..n - 1 {
        inv[(n - 1, j)] = wn * at_one[j];
    }
    inv
}

/// Largest absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Euclidean row norms of `inv * W^{-1/2}`, i.e. of `[W^{1/2} M]^{-1}` when
/// `inv = M^{-1}`.
pub fn weighted_row_norms(inv: &DMatrix<f64>, weights: &[f64]) -> Vec<f64> {
    inv.row_iter()
        .map(|r| {
            r.iter()
                .zip(weights)
                .map(|(v, w)| v * v / w)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropertyReport {
    pub n: usize,
    /// `||D_tail^{-1}||_inf`
    pub p1_norm: f64,
    /// max row norm of `[W^{1/2} D_tail]^{-1}`
    pub p2_row_norm_max: f64,
    /// `||D_ddagger^{-1}||_inf`
    pub p3_norm: f64,
    /// max row norm of `[W^{1/2} D_ddagger]^{-1}`
    pub p4_row_norm_max: f64,
}

pub fn property_report(m: &CollocationMatrices) -> Result<PropertyReport> {
    let w = m.scheme.weights();
    let tail_inv = invert_tail(m)?;
    let dd_inv = invert_ddagger(m)?;
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    Ok(PropertyReport {
        n: m.n_colloc(),
        p1_norm: inf_norm(&tail_inv),
        p2_row_norm_max: max(weighted_row_norms(&tail_inv, w)),
        p3_norm: inf_norm(&dd_inv),
        p4_row_norm_max: max(weighted_row_norms(&dd_inv, w)),
    })
}

/// Property reports for every `n` in `ns`, one independent task per entry.
pub fn property_table(ns: &[usize], exec: Execution) -> Vec<Result<PropertyReport>> {
    exec.map(ns, |&n| {
        let scheme = compute_lgr_scheme(n)?;
        property_report(&CollocationMatrices::new(&scheme))
    })
}
