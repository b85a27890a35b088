//! Damped Newton iteration on the KKT residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kkt::{combine, jacobian, residual, DiscreteSolution, KktLayout};
use crate::matrices::CollocationMatrices;
use crate::ocp::{map_to_reference, OcpProblem};
use crate::radau::{compute_lgr_scheme, CollocationScheme};

/// A solution on some other scheme used to seed the iteration.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub solution: DiscreteSolution,
    pub scheme: CollocationScheme,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Target for the residual sup-norm.
    pub residual_tol: f64,
    /// Backtracking factor in `(0, 1)`.
    pub damping: f64,
    /// Smallest step fraction tried before giving up.
    pub min_step: f64,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            residual_tol: 1e-11,
            damping: 0.5,
            min_step: 1e-8,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.residual_tol.is_nan() || self.residual_tol <= 0.0 {
            return Err(Error::InvalidConfig("residual_tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1)".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::InvalidConfig("min_step must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    /// Residual sup-norm after the step.
    pub residual: f64,
    /// Accepted step fraction (0 for the initial point).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: DiscreteSolution,
    pub scheme: CollocationScheme,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub step_history: Vec<StepRecord>,
    /// Second-order sufficient condition at the solution (see [`verify_second_order`]).
    pub hessian_spd: bool,
    /// Every diagonal block of the Lagrangian Hessian is positive definite.
    pub blocks_spd: bool,
}

/// Solves `T(X, U, Lambda) = 0` with `n_colloc` collocation points.
///
/// Without a warm start the iterate is built by continuation in `N`: a cold
/// start at `N = 1`, then warm starts on a growing sequence of grids up to
/// `n_colloc`. Only the final grid's iterations are reported.
///
/// Returns `Ok` with `converged = false` when the iteration stalls or runs
/// out of iterations; singular Newton systems and non-finite iterates are
/// errors.
pub fn solve(p: &OcpProblem, n_colloc: usize, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let scheme = compute_lgr_scheme(n_colloc)?;
    let reference = map_to_reference(p);

    let init = match &cfg.warm_start {
        Some(ws) => interpolate_solution(&ws.solution, &ws.scheme, &scheme),
        None => {
            let mut prev: Option<(DiscreteSolution, CollocationScheme)> = None;
            for k in continuation_grid(n_colloc) {
                let sk = compute_lgr_scheme(k)?;
                let start = match &prev {
                    Some((s, sch)) => interpolate_solution(s, sch, &sk),
                    None => DiscreteSolution::cold_start(p, k),
                };
                let (s, _, _) = newton(&reference, &sk, start, cfg)?;
                prev = Some((s, sk));
            }
            match prev {
                Some((s, sch)) => interpolate_solution(&s, &sch, &scheme),
                None => DiscreteSolution::cold_start(p, n_colloc),
            }
        }
    };
    init.check_dims(p.state_dim(), p.control_dim(), n_colloc)?;

    let (sol, iterations, history) = newton(&reference, &scheme, init, cfg)?;
    let norm = history.last().map_or(f64::INFINITY, |h| h.residual);
    let converged = norm <= cfg.residual_tol;
    let (hessian_spd, blocks_spd) = if converged {
        (
            verify_second_order(&reference, &sol, &scheme),
            lagrangian_blocks_positive_definite(&reference, &sol, &scheme),
        )
    } else {
        (false, false)
    };
    Ok(SolveReport {
        solution: sol,
        scheme,
        iterations,
        final_residual: norm,
        converged,
        step_history: history,
        hessian_spd,
        blocks_spd,
    })
}

/// Intermediate grid sizes visited before `n`, smallest first.
fn continuation_grid(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1;
    while k < n {
        out.push(k);
        k += (k / 4).max(1);
    }
    out
}

fn newton(
    p_ref: &OcpProblem,
    scheme: &CollocationScheme,
    mut sol: DiscreteSolution,
    cfg: &SolverConfig,
) -> Result<(DiscreteSolution, usize, Vec<StepRecord>)> {
    let n_colloc = scheme.n_colloc();
    let mats = CollocationMatrices::new(scheme);
    let layout = KktLayout::new(p_ref.state_dim(), p_ref.control_dim(), n_colloc);

    let mut res = residual(p_ref, &mats, &sol)?;
    let mut norm = res.sup_norm();
    let mut history = vec![StepRecord {
        iteration: 0,
        residual: norm,
        step: 0.0,
    }];
    let mut iterations = 0;

    while norm > cfg.residual_tol && iterations < cfg.max_iters {
        let jac = jacobian(p_ref, &mats, &sol)?;
        let rhs = -res.to_vector();
        let delta = jac
            .matrix
            .lu()
            .solve(&rhs)
            .filter(|d| d.iter().all(|v| v.is_finite()))
            .ok_or(Error::Singular("Newton system"))?;
        let base = sol.to_vector();

        let mut frac = 1.0;
        let mut accepted = None;
        while frac >= cfg.min_step {
            let trial = DiscreteSolution::from_vector(&(&base + &delta * frac), &layout)?;
            match residual(p_ref, &mats, &trial) {
                Ok(r) if r.sup_norm() < norm => {
                    accepted = Some((trial, r));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => frac *= cfg.damping,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, r)) = accepted else {
            break;
        };
        iterations += 1;
        sol = trial;
        res = r;
        norm = res.sup_norm();
        history.push(StepRecord {
            iteration: iterations,
            residual: norm,
            step: frac,
        });
    }
    Ok((sol, iterations, history))
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky().is_some()
}

/// Diagonal blocks of the Lagrangian Hessian in the `(X_i, U_i)` ordering:
/// `omega_i Hess_(x,u) H` and, at `i = N`, the terminal cost Hessian added to
/// the state-state part.
pub fn lagrangian_hessian_blocks(
    p: &OcpProblem,
    s: &DiscreteSolution,
    scheme: &CollocationScheme,
) -> Vec<DMatrix<f64>> {
    let nc = scheme.n_colloc();
    let n = p.state_dim();
    let w = scheme.weights();
    (1..=nc)
        .map(|i| {
            let h =
                p.system
                    .hamiltonian_hessians(&s.state[i], &s.control[i - 1], &s.costate[i - 1]);
            let mut block = h.joint() * w[i - 1];
            if i == nc {
                let mut xx = block.view_mut((0, 0), (n, n));
                xx += p.system.cost_hess(&s.state[nc]);
            }
            block
        })
        .collect()
}

/// Literal blockwise test: every Lagrangian Hessian block is positive definite.
///
/// This is sufficient but not necessary for a strict local minimum; it fails
/// whenever `Hess_(x,u) H` is indefinite, even if the reduced Hessian is fine.
pub fn lagrangian_blocks_positive_definite(
    p: &OcpProblem,
    s: &DiscreteSolution,
    scheme: &CollocationScheme,
) -> bool {
    lagrangian_hessian_blocks(p, s, scheme)
        .iter()
        .all(is_positive_definite)
}

/// Reduced Hessian `Z^T H Z` of the Lagrangian on the null space of the
/// linearized constraints, parameterized by the control perturbation:
/// `dX_0 = 0`, `dX_{1:N} = (D_tail (x) I - A)^{-1} B dU`.
///
/// Returns `None` when the linearized state equation is singular.
pub fn reduced_hessian(
    p: &OcpProblem,
    s: &DiscreteSolution,
    scheme: &CollocationScheme,
) -> Option<DMatrix<f64>> {
    let nc = scheme.n_colloc();
    let n = p.state_dim();
    let m = p.control_dim();
    let mats = CollocationMatrices::new(scheme);
    let sys = &p.system;

    let mut lin = DMatrix::zeros(n * nc, n * nc);
    let mut b = DMatrix::zeros(n * nc, m * nc);
    for i in 0..nc {
        for j in 0..nc {
            for k in 0..n {
                lin[(i * n + k, j * n + k)] = mats.d_tail[(i, j)];
            }
        }
        let (x, u) = (&s.state[i + 1], &s.control[i]);
        let mut blk = lin.view_mut((i * n, i * n), (n, n));
        blk -= sys.dynamics_jac_x(x, u);
        b.view_mut((i * n, i * m), (n, m))
            .copy_from(&sys.dynamics_jac_u(x, u));
    }
    let g = lin.lu().solve(&b)?;
    if !g.iter().all(|v| v.is_finite()) {
        return None;
    }

    let blocks = lagrangian_hessian_blocks(p, s, scheme);
    let mut red = DMatrix::zeros(m * nc, m * nc);
    for (i, h) in blocks.iter().enumerate() {
        let mut z = DMatrix::zeros(n + m, m * nc);
        z.view_mut((0, 0), (n, m * nc)).copy_from(&g.rows(i * n, n));
        for k in 0..m {
            z[(n + k, i * m + k)] = 1.0;
        }
        red += z.transpose() * h * &z;
    }
    Some(red)
}

/// Second-order sufficient condition: the Lagrangian Hessian is positive
/// definite on the tangent space of the collocated dynamics and initial
/// condition.
pub fn verify_second_order(
    p: &OcpProblem,
    s: &DiscreteSolution,
    scheme: &CollocationScheme,
) -> bool {
    reduced_hessian(p, s, scheme).is_some_and(|h| is_positive_definite(&h))
}

/// Re-samples a solution on another scheme: the state as the degree-`N`
/// interpolant through `tau_0..tau_N`, control and costate as degree-`N-1`
/// interpolants through `tau_1..tau_N`.
pub fn interpolate_solution(
    s: &DiscreteSolution,
    from: &CollocationScheme,
    to: &CollocationScheme,
) -> DiscreteSolution {
    let n = s.costate0.len();
    let m = s.control.first().map_or(0, |u| u.len());
    let state_basis = from.state_basis();
    let costate_basis = from.costate_basis();
    DiscreteSolution {
        state: to
            .nodes()
            .iter()
            .map(|&t| combine(&state_basis.eval_basis(t), &s.state, n))
            .collect(),
        control: to
            .collocation_nodes()
            .iter()
            .map(|&t| combine(&costate_basis.eval_basis(t), &s.control, m))
            .collect(),
        costate: to
            .collocation_nodes()
            .iter()
            .map(|&t| combine(&costate_basis.eval_basis(t), &s.costate, n))
            .collect(),
        costate0: s.costate0.clone(),
    }
}

/// Convenience wrapper: plain vector of the solution's sup-norm distance.
pub fn solution_distance(a: &DiscreteSolution, b: &DiscreteSolution) -> f64 {
    let diff = |x: &[DVector<f64>], y: &[DVector<f64>]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    };
    diff(&a.state, &b.state)
        .max(diff(&a.control, &b.control))
        .max(diff(&a.costate, &b.costate))
        .max((&a.costate0 - &b.costate0).norm())
}
