//! Built-in problems with closed-form solutions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::{ControlSystem, HamiltonianHessians, OcpProblem, TimeMap};

type Trajectory = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Closed-form optimal state, control and costate in physical time.
#[derive(Clone)]
pub struct ExactSolution {
    pub state: Trajectory,
    pub control: Trajectory,
    pub costate: Trajectory,
}

/// Scalar problem
/// `min -x(2)` s.t. `x' = 5/2 (-x + x u - u^2)`, `x(0) = 1`, on `[0, 2]`.
///
/// Optimum: `x* = 4 / a(t)` with `a(t) = 1 + 3 e^{2.5 t}`, `u* = x*/2`,
/// `lambda* = -a^2 e^{-2.5 t} / (e^{-5} + 9 e^5 + 6)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Example1;

impl Example1 {
    pub const NAME: &'static str = "example1";

    pub fn problem() -> (OcpProblem, ExactSolution) {
        let problem = OcpProblem::new(
            Arc::new(Example1),
            TimeMap::new(0.0, 2.0).expect("valid horizon"),
            DVector::from_element(1, 1.0),
        )
        .expect("example callbacks are consistent");
        let exact = ExactSolution {
            state: Arc::new(|t| DVector::from_element(1, Self::state(t))),
            control: Arc::new(|t| DVector::from_element(1, Self::control(t))),
            costate: Arc::new(|t| DVector::from_element(1, Self::costate(t))),
        };
        (problem, exact)
    }

    fn a(t: f64) -> f64 {
        1.0 + 3.0 * (2.5 * t).exp()
    }

    fn costate_denominator() -> f64 {
        (-5.0f64).exp() + 9.0 * 5.0f64.exp() + 6.0
    }

    pub fn state(t: f64) -> f64 {
        4.0 / Self::a(t)
    }

    pub fn control(t: f64) -> f64 {
        Self::state(t) / 2.0
    }

    pub fn costate(t: f64) -> f64 {
        let a = Self::a(t);
        -a * a * (-2.5 * t).exp() / Self::costate_denominator()
    }

    pub fn state_rate(t: f64) -> f64 {
        let a = Self::a(t);
        -4.0 * 7.5 * (2.5 * t).exp() / (a * a)
    }

    pub fn costate_rate(t: f64) -> f64 {
        let a = Self::a(t);
        let da = 7.5 * (2.5 * t).exp();
        let e = (-2.5 * t).exp();
        -(2.0 * a * da * e - 2.5 * a * a * e) / Self::costate_denominator()
    }
}

impl ControlSystem for Example1 {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (x, u) = (x[0], u[0]);
        DVector::from_element(1, 2.5 * (-x + x * u - u * u))
    }

    fn dynamics_jac_x(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.5 * (u[0] - 1.0))
    }

    fn dynamics_jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.5 * (x[0] - 2.0 * u[0]))
    }

    fn hamiltonian_hessians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> HamiltonianHessians {
        let l = lambda[0];
        HamiltonianHessians {
            hxx: DMatrix::zeros(1, 1),
            hxu: DMatrix::from_element(1, 1, 2.5 * l),
            huu: DMatrix::from_element(1, 1, -5.0 * l),
        }
    }

    fn cost(&self, xf: &DVector<f64>) -> f64 {
        -xf[0]
    }

    fn cost_grad(&self, _xf: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -1.0)
    }

    fn cost_hess(&self, _xf: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
}

pub const REGISTERED: &[&str] = &[Example1::NAME];

/// Looks up a built-in problem by name.
pub fn lookup(name: &str) -> Result<(OcpProblem, Option<ExactSolution>)> {
    match name {
        Example1::NAME => {
            let (p, e) = Example1::problem();
            Ok((p, Some(e)))
        }
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// A posteriori look at the convexity and Jacobian-size hypotheses along an
/// exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionDiagnostics {
    /// Smallest eigenvalue of the terminal cost Hessian.
    pub min_cost_hess_eig: f64,
    /// Smallest eigenvalue of the joint `(x, u)` Hamiltonian Hessian.
    pub min_hamiltonian_eig: f64,
    /// Largest `max(||f_x||_inf, ||f_x^T||_inf)`; the analysis wants `<= 1/4`.
    pub max_jac_x_norm: f64,
}

pub fn assumption_diagnostics(
    p: &OcpProblem,
    exact: &ExactSolution,
    samples: usize,
) -> AssumptionDiagnostics {
    let sys = &p.system;
    let min_eig = |m: DMatrix<f64>| {
        if m.nrows() == 0 {
            f64::INFINITY
        } else {
            m.symmetric_eigenvalues().min()
        }
    };
    let xf = (exact.state)(p.horizon.tf);
    let mut out = AssumptionDiagnostics {
        min_cost_hess_eig: min_eig(sys.cost_hess(&xf)),
        min_hamiltonian_eig: f64::INFINITY,
        max_jac_x_norm: 0.0,
    };
    let samples = samples.max(2);
    for k in 0..samples {
        let t = p.horizon.t0 + (p.horizon.tf - p.horizon.t0) * k as f64 / (samples - 1) as f64;
        let (x, u, l) = ((exact.state)(t), (exact.control)(t), (exact.costate)(t));
        let h = sys.hamiltonian_hessians(&x, &u, &l).joint();
        out.min_hamiltonian_eig = out.min_hamiltonian_eig.min(min_eig(h));
        let fx = sys.dynamics_jac_x(&x, &u);
        let norm = crate::matrices::inf_norm(&fx).max(crate::matrices::inf_norm(&fx.transpose()));
        out.max_jac_x_norm = out.max_jac_x_norm.max(norm);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_times() -> impl Iterator<Item = f64> {
        (0..200).map(|k| 2.0 * k as f64 / 199.0)
    }

    #[test]
    fn exact_solution_endpoints() {
        assert!((Example1::state(0.0) - 1.0).abs() < 1e-15);
        assert!((Example1::costate(2.0) + 1.0).abs() < 1e-12);
        for t in sample_times() {
            assert!((Example1::control(t) - Example1::state(t) / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_solution_satisfies_dynamics_and_adjoint() {
        let sys = Example1;
        for t in sample_times() {
            let x = DVector::from_element(1, Example1::state(t));
            let u = DVector::from_element(1, Example1::control(t));
            let l = DVector::from_element(1, Example1::costate(t));
            let dyn_res = Example1::state_rate(t) - sys.dynamics(&x, &u)[0];
            assert!(dyn_res.abs() < 1e-10, "t = {t}: {dyn_res}");
            let adj_res = Example1::costate_rate(t) + sys.hamiltonian_grad_x(&x, &u, &l)[0];
            assert!(adj_res.abs() < 1e-10, "t = {t}: {adj_res}");
            assert!(sys.hamiltonian_grad_u(&x, &u, &l)[0].abs() < 1e-15);
        }
    }

    #[test]
    fn costate_rate_matches_finite_difference() {
        let h = 1e-6;
        for t in [0.1, 0.9, 1.7] {
            let fd = (Example1::costate(t + h) - Example1::costate(t - h)) / (2.0 * h);
            assert!((fd - Example1::costate_rate(t)).abs() < 1e-6);
            let fd = (Example1::state(t + h) - Example1::state(t - h)) / (2.0 * h);
            assert!((fd - Example1::state_rate(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn lookup_known_and_unknown() {
        assert!(lookup("example1").is_ok());
        assert!(matches!(lookup("nope"), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn example_violates_jacobian_bound_and_blockwise_convexity() {
        let (p, e) = Example1::problem();
        let d = assumption_diagnostics(&p, &e, 101);
        assert!(d.max_jac_x_norm > 0.25);
        assert!(d.min_hamiltonian_eig < 0.0);
    }
}
