//! Unconstrained optimal control problems: minimize `C(x(t_f))` subject to
//! `x' = f(x, u)`, `x(t_0) = x0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{check_len, Error, Result};

/// Second derivatives of `H(x, u, lambda) = lambda^T f(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianHessians {
    /// `n x n`
    pub hxx: DMatrix<f64>,
    /// `n x m`
    pub hxu: DMatrix<f64>,
    /// `m x m`
    pub huu: DMatrix<f64>,
}

impl HamiltonianHessians {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            hxx: DMatrix::zeros(n, n),
            hxu: DMatrix::zeros(n, m),
            huu: DMatrix::zeros(m, m),
        }
    }

    /// Full `(n+m) x (n+m)` Hessian in the `(x, u)` ordering.
    pub fn joint(&self) -> DMatrix<f64> {
        let n = self.hxx.nrows();
        let m = self.huu.nrows();
        let mut h = DMatrix::zeros(n + m, n + m);
        h.view_mut((0, 0), (n, n)).copy_from(&self.hxx);
        h.view_mut((0, n), (n, m)).copy_from(&self.hxu);
        h.view_mut((n, 0), (m, n)).copy_from(&self.hxu.transpose());
        h.view_mut((n, n), (m, m)).copy_from(&self.huu);
        h
    }
}

/// Dynamics and terminal cost with analytic first and second derivatives.
///
/// Implementations must be pure: the solver and the parallel sweeps call
/// them from several threads.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `n x n`, row `i` is `(grad_x f_i)^T`.
    fn dynamics_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `n x m`
    fn dynamics_jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn hamiltonian_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> HamiltonianHessians;

    fn cost(&self, xf: &DVector<f64>) -> f64;
    fn cost_grad(&self, xf: &DVector<f64>) -> DVector<f64>;
    fn cost_hess(&self, xf: &DVector<f64>) -> DMatrix<f64>;

    fn hamiltonian_grad_x(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> DVector<f64> {
        self.dynamics_jac_x(x, u).tr_mul(lambda)
    }

    fn hamiltonian_grad_u(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> DVector<f64> {
        self.dynamics_jac_u(x, u).tr_mul(lambda)
    }
}

/// Affine map between reference time `tau in [-1, 1]` and physical time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMap {
    pub t0: f64,
    pub tf: f64,
}

impl TimeMap {
    pub fn new(t0: f64, tf: f64) -> Result<Self> {
        if tf > t0 && t0.is_finite() && tf.is_finite() {
            Ok(Self { t0, tf })
        } else {
            Err(Error::InvalidConfig(format!(
                "horizon requires t_f > t_0, got ({t0}, {tf})"
            )))
        }
    }

    pub fn reference() -> Self {
        Self { t0: -1.0, tf: 1.0 }
    }

    /// `dt / dtau`
    pub fn scale(&self) -> f64 {
        0.5 * (self.tf - self.t0)
    }

    pub fn to_physical(&self, tau: f64) -> f64 {
        if tau == -1.0 {
            self.t0
        } else if tau == 1.0 {
            self.tf
        } else {
            self.t0 + self.scale() * (tau + 1.0)
        }
    }

    pub fn to_reference(&self, t: f64) -> f64 {
        (t - self.t0) / self.scale() - 1.0
    }
}

#[derive(Clone)]
pub struct OcpProblem {
    pub system: Arc<dyn ControlSystem>,
    pub horizon: TimeMap,
    pub x0: DVector<f64>,
}

impl std::fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpProblem")
            .field("state_dim", &self.state_dim())
            .field("control_dim", &self.control_dim())
            .field("horizon", &self.horizon)
            .field("x0", &self.x0.as_slice())
            .finish()
    }
}

impl OcpProblem {
    /// Validates the horizon and probes every callback for consistent shapes.
    pub fn new(system: Arc<dyn ControlSystem>, horizon: TimeMap, x0: DVector<f64>) -> Result<Self> {
        let n = system.state_dim();
        let m = system.control_dim();
        check_len("initial state", n, x0.len())?;
        let u = DVector::zeros(m);
        let lam = DVector::from_element(n, 1.0);
        check_len("dynamics output", n, system.dynamics(&x0, &u).len())?;
        let fx = system.dynamics_jac_x(&x0, &u);
        check_len("dynamics_jac_x rows", n, fx.nrows())?;
        check_len("dynamics_jac_x cols", n, fx.ncols())?;
        let fu = system.dynamics_jac_u(&x0, &u);
        check_len("dynamics_jac_u rows", n, fu.nrows())?;
        check_len("dynamics_jac_u cols", m, fu.ncols())?;
        let h = system.hamiltonian_hessians(&x0, &u, &lam);
        check_len("hxx rows", n, h.hxx.nrows())?;
        check_len("hxx cols", n, h.hxx.ncols())?;
        check_len("hxu rows", n, h.hxu.nrows())?;
        check_len("hxu cols", m, h.hxu.ncols())?;
        check_len("huu rows", m, h.huu.nrows())?;
        check_len("huu cols", m, h.huu.ncols())?;
        check_len("cost_grad", n, system.cost_grad(&x0).len())?;
        let ch = system.cost_hess(&x0);
        check_len("cost_hess rows", n, ch.nrows())?;
        check_len("cost_hess cols", n, ch.ncols())?;
        Ok(Self {
            system,
            horizon,
            x0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.system.control_dim()
    }
}

/// Wraps a system so that its dynamics (and everything derived from them)
/// are multiplied by a constant time scale.
struct ScaledSystem {
    inner: Arc<dyn ControlSystem>,
    scale: f64,
}

impl ControlSystem for ScaledSystem {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.inner.dynamics(x, u) * self.scale
    }
    fn dynamics_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.inner.dynamics_jac_x(x, u) * self.scale
    }
    fn dynamics_jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.inner.dynamics_jac_u(x, u) * self.scale
    }
    fn hamiltonian_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> HamiltonianHessians {
        let h = self.inner.hamiltonian_hessians(x, u, lambda);
        HamiltonianHessians {
            hxx: h.hxx * self.scale,
            hxu: h.hxu * self.scale,
            huu: h.huu * self.scale,
        }
    }
    fn cost(&self, xf: &DVector<f64>) -> f64 {
        self.inner.cost(xf)
    }
    fn cost_grad(&self, xf: &DVector<f64>) -> DVector<f64> {
        self.inner.cost_grad(xf)
    }
    fn cost_hess(&self, xf: &DVector<f64>) -> DMatrix<f64> {
        self.inner.cost_hess(xf)
    }
}

/// Equivalent problem on `[-1, 1]`; dynamics are scaled by `(t_f - t_0) / 2`.
pub fn map_to_reference(p: &OcpProblem) -> OcpProblem {
    let scale = p.horizon.scale();
    let system: Arc<dyn ControlSystem> = if scale == 1.0 {
        Arc::clone(&p.system)
    } else {
        Arc::new(ScaledSystem {
            inner: Arc::clone(&p.system),
            scale,
        })
    };
    OcpProblem {
        system,
        horizon: TimeMap::reference(),
        x0: p.x0.clone(),
    }
}

/// Worst relative discrepancy of each analytic derivative callback against
/// central finite differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivativeReport {
    pub jac_x: f64,
    pub jac_u: f64,
    pub hxx: f64,
    pub hxu: f64,
    pub huu: f64,
    pub cost_grad: f64,
    pub cost_hess: f64,
    pub probes: usize,
}

impl DerivativeReport {
    pub const TOLERANCE: f64 = 1e-5;

    pub fn max_discrepancy(&self) -> f64 {
        [
            self.jac_x,
            self.jac_u,
            self.hxx,
            self.hxu,
            self.huu,
            self.cost_grad,
            self.cost_hess,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Names of the callbacks whose discrepancy exceeds [`Self::TOLERANCE`].
    pub fn flagged(&self) -> Vec<&'static str> {
        [
            ("dynamics_jac_x", self.jac_x),
            ("dynamics_jac_u", self.jac_u),
            ("hxx", self.hxx),
            ("hxu", self.hxu),
            ("huu", self.huu),
            ("cost_grad", self.cost_grad),
            ("cost_hess", self.cost_hess),
        ]
        .into_iter()
        .filter(|&(_, v)| v.is_nan() || v > Self::TOLERANCE)
        .map(|(k, _)| k)
        .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }
}

fn rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Central-difference Jacobian of `g` at `v`; column `j` is `dg/dv_j`.
fn fd_jacobian<F>(v: &DVector<f64>, rows: usize, g: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let cbrt_eps = f64::EPSILON.cbrt();
    let mut jac = DMatrix::zeros(rows, v.len());
    for j in 0..v.len() {
        let h = cbrt_eps * v[j].abs().max(1.0);
        let mut vp = v.clone();
        let mut vm = v.clone();
        vp[j] += h;
        vm[j] -= h;
        let col = (g(&vp) - g(&vm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Compares every derivative callback with central finite differences at
/// `probes` random points near `x0` (step `eps^{1/3}` scaled by magnitude).
pub fn validate_derivatives(p: &OcpProblem, probes: usize) -> Result<DerivativeReport> {
    if probes == 0 {
        return Err(Error::InvalidConfig("probes must be at least 1".into()));
    }
    let sys = &p.system;
    let n = p.state_dim();
    let m = p.control_dim();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut report = DerivativeReport {
        probes,
        ..Default::default()
    };
    for _ in 0..probes {
        let x = DVector::from_fn(n, |i, _| {
            p.x0[i] + 0.1 * p.x0[i].abs().max(1.0) * rng.random_range(-1.0..1.0)
        });
        let u = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
        let lam = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

        let fx = fd_jacobian(&x, n, |xv| sys.dynamics(xv, &u));
        report.jac_x = report.jac_x.max(rel_err(&sys.dynamics_jac_x(&x, &u), &fx));
        let fu = fd_jacobian(&u, n, |uv| sys.dynamics(&x, uv));
        report.jac_u = report.jac_u.max(rel_err(&sys.dynamics_jac_u(&x, &u), &fu));

        let h = sys.hamiltonian_hessians(&x, &u, &lam);
        let hxx = fd_jacobian(&x, n, |xv| sys.hamiltonian_grad_x(xv, &u, &lam));
        report.hxx = report.hxx.max(rel_err(&h.hxx, &hxx));
        let hxu = fd_jacobian(&u, n, |uv| sys.hamiltonian_grad_x(&x, uv, &lam));
        report.hxu = report.hxu.max(rel_err(&h.hxu, &hxu));
        let huu = fd_jacobian(&u, m, |uv| sys.hamiltonian_grad_u(&x, uv, &lam));
        report.huu = report.huu.max(rel_err(&h.huu, &huu));

        let cg = fd_jacobian(&x, 1, |xv| DVector::from_element(1, sys.cost(xv)));
        let analytic = DMatrix::from_row_slice(1, n, sys.cost_grad(&x).as_slice());
        report.cost_grad = report.cost_grad.max(rel_err(&analytic, &cg));
        let ch = fd_jacobian(&x, n, |xv| sys.cost_grad(xv));
        report.cost_hess = report.cost_hess.max(rel_err(&sys.cost_hess(&x), &ch));
    }
    Ok(report)
}
