//! Discrete first-order optimality system `T(X, U, Lambda) = 0` of the
//! Radau transcription and its Jacobian.
//!
//! Unknowns are ordered `X_0..X_N, U_1..U_N, Lambda_0, Lambda_1..Lambda_N`;
//! residual rows are ordered `T1 (N blocks), T2, T3, T4 (N-1 blocks), T5,
//! T6 (N blocks)`. Costate samples are the transformed multipliers
//! `Lambda_i = lambda_i / omega_i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::matrices::CollocationMatrices;
use crate::ocp::OcpProblem;
use crate::radau::CollocationScheme;

/// Discrete primal-dual point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    /// `X_0..X_N`
    pub state: Vec<DVector<f64>>,
    /// `U_1..U_N`
    pub control: Vec<DVector<f64>>,
    /// `Lambda_1..Lambda_N`
    pub costate: Vec<DVector<f64>>,
    /// Multiplier of `X_0 = x0`.
    pub costate0: DVector<f64>,
}

impl DiscreteSolution {
    /// `X_i = x0`, `U_i = 0`, and every costate sample set to `grad C(x0)`,
    /// the terminal costate condition at the initial state guess.
    ///
    /// A zero costate would make the Newton system singular whenever the
    /// Hamiltonian is bilinear in the costate.
    pub fn cold_start(p: &OcpProblem, n_colloc: usize) -> Self {
        let m = p.control_dim();
        let lam = p.system.cost_grad(&p.x0);
        Self {
            state: vec![p.x0.clone(); n_colloc + 1],
            control: vec![DVector::zeros(m); n_colloc],
            costate: vec![lam.clone(); n_colloc],
            costate0: lam,
        }
    }

    pub fn n_colloc(&self) -> usize {
        self.control.len()
    }

    pub fn check_dims(&self, n: usize, m: usize, n_colloc: usize) -> Result<()> {
        check_len("state samples", n_colloc + 1, self.state.len())?;
        check_len("control samples", n_colloc, self.control.len())?;
        check_len("costate samples", n_colloc, self.costate.len())?;
        check_len("initial costate", n, self.costate0.len())?;
        for x in self.state.iter().chain(&self.costate) {
            check_len("state/costate sample", n, x.len())?;
        }
        for u in &self.control {
            check_len("control sample", m, u.len())?;
        }
        Ok(())
    }

    /// `max{||X||_inf, ||U||_inf, ||Lambda||_inf}` with blockwise Euclidean norms.
    /// `Lambda_0` counts as part of the costate.
    pub fn sup_norm(&self) -> f64 {
        self.state
            .iter()
            .chain(&self.control)
            .chain(&self.costate)
            .chain(std::iter::once(&self.costate0))
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let parts = self
            .state
            .iter()
            .chain(&self.control)
            .chain(std::iter::once(&self.costate0))
            .chain(&self.costate);
        let data: Vec<f64> = parts.flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(data)
    }

    pub fn from_vector(v: &DVector<f64>, layout: &KktLayout) -> Result<Self> {
        check_len("unknown vector", layout.dim(), v.len())?;
        let (n, m, nc) = (layout.n, layout.m, layout.n_colloc);
        let block = |start: usize, len: usize| {
            DVector::from_column_slice(&v.as_slice()[start..start + len])
        };
        Ok(Self {
            state: (0..=nc).map(|j| block(layout.x(j), n)).collect(),
            control: (1..=nc).map(|i| block(layout.u(i), m)).collect(),
            costate0: block(layout.lambda0(), n),
            costate: (1..=nc).map(|i| block(layout.lambda(i), n)).collect(),
        })
    }
}

/// Index bookkeeping for the flattened unknowns and residual rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KktLayout {
    pub n: usize,
    pub m: usize,
    pub n_colloc: usize,
}

impl KktLayout {
    pub fn new(n: usize, m: usize, n_colloc: usize) -> Self {
        Self { n, m, n_colloc }
    }

    /// `n(N+1) + mN + n + nN`
    pub fn dim(&self) -> usize {
        let (n, m, nc) = (self.n, self.m, self.n_colloc);
        n * (nc + 1) + m * nc + n + n * nc
    }

    /// Column of `X_j`, `j = 0..N`.
    pub fn x(&self, j: usize) -> usize {
        j * self.n
    }
    /// Column of `U_i`, `i = 1..N`.
    pub fn u(&self, i: usize) -> usize {
        self.n * (self.n_colloc + 1) + (i - 1) * self.m
    }
    pub fn lambda0(&self) -> usize {
        self.n * (self.n_colloc + 1) + self.m * self.n_colloc
    }
    /// Column of `Lambda_i`, `i = 1..N`.
    pub fn lambda(&self, i: usize) -> usize {
        self.lambda0() + self.n + (i - 1) * self.n
    }

    /// Row of `T1_i`, `i = 1..N`.
    pub fn row_t1(&self, i: usize) -> usize {
        (i - 1) * self.n
    }
    pub fn row_t2(&self) -> usize {
        self.n * self.n_colloc
    }
    pub fn row_t3(&self) -> usize {
        self.n * self.n_colloc + self.n
    }
    /// Row of the adjoint equation at node `i`; `T4_i` for `i < N`, `T5` for `i = N`.
    pub fn row_adjoint(&self, i: usize) -> usize {
        self.n * self.n_colloc + 2 * self.n + (i - 1) * self.n
    }
    /// Row of `T6_i`, `i = 1..N`.
    pub fn row_t6(&self, i: usize) -> usize {
        2 * self.n * self.n_colloc + 2 * self.n + (i - 1) * self.m
    }
}

/// The six residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    /// Collocated dynamics defect, `N` blocks.
    pub t1: Vec<DVector<f64>>,
    /// Initial condition defect.
    pub t2: DVector<f64>,
    /// Closure for the initial-time multiplier.
    pub t3: DVector<f64>,
    /// Adjoint rows `1..N-1`.
    pub t4: Vec<DVector<f64>>,
    /// Terminal adjoint row.
    pub t5: DVector<f64>,
    /// Control stationarity, `N` blocks.
    pub t6: Vec<DVector<f64>>,
}

impl KktResidual {
    fn blocks(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.t1
            .iter()
            .chain(std::iter::once(&self.t2))
            .chain(std::iter::once(&self.t3))
            .chain(&self.t4)
            .chain(std::iter::once(&self.t5))
            .chain(&self.t6)
    }

    /// Max over the `3N + 2` blocks of their Euclidean norms.
    pub fn sup_norm(&self) -> f64 {
        self.blocks().map(|b| b.norm()).fold(0.0, f64::max)
    }

    pub fn block_count(&self) -> usize {
        self.blocks().count()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.blocks().flat_map(|b| b.iter().copied()).collect())
    }
}

fn finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Evaluates `T` for a problem already mapped to `[-1, 1]`.
pub fn residual(
    p: &OcpProblem,
    m: &CollocationMatrices,
    s: &DiscreteSolution,
) -> Result<KktResidual> {
    let nc = m.n_colloc();
    let n = p.state_dim();
    s.check_dims(n, p.control_dim(), nc)?;
    let sys = &p.system;
    let w = m.scheme.weights();

    let mut t1 = Vec::with_capacity(nc);
    let mut grad_x = Vec::with_capacity(nc);
    let mut t6 = Vec::with_capacity(nc);
    for i in 1..=nc {
        let (x, u, l) = (&s.state[i], &s.control[i - 1], &s.costate[i - 1]);
        let mut dx = DVector::zeros(n);
        for (j, xj) in s.state.iter().enumerate() {
            dx.axpy(m.d[(i - 1, j)], xj, 1.0);
        }
        let f = sys.dynamics(x, u);
        finite(&f, "dynamics")?;
        t1.push(dx - f);
        let gx = sys.hamiltonian_grad_x(x, u, l);
        finite(&gx, "hamiltonian gradient")?;
        grad_x.push(gx);
        let gu = sys.hamiltonian_grad_u(x, u, l);
        finite(&gu, "hamiltonian gradient")?;
        t6.push(gu);
    }

    let t2 = &s.state[0] - &p.x0;
    let x_n = &s.state[nc];
    let grad_c = sys.cost_grad(x_n);
    finite(&grad_c, "cost gradient")?;

    let mut t3 = &s.costate0 - &grad_c;
    for (gx, wi) in grad_x.iter().zip(w) {
        t3.axpy(-wi, gx, 1.0);
    }

    let mut adjoint: Vec<DVector<f64>> = (0..nc)
        .map(|i| {
            let mut r = grad_x[i].clone();
            for (j, lj) in s.costate.iter().enumerate() {
                r.axpy(m.d_ddagger[(i, j)], lj, 1.0);
            }
            r
        })
        .collect();
    let mut t5 = adjoint.pop().expect("N >= 1");
    t5.axpy(1.0 / w[nc - 1], &grad_c, 1.0);

    Ok(KktResidual {
        t1,
        t2,
        t3,
        t4: adjoint,
        t5,
        t6,
    })
}

/// Dense Jacobian of [`residual`] in the global unknown ordering.
#[derive(Debug, Clone)]
pub struct KktJacobian {
    pub matrix: DMatrix<f64>,
    pub layout: KktLayout,
}

pub fn jacobian(
    p: &OcpProblem,
    m: &CollocationMatrices,
    s: &DiscreteSolution,
) -> Result<KktJacobian> {
    let nc = m.n_colloc();
    let n = p.state_dim();
    let mu = p.control_dim();
    s.check_dims(n, mu, nc)?;
    let sys = &p.system;
    let w = m.scheme.weights();
    let lay = KktLayout::new(n, mu, nc);
    let mut jac = DMatrix::zeros(lay.dim(), lay.dim());
    let eye = DMatrix::<f64>::identity(n, n);

    let mut add = |r: usize, c: usize, block: &DMatrix<f64>, scale: f64| {
        let mut view = jac.view_mut((r, c), block.shape());
        view += block * scale;
    };

    let x_n = &s.state[nc];
    let cost_hess = sys.cost_hess(x_n);

    for i in 1..=nc {
        let (x, u, l) = (&s.state[i], &s.control[i - 1], &s.costate[i - 1]);
        let a = sys.dynamics_jac_x(x, u);
        let b = sys.dynamics_jac_u(x, u);
        let h = sys.hamiltonian_hessians(x, u, l);
        let at = a.transpose();
        let wi = w[i - 1];

        // T1_i
        let r = lay.row_t1(i);
        for j in 0..=nc {
            add(r, lay.x(j), &eye, m.d[(i - 1, j)]);
        }
        add(r, lay.x(i), &a, -1.0);
        add(r, lay.u(i), &b, -1.0);

        // T3 contributions
        let r3 = lay.row_t3();
        add(r3, lay.x(i), &h.hxx, -wi);
        add(r3, lay.u(i), &h.hxu, -wi);
        add(r3, lay.lambda(i), &at, -wi);

        // T4_i / T5
        let ra = lay.row_adjoint(i);
        for j in 1..=nc {
            add(ra, lay.lambda(j), &eye, m.d_ddagger[(i - 1, j - 1)]);
        }
        add(ra, lay.x(i), &h.hxx, 1.0);
        add(ra, lay.u(i), &h.hxu, 1.0);
        add(ra, lay.lambda(i), &at, 1.0);

        // T6_i
        let r6 = lay.row_t6(i);
        add(r6, lay.x(i), &h.hxu.transpose(), 1.0);
        add(r6, lay.u(i), &h.huu, 1.0);
        add(r6, lay.lambda(i), &b.transpose(), 1.0);
    }

    add(lay.row_t2(), lay.x(0), &eye, 1.0);
    add(lay.row_t3(), lay.lambda0(), &eye, 1.0);
    add(lay.row_t3(), lay.x(nc), &cost_hess, -1.0);
    add(lay.row_adjoint(nc), lay.x(nc), &cost_hess, 1.0 / w[nc - 1]);

    if jac.iter().all(|v| v.is_finite()) {
        Ok(KktJacobian {
            matrix: jac,
            layout: lay,
        })
    } else {
        Err(Error::NonFinite("KKT jacobian"))
    }
}

/// `Lambda_i = lambda_i / omega_i`.
pub fn transform_multipliers(
    raw: &[DVector<f64>],
    scheme: &CollocationScheme,
) -> Result<Vec<DVector<f64>>> {
    check_len("raw multipliers", scheme.n_colloc(), raw.len())?;
    Ok(raw
        .iter()
        .zip(scheme.weights())
        .map(|(l, w)| l / *w)
        .collect())
}

/// `lambda_i = omega_i Lambda_i`, inverse of [`transform_multipliers`].
pub fn raw_multipliers(
    costate: &[DVector<f64>],
    scheme: &CollocationScheme,
) -> Result<Vec<DVector<f64>>> {
    check_len("costate samples", scheme.n_colloc(), costate.len())?;
    Ok(costate
        .iter()
        .zip(scheme.weights())
        .map(|(l, w)| l * *w)
        .collect())
}

/// Weighted combination `sum_j coeffs_j * vs_j`.
pub(crate) fn combine(coeffs: &[f64], vs: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    for (c, v) in coeffs.iter().zip(vs) {
        out.axpy(*c, v, 1.0);
    }
    out
}

/// Degree `N-1` costate interpolant through `tau_1..tau_N`, evaluated at `-1`.
pub fn costate_at_initial_time(s: &DiscreteSolution, scheme: &CollocationScheme) -> DVector<f64> {
    let coeffs = scheme.costate_basis().eval_basis(-1.0);
    combine(&coeffs, &s.costate, s.costate0.len())
}

/// Solves `grad_u H(X_0, u, lambda(-1)) = 0` by Newton iteration from `U_1`.
pub fn control_at_initial_time(
    s: &DiscreteSolution,
    p: &OcpProblem,
    scheme: &CollocationScheme,
) -> Result<DVector<f64>> {
    const MAX_ITERS: usize = 50;
    let mdim = p.control_dim();
    if mdim == 0 {
        return Ok(DVector::zeros(0));
    }
    let sys = &p.system;
    let x0 = &s.state[0];
    let lam = costate_at_initial_time(s, scheme);
    let mut u = s.control[0].clone();
    for _ in 0..MAX_ITERS {
        let g = sys.hamiltonian_grad_u(x0, &u, &lam);
        finite(&g, "hamiltonian gradient")?;
        let huu = sys.hamiltonian_hessians(x0, &u, &lam).huu;
        let step = huu
            .lu()
            .solve(&g)
            .ok_or(Error::Singular("control Hessian"))?;
        u -= &step;
        if step.norm() <= 1e-14 * u.norm().max(1.0) {
            return Ok(u);
        }
    }
    Err(Error::NonConvergence {
        what: "initial control recovery",
        iterations: MAX_ITERS,
    })
}

/// `(||X||_omega, ||U||_omega)` with `||X||^2 = |X_N|^2 + sum omega_i |X_i|^2`.
pub fn omega_norms(s: &DiscreteSolution, scheme: &CollocationScheme) -> (f64, f64) {
    let w = scheme.weights();
    let nc = scheme.n_colloc();
    let xs: f64 = s.state[nc].norm_squared()
        + (1..=nc)
            .map(|i| w[i - 1] * s.state[i].norm_squared())
            .sum::<f64>();
    let us: f64 = s
        .control
        .iter()
        .zip(w)
        .map(|(u, wi)| wi * u.norm_squared())
        .sum();
    (xs.sqrt(), us.sqrt())
}
