//! Finite-difference reference solutions for the heat and viscous Burgers equations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maximum change under step halving accepted by the convergence check.
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// `a u_x + b u = g` at one end of the interval (`u_x` along increasing `x`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndCondition {
    pub a: f64,
    pub b: f64,
    pub g: f64,
}

impl EndCondition {
    pub fn dirichlet(g: f64) -> EndCondition {
        EndCondition { a: 0.0, b: 1.0, g }
    }

    pub fn neumann(g: f64) -> EndCondition {
        EndCondition { a: 1.0, b: 0.0, g }
    }

    pub fn robin(g: f64) -> EndCondition {
        EndCondition { a: 1.0, b: 1.0, g }
    }

    fn is_dirichlet(&self) -> bool {
        self.a == 0.0
    }
}

/// Uniform space-time grid of solution values, `u[step][node]`.
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub x0: f64,
    pub x1: f64,
    pub t_end: f64,
    pub u: Vec<Vec<f64>>,
}

impl GridSolution {
    pub fn n_x(&self) -> usize {
        self.u[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.u.len() - 1
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + (self.x1 - self.x0) * i as f64 / (self.n_x() - 1) as f64
    }

    /// Bilinear interpolation at `(t, x)`.
    pub fn at(&self, t: f64, x: f64) -> f64 {
        let ft = (t / self.t_end).clamp(0.0, 1.0) * self.n_steps() as f64;
        let fx = ((x - self.x0) / (self.x1 - self.x0)).clamp(0.0, 1.0) * (self.n_x() - 1) as f64;
        let (it, ix) = ((ft as usize).min(self.n_steps().saturating_sub(1)), (fx as usize).min(self.n_x() - 2));
        let (wt, wx) = (ft - it as f64, fx - ix as f64);
        let row = |k: usize| self.u[k][ix] * (1.0 - wx) + self.u[k][ix + 1] * wx;
        if self.n_steps() == 0 {
            return row(0);
        }
        row(it) * (1.0 - wt) + row(it + 1) * wt
    }

    /// Maximum difference to `finer` at the nodes they share; `finer` must have twice the
    /// spatial intervals and an integer multiple of the time steps.
    pub fn max_diff_to_finer(&self, finer: &GridSolution) -> f64 {
        let rt = finer.n_steps() / self.n_steps();
        let mut worst: f64 = 0.0;
        for k in 0..=self.n_steps() {
            for i in 0..self.n_x() {
                worst = worst.max((self.u[k][i] - finer.u[k * rt][2 * i]).abs());
            }
        }
        worst
    }
}

/// Solution of a reference solve together with its self-reported convergence check.
#[derive(Clone, Debug)]
pub struct Reference {
    pub solution: GridSolution,
    pub halving_change: f64,
}

fn check(coarse: GridSolution, fine: &GridSolution, what: &str) -> Result<Reference> {
    let change = coarse.max_diff_to_finer(fine);
    if change.is_finite() && change < CONVERGENCE_TOL {
        Ok(Reference { solution: coarse, halving_change: change })
    } else {
        Err(Error::Convergence(format!("{what}: halving the steps changed the solution by {change:e}")))
    }
}

/// Solves the tridiagonal system `(sub, diag, sup) x = rhs` in place of `rhs`.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = sup[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - sub[i] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / d;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Discrete `u_xx` operator rows `(sub, diag, sup, constant)` with ghost points at Neumann/Robin
/// ends; Dirichlet ends get an empty row.
fn laplacian(n: usize, dx: f64, left: &EndCondition, right: &EndCondition) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h2 = dx * dx;
    let (mut sub, mut diag, mut sup, mut cst) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 1..n - 1 {
        sub[i] = 1.0 / h2;
        diag[i] = -2.0 / h2;
        sup[i] = 1.0 / h2;
    }
    if !left.is_dirichlet() {
        // u_{-1} = u_1 - 2 dx (g - b u_0) / a
        diag[0] = (-2.0 + 2.0 * dx * left.b / left.a) / h2;
        sup[0] = 2.0 / h2;
        cst[0] = -2.0 * left.g / (left.a * dx);
    }
    if !right.is_dirichlet() {
        // u_{n} = u_{n-2} + 2 dx (g - b u_{n-1}) / a
        diag[n - 1] = (-2.0 - 2.0 * dx * right.b / right.a) / h2;
        sub[n - 1] = 2.0 / h2;
        cst[n - 1] = 2.0 * right.g / (right.a * dx);
    }
    (sub, diag, sup, cst)
}

/// Crank–Nicolson for `u_t = u_xx` on `[x0, x1] × [0, t_end]`.
pub fn heat_cn(
    ic: &dyn Fn(f64) -> f64,
    left: EndCondition,
    right: EndCondition,
    (x0, x1): (f64, f64),
    t_end: f64,
    n_x: usize,
    n_steps: usize,
) -> GridSolution {
    let dx = (x1 - x0) / (n_x - 1) as f64;
    let dt = t_end / n_steps as f64;
    let (sub, diag, sup, cst) = laplacian(n_x, dx, &left, &right);
    let mut u: Vec<f64> = (0..n_x).map(|i| ic(x0 + dx * i as f64)).collect();
    let r = 0.5 * dt;
    let (mut lsub, mut ldiag, mut lsup) = (vec![0.0; n_x], vec![0.0; n_x], vec![0.0; n_x]);
    for i in 0..n_x {
        lsub[i] = -r * sub[i];
        ldiag[i] = 1.0 - r * diag[i];
        lsup[i] = -r * sup[i];
    }
    for (end, i) in [(&left, 0), (&right, n_x - 1)] {
        if end.is_dirichlet() {
            lsub[i] = 0.0;
            lsup[i] = 0.0;
            ldiag[i] = 1.0;
        }
    }
    let mut out = vec![u.clone()];
    for _ in 0..n_steps {
        let mut rhs: Vec<f64> = (0..n_x)
            .map(|i| {
                let lap = diag[i] * u[i]
                    + if i > 0 { sub[i] * u[i - 1] } else { 0.0 }
                    + if i + 1 < n_x { sup[i] * u[i + 1] } else { 0.0 }
                    + cst[i];
                u[i] + r * lap + r * cst[i]
            })
            .collect();
        for (end, i) in [(&left, 0), (&right, n_x - 1)] {
            if end.is_dirichlet() {
                rhs[i] = end.g / end.b;
            }
        }
        thomas(&lsub, &ldiag, &lsup, &mut rhs);
        u = rhs;
        out.push(u.clone());
    }
    GridSolution { x0, x1, t_end, u: out }
}

/// Heat reference with a halving check (`2n_x - 1` nodes, twice the steps).
pub fn heat_reference(
    ic: &dyn Fn(f64) -> f64,
    left: EndCondition,
    right: EndCondition,
    t_end: f64,
    n_x: usize,
    n_steps: usize,
) -> Result<Reference> {
    let coarse = heat_cn(ic, left, right, (0.0, 1.0), t_end, n_x, n_steps);
    let fine = heat_cn(ic, left, right, (0.0, 1.0), t_end, 2 * n_x - 1, 2 * n_steps);
    check(coarse, &fine, "heat reference")
}

fn burgers_rhs(u: &[f64], dx: f64, left: &EndCondition, right: &EndCondition, out: &mut [f64]) {
    let n = u.len();
    let h2 = dx * dx;
    for i in 0..n {
        let (um, up, ux) = if i == 0 {
            if left.is_dirichlet() {
                out[i] = 0.0;
                continue;
            }
            let ux = (left.g - left.b * u[0]) / left.a;
            (u[1] - 2.0 * dx * ux, u[1], ux)
        } else if i == n - 1 {
            if right.is_dirichlet() {
                out[i] = 0.0;
                continue;
            }
            let ux = (right.g - right.b * u[i]) / right.a;
            (u[i - 1], u[i - 1] + 2.0 * dx * ux, ux)
        } else {
            let ux = if u[i] >= 0.0 {
                if i >= 2 {
                    (3.0 * u[i] - 4.0 * u[i - 1] + u[i - 2]) / (2.0 * dx)
                } else {
                    (u[i] - u[i - 1]) / dx
                }
            } else if i + 2 < n {
                (-3.0 * u[i] + 4.0 * u[i + 1] - u[i + 2]) / (2.0 * dx)
            } else {
                (u[i + 1] - u[i]) / dx
            };
            (u[i - 1], u[i + 1], ux)
        };
        out[i] = (um - 2.0 * u[i] + up) / h2 - u[i] * ux;
    }
}

/// Method of lines for `u_t = u_xx - u u_x`: central diffusion, second-order upwind convection,
/// classical RK4 in time. Values are stored every `store_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn burgers_mol(
    ic: &dyn Fn(f64) -> f64,
    left: EndCondition,
    right: EndCondition,
    (x0, x1): (f64, f64),
    t_end: f64,
    n_x: usize,
    n_steps: usize,
    store_every: usize,
) -> GridSolution {
    let dx = (x1 - x0) / (n_x - 1) as f64;
    let dt = t_end / n_steps as f64;
    let mut u: Vec<f64> = (0..n_x).map(|i| ic(x0 + dx * i as f64)).collect();
    for (end, i) in [(&left, 0), (&right, n_x - 1)] {
        if end.is_dirichlet() {
            u[i] = end.g / end.b;
        }
    }
    let mut out = vec![u.clone()];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n_x], vec![0.0; n_x], vec![0.0; n_x], vec![0.0; n_x]);
    let mut tmp = vec![0.0; n_x];
    for step in 1..=n_steps {
        burgers_rhs(&u, dx, &left, &right, &mut k1);
        for i in 0..n_x {
            tmp[i] = u[i] + 0.5 * dt * k1[i];
        }
        burgers_rhs(&tmp, dx, &left, &right, &mut k2);
        for i in 0..n_x {
            tmp[i] = u[i] + 0.5 * dt * k2[i];
        }
        burgers_rhs(&tmp, dx, &left, &right, &mut k3);
        for i in 0..n_x {
            tmp[i] = u[i] + dt * k3[i];
        }
        burgers_rhs(&tmp, dx, &left, &right, &mut k4);
        for i in 0..n_x {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % store_every == 0 {
            out.push(u.clone());
        }
    }
    GridSolution { x0, x1, t_end, u: out }
}

/// Burgers reference with a halving check; `n_stored` output time intervals.
#[allow(clippy::too_many_arguments)]
pub fn burgers_reference(
    ic: &dyn Fn(f64) -> f64,
    left: EndCondition,
    right: EndCondition,
    span: (f64, f64),
    t_end: f64,
    n_x: usize,
    n_steps: usize,
    n_stored: usize,
) -> Result<Reference> {
    if n_steps % n_stored != 0 {
        return Err(Error::Config("time steps must be a multiple of the stored intervals".into()));
    }
    let coarse = burgers_mol(ic, left, right, span, t_end, n_x, n_steps, n_steps / n_stored);
    let fine = burgers_mol(ic, left, right, span, t_end, 2 * n_x - 1, 4 * n_steps, 4 * n_steps / n_stored);
    check(coarse, &fine, "Burgers reference")
}
