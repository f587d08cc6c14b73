//! Probabilistic solution of `u_t = u_xx` on `[0, T] × [0, 1]` with a constrained prior.
//!
//! The prior enforces the initial condition and both boundary conditions. Time knots are visited
//! in order: at knot `s_k` the current posterior of `u_xx(s_k, ·)` is sampled on the spatial grid
//! and `u_t(s_k, ·)` is conditioned on that draw, with observation covariance equal to the current
//! posterior covariance of `u_t(s_k, ·)`. Covariances of this recursion do not depend on the
//! draws, so they are eliminated once (a block Cholesky of the `u_t` Gram in which each diagonal
//! block is doubled when it is reached and whitened); ensemble members then only propagate means.

use super::mixture_quantile;
use crate::cgrf::{ConstrainedField, Constraint, ConstraintSet, Query, WeightSpec};
use crate::error::{Error, Result};
use crate::expr::SmoothFn;
use crate::geometry::{Domain, Point};
use crate::gp::linalg::symmetrize;
use crate::gp::Moments;
use crate::kernels::{BoundaryOperator, Kernel, MeanFunction, MultiIndex};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// `u_t` observations whose prior variance is below this fraction of the largest are dropped
/// (they are fixed by the boundary constraints).
const DROP_REL_VAR: f64 = 1e-9;

/// Columns of output processed at once.
const OUTPUT_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatBoundary {
    /// `u(0, x) = sin(πx)`, `u(t, 0) = u(t, 1) = 0`.
    Dirichlet,
    /// `u(0, x) = cos(πx) + 2`, `u + u_x = 3` at `x = 0`, `u_x = 0` at `x = 1`.
    RobinNeumann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatConfig {
    pub t_end: f64,
    pub n_t: usize,
    pub n_x: usize,
    pub boundary: HeatBoundary,
    pub lengthscale_t: f64,
    pub lengthscale_x: f64,
    pub precision: f64,
    pub ensemble_size: usize,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            t_end: 0.25,
            n_t: 100,
            n_x: 16,
            boundary: HeatBoundary::Dirichlet,
            lengthscale_t: 0.0175,
            lengthscale_x: 0.4573,
            precision: 1.0,
            ensemble_size: 50,
        }
    }
}

impl HeatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_x < 2 {
            return Err(Error::Config("heat grid needs at least 2 knots in each direction".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble size must be positive".into()));
        }
        let pos = [self.t_end, self.lengthscale_t, self.lengthscale_x, self.precision];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("t_end, lengthscales and precision must be positive".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| self.t_end * k as f64 / (self.n_t - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| j as f64 / (self.n_x - 1) as f64).collect()
    }

    /// Grid points ordered knot by knot.
    pub fn grid(&self) -> Vec<Point> {
        let xs = self.xs();
        self.times().iter().flat_map(|&t| xs.iter().map(move |&x| Point::from([t, x]))).collect()
    }

    /// Initial condition.
    pub fn initial(&self, x: f64) -> f64 {
        use std::f64::consts::PI;
        match self.boundary {
            HeatBoundary::Dirichlet => (PI * x).sin(),
            HeatBoundary::RobinNeumann => (PI * x).cos() + 2.0,
        }
    }
}

/// The constrained prior over `(t, x)`.
pub fn heat_field(cfg: &HeatConfig) -> Result<ConstrainedField> {
    cfg.validate()?;
    let dom = Domain::cube(&[0.0, 0.0], &[cfg.t_end, 1.0])?;
    let vars = ["t", "x"];
    let f = |s: &str| SmoothFn::parse(s, &vars);
    let (ic, (l2, g2), (l3, g3)) = match cfg.boundary {
        HeatBoundary::Dirichlet => {
            ("sin(pi*x)", (BoundaryOperator::identity(), "0"), (BoundaryOperator::identity(), "0"))
        }
        HeatBoundary::RobinNeumann => {
            ("cos(pi*x) + 2", (BoundaryOperator::new(1.0, 1.0, 1)?, "3"), (BoundaryOperator::derivative(1), "0"))
        }
    };
    let initial = Constraint::state(&dom.segment(0)?, &[-1.0, 0.0], f(ic)?, WeightSpec::Recipe)?;
    let seg = |id: usize, dir: f64, op: BoundaryOperator, g: &str| -> Result<Constraint> {
        let s = dom.segment(id)?;
        let p = crate::geometry::Projection::along(s.clone(), &[0.0, dir])?;
        Constraint::new(op, f(g)?, &s, p, WeightSpec::Recipe)
    };
    let cons = vec![initial, seg(2, -1.0, l2, g2)?, seg(3, 1.0, l3, g3)?];
    let kernel = Kernel::se(cfg.precision, &[cfg.lengthscale_t, cfg.lengthscale_x])?;
    Ok(ConstrainedField::new(ConstraintSet::new(dom, cons, MeanFunction::Zero, kernel)?))
}

/// One row of the summary grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub t: f64,
    pub x: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatDiagnostics {
    pub observations: usize,
    pub dropped_observations: usize,
    /// Innovation directions dropped for negligible variance.
    pub truncated_directions: usize,
    /// Largest negative eigenvalue (relative to the block maximum) clipped from an
    /// interrogation covariance.
    pub max_clipped_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct HeatSolution {
    pub config: HeatConfig,
    pub points: Vec<Point>,
    /// Posterior mean of each ensemble member (rows: grid points).
    pub member_means: DMatrix<f64>,
    /// Posterior variance given the interrogations, shared by all members.
    pub conditional_variance: DVector<f64>,
    pub summary: Vec<SummaryRow>,
    pub diagnostics: HeatDiagnostics,
}

/// Innovation directions with variance below this fraction of the block maximum are dropped.
const WHITEN_REL_TOL: f64 = 1e-6;

/// `G` with `G V Gᵀ = I` on the retained eigendirections of `v`.
fn whitener(v: DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = v.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..n).filter(|&i| top > 0.0 && eig.eigenvalues[i] > WHITEN_REL_TOL * top).collect();
    DMatrix::from_fn(keep.len(), n, |r, j| eig.eigenvectors[(j, keep[r])] / eig.eigenvalues[keep[r]].sqrt())
}

/// Square root `R` with `R Rᵀ` equal to `v` with negative eigenvalues set to zero. Also returns
/// the most negative eigenvalue relative to the largest.
fn psd_root(v: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = v.clone().symmetric_eigen();
    let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let low = eig.eigenvalues.min();
    let mut root = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        root.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    (root, (-low / top).max(0.0))
}

/// Covariance of the whitened innovations of the first `upto` knots with passenger queries,
/// given their covariance `ktp` with the kept `u_t` observations.
fn whiten(
    lw: &DMatrix<f64>,
    whiteners: &[DMatrix<f64>],
    blocks: &[(usize, usize)],
    wblocks: &[(usize, usize)],
    ktp: DMatrix<f64>,
    upto: usize,
) -> DMatrix<f64> {
    let rank = if upto == 0 { 0 } else { wblocks[upto - 1].1 };
    let mut out = DMatrix::<f64>::zeros(rank, ktp.ncols());
    for k in 0..upto {
        let ((s, e), (ws, we)) = (blocks[k], wblocks[k]);
        if we == ws {
            continue;
        }
        let mut tmp = ktp.rows(s, e - s).clone_owned();
        if ws > 0 {
            tmp.gemm(-1.0, &lw.view((s, 0), (e - s, ws)), &out.rows(0, ws), 1.0);
        }
        let res = &whiteners[k] * tmp;
        out.rows_mut(ws, we - ws).copy_from(&res);
    }
    out
}

pub fn solve_heat(cfg: &HeatConfig, seed: u64) -> Result<HeatSolution> {
    let cf = heat_field(cfg)?;
    let (n_t, n_x, members) = (cfg.n_t, cfg.n_x, cfg.ensemble_size);
    let points = cfg.grid();
    let n = points.len();
    let ut = MultiIndex::unit(0);
    let uxx = MultiIndex::unit(1).plus_axis(1);
    let tq: Vec<Query> = points.iter().map(|p| Query::partial(ut, p.clone())).collect();
    let xq: Vec<Query> = points.iter().map(|p| Query::partial(uxx, p.clone())).collect();
    let uq: Vec<Query> = points.iter().map(|p| Query::value(p.clone())).collect();

    let prior_t = cf.var(&tq)?;
    let scale = prior_t.max();
    let kept: Vec<usize> = (0..n).filter(|&i| prior_t[i] > DROP_REL_VAR * scale).collect();
    let mut blocks = vec![(0usize, 0usize); n_t];
    let mut pos = 0;
    for (k, b) in blocks.iter_mut().enumerate() {
        let start = pos;
        while pos < kept.len() && kept[pos] / n_x == k {
            pos += 1;
        }
        *b = (start, pos);
    }
    let obs_q: Vec<Query> = kept.iter().map(|&i| tq[i].clone()).collect();
    let n_obs = obs_q.len();
    let m_t = cf.mean(&obs_q)?;

    // Sequential elimination. At knot k the innovation covariance is S_k + C_Xk where S_k is
    // the current covariance of the kept `u_t` values and C_Xk that of the interrogated `u_xx`.
    // Each innovation block is whitened through its eigendecomposition; directions with
    // negligible variance carry no information and are dropped. `lw[i, w]` is the covariance of
    // observation `i` with whitened innovation `w`.
    let mut c = cf.gram(&obs_q)?;
    let mut lw = DMatrix::<f64>::zeros(n_obs, n_obs);
    let mut whiteners: Vec<DMatrix<f64>> = Vec::with_capacity(n_t);
    let mut wblocks = vec![(0usize, 0usize); n_t];
    let mut rank = 0;
    let mut truncated = 0;
    let mut clipped: f64 = 0.0;
    let m_x = cf.mean(&xq)?;
    let mut e_mat = DMatrix::<f64>::zeros(n_obs, members);
    let mut rngs: Vec<ChaCha8Rng> = (0..members)
        .map(|m| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(m as u64);
            r
        })
        .collect();
    for (k, &(s, e)) in blocks.iter().enumerate() {
        let cols = k * n_x..(k + 1) * n_x;
        let wxk = whiten(&lw, &whiteners, &blocks, &wblocks, cf.cov(&obs_q, &xq[cols.clone()])?, k);
        let ws = rank;
        let mut cxx = cf.gram(&xq[cols.clone()])? - wxk.tr_mul(&wxk);
        symmetrize(&mut cxx);
        let (root, neg) = psd_root(&cxx);
        clipped = clipped.max(neg);
        let e_past = e_mat.rows(0, ws);
        let mut mu_x = wxk.tr_mul(&e_past);
        for m in 0..members {
            for j in 0..n_x {
                mu_x[(j, m)] += m_x[cols.start + j];
            }
        }
        let z = DMatrix::from_fn(n_x, members, |_, m| StandardNormal.sample(&mut rngs[m]));
        let draws = mu_x + root * z;

        let b = e - s;
        let local: Vec<usize> = (s..e).map(|i| kept[i] % n_x).collect();
        let mut v = c.view((s, s), (b, b)).clone_owned();
        for i in 0..b {
            for j in 0..b {
                v[(i, j)] += cxx[(local[i], local[j])];
            }
        }
        symmetrize(&mut v);
        let g = whitener(v);
        truncated += b - g.nrows();
        let r = g.nrows();
        wblocks[k] = (rank, rank + r);
        let rest = n_obs - e;
        if rest > 0 && r > 0 {
            let p = c.view((e, s), (rest, b)) * g.transpose();
            c.view_mut((e, e), (rest, rest)).gemm(-1.0, &p, &p.transpose(), 1.0);
            lw.view_mut((e, rank), (rest, r)).copy_from(&p);
        }
        if r > 0 {
            let mu_t = lw.view((s, 0), (b, ws)) * e_past;
            let innov = DMatrix::from_fn(b, members, |i, m| draws[(local[i], m)] - m_t[s + i] - mu_t[(i, m)]);
            let eps = &g * innov;
            e_mat.rows_mut(ws, r).copy_from(&eps);
        }
        rank += r;
        whiteners.push(g);
    }
    drop(c);
    let e_mat = e_mat.rows(0, rank).clone_owned();

    let m_u = cf.mean(&uq)?;
    let prior_u = cf.var(&uq)?;
    let mut member_means = DMatrix::zeros(n, members);
    let mut cond_var = DVector::zeros(n);
    for start in (0..n).step_by(OUTPUT_CHUNK) {
        let len = OUTPUT_CHUNK.min(n - start);
        let wu = whiten(&lw, &whiteners, &blocks, &wblocks, cf.cov(&obs_q, &uq[start..start + len])?, n_t);
        let mu = wu.tr_mul(&e_mat);
        for i in 0..len {
            cond_var[start + i] = prior_u[start + i] - wu.column(i).norm_squared();
            for m in 0..members {
                member_means[(start + i, m)] = m_u[start + i] + mu[(i, m)];
            }
        }
    }

    let summary = (0..n)
        .map(|i| {
            let means: Vec<f64> = member_means.row(i).iter().copied().collect();
            let avg = means.iter().sum::<f64>() / members as f64;
            let spread = means.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / members as f64;
            let sd = cond_var[i].max(0.0).sqrt();
            SummaryRow {
                t: points[i][0],
                x: points[i][1],
                mean: avg,
                q025: mixture_quantile(&means, sd, 0.025),
                q975: mixture_quantile(&means, sd, 0.975),
                variance: spread + cond_var[i].max(0.0),
            }
        })
        .collect();
    Ok(HeatSolution {
        config: cfg.clone(),
        points,
        member_means,
        conditional_variance: cond_var,
        summary,
        diagnostics: HeatDiagnostics {
            observations: n_obs,
            dropped_observations: n - n_obs,
            truncated_directions: truncated,
            max_clipped_eigenvalue: clipped,
        },
    })
}

/// `exp(-π² t) sin(πx)`, the solution of the Dirichlet problem.
pub fn dirichlet_exact(t: f64, x: f64) -> f64 {
    use std::f64::consts::PI;
    (-PI * PI * t).exp() * (PI * x).sin()
}

/// Crank–Nicolson reference for the configured boundary set, converged to
/// [`super::reference::CONVERGENCE_TOL`].
pub fn heat_reference_for(cfg: &HeatConfig) -> Result<super::reference::Reference> {
    use super::reference::{heat_reference, EndCondition};
    let (left, right) = match cfg.boundary {
        HeatBoundary::Dirichlet => (EndCondition::dirichlet(0.0), EndCondition::dirichlet(0.0)),
        HeatBoundary::RobinNeumann => (EndCondition::robin(3.0), EndCondition::neumann(0.0)),
    };
    let c = cfg.clone();
    heat_reference(&move |x| c.initial(x), left, right, cfg.t_end, 401, 1000)
}

/// Largest `|mean − reference|` over the spatial grid at the knots closest to `slices`.
pub fn max_error_at_slices(sol: &HeatSolution, reference: &super::reference::GridSolution, slices: &[f64]) -> f64 {
    let times = sol.config.times();
    let n_x = sol.config.n_x;
    let mut worst: f64 = 0.0;
    for &t in slices {
        let k = (0..times.len()).min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs())).unwrap_or(0);
        for row in &sol.summary[k * n_x..(k + 1) * n_x] {
            worst = worst.max((row.mean - reference.at(row.t, row.x)).abs());
        }
    }
    worst
}
