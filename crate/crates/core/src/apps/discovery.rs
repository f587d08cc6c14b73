//! Data-driven discovery of Burgers' equation `u_t = u_xx - u u_x` on `[0, 1] × [-10, 10]`.
//!
//! Noisy values of `u` on a fixed space-time design are smoothed by a GRF or cGRF prior. Posterior
//! means of `u, u_x, u_xx, u_t` on an interior lattice feed a sequentially thresholded least
//! squares regression of `u_t` on a library of candidate terms.

use super::reference::{burgers_reference, EndCondition, GridSolution, Reference};
use crate::cgrf::{BaseField, ConstrainedField, Constraint, ConstraintSet, Query, WeightSpec};
use crate::error::{Error, Result};
use crate::expr::{Expr, SmoothFn};
use crate::geometry::{Domain, Point, Projection};
use crate::gp::tune::{tune_hyperparams, Objective, ParamGrid};
use crate::gp::{condition, Dataset, Moments};
use crate::kernels::{BoundaryOperator, Kernel, MeanFunction, MultiIndex};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const T_END: f64 = 1.0;
pub const X_LO: f64 = -10.0;
pub const X_HI: f64 = 10.0;
pub const INITIAL_CONDITION: &str = "2*exp(-15*(x-9)^2) + 1.5*exp(-15*(x+1)^2) + exp(-25*(x+9)^2)";

/// Ridge added to the normal equations when the regression matrix is numerically singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;
const SINGULAR_COND: f64 = 1e12;

const VARS: [&str; 2] = ["t", "x"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurgersBoundary {
    Dirichlet,
    Neumann,
    Robin,
}

impl BurgersBoundary {
    pub const ALL: [BurgersBoundary; 3] =
        [BurgersBoundary::Dirichlet, BurgersBoundary::Neumann, BurgersBoundary::Robin];

    pub fn operator(self) -> BoundaryOperator {
        match self {
            BurgersBoundary::Dirichlet => BoundaryOperator::identity(),
            BurgersBoundary::Neumann => BoundaryOperator::derivative(1),
            BurgersBoundary::Robin => BoundaryOperator { a: 1.0, b: 1.0, axis: 1 },
        }
    }

    /// `L g1` at `x`, the constant side target.
    pub fn target(self, x: f64) -> f64 {
        let ic = initial_condition();
        let p = [0.0, x];
        let v = ic.eval(&p);
        let dv = ic.eval_partial(&[0, 1, 0, 0], &p);
        match self {
            BurgersBoundary::Dirichlet => v,
            BurgersBoundary::Neumann => dv,
            BurgersBoundary::Robin => v + dv,
        }
    }

    fn end(self, x: f64) -> EndCondition {
        let g = self.target(x);
        match self {
            BurgersBoundary::Dirichlet => EndCondition::dirichlet(g),
            BurgersBoundary::Neumann => EndCondition::neumann(g),
            BurgersBoundary::Robin => EndCondition::robin(g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Cgrf,
    Grf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub boundary: BurgersBoundary,
    pub noise_sd: f64,
    pub prior: PriorKind,
    /// Observation design: `data_n_t × data_n_x` uniform grid over the whole domain.
    pub data_n_t: usize,
    pub data_n_x: usize,
    /// Regression lattice: `lattice_n_t × lattice_n_x` interior points.
    pub lattice_n_t: usize,
    pub lattice_n_x: usize,
    /// Time range of the lattice; its points are interior to `lattice_t × [-10, 10]`.
    pub lattice_t: [f64; 2],
    /// Candidate term names; empty means [`Library::standard`].
    pub library: Vec<String>,
    pub threshold: f64,
    pub iterations: usize,
    /// Fixed `[precision, lengthscale_t, lengthscale_x]`; tuned by marginal likelihood if absent.
    pub hyperparameters: Option<[f64; 3]>,
    pub tune_budget: usize,
    pub reference_n_x: usize,
    pub reference_steps: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            boundary: BurgersBoundary::Dirichlet,
            noise_sd: 0.2,
            prior: PriorKind::Cgrf,
            data_n_t: 21,
            data_n_x: 81,
            lattice_n_t: 30,
            lattice_n_x: 40,
            lattice_t: [0.05, T_END],
            library: Vec::new(),
            threshold: 0.05,
            iterations: 10,
            hyperparameters: None,
            tune_budget: 16,
            reference_n_x: 2401,
            reference_steps: 24000,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_n_t < 2 || self.data_n_x < 2 || self.lattice_n_t < 1 || self.lattice_n_x < 1 {
            return Err(Error::Config(
                "discovery designs need at least 2 data knots and 1 lattice point per axis".into(),
            ));
        }
        let [a, b] = self.lattice_t;
        if !(0.0 <= a && a < b && b <= T_END) {
            return Err(Error::Config("lattice_t must be an increasing sub-range of [0, 1]".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        if !(self.threshold >= 0.0) || self.iterations == 0 {
            return Err(Error::Config("threshold must be non-negative and iterations positive".into()));
        }
        if let Some(h) = self.hyperparameters {
            if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config("hyperparameters must be positive".into()));
            }
        } else if self.tune_budget == 0 {
            return Err(Error::Config("tune_budget must be positive when hyperparameters are not fixed".into()));
        }
        if self.reference_n_x < 3 || self.reference_steps == 0 || self.reference_steps % 100 != 0 {
            return Err(Error::Config("reference grid needs 3 nodes and a multiple of 100 steps".into()));
        }
        self.library().map(|_| ())
    }

    pub fn library(&self) -> Result<Library> {
        if self.library.is_empty() {
            Ok(Library::standard())
        } else {
            Library::from_names(&self.library)
        }
    }

    pub fn data_points(&self) -> Vec<Point> {
        let ts = linspace(0.0, T_END, self.data_n_t);
        let xs = linspace(X_LO, X_HI, self.data_n_x);
        ts.iter().flat_map(|&t| xs.iter().map(move |&x| Point::from([t, x]))).collect()
    }

    /// Interior lattice, uniform and excluding the domain edges.
    pub fn lattice(&self) -> Vec<Point> {
        let inner = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            (1..=n).map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64).collect::<Vec<_>>()
        };
        let ts = inner(self.lattice_t[0], self.lattice_t[1], self.lattice_n_t);
        let xs = inner(X_LO, X_HI, self.lattice_n_x);
        ts.iter().flat_map(|&t| xs.iter().map(move |&x| Point::from([t, x]))).collect()
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn initial_condition() -> SmoothFn {
    SmoothFn::parse(INITIAL_CONDITION, &VARS).expect("initial condition parses")
}

/// Monomial `u^a u_x^b u_xx^c`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub powers: [u32; 3],
}

impl Term {
    fn from_powers(powers: [u32; 3]) -> Term {
        let mut parts = Vec::new();
        for (sym, &p) in ["u", "u_x", "u_xx"].iter().zip(&powers) {
            match p {
                0 => {}
                1 => parts.push(sym.to_string()),
                _ => parts.push(format!("{sym}^{p}")),
            }
        }
        let name = if parts.is_empty() { "1".to_string() } else { parts.join("*") };
        Term { name, powers }
    }

    pub fn eval(&self, u: f64, ux: f64, uxx: f64) -> f64 {
        u.powi(self.powers[0] as i32) * ux.powi(self.powers[1] as i32) * uxx.powi(self.powers[2] as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Library {
    pub terms: Vec<Term>,
}

/// Exponents of the standard library, in order.
const STANDARD: [[u32; 3]; 20] = [
    [0, 0, 0],
    [1, 0, 0],
    [2, 0, 0],
    [3, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [2, 1, 0],
    [3, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [2, 0, 1],
    [3, 0, 1],
    [0, 2, 0],
    [1, 2, 0],
    [0, 0, 2],
    [1, 0, 2],
    [0, 1, 1],
    [0, 2, 1],
    [0, 1, 2],
    [1, 1, 1],
];

impl Library {
    /// Twenty monomials in `u, u_x, u_xx` from `1` to `u*u_x*u_xx`.
    pub fn standard() -> Library {
        Library { terms: STANDARD.iter().map(|&p| Term::from_powers(p)).collect() }
    }

    pub fn from_names(names: &[String]) -> Result<Library> {
        let all: Vec<Term> =
            (0..4).flat_map(|a| (0..4).flat_map(move |b| (0..4).map(move |c| Term::from_powers([a, b, c])))).collect();
        let mut terms: Vec<Term> = Vec::new();
        for n in names {
            let t = all
                .iter()
                .find(|t| &t.name == n)
                .ok_or_else(|| Error::Config(format!("unknown library term {n:?}")))?;
            if terms.contains(t) {
                return Err(Error::Config(format!("duplicate library term {n:?}")));
            }
            terms.push(t.clone());
        }
        for needed in TRUTH.iter().map(|(n, _)| n) {
            if !terms.iter().any(|t| t.name == *needed) {
                return Err(Error::Config(format!("library must contain {needed}")));
            }
        }
        Ok(Library { terms })
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    pub fn truth(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| TRUTH.iter().find(|(n, _)| *n == t.name).map_or(0.0, |(_, c)| *c)),
        )
    }
}

/// The true right-hand side.
pub const TRUTH: [(&str, f64); 2] = [("u_xx", 1.0), ("u*u_x", -1.0)];

/// Sequentially thresholded least squares: least squares, zero coefficients whose normalized
/// size `|β_j| rms(θ_j) / rms(y)` is below `tau`, refit on the survivors, `iterations` times or
/// until the support stops changing. Returns the coefficients and whether the ridge fallback was
/// used.
pub fn stlsq(theta: &DMatrix<f64>, y: &DVector<f64>, tau: f64, iterations: usize) -> (DVector<f64>, bool) {
    let p = theta.ncols();
    let rms = |v: nalgebra::DVectorView<f64>| (v.norm_squared() / v.len().max(1) as f64).sqrt();
    let y_rms = rms(y.column(0));
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let c = rms(theta.column(j));
            if y_rms > 0.0 {
                c / y_rms
            } else {
                c
            }
        })
        .collect();
    let mut active: Vec<usize> = (0..p).filter(|&j| scale[j] > 0.0).collect();
    let mut coef = DVector::zeros(p);
    let mut ridged = false;
    for it in 0..=iterations {
        coef.fill(0.0);
        if active.is_empty() {
            break;
        }
        let sub = theta.select_columns(active.iter());
        let (beta, r) = least_squares(&sub, y);
        ridged |= r;
        for (k, &j) in active.iter().enumerate() {
            coef[j] = beta[k];
        }
        if it == iterations {
            break;
        }
        let next: Vec<usize> = active.iter().copied().filter(|&j| (coef[j] * scale[j]).abs() >= tau).collect();
        if next.len() == active.len() {
            break;
        }
        active = next;
    }
    (coef, ridged)
}

fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin > 0.0 && smax / smin < SINGULAR_COND {
        if let Ok(b) = svd.solve(y, 0.0) {
            return (b, false);
        }
    }
    let mut n = a.tr_mul(a);
    let scale = (n.trace() / n.nrows().max(1) as f64).max(f64::MIN_POSITIVE);
    for i in 0..n.nrows() {
        n[(i, i)] += RIDGE_FALLBACK * scale;
    }
    let rhs = a.tr_mul(y);
    let b =
        n.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| n.lu().solve(&rhs).unwrap_or(rhs.map(|_| 0.0)));
    (b, true)
}

/// Converged method-of-lines reference for one boundary type, stored at 100 time intervals.
pub fn burgers_truth(cfg: &DiscoveryConfig) -> Result<Reference> {
    let ic = initial_condition();
    let f = move |x: f64| ic.eval(&[0.0, x]);
    let b = cfg.boundary;
    burgers_reference(&f, b.end(X_LO), b.end(X_HI), (X_LO, X_HI), T_END, cfg.reference_n_x, cfg.reference_steps, 100)
}

/// Noisy observations of `u` on the data design; replicate `replicate` uses stream `replicate`
/// of `seed`.
pub fn simulate_data(cfg: &DiscoveryConfig, truth: &GridSolution, seed: u64, replicate: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let pts = cfg.data_points();
    let y = pts
        .iter()
        .map(|p| {
            let z: f64 = StandardNormal.sample(&mut rng);
            truth.at(p[0], p[1]) + cfg.noise_sd * z
        })
        .collect();
    Dataset::new(pts, y, cfg.noise_sd)
}

/// The cGRF prior: the initial condition on `t = 0` and `L u = L g1(±10)` on both sides.
pub fn burgers_cgrf(boundary: BurgersBoundary, kernel: Kernel) -> Result<ConstrainedField> {
    let dom = Domain::cube(&[0.0, X_LO], &[T_END, X_HI])?;
    let initial = Constraint::state(&dom.segment(0)?, &[-1.0, 0.0], initial_condition(), WeightSpec::Recipe)?;
    let side = |id: usize, dir: f64, x: f64| -> Result<Constraint> {
        let s = dom.segment(id)?;
        let p = Projection::along(s.clone(), &[0.0, dir])?;
        let g = SmoothFn::new(Expr::constant(boundary.target(x), &VARS));
        Constraint::new(boundary.operator(), g, &s, p, WeightSpec::Recipe)
    };
    let cons = vec![initial, side(2, -1.0, X_LO)?, side(3, 1.0, X_HI)?];
    Ok(ConstrainedField::new(ConstraintSet::new(dom, cons, MeanFunction::Zero, kernel)?))
}

fn prior_for(kind: PriorKind, boundary: BurgersBoundary, h: &[f64]) -> Result<Box<dyn Moments>> {
    let kernel = Kernel::se(h[0], &[h[1], h[2]])?;
    Ok(match kind {
        PriorKind::Grf => Box::new(BaseField::new(kernel, MeanFunction::Zero)),
        PriorKind::Cgrf => Box::new(burgers_cgrf(boundary, kernel)?),
    })
}

/// Grid for `[precision, lengthscale_t, lengthscale_x]`: the precision is the inverse sample
/// variance of the data, the lengthscales run over four doublings each.
pub fn hyper_grid(data: &Dataset) -> ParamGrid {
    let n = data.len().max(1) as f64;
    let mean = data.y.iter().sum::<f64>() / n;
    let var = data.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let var = if var > 0.0 { var } else { 1.0 };
    ParamGrid::new()
        .with("precision", vec![1.0 / var])
        .with("lengthscale_t", vec![0.05, 0.1, 0.2, 0.4])
        .with("lengthscale_x", vec![0.2, 0.4, 0.8, 1.6])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscoveryResult {
    pub prior: PriorKind,
    pub boundary: BurgersBoundary,
    pub noise_sd: f64,
    pub hyperparameters: [f64; 3],
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub selected: Vec<String>,
    pub missed_true: usize,
    pub selected_false: usize,
    pub false_discovery_proportion: f64,
    pub coefficient_mse: f64,
    pub log_coefficient_mse: f64,
    pub ridge_fallback: bool,
}

/// Posterior means of `u, u_x, u_xx, u_t` at `points`.
pub fn estimate_state_and_derivatives(post: &dyn Moments, points: &[Point]) -> Result<[DVector<f64>; 4]> {
    let q = |idx: MultiIndex| -> Vec<Query> { points.iter().map(|p| Query::partial(idx, p.clone())).collect() };
    let ux = MultiIndex::unit(1);
    Ok([
        post.mean(&q(MultiIndex::ZERO))?,
        post.mean(&q(ux))?,
        post.mean(&q(ux.plus_axis(1)))?,
        post.mean(&q(MultiIndex::unit(0)))?,
    ])
}

/// One discovery run on the given data.
pub fn discover_pde(cfg: &DiscoveryConfig, data: &Dataset) -> Result<DiscoveryResult> {
    cfg.validate()?;
    let lib = cfg.library()?;
    let noise = cfg.noise_sd;
    let h = match cfg.hyperparameters {
        Some(h) => h,
        None => {
            let family =
                |p: &[f64]| -> Result<(Box<dyn Moments>, f64)> { Ok((prior_for(cfg.prior, cfg.boundary, p)?, noise)) };
            let tuned = tune_hyperparams(family, &hyper_grid(data), data, data, Objective::Lml, cfg.tune_budget)?;
            [tuned.best[0], tuned.best[1], tuned.best[2]]
        }
    };
    let post = condition(prior_for(cfg.prior, cfg.boundary, &h)?, data)?;
    let lattice = cfg.lattice();
    let [u, ux, uxx, ut] = estimate_state_and_derivatives(&post, &lattice)?;
    let theta = DMatrix::from_fn(lattice.len(), lib.terms.len(), |i, j| lib.terms[j].eval(u[i], ux[i], uxx[i]));
    let (coef, ridged) = stlsq(&theta, &ut, cfg.threshold, cfg.iterations);
    let truth = lib.truth();
    let mut missed = 0;
    let mut false_sel = 0;
    let mut selected = Vec::new();
    for j in 0..lib.terms.len() {
        let on = coef[j] != 0.0;
        if on {
            selected.push(lib.terms[j].name.clone());
        }
        match (truth[j] != 0.0, on) {
            (true, false) => missed += 1,
            (false, true) => false_sel += 1,
            _ => {}
        }
    }
    let mse = (&coef - &truth).norm_squared() / lib.terms.len() as f64;
    Ok(DiscoveryResult {
        prior: cfg.prior,
        boundary: cfg.boundary,
        noise_sd: noise,
        hyperparameters: h,
        terms: lib.names(),
        coefficients: coef.iter().copied().collect(),
        selected,
        missed_true: missed,
        selected_false: false_sel,
        false_discovery_proportion: (missed + false_sel) as f64 / lib.terms.len() as f64,
        coefficient_mse: mse,
        log_coefficient_mse: mse.ln(),
        ridge_fallback: ridged,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub prior: PriorKind,
    pub false_discovery_proportion: f64,
    pub coefficient_mse: f64,
    pub selected: String,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub rows: Vec<ReplicateRow>,
    pub median_fdp_cgrf: f64,
    pub median_fdp_grf: f64,
    pub median_mse_cgrf: f64,
    pub median_mse_grf: f64,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Both priors on `replicates` shared datasets. Failed runs are recorded and excluded from the
/// medians.
pub fn compare_priors(cfg: &DiscoveryConfig, replicates: usize, seed: u64) -> Result<Comparison> {
    let truth = burgers_truth(cfg)?;
    let rows: Vec<ReplicateRow> = (0..replicates)
        .into_par_iter()
        .flat_map_iter(|r| {
            let data = simulate_data(cfg, &truth.solution, seed, r as u64);
            [PriorKind::Cgrf, PriorKind::Grf].into_iter().map(move |prior| {
                let run = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
                    discover_pde(&DiscoveryConfig { prior, ..cfg.clone() }, d).map_err(|e| e.to_string())
                });
                match run {
                    Ok(res) => ReplicateRow {
                        replicate: r,
                        prior,
                        false_discovery_proportion: res.false_discovery_proportion,
                        coefficient_mse: res.coefficient_mse,
                        selected: res.selected.join(" "),
                        error: None,
                    },
                    Err(e) => ReplicateRow {
                        replicate: r,
                        prior,
                        false_discovery_proportion: f64::NAN,
                        coefficient_mse: f64::NAN,
                        selected: String::new(),
                        error: Some(e),
                    },
                }
            })
        })
        .collect();
    let col = |prior: PriorKind, f: fn(&ReplicateRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.prior == prior).map(f).collect()
    };
    Ok(Comparison {
        median_fdp_cgrf: median(&col(PriorKind::Cgrf, |r| r.false_discovery_proportion)),
        median_fdp_grf: median(&col(PriorKind::Grf, |r| r.false_discovery_proportion)),
        median_mse_cgrf: median(&col(PriorKind::Cgrf, |r| r.coefficient_mse)),
        median_mse_grf: median(&col(PriorKind::Grf, |r| r.coefficient_mse)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_library_names() {
        let lib = Library::standard();
        assert_eq!(lib.terms.len(), 20);
        let names = lib.names();
        assert_eq!(names[0], "1");
        assert!(names.contains(&"u_xx".to_string()));
        assert!(names.contains(&"u*u_x".to_string()));
        assert!(names.contains(&"u*u_x*u_xx".to_string()));
        assert!(names.contains(&"u_x*u_xx^2".to_string()));
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 20);
        assert_eq!(lib.truth().iter().filter(|c| **c != 0.0).count(), 2);
    }

    #[test]
    fn library_from_names_requires_truth() {
        assert!(Library::from_names(&["u_xx".into(), "u*u_x".into()]).is_ok());
        assert!(Library::from_names(&["u_xx".into()]).is_err());
        assert!(Library::from_names(&["u_xx".into(), "u*u_x".into(), "u_q".into()]).is_err());
    }

    #[test]
    fn stlsq_recovers_sparse_model() {
        let n = 200;
        let theta = DMatrix::from_fn(n, 5, |i, j| ((i * (j + 3)) as f64 * 0.37).sin() + 0.1 * j as f64);
        let beta = DVector::from_vec(vec![0.0, 1.0, 0.0, -2.0, 0.0]);
        let y = &theta * &beta;
        let (coef, ridged) = stlsq(&theta, &y, 0.05, 10);
        assert!(!ridged);
        assert!((coef - beta).amax() < 1e-10);
    }

    #[test]
    fn stlsq_ridge_on_duplicate_columns() {
        let theta = DMatrix::from_fn(30, 3, |i, j| if j == 2 { (i as f64).cos() } else { i as f64 * 0.1 });
        let y = DVector::from_fn(30, |i, _| i as f64 * 0.2);
        let (coef, ridged) = stlsq(&theta, &y, 0.05, 10);
        assert!(ridged);
        assert!((coef[0] + coef[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn side_targets_follow_initial_condition() {
        let ic = initial_condition();
        let x = X_LO;
        assert!((BurgersBoundary::Dirichlet.target(x) - ic.eval(&[0.0, x])).abs() < 1e-15);
        let h = 1e-5;
        let fd = (ic.eval(&[0.0, x + h]) - ic.eval(&[0.0, x - h])) / (2.0 * h);
        assert!((BurgersBoundary::Neumann.target(x) - fd).abs() < 1e-8);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
