//! Boundary-constrained displacement estimation on a dog-bone specimen over `[0, 1]`.
//!
//! The specimen is held at `x2 = -10` and pulled at constant speed at `x2 = 10`. Vertical
//! displacement is observed with noise on a fixed spatial layout at the training and validation
//! times; hyperparameters are chosen by validation MSPE and predictions are scored against the
//! noise-free field at the test times.

use crate::cgrf::{BaseField, ConstrainedField, Constraint, ConstraintSet, WeightSpec};
use crate::error::{Error, Result};
use crate::expr::SmoothFn;
use crate::geometry::{DogBone, Domain, Point};
use crate::gp::tune::{tune_hyperparams, Objective, ParamGrid};
use crate::gp::{condition, mspe, Dataset, Moments};
use crate::kernels::{Kernel, MeanFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use super::discovery::{median, PriorKind};

/// Crosshead speed; the top end sits at `SPEED · t`.
pub const SPEED: f64 = 0.005;
pub const TRAIN_TIMES: [f64; 4] = [0.0, 0.3, 0.6, 0.9];
pub const VALIDATION_TIMES: [f64; 4] = [0.1, 0.4, 0.7, 1.0];
pub const TEST_TIMES: [f64; 3] = [0.2, 0.5, 0.8];

const HALF_HEIGHT: f64 = 10.0;
const VARS: [&str; 3] = ["t", "x1", "x2"];
/// Fraction of the local half-width spanned by the outermost columns of a layout.
const COLUMN_SPAN: f64 = 0.8;

/// Strength of the sinusoidal bend in [`profile`].
const BEND: f64 = 0.15;

/// Monotone map of `[0, 1]` onto itself with slope `1 + 2πb` at the center and `1 - 2πb` at the
/// ends, so the gauge section stretches more than the grips.
pub fn profile(s: f64) -> f64 {
    s - BEND * (2.0 * std::f64::consts::PI * s).sin()
}

/// Manufactured displacement field `0.005 t φ((x2 + 10) / 20)`.
pub fn tensile_truth(t: f64, _x1: f64, x2: f64) -> f64 {
    SPEED * t * profile((x2 + HALF_HEIGHT) / (2.0 * HALF_HEIGHT))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Dense,
    Medium,
    Low,
    Sparse,
}

impl Design {
    pub const ALL: [Design; 4] = [Design::Dense, Design::Medium, Design::Low, Design::Sparse];

    /// Columns across the width and rows along `x2`.
    pub fn shape(self) -> (usize, usize) {
        match self {
            Design::Dense => (5, 13),
            Design::Medium => (4, 9),
            Design::Low => (3, 7),
            Design::Sparse => (2, 5),
        }
    }

    /// Spatial layout: rows at the midpoints of `n2` equal bands of `[-10, 10]`, columns spread
    /// symmetrically over the central 80% of the local width.
    pub fn layout(self, bone: &DogBone) -> Vec<[f64; 2]> {
        let (n1, n2) = self.shape();
        let mut out = Vec::with_capacity(n1 * n2);
        for j in 0..n2 {
            let x2 = -HALF_HEIGHT + 2.0 * HALF_HEIGHT * (j as f64 + 0.5) / n2 as f64;
            let w = COLUMN_SPAN * bone.half_width(x2);
            for i in 0..n1 {
                let x1 = if n1 == 1 { 0.0 } else { -w + 2.0 * w * i as f64 / (n1 - 1) as f64 };
                out.push([x1, x2]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TensileConfig {
    pub bone: DogBone,
    pub design: Design,
    pub noise_sd: f64,
    pub prior: PriorKind,
    /// Layout of the test locations; the training design when absent.
    pub test_design: Option<Design>,
    /// Fixed `[precision, lengthscale_t, lengthscale_x1, lengthscale_x2]`; tuned on the
    /// validation data if absent.
    pub hyperparameters: Option<[f64; 4]>,
    pub tune_budget: usize,
}

impl Default for TensileConfig {
    fn default() -> Self {
        TensileConfig {
            bone: DogBone::default(),
            design: Design::Dense,
            noise_sd: 1e-4,
            prior: PriorKind::Cgrf,
            test_design: None,
            hyperparameters: None,
            tune_budget: 40,
        }
    }
}

impl TensileConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        if let Some(h) = self.hyperparameters {
            if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config("hyperparameters must be positive".into()));
            }
        } else if self.tune_budget == 0 {
            return Err(Error::Config("tune_budget must be positive when hyperparameters are not fixed".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        Domain::space_time(0.0, 1.0, Domain::dog_bone(self.bone.clone())?)
    }

    /// Space-time points of `layout` at each of `times`.
    pub fn points(&self, design: Design, times: &[f64]) -> Vec<Point> {
        let layout = design.layout(&self.bone);
        times.iter().flat_map(|&t| layout.iter().map(move |&[a, b]| Point::from([t, a, b]))).collect()
    }

    pub fn test_points(&self) -> Vec<Point> {
        self.points(self.test_design.unwrap_or(self.design), &TEST_TIMES)
    }
}

/// Exact values of the manufactured field at `points`, tagged with noise level `noise_sd`.
pub fn exact_data(points: Vec<Point>, noise_sd: f64) -> Result<Dataset> {
    let y = points.iter().map(|p| tensile_truth(p[0], p[1], p[2])).collect();
    Dataset::new(points, y, noise_sd)
}

/// Training and validation data for one replicate; replicate `r` uses stream `r` of `seed`.
pub fn simulate(cfg: &TensileConfig, seed: u64, replicate: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let mut noisy = |times: &[f64]| -> Result<Dataset> {
        let mut d = exact_data(cfg.points(cfg.design, times), cfg.noise_sd)?;
        for v in d.y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.noise_sd * z;
        }
        Ok(d)
    };
    let train = noisy(&TRAIN_TIMES)?;
    let val = noisy(&VALIDATION_TIMES)?;
    Ok((train, val))
}

/// `u = 0` at `x2 = -10` and `u = 0.005 t` at `x2 = 10`, each imposed by projecting along `x2`.
pub fn tensile_cgrf(bone: &DogBone, kernel: Kernel) -> Result<ConstrainedField> {
    let dom = Domain::space_time(0.0, 1.0, Domain::dog_bone(bone.clone())?)?;
    let bottom =
        Constraint::state(&dom.segment(2)?, &[0.0, 0.0, -1.0], SmoothFn::parse("0", &VARS)?, WeightSpec::Recipe)?;
    let top = Constraint::state(
        &dom.segment(3)?,
        &[0.0, 0.0, 1.0],
        SmoothFn::parse(&format!("{SPEED}*t"), &VARS)?,
        WeightSpec::Recipe,
    )?;
    Ok(ConstrainedField::new(ConstraintSet::new(dom, vec![bottom, top], MeanFunction::Zero, kernel)?))
}

pub fn prior_for(kind: PriorKind, bone: &DogBone, h: &[f64]) -> Result<Box<dyn Moments>> {
    let kernel = Kernel::se(h[0], &h[1..4])?;
    Ok(match kind {
        PriorKind::Grf => Box::new(BaseField::new(kernel, MeanFunction::Zero)),
        PriorKind::Cgrf => Box::new(tensile_cgrf(bone, kernel)?),
    })
}

/// Grid for `[precision, lengthscale_t, lengthscale_x1, lengthscale_x2]`, precision centered on
/// the inverse second moment of the data.
pub fn hyper_grid(train: &Dataset) -> ParamGrid {
    let m2 = train.y.iter().map(|v| v * v).sum::<f64>() / train.len().max(1) as f64;
    let p = if m2 > 0.0 { 1.0 / m2 } else { 1.0 };
    ParamGrid::new()
        .log_spaced("precision", p, 0.1, 10.0, 3)
        .with("lengthscale_t", vec![0.5, 1.0, 2.0])
        .with("lengthscale_x1", vec![2.0, 4.0, 8.0])
        .with("lengthscale_x2", vec![2.5, 5.0, 10.0, 20.0])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensileFit {
    pub prior: PriorKind,
    pub hyperparameters: [f64; 4],
    pub validation_mspe: Option<f64>,
    pub test_mspe: f64,
    pub log_test_mspe: f64,
    /// Largest `|mean - g|` over both ends at the test times.
    pub boundary_max_error: f64,
}

/// End points `(t, x1, ±10)` at the test times, three across the width.
pub fn boundary_points(bone: &DogBone) -> Vec<Point> {
    let w = COLUMN_SPAN * bone.half_width(HALF_HEIGHT);
    let mut out = Vec::new();
    for &t in &TEST_TIMES {
        for x2 in [-HALF_HEIGHT, HALF_HEIGHT] {
            for x1 in [-w, 0.0, w] {
                out.push(Point::from([t, x1, x2]));
            }
        }
    }
    out
}

/// Tunes (unless fixed), conditions on the training data and scores the test locations.
pub fn fit(cfg: &TensileConfig, train: &Dataset, val: &Dataset) -> Result<TensileFit> {
    cfg.validate()?;
    let noise = cfg.noise_sd;
    let (h, val_mspe) = match cfg.hyperparameters {
        Some(h) => (h, None),
        None => {
            let family =
                |p: &[f64]| -> Result<(Box<dyn Moments>, f64)> { Ok((prior_for(cfg.prior, &cfg.bone, p)?, noise)) };
            let tuned = tune_hyperparams(family, &hyper_grid(train), train, val, Objective::Mspe, cfg.tune_budget)?;
            ([tuned.best[0], tuned.best[1], tuned.best[2], tuned.best[3]], Some(tuned.best_objective))
        }
    };
    let post = condition(prior_for(cfg.prior, &cfg.bone, &h)?, &train.with_noise(noise))?;
    let test = exact_data(cfg.test_points(), 0.0)?;
    let e = mspe(&post, &test)?;
    let ends = exact_data(boundary_points(&cfg.bone), 0.0)?;
    let m = post.mean(&ends.queries())?;
    let boundary_max_error = m.iter().zip(&ends.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(TensileFit {
        prior: cfg.prior,
        hyperparameters: h,
        validation_mspe: val_mspe,
        test_mspe: e,
        log_test_mspe: e.ln(),
        boundary_max_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TensileRow {
    pub replicate: usize,
    pub prior: PriorKind,
    pub log_mspe: f64,
    pub boundary_max_error: f64,
    pub hyperparameters: Option<[f64; 4]>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensileExperiment {
    pub design: Design,
    pub noise_sd: f64,
    pub rows: Vec<TensileRow>,
    pub median_log_mspe_cgrf: f64,
    pub median_log_mspe_grf: f64,
}

/// Both priors on `replicates` shared datasets; failed fits are recorded and left out of the
/// medians.
pub fn tensile_experiment(cfg: &TensileConfig, replicates: usize, seed: u64) -> Result<TensileExperiment> {
    cfg.validate()?;
    let rows: Vec<TensileRow> = (0..replicates)
        .into_par_iter()
        .flat_map_iter(|r| {
            let data = simulate(cfg, seed, r as u64);
            [PriorKind::Cgrf, PriorKind::Grf].into_iter().map(move |prior| {
                let run = data.as_ref().map_err(|e| e.to_string()).and_then(|(tr, va)| {
                    fit(&TensileConfig { prior, ..cfg.clone() }, tr, va).map_err(|e| e.to_string())
                });
                match run {
                    Ok(f) => TensileRow {
                        replicate: r,
                        prior,
                        log_mspe: f.log_test_mspe,
                        boundary_max_error: f.boundary_max_error,
                        hyperparameters: Some(f.hyperparameters),
                        error: None,
                    },
                    Err(e) => TensileRow {
                        replicate: r,
                        prior,
                        log_mspe: f64::NAN,
                        boundary_max_error: f64::NAN,
                        hyperparameters: None,
                        error: Some(e),
                    },
                }
            })
        })
        .collect();
    let col = |p: PriorKind| -> Vec<f64> { rows.iter().filter(|r| r.prior == p).map(|r| r.log_mspe).collect() };
    Ok(TensileExperiment {
        design: cfg.design,
        noise_sd: cfg.noise_sd,
        median_log_mspe_cgrf: median(&col(PriorKind::Cgrf)),
        median_log_mspe_grf: median(&col(PriorKind::Grf)),
        rows,
    })
}
