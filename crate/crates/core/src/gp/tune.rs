//! Hyperparameter search: a log-spaced grid visited from its center outward, then compass search
//! in log space from the best grid point.

use super::{condition, mspe, Dataset, Moments};
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean squared prediction error on the validation data.
    Mspe,
    /// Negative log marginal likelihood of the training data.
    Lml,
}

/// Candidate values per named parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ParamGrid {
    pub fn new() -> ParamGrid {
        ParamGrid { names: Vec::new(), values: Vec::new() }
    }

    /// Adds `n` values log-spaced over `[lo, hi] · center`.
    pub fn log_spaced(mut self, name: &str, center: f64, lo: f64, hi: f64, n: usize) -> ParamGrid {
        let vals = if n <= 1 {
            vec![center]
        } else {
            (0..n).map(|i| center * lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
        };
        self.names.push(name.into());
        self.values.push(vals);
        self
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> ParamGrid {
        self.names.push(name.into());
        self.values.push(values);
        self
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points, ordered by L1 distance of their indices from the grid center.
    fn center_out(&self) -> Vec<Vec<f64>> {
        let mut idx: Vec<Vec<usize>> = vec![vec![]];
        for v in &self.values {
            idx = idx.into_iter().flat_map(|p| (0..v.len()).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        let dist =
            |p: &Vec<usize>| -> usize { p.iter().zip(&self.values).map(|(&i, v)| (2 * i).abs_diff(v.len() - 1)).sum() };
        idx.sort_by(|a, b| dist(a).cmp(&dist(b)).then_with(|| a.cmp(b)));
        idx.into_iter().map(|p| p.iter().zip(&self.values).map(|(&i, v)| v[i]).collect()).collect()
    }

    /// Log spacing per parameter, zero for single-valued parameters.
    fn log_steps(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| {
                let pos: Vec<f64> = v.iter().filter(|&&x| x > 0.0).map(|x| x.ln()).collect();
                if pos.len() < 2 {
                    0.0
                } else {
                    let (lo, hi) =
                        pos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    (hi - lo) / (pos.len() - 1) as f64
                }
            })
            .collect()
    }
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid::new()
    }
}

/// Seven log-spaced values over `[1e-2, 1e2]` times a data scale for the precision, each
/// lengthscale (centered on the median pairwise coordinate distance) and the noise sd.
pub fn default_grid(train: &Dataset) -> ParamGrid {
    let n = train.len();
    let mean = train.y.iter().sum::<f64>() / n.max(1) as f64;
    let var = train.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
    let var = if var > 0.0 { var } else { 1.0 };
    let mut g = ParamGrid::new().log_spaced("precision", 1.0 / var, 1e-2, 1e2, 7);
    let d = train.inputs.first().map_or(0, |p| p.dim());
    for axis in 0..d {
        let mut gaps: Vec<f64> = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let g = (train.inputs[i][axis] - train.inputs[j][axis]).abs();
                if g > 0.0 {
                    gaps.push(g);
                }
            }
        }
        gaps.sort_by(f64::total_cmp);
        let med = if gaps.is_empty() { 1.0 } else { gaps[gaps.len() / 2] };
        g = g.log_spaced(&format!("lengthscale_{}", axis + 1), med, 1e-2, 1e2, 7);
    }
    g.log_spaced("noise_sd", var.sqrt(), 1e-2, 1e2, 7)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub phase: String,
    pub params: Vec<f64>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TuneResult {
    pub names: Vec<String>,
    pub best: Vec<f64>,
    pub best_objective: f64,
    pub trace: Vec<TraceEntry>,
}

/// Minimizes `objective` over the family of priors produced by `family(params) = (prior, noise_sd)`.
///
/// `budget` counts objective evaluations: grid points are evaluated center-outward first and any
/// remaining budget refines the best point by compass search in log space.
pub fn tune_hyperparams<P, F>(
    family: F,
    grid: &ParamGrid,
    train: &Dataset,
    val: &Dataset,
    objective: Objective,
    budget: usize,
) -> Result<TuneResult>
where
    P: Moments,
    F: Fn(&[f64]) -> Result<(P, f64)> + Sync,
{
    if budget == 0 || grid.is_empty() {
        return Err(Error::Precondition("tuning needs a budget of at least 1 and a non-empty grid".into()));
    }
    let eval = |params: &[f64]| -> Result<f64> {
        let (prior, noise) = family(params)?;
        let post = condition(prior, &train.with_noise(noise))?;
        let v = match objective {
            Objective::Mspe => mspe(&post, val)?,
            Objective::Lml => -post.log_marginal_likelihood(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Convergence(format!("objective is {v}")))
        }
    };
    let run = |phase: &str, cands: Vec<Vec<f64>>| -> Vec<TraceEntry> {
        cands
            .into_par_iter()
            .map(|p| {
                let r = eval(&p);
                TraceEntry {
                    phase: phase.into(),
                    params: p,
                    objective: r.as_ref().ok().copied(),
                    error: r.err().map(|e| e.to_string()),
                }
            })
            .collect()
    };
    let mut cands = grid.center_out();
    cands.truncate(budget);
    let mut trace = run("grid", cands);
    let best_of = |t: &[TraceEntry]| -> Option<(Vec<f64>, f64)> {
        t.iter().filter_map(|e| e.objective.map(|o| (e.params.clone(), o))).fold(
            None,
            |acc: Option<(Vec<f64>, f64)>, (p, o)| match acc {
                Some((_, bo)) if bo <= o => acc,
                _ => Some((p, o)),
            },
        )
    };
    let Some((mut best, mut best_obj)) = best_of(&trace) else {
        let first = trace.first().and_then(|e| e.error.clone()).unwrap_or_default();
        return Err(Error::AllCandidatesFailed(first));
    };
    let mut steps = grid.log_steps();
    let mut left = budget - trace.len();
    while left > 0 && steps.iter().any(|&s| s > 1e-3) {
        let mut cands = Vec::new();
        for (i, &s) in steps.iter().enumerate() {
            if s <= 1e-3 || best[i] <= 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut p = best.clone();
                p[i] = (best[i].ln() + sign * s).exp();
                cands.push(p);
            }
        }
        if cands.is_empty() {
            break;
        }
        cands.truncate(left);
        left -= cands.len();
        let round = run("refine", cands);
        match best_of(&round) {
            Some((p, o)) if o < best_obj => {
                best = p;
                best_obj = o;
            }
            _ => steps.iter_mut().for_each(|s| *s *= 0.5),
        }
        trace.extend(round);
    }
    Ok(TuneResult { names: grid.names.clone(), best, best_objective: best_obj, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgrf::BaseField;
    use crate::geometry::Point;
    use crate::gp::{sample, value_queries};
    use crate::kernels::{Kernel, MeanFunction};

    fn se_family(p: &[f64]) -> Result<(BaseField, f64)> {
        Ok((BaseField::new(Kernel::se(p[0], &[p[1]])?, MeanFunction::Zero), p[2]))
    }

    fn data(n: usize, lambda: f64, seed: u64) -> Dataset {
        let xs: Vec<Point> = (0..n).map(|i| Point::from(i as f64 / (n - 1) as f64)).collect();
        let f = BaseField::new(Kernel::se(1.0, &[lambda]).unwrap(), MeanFunction::Zero);
        let y = sample(&f, &value_queries(&xs), 1, seed).unwrap();
        Dataset::new(xs, y.column(0).iter().copied().collect(), 0.0).unwrap()
    }

    #[test]
    fn budget_one_returns_center() {
        let grid = ParamGrid::new()
            .with("precision", vec![0.5, 1.0, 2.0])
            .with("lambda", vec![0.1, 0.3, 0.9])
            .with("noise", vec![0.01]);
        let d = data(8, 0.3, 1);
        let r = tune_hyperparams(se_family, &grid, &d, &d, Objective::Mspe, 1).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best, vec![1.0, 0.3, 0.01]);
    }

    #[test]
    fn recovers_lengthscale() {
        let lambdas = vec![0.125, 0.25, 0.5, 1.0, 2.0];
        let grid =
            ParamGrid::new().with("precision", vec![1.0]).with("lambda", lambdas.clone()).with("noise", vec![0.0]);
        let train = data(25, 0.5, 4);
        let r = tune_hyperparams(se_family, &grid, &train, &train, Objective::Lml, grid.len()).unwrap();
        let i = lambdas.iter().position(|&l| l == r.best[1]).unwrap();
        assert!(i.abs_diff(2) <= 1, "{:?}", r.best);
    }

    #[test]
    fn interpolation_prefers_zero_noise() {
        let grid = ParamGrid::new()
            .with("precision", vec![1.0])
            .with("lambda", vec![0.3])
            .with("noise", vec![0.0, 0.01, 0.1, 1.0]);
        let d = data(10, 0.3, 2);
        let r = tune_hyperparams(se_family, &grid, &d, &d, Objective::Mspe, 4).unwrap();
        assert_eq!(r.best[2], 0.0);
    }

    #[test]
    fn all_failures_are_reported() {
        let grid = ParamGrid::new().with("precision", vec![-1.0]).with("lambda", vec![0.3]).with("noise", vec![0.0]);
        let d = data(5, 0.3, 2);
        assert!(matches!(
            tune_hyperparams(se_family, &grid, &d, &d, Objective::Mspe, 3),
            Err(Error::AllCandidatesFailed(_))
        ));
    }

    #[test]
    fn refinement_improves_and_is_deterministic() {
        let grid =
            ParamGrid::new().with("precision", vec![1.0]).with("lambda", vec![0.1, 1.0]).with("noise", vec![1e-3]);
        let train = data(20, 0.4, 5);
        let r1 = tune_hyperparams(se_family, &grid, &train, &train, Objective::Lml, 20).unwrap();
        let r2 = tune_hyperparams(se_family, &grid, &train, &train, Objective::Lml, 20).unwrap();
        assert_eq!(r1.trace, r2.trace);
        let grid_best =
            r1.trace.iter().filter(|e| e.phase == "grid").filter_map(|e| e.objective).fold(f64::INFINITY, f64::min);
        assert!(r1.best_objective <= grid_best);
        assert!(r1.trace.len() <= 20);
    }

    #[test]
    fn center_out_order() {
        let g = ParamGrid::new().with("a", vec![1.0, 2.0, 3.0]).with("b", vec![10.0, 20.0, 30.0]);
        let order = g.center_out();
        assert_eq!(order[0], vec![2.0, 20.0]);
        assert_eq!(order.len(), 9);
        let dg = default_grid(&data(6, 0.3, 1));
        assert_eq!(dg.names, vec!["precision", "lengthscale_1", "noise_sd"]);
        assert_eq!(dg.len(), 343);
    }
}
