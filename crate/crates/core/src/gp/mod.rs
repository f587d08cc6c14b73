//! Gaussian-process numerics: covariance assembly, conditioning on (noisy) linear functionals,
//! sampling, marginal likelihood and hyperparameter search.

pub mod data;
pub mod linalg;
pub mod tune;

pub use data::Dataset;
pub use linalg::{factorize, Cholesky, JITTER_LADDER};
pub use tune::{default_grid, tune_hyperparams, Objective, ParamGrid, TraceEntry, TuneResult};

use crate::cgrf::{BaseField, ConstrainedField, Expansion, Field, Query};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::kernels::{Kernel, KernelDerivative, MultiIndex};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use smallvec::SmallVec;
use std::collections::HashMap;

/// Queries per column chunk when assembling cross-covariances.
const COLUMN_CHUNK: usize = 1024;

/// Mean and covariance of linear functionals of a Gaussian field.
pub trait Moments: Send + Sync {
    fn mean(&self, qs: &[Query]) -> Result<DVector<f64>>;

    fn cov(&self, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>>;

    /// Covariance of `qs` with itself, exactly symmetric.
    fn gram(&self, qs: &[Query]) -> Result<DMatrix<f64>> {
        let mut k = self.cov(qs, qs)?;
        linalg::symmetrize(&mut k);
        Ok(k)
    }

    fn var(&self, qs: &[Query]) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(qs.len());
        for (i, q) in qs.iter().enumerate() {
            let one = std::slice::from_ref(q);
            v[i] = self.cov(one, one)?[(0, 0)];
        }
        Ok(v)
    }
}

impl<M: Moments + ?Sized> Moments for &M {
    fn mean(&self, qs: &[Query]) -> Result<DVector<f64>> {
        (**self).mean(qs)
    }

    fn cov(&self, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>> {
        (**self).cov(rows, cols)
    }

    fn var(&self, qs: &[Query]) -> Result<DVector<f64>> {
        (**self).var(qs)
    }
}

impl<M: Moments + ?Sized> Moments for Box<M> {
    fn mean(&self, qs: &[Query]) -> Result<DVector<f64>> {
        (**self).mean(qs)
    }

    fn cov(&self, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>> {
        (**self).cov(rows, cols)
    }

    fn var(&self, qs: &[Query]) -> Result<DVector<f64>> {
        (**self).var(qs)
    }
}

macro_rules! field_moments {
    ($t:ty) => {
        impl Moments for $t {
            fn mean(&self, qs: &[Query]) -> Result<DVector<f64>> {
                field_mean(self, qs)
            }

            fn cov(&self, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>> {
                field_cov(self, rows, cols)
            }

            fn var(&self, qs: &[Query]) -> Result<DVector<f64>> {
                field_var(self, qs)
            }
        }
    };
}

field_moments!(BaseField);
field_moments!(ConstrainedField);

type AtomKey = (SmallVec<[u64; 4]>, MultiIndex);

/// Distinct `(point, derivative index)` pairs of the base field.
#[derive(Clone, Debug, Default)]
pub struct AtomSet {
    pub atoms: Vec<(Point, MultiIndex)>,
    lookup: HashMap<AtomKey, usize>,
}

impl AtomSet {
    pub fn insert(&mut self, p: &Point, idx: MultiIndex) -> usize {
        let key = (p.iter().map(|v| v.to_bits()).collect(), idx);
        let next = self.atoms.len();
        *self.lookup.entry(key).or_insert_with(|| {
            self.atoms.push((p.clone(), idx));
            next
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Expansions of a list of queries over a shared atom set.
#[derive(Clone, Debug, Default)]
pub struct Expanded {
    pub offsets: Vec<f64>,
    pub atoms: AtomSet,
    pub rows: Vec<SmallVec<[(usize, f64); 8]>>,
}

pub fn expand_all(field: &dyn Field, qs: &[Query]) -> Result<Expanded> {
    let exps: Vec<Expansion> = qs.par_iter().map(|q| field.expand(q)).collect::<Result<_>>()?;
    let mut out = Expanded::default();
    for e in exps {
        out.offsets.push(e.offset);
        out.rows.push(e.atoms.iter().map(|a| (out.atoms.insert(&a.point, a.index), a.coef)).collect());
    }
    Ok(out)
}

/// Covariance between two atom sets. With `symmetric`, `a` and `b` must be the same set.
pub fn atom_cov(kernel: &Kernel, a: &AtomSet, b: &AtomSet, symmetric: bool) -> Result<DMatrix<f64>> {
    let mut ia: Vec<MultiIndex> = a.atoms.iter().map(|x| x.1).collect();
    let mut ib: Vec<MultiIndex> = b.atoms.iter().map(|x| x.1).collect();
    ia.sort();
    ia.dedup();
    ib.sort();
    ib.dedup();
    let mut derivs: HashMap<(MultiIndex, MultiIndex), KernelDerivative> = HashMap::new();
    for &l in &ia {
        for &r in &ib {
            derivs.insert((l, r), kernel.derivative(l, r)?);
        }
    }
    // groups of row atoms per index, so each column walks one derivative at a time
    let groups: Vec<(MultiIndex, Vec<usize>)> =
        ia.iter().map(|&idx| (idx, (0..a.len()).filter(|&i| a.atoms[i].1 == idx).collect())).collect();
    let (na, nb) = (a.len(), b.len());
    let mut k = DMatrix::zeros(na, nb);
    if na == 0 {
        return Ok(k);
    }
    k.as_mut_slice().par_chunks_mut(na).enumerate().for_each(|(j, col)| {
        let (pj, idx_j) = &b.atoms[j];
        for (idx_i, rows) in &groups {
            let d = &derivs[&(*idx_i, *idx_j)];
            for &i in rows {
                if !symmetric || i <= j {
                    col[i] = d.eval(&a.atoms[i].0, pj);
                }
            }
        }
    });
    if symmetric {
        for j in 0..nb {
            for i in (j + 1)..na {
                k[(i, j)] = k[(j, i)];
            }
        }
    }
    Ok(k)
}

/// `A_r K_atoms A_c^T`.
fn combine(r: &Expanded, c: &Expanded, katoms: &DMatrix<f64>) -> DMatrix<f64> {
    let nar = r.atoms.len();
    let mut t = DMatrix::<f64>::zeros(nar, c.rows.len());
    t.as_mut_slice().par_chunks_mut(nar.max(1)).enumerate().for_each(|(q, col)| {
        if nar == 0 {
            return;
        }
        for &(u, coef) in &c.rows[q] {
            for (dst, src) in col.iter_mut().zip(katoms.column(u).iter()) {
                *dst += coef * src;
            }
        }
    });
    let mut out = DMatrix::zeros(r.rows.len(), c.rows.len());
    for q in 0..c.rows.len() {
        let tc = t.column(q);
        for (p, row) in r.rows.iter().enumerate() {
            out[(p, q)] = row.iter().map(|&(u, coef)| coef * tc[u]).sum();
        }
    }
    out
}

pub fn field_mean(field: &dyn Field, qs: &[Query]) -> Result<DVector<f64>> {
    let v: Vec<f64> = qs.par_iter().map(|q| field.expand(q).map(|e| e.offset)).collect::<Result<_>>()?;
    Ok(DVector::from_vec(v))
}

pub fn field_cov(field: &dyn Field, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>> {
    let er = expand_all(field, rows)?;
    let same = std::ptr::eq(rows, cols);
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    if same && rows.len() <= COLUMN_CHUNK {
        let k = atom_cov(field.kernel(), &er.atoms, &er.atoms, true)?;
        return Ok(combine(&er, &er, &k));
    }
    for start in (0..cols.len()).step_by(COLUMN_CHUNK) {
        let end = (start + COLUMN_CHUNK).min(cols.len());
        let ec = expand_all(field, &cols[start..end])?;
        let k = atom_cov(field.kernel(), &er.atoms, &ec.atoms, false)?;
        out.columns_mut(start, end - start).copy_from(&combine(&er, &ec, &k));
    }
    Ok(out)
}

pub fn field_var(field: &dyn Field, qs: &[Query]) -> Result<DVector<f64>> {
    let kern = field.kernel();
    let v: Vec<f64> = qs
        .par_iter()
        .map(|q| {
            let e = field.expand(q)?;
            crate::cgrf::expansion_cov(kern, &e, &e)
        })
        .collect::<Result<_>>()?;
    Ok(DVector::from_vec(v))
}

/// Conditions `prior` on `data` (noise variance `σ²` added to the Gram diagonal).
pub struct Posterior<P: Moments> {
    prior: P,
    obs: Vec<Query>,
    chol: Cholesky,
    alpha: DVector<f64>,
    resid: DVector<f64>,
}

pub fn condition<P: Moments>(prior: P, data: &Dataset) -> Result<Posterior<P>> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot condition on an empty dataset".into()));
    }
    let obs = data.queries();
    let mut k = prior.gram(&obs)?;
    let nv = data.noise_sd * data.noise_sd;
    for i in 0..k.nrows() {
        k[(i, i)] += nv;
    }
    let chol = factorize(&k)?;
    let resid = DVector::from_column_slice(&data.y) - prior.mean(&obs)?;
    let alpha = chol.solve_vec(&resid);
    Ok(Posterior { prior, obs, chol, alpha, resid })
}

impl<P: Moments> Posterior<P> {
    pub fn prior(&self) -> &P {
        &self.prior
    }

    /// Jitter added by the factorization on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.chol.jitter()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    /// `-½ rᵀ(K + σ²I)⁻¹r - ½ log det(K + σ²I) - (N/2) log 2π` with `r = y - m`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.obs.len() as f64;
        -0.5 * self.resid.dot(&self.alpha) - 0.5 * self.chol.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    fn whitened(&self, qs: &[Query]) -> Result<DMatrix<f64>> {
        let mut w = self.prior.cov(&self.obs, qs)?;
        self.chol.solve_lower_in_place(&mut w);
        Ok(w)
    }
}

impl<P: Moments> Moments for Posterior<P> {
    fn mean(&self, qs: &[Query]) -> Result<DVector<f64>> {
        let kx = self.prior.cov(qs, &self.obs)?;
        Ok(self.prior.mean(qs)? + kx * &self.alpha)
    }

    fn cov(&self, rows: &[Query], cols: &[Query]) -> Result<DMatrix<f64>> {
        let wr = self.whitened(rows)?;
        let k = self.prior.cov(rows, cols)?;
        if std::ptr::eq(rows, cols) {
            return Ok(k - wr.tr_mul(&wr));
        }
        let wc = self.whitened(cols)?;
        Ok(k - wr.tr_mul(&wc))
    }

    fn var(&self, qs: &[Query]) -> Result<DVector<f64>> {
        let w = self.whitened(qs)?;
        let prior = self.prior.var(qs)?;
        Ok(DVector::from_fn(qs.len(), |i, _| prior[i] - w.column(i).norm_squared()))
    }
}

/// Log marginal likelihood of `data` under `prior`.
pub fn log_marginal_likelihood<P: Moments>(prior: P, data: &Dataset) -> Result<f64> {
    Ok(condition(prior, data)?.log_marginal_likelihood())
}

/// Mean squared difference between the predictive mean and the test targets.
pub fn mspe(model: &dyn Moments, test: &Dataset) -> Result<f64> {
    let m = model.mean(&test.queries())?;
    Ok(m.iter().zip(&test.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / test.len().max(1) as f64)
}

/// Standard normal vector for draw `draw` of seed `seed`; entry `i` is the `i`-th variate of the
/// stream so values depend only on `(seed, i, draw)`.
pub fn normal_stream(seed: u64, draw: u64, n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw);
    DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
}

/// Draws from `N(mean, cov)` as columns.
pub fn sample_gaussian(mean: &DVector<f64>, cov: &DMatrix<f64>, n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let chol = factorize(cov)?;
    let n = mean.len();
    let cols: Vec<DVector<f64>> =
        (0..n_draws).into_par_iter().map(|d| mean + chol.l() * normal_stream(seed, d as u64, n)).collect();
    Ok(if cols.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&cols) })
}

/// Joint draws of `qs` for a field, one column per draw.
///
/// The base field is drawn at the distinct atoms and each query is formed from its expansion,
/// so boundary values of a constrained field are reproduced up to roundoff in the weights.
pub fn sample(field: &dyn Field, qs: &[Query], n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let e = expand_all(field, qs)?;
    let k = atom_cov(field.kernel(), &e.atoms, &e.atoms, true)?;
    let base = sample_gaussian(&DVector::zeros(e.atoms.len()), &k, n_draws, seed)?;
    let mut out = DMatrix::zeros(qs.len(), n_draws);
    for d in 0..n_draws {
        let col = base.column(d);
        for (i, row) in e.rows.iter().enumerate() {
            out[(i, d)] = e.offsets[i] + row.iter().map(|&(u, c)| c * col[u]).sum::<f64>();
        }
    }
    Ok(out)
}

/// Value queries at each point.
pub fn value_queries(points: &[Point]) -> Vec<Query> {
    points.iter().map(|p| Query::value(p.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgrf::{Constraint, ConstraintSet, WeightSpec};
    use crate::expr::SmoothFn;
    use crate::geometry::Domain;
    use crate::kernels::MeanFunction;

    fn se1(lambda: f64) -> BaseField {
        BaseField::new(Kernel::se(1.0, &[lambda]).unwrap(), MeanFunction::Zero)
    }

    fn pts(v: &[f64]) -> Vec<Point> {
        v.iter().map(|&x| Point::from(x)).collect()
    }

    fn pinned(target: &str, weight: WeightSpec) -> ConstrainedField {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let c = Constraint::state(&dom.segment(0).unwrap(), &[-1.0], SmoothFn::parse(target, &["x1"]).unwrap(), weight)
            .unwrap();
        ConstrainedField::new(
            ConstraintSet::new(dom, vec![c], MeanFunction::Zero, Kernel::se(1.0, &[0.3]).unwrap()).unwrap(),
        )
    }

    #[test]
    fn gram_examples() {
        let f = se1(0.5);
        let k = f.gram(&value_queries(&pts(&[0.3]))).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        let k = f.gram(&value_queries(&pts(&[0.3, 0.3]))).unwrap();
        assert!(k.determinant().abs() < 1e-12);
        let cf = pinned("0", WeightSpec::Recipe);
        let k = cf.gram(&value_queries(&vec![Point::from(0.0); 10])).unwrap();
        assert!(k.amax() < 1e-10);
    }

    #[test]
    fn assembled_cov_matches_pairwise() {
        let cf = pinned("1", WeightSpec::Recipe);
        let xs = pts(&[0.0, 0.2, 0.5, 0.9]);
        let qs: Vec<Query> =
            xs.iter().flat_map(|x| [Query::value(x.clone()), Query::partial(MultiIndex::unit(0), x.clone())]).collect();
        let k = cf.gram(&qs).unwrap();
        for (i, a) in qs.iter().enumerate() {
            for (j, b) in qs.iter().enumerate() {
                let direct =
                    crate::cgrf::expansion_cov(cf.kernel(), &cf.expand(a).unwrap(), &cf.expand(b).unwrap()).unwrap();
                assert!((k[(i, j)] - direct).abs() < 1e-13);
            }
        }
        let v = cf.var(&qs).unwrap();
        assert!((v - k.diagonal()).amax() < 1e-13);
    }

    #[test]
    fn interpolation_and_lml() {
        let f = se1(0.4);
        let data = Dataset::new(pts(&[0.3]), vec![0.7], 0.0).unwrap();
        let post = condition(&f, &data).unwrap();
        let q = value_queries(&pts(&[0.3]));
        assert!((post.mean(&q).unwrap()[0] - 0.7).abs() < 1e-12);
        assert!(post.var(&q).unwrap()[0].abs() < 1e-10);
        let zero = Dataset::new(pts(&[0.3]), vec![0.0], 0.0).unwrap();
        let lml = log_marginal_likelihood(&f, &zero).unwrap();
        assert!((lml + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn mspe_examples() {
        let f = se1(0.4);
        let c = Dataset::new(pts(&[0.1, 0.5]), vec![2.0, 2.0], 0.0).unwrap();
        assert!((mspe(&f, &c).unwrap() - 4.0).abs() < 1e-15);
        let train = Dataset::new(pts(&[0.1, 0.4, 0.8]), vec![0.3, -1.0, 0.2], 0.0).unwrap();
        let post = condition(&f, &train).unwrap();
        assert!(mspe(&post, &train).unwrap() < 1e-16);
    }

    #[test]
    fn linear_data_regression() {
        let f = se1(20.0);
        let xs = pts(&[0.0, 0.2, 0.4, 0.6, 0.8]);
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x[0]).collect();
        let post = condition(&f, &Dataset::new(xs, y, 0.0).unwrap()).unwrap();
        let m = post.mean(&value_queries(&pts(&[0.5]))).unwrap()[0];
        assert!((m - 2.0).abs() < 1e-3, "{m}");
    }

    #[test]
    fn constraint_persists_in_posterior() {
        let cf = pinned("0", WeightSpec::Recipe);
        let data = Dataset::new(pts(&[0.3, 0.6, 0.9]), vec![1.0, -2.0, 0.5], 0.1).unwrap();
        let post = condition(&cf, &data).unwrap();
        let q = value_queries(&pts(&[0.0]));
        assert!(post.mean(&q).unwrap()[0].abs() < 1e-8);
        assert!(post.var(&q).unwrap()[0].abs() < 1e-10);
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let f = se1(0.2);
        let data = Dataset::new(pts(&[0.1, 0.35, 0.7]), vec![0.0, 1.0, 0.0], 0.05).unwrap();
        let post = condition(&f, &data).unwrap();
        let q = value_queries(&pts(&[0.0, 0.2, 0.5, 0.75, 1.0]));
        let (vp, v0) = (post.var(&q).unwrap(), f.var(&q).unwrap());
        for i in 0..q.len() {
            assert!(vp[i] <= v0[i] + 1e-10 && vp[i] >= -1e-10);
        }
    }

    #[test]
    fn sequential_equals_joint() {
        let f = se1(0.3);
        let xs = pts(&[0.05, 0.3, 0.45, 0.7, 0.95]);
        let y = vec![0.1, 0.5, -0.2, 0.4, 0.0];
        let all = Dataset::new(xs.clone(), y.clone(), 0.0).unwrap();
        let a = Dataset::new(xs[..2].to_vec(), y[..2].to_vec(), 0.0).unwrap();
        let b = Dataset::new(xs[2..].to_vec(), y[2..].to_vec(), 0.0).unwrap();
        let joint = condition(&f, &all).unwrap();
        let seq = condition(condition(&f, &a).unwrap(), &b).unwrap();
        let probes = value_queries(&(0..20).map(|i| Point::from(i as f64 / 19.0)).collect::<Vec<_>>());
        assert!((joint.mean(&probes).unwrap() - seq.mean(&probes).unwrap()).amax() < 1e-8);
    }

    #[test]
    fn bridge_by_conditioning_matches_recipe_prior() {
        let kern = Kernel::se(1.0, &[0.35]).unwrap();
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let zero = || SmoothFn::parse("0", &["x1"]).unwrap();
        let cons = vec![
            Constraint::state(&dom.segment(0).unwrap(), &[-1.0], zero(), WeightSpec::Recipe).unwrap(),
            Constraint::state(&dom.segment(1).unwrap(), &[1.0], zero(), WeightSpec::Recipe).unwrap(),
        ];
        let cf = ConstrainedField::new(ConstraintSet::new(dom, cons, MeanFunction::Zero, kern.clone()).unwrap());
        let base = BaseField::new(kern, MeanFunction::Zero);
        let post = condition(&base, &Dataset::new(pts(&[0.0, 1.0]), vec![0.0, 0.0], 0.0).unwrap()).unwrap();
        let q = value_queries(&pts(&[0.1, 0.33, 0.5, 0.8]));
        assert!((post.gram(&q).unwrap() - cf.gram(&q).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_exact_on_boundary() {
        let cf = pinned("0.25", WeightSpec::Recipe);
        let q = value_queries(&pts(&[0.0, 0.4, 0.8]));
        let a = sample(&cf, &q, 5, 7).unwrap();
        let b = sample(&cf, &q, 5, 7).unwrap();
        assert_eq!(a, b);
        for d in 0..5 {
            assert!((a[(0, d)] - 0.25).abs() < 1e-6);
        }
        assert_ne!(a, sample(&cf, &q, 5, 8).unwrap());
    }

    #[test]
    fn sample_mean_within_monte_carlo_error() {
        let f = BaseField::new(
            Kernel::se(1.0, &[0.3]).unwrap(),
            MeanFunction::Expr(SmoothFn::parse("sin(3*x1)", &["x1"]).unwrap()),
        );
        let q = value_queries(&pts(&[0.1, 0.5, 0.9]));
        let n = 10_000;
        let s = sample(&f, &q, n, 1).unwrap();
        let m = f.mean(&q).unwrap();
        let v = f.var(&q).unwrap();
        for i in 0..3 {
            let emp = s.row(i).sum() / n as f64;
            assert!((emp - m[i]).abs() < 4.0 * (v[i] / n as f64).sqrt());
        }
    }
}
