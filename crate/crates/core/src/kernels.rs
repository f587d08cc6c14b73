//! Base covariance kernels, their analytic partial derivatives, linear operators acting on them,
//! and base mean functions.
//!
//! Stationary radial kernels are written in scaled lags `z_j = (x_j - x'_j) / λ_j` as
//! `k = σ² g_0(r)`, `r = |z|`. Differentiation uses `∂_{z_j} g_m(r) = z_j g_{m+1}(r)` with
//! `g_{m+1}(r) = g_m'(r) / r`, so every partial derivative is a finite sum of terms
//! `c · Π z_j^{e_j} · g_m(r)`. The term lists depend only on the multi-index and are cached.

use crate::error::{Error, Result};
use crate::expr::SmoothFn;
use crate::geometry::MAX_DIM;
use num_rational::Ratio;
use smallvec::SmallVec;
use std::collections::HashMap;
use std::sync::{Arc, LazyLock, RwLock};

/// Largest derivative order per argument and dimension accepted by any kernel.
pub const MAX_ORDER_PER_ARG: u8 = 4;

/// Partial-derivative orders per dimension.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub [u8; MAX_DIM]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0; MAX_DIM]);

    pub fn unit(axis: usize) -> MultiIndex {
        let mut m = [0; MAX_DIM];
        m[axis] = 1;
        MultiIndex(m)
    }

    pub fn order(&self) -> u32 {
        self.0.iter().map(|&o| o as u32).sum()
    }

    pub fn get(&self, axis: usize) -> u8 {
        self.0[axis]
    }

    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        let mut m = self.0;
        for (a, b) in m.iter_mut().zip(other.0) {
            *a += b;
        }
        MultiIndex(m)
    }

    pub fn plus_axis(&self, axis: usize) -> MultiIndex {
        let mut m = self.0;
        m[axis] += 1;
        MultiIndex(m)
    }

    fn gather(&self, dims: &[usize]) -> MultiIndex {
        let mut m = [0; MAX_DIM];
        for (k, &d) in dims.iter().enumerate() {
            m[k] = self.0[d];
        }
        MultiIndex(m)
    }

    fn is_supported_on(&self, dim: usize) -> bool {
        self.0[dim..].iter().all(|&o| o == 0)
    }
}

/// Half-integer Matérn smoothness values with closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
    SevenHalves,
}

impl MaternNu {
    pub fn from_value(nu: f64) -> Result<MaternNu> {
        Ok(match nu {
            v if v == 0.5 => MaternNu::Half,
            v if v == 1.5 => MaternNu::ThreeHalves,
            v if v == 2.5 => MaternNu::FiveHalves,
            v if v == 3.5 => MaternNu::SevenHalves,
            _ => {
                return Err(Error::InvalidHyperparams(format!(
                    "Matérn smoothness must be one of 0.5, 1.5, 2.5, 3.5, got {nu}"
                )))
            }
        })
    }

    pub fn value(self) -> f64 {
        self.half_int_p() as f64 + 0.5
    }

    /// `ν - 1/2`, which is also the sample-path differentiability `⌈ν⌉ - 1`.
    pub fn half_int_p(self) -> u8 {
        match self {
            MaternNu::Half => 0,
            MaternNu::ThreeHalves => 1,
            MaternNu::FiveHalves => 2,
            MaternNu::SevenHalves => 3,
        }
    }
}

/// Number of times sample paths are differentiable along a dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Finite(u8),
    Infinite,
}

/// Hyperparameters of a single stationary kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub precision: f64,
    pub lengthscales: Vec<f64>,
    pub nu: Option<f64>,
    pub period: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub dims: Vec<usize>,
    pub kernel: Kernel,
}

/// A base covariance function.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    SquaredExponential {
        precision: f64,
        lengthscales: Vec<f64>,
    },
    Matern {
        nu: MaternNu,
        precision: f64,
        lengthscales: Vec<f64>,
    },
    /// One-dimensional `σ² exp((cos(2π δ / p) - 1) / λ²)`.
    Periodic {
        precision: f64,
        lengthscale: f64,
        period: f64,
    },
    Product(Vec<Factor>),
    Sum(Vec<Kernel>),
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHyperparams(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_lengthscales(ls: &[f64]) -> Result<()> {
    if ls.is_empty() || ls.len() > MAX_DIM {
        return Err(Error::InvalidHyperparams(format!("need between 1 and {MAX_DIM} lengthscales, got {}", ls.len())));
    }
    ls.iter().try_for_each(|&l| check_positive("lengthscale", l))
}

impl Kernel {
    pub fn se(precision: f64, lengthscales: &[f64]) -> Result<Kernel> {
        check_positive("precision", precision)?;
        check_lengthscales(lengthscales)?;
        Ok(Kernel::SquaredExponential { precision, lengthscales: lengthscales.to_vec() })
    }

    pub fn matern(nu: f64, precision: f64, lengthscales: &[f64]) -> Result<Kernel> {
        let nu = MaternNu::from_value(nu)?;
        check_positive("precision", precision)?;
        check_lengthscales(lengthscales)?;
        Ok(Kernel::Matern { nu, precision, lengthscales: lengthscales.to_vec() })
    }

    pub fn periodic(precision: f64, lengthscale: f64, period: f64) -> Result<Kernel> {
        check_positive("precision", precision)?;
        check_positive("lengthscale", lengthscale)?;
        check_positive("period", period)?;
        Ok(Kernel::Periodic { precision, lengthscale, period })
    }

    /// Product of kernels acting on disjoint dimension subsets that together cover `0..d`.
    pub fn product(factors: Vec<Factor>) -> Result<Kernel> {
        if factors.is_empty() {
            return Err(Error::InvalidHyperparams("product needs at least one factor".into()));
        }
        let mut seen = Vec::new();
        for f in &factors {
            if f.dims.len() != f.kernel.dim() {
                return Err(Error::InvalidHyperparams(format!(
                    "factor over dims {:?} has a {}-dimensional kernel",
                    f.dims,
                    f.kernel.dim()
                )));
            }
            seen.extend_from_slice(&f.dims);
        }
        seen.sort_unstable();
        if seen != (0..seen.len()).collect::<Vec<_>>() || seen.len() > MAX_DIM {
            return Err(Error::InvalidHyperparams(format!(
                "product factors must cover disjoint dimensions 0..d, got {seen:?}"
            )));
        }
        Ok(Kernel::Product(factors))
    }

    pub fn sum(kernels: Vec<Kernel>) -> Result<Kernel> {
        let Some(first) = kernels.first() else {
            return Err(Error::InvalidHyperparams("sum needs at least one kernel".into()));
        };
        let d = first.dim();
        if kernels.iter().any(|k| k.dim() != d) {
            return Err(Error::InvalidHyperparams("summed kernels must share a dimension".into()));
        }
        Ok(Kernel::Sum(kernels))
    }

    pub fn dim(&self) -> usize {
        match self {
            Kernel::SquaredExponential { lengthscales, .. } | Kernel::Matern { lengthscales, .. } => lengthscales.len(),
            Kernel::Periodic { .. } => 1,
            Kernel::Product(f) => f.iter().map(|f| f.dims.len()).sum(),
            Kernel::Sum(k) => k[0].dim(),
        }
    }

    /// `k(x, x)` for these stationary kernels.
    pub fn variance(&self) -> f64 {
        match self {
            Kernel::SquaredExponential { precision, .. }
            | Kernel::Matern { precision, .. }
            | Kernel::Periodic { precision, .. } => 1.0 / precision,
            Kernel::Product(f) => f.iter().map(|f| f.kernel.variance()).product(),
            Kernel::Sum(k) => k.iter().map(|k| k.variance()).sum(),
        }
    }

    /// Hyperparameters of a single (non-composite) kernel.
    pub fn hyperparams(&self) -> Option<Hyperparams> {
        match self {
            Kernel::SquaredExponential { precision, lengthscales } => {
                Some(Hyperparams { precision: *precision, lengthscales: lengthscales.clone(), nu: None, period: None })
            }
            Kernel::Matern { nu, precision, lengthscales } => Some(Hyperparams {
                precision: *precision,
                lengthscales: lengthscales.clone(),
                nu: Some(nu.value()),
                period: None,
            }),
            Kernel::Periodic { precision, lengthscale, period } => Some(Hyperparams {
                precision: *precision,
                lengthscales: vec![*lengthscale],
                nu: None,
                period: Some(*period),
            }),
            _ => None,
        }
    }

    /// Smallest lengthscale anywhere in the kernel (sets finite-difference steps).
    pub fn min_lengthscale(&self) -> f64 {
        match self {
            Kernel::SquaredExponential { lengthscales, .. } | Kernel::Matern { lengthscales, .. } => {
                lengthscales.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            Kernel::Periodic { lengthscale, period, .. } => lengthscale.min(period / (2.0 * std::f64::consts::PI)),
            Kernel::Product(f) => f.iter().map(|f| f.kernel.min_lengthscale()).fold(f64::INFINITY, f64::min),
            Kernel::Sum(k) => k.iter().map(|k| k.min_lengthscale()).fold(f64::INFINITY, f64::min),
        }
    }

    /// Sample-path differentiability along `dim`.
    pub fn differentiability_order(&self, dim: usize) -> Smoothness {
        match self {
            Kernel::Matern { nu, .. } => Smoothness::Finite(nu.half_int_p()),
            Kernel::SquaredExponential { .. } | Kernel::Periodic { .. } => Smoothness::Infinite,
            Kernel::Product(f) => f
                .iter()
                .find_map(|f| f.dims.iter().position(|&d| d == dim).map(|k| f.kernel.differentiability_order(k)))
                .unwrap_or(Smoothness::Infinite),
            Kernel::Sum(k) => {
                k.iter().map(|k| k.differentiability_order(dim)).fold(Smoothness::Infinite, |a, b| match (a, b) {
                    (Smoothness::Finite(x), Smoothness::Finite(y)) => Smoothness::Finite(x.min(y)),
                    (Smoothness::Finite(x), _) | (_, Smoothness::Finite(x)) => Smoothness::Finite(x),
                    _ => Smoothness::Infinite,
                })
            }
        }
    }

    fn check_pair(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let d = self.dim();
        for v in [x, y] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_pair(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential { precision, lengthscales } => {
                let r2: f64 = (0..x.len()).map(|j| ((x[j] - y[j]) / lengthscales[j]).powi(2)).sum();
                (-0.5 * r2).exp() / precision
            }
            Kernel::Matern { nu, precision, lengthscales } => {
                let r2: f64 = (0..x.len()).map(|j| ((x[j] - y[j]) / lengthscales[j]).powi(2)).sum();
                let s = (2.0 * nu.value()).sqrt() * r2.sqrt();
                matern_q(*nu, s) * (-s).exp() / precision
            }
            Kernel::Periodic { precision, lengthscale, period } => {
                let w = 2.0 * std::f64::consts::PI / period;
                ((((x[0] - y[0]) * w).cos() - 1.0) / (lengthscale * lengthscale)).exp() / precision
            }
            Kernel::Product(factors) => factors
                .iter()
                .map(|f| {
                    let (a, b) = (gather(x, &f.dims), gather(y, &f.dims));
                    f.kernel.eval_unchecked(&a[..f.dims.len()], &b[..f.dims.len()])
                })
                .product(),
            Kernel::Sum(ks) => ks.iter().map(|k| k.eval_unchecked(x, y)).sum(),
        }
    }

    /// Validated evaluator for `∂^{left}_x ∂^{right}_{x'} k(x, x')`.
    pub fn derivative(&self, left: MultiIndex, right: MultiIndex) -> Result<KernelDerivative> {
        let d = self.dim();
        if !left.is_supported_on(d) || !right.is_supported_on(d) {
            return Err(Error::DimensionMismatch { expected: d, got: MAX_DIM });
        }
        for j in 0..d {
            if left.get(j) > MAX_ORDER_PER_ARG || right.get(j) > MAX_ORDER_PER_ARG {
                return Err(Error::Smoothness(format!(
                    "derivative orders above {MAX_ORDER_PER_ARG} per argument are not supported"
                )));
            }
        }
        Ok(KernelDerivative(self.derivative_inner(left, right)?))
    }

    fn derivative_inner(&self, left: MultiIndex, right: MultiIndex) -> Result<Deriv> {
        let total = left.plus(&right);
        let sign = if right.order() % 2 == 0 { 1.0 } else { -1.0 };
        match self {
            Kernel::SquaredExponential { precision, lengthscales } => {
                Ok(radial(Profile::Se, *precision, lengthscales, total, sign))
            }
            Kernel::Matern { nu, precision, lengthscales } => {
                let p = nu.half_int_p() as u32;
                if total.order() > 2 * p {
                    return Err(Error::Smoothness(format!(
                        "Matérn ν={} supports combined derivative order {} but {:?}/{:?} was requested",
                        nu.value(),
                        2 * p,
                        &left.0[..lengthscales.len()],
                        &right.0[..lengthscales.len()]
                    )));
                }
                Ok(radial(Profile::Matern(*nu), *precision, lengthscales, total, sign))
            }
            Kernel::Periodic { precision, lengthscale, period } => Ok(Deriv::Periodic {
                scale: sign / precision,
                a: 1.0 / (lengthscale * lengthscale),
                omega: 2.0 * std::f64::consts::PI / period,
                n: total.get(0),
            }),
            Kernel::Product(factors) => Ok(Deriv::Product(
                factors
                    .iter()
                    .map(|f| {
                        let d = f.kernel.derivative_inner(left.gather(&f.dims), right.gather(&f.dims))?;
                        Ok((f.dims.clone(), d))
                    })
                    .collect::<Result<_>>()?,
            )),
            Kernel::Sum(ks) => {
                Ok(Deriv::Sum(ks.iter().map(|k| k.derivative_inner(left, right)).collect::<Result<_>>()?))
            }
        }
    }

    pub fn eval_deriv(&self, left: MultiIndex, right: MultiIndex, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_pair(x, y)?;
        Ok(self.derivative(left, right)?.eval(x, y))
    }

    /// Evaluator for `(L_left k L_right*)(x, x')`.
    pub fn apply_operator(&self, left: &LinearOp, right: &LinearOp) -> Result<OperatorKernel> {
        let mut terms = Vec::with_capacity(left.terms.len() * right.terms.len());
        for &(cl, il) in &left.terms {
            for &(cr, ir) in &right.terms {
                terms.push((cl * cr, self.derivative(il, ir)?));
            }
        }
        Ok(OperatorKernel { terms })
    }
}

fn gather(x: &[f64], dims: &[usize]) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for (k, &d) in dims.iter().enumerate() {
        out[k] = x[d];
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Profile {
    Se,
    Matern(MaternNu),
}

#[derive(Clone, Debug, PartialEq)]
struct Term {
    coeff: f64,
    exps: [u8; MAX_DIM],
    m: u8,
}

static TERMS: LazyLock<RwLock<HashMap<[u8; MAX_DIM], Arc<Vec<Term>>>>> = LazyLock::new(|| RwLock::new(HashMap::new()));

fn radial_terms(beta: MultiIndex) -> Arc<Vec<Term>> {
    if let Some(t) = TERMS.read().unwrap().get(&beta.0) {
        return t.clone();
    }
    let mut terms: Vec<(i64, [u8; MAX_DIM], u8)> = vec![(1, [0; MAX_DIM], 0)];
    for j in 0..MAX_DIM {
        for _ in 0..beta.0[j] {
            let mut next: HashMap<([u8; MAX_DIM], u8), i64> = HashMap::new();
            for (c, e, m) in &terms {
                if e[j] > 0 {
                    let mut e2 = *e;
                    e2[j] -= 1;
                    *next.entry((e2, *m)).or_default() += c * e[j] as i64;
                }
                let mut e2 = *e;
                e2[j] += 1;
                *next.entry((e2, m + 1)).or_default() += c;
            }
            terms = next.into_iter().filter(|(_, c)| *c != 0).map(|((e, m), c)| (c, e, m)).collect();
            terms.sort_by_key(|t| (t.1, t.2));
        }
    }
    let terms = Arc::new(terms.into_iter().map(|(c, exps, m)| Term { coeff: c as f64, exps, m }).collect::<Vec<_>>());
    TERMS.write().unwrap().insert(beta.0, terms.clone());
    terms
}

/// `e^{s} g_0` for Matérn: the polynomial factor `Q(s)`.
fn matern_q(nu: MaternNu, s: f64) -> f64 {
    match nu {
        MaternNu::Half => 1.0,
        MaternNu::ThreeHalves => 1.0 + s,
        MaternNu::FiveHalves => 1.0 + s + s * s / 3.0,
        MaternNu::SevenHalves => 1.0 + s + 0.4 * s * s + s * s * s / 15.0,
    }
}

/// Laurent polynomials `P_m(s)` with `g_m(r) = c^{2m} e^{-s} P_m(s)`, `s = c r`, `c = sqrt(2ν)`,
/// for `m = 0..=2p`, as `(power, coefficient)` lists.
static MATERN_P: LazyLock<HashMap<MaternNu, Vec<Vec<(i32, f64)>>>> = LazyLock::new(|| {
    let q: [(MaternNu, Vec<Ratio<i64>>); 4] = [
        (MaternNu::Half, vec![Ratio::from(1)]),
        (MaternNu::ThreeHalves, vec![Ratio::from(1), Ratio::from(1)]),
        (MaternNu::FiveHalves, vec![Ratio::from(1), Ratio::from(1), Ratio::new(1, 3)]),
        (MaternNu::SevenHalves, vec![Ratio::from(1), Ratio::from(1), Ratio::new(2, 5), Ratio::new(1, 15)]),
    ];
    let mut out = HashMap::new();
    for (nu, coeffs) in q {
        let mut poly: Vec<(i32, Ratio<i64>)> = coeffs.into_iter().enumerate().map(|(k, c)| (k as i32, c)).collect();
        let mut list = vec![to_f64(&poly)];
        for _ in 0..2 * nu.half_int_p() {
            // P_{m+1} = (P_m' - P_m) / s
            let mut acc: HashMap<i32, Ratio<i64>> = HashMap::new();
            for &(k, c) in &poly {
                if k != 0 {
                    *acc.entry(k - 2).or_insert(Ratio::from(0)) += c * Ratio::from(k as i64);
                }
                *acc.entry(k - 1).or_insert(Ratio::from(0)) -= c;
            }
            poly = acc.into_iter().filter(|(_, c)| *c != Ratio::from(0)).collect();
            poly.sort_by_key(|t| t.0);
            list.push(to_f64(&poly));
        }
        out.insert(nu, list);
    }
    out
});

fn to_f64(poly: &[(i32, Ratio<i64>)]) -> Vec<(i32, f64)> {
    poly.iter().map(|(k, c)| (*k, *c.numer() as f64 / *c.denom() as f64)).collect()
}

fn radial(profile: Profile, precision: f64, ls: &[f64], total: MultiIndex, sign: f64) -> Deriv {
    let mut inv_ls = [0.0; MAX_DIM];
    let mut scale = sign / precision;
    for (j, l) in ls.iter().enumerate() {
        inv_ls[j] = 1.0 / l;
        scale *= inv_ls[j].powi(total.get(j) as i32);
    }
    let terms = radial_terms(total);
    let max_m = terms.iter().map(|t| t.m).max().unwrap_or(0);
    Deriv::Radial { scale, inv_ls, dim: ls.len(), terms, profile, max_m }
}

/// A fixed partial derivative of a kernel, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub struct KernelDerivative(Deriv);

#[derive(Clone, Debug)]
enum Deriv {
    Radial { scale: f64, inv_ls: [f64; MAX_DIM], dim: usize, terms: Arc<Vec<Term>>, profile: Profile, max_m: u8 },
    Periodic { scale: f64, a: f64, omega: f64, n: u8 },
    Product(Vec<(Vec<usize>, Deriv)>),
    Sum(Vec<Deriv>),
}

impl KernelDerivative {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.0.eval(x, y)
    }
}

impl Deriv {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Deriv::Radial { scale, inv_ls, dim, terms, profile, max_m } => {
                let mut z = [0.0; MAX_DIM];
                let mut r2 = 0.0;
                for j in 0..*dim {
                    z[j] = (x[j] - y[j]) * inv_ls[j];
                    r2 += z[j] * z[j];
                }
                let mut g = [0.0; 2 * MAX_ORDER_PER_ARG as usize * MAX_DIM + 1];
                profile_values(*profile, r2, *max_m as usize, &mut g);
                let mut acc = 0.0;
                if r2 == 0.0 {
                    for t in terms.iter() {
                        if t.exps.iter().all(|&e| e == 0) {
                            acc += t.coeff * g[t.m as usize];
                        }
                    }
                } else {
                    for t in terms.iter() {
                        let mut v = t.coeff * g[t.m as usize];
                        for j in 0..*dim {
                            if t.exps[j] > 0 {
                                v *= z[j].powi(t.exps[j] as i32);
                            }
                        }
                        acc += v;
                    }
                }
                scale * acc
            }
            Deriv::Periodic { scale, a, omega, n } => {
                let theta = omega * (x[0] - y[0]);
                scale * periodic_derivative(*a, *omega, theta, *n as usize)
            }
            Deriv::Product(parts) => parts
                .iter()
                .map(|(dims, d)| {
                    let (a, b) = (gather(x, dims), gather(y, dims));
                    d.eval(&a[..dims.len()], &b[..dims.len()])
                })
                .product(),
            Deriv::Sum(parts) => parts.iter().map(|d| d.eval(x, y)).sum(),
        }
    }
}

fn profile_values(profile: Profile, r2: f64, max_m: usize, g: &mut [f64]) {
    match profile {
        Profile::Se => {
            let e = (-0.5 * r2).exp();
            for (m, gm) in g.iter_mut().enumerate().take(max_m + 1) {
                *gm = if m % 2 == 0 { e } else { -e };
            }
        }
        Profile::Matern(nu) => {
            let c2 = 2.0 * nu.value();
            let s = (c2 * r2).sqrt();
            let e = (-s).exp();
            let table = &MATERN_P[&nu];
            let mut cpow = 1.0;
            for (m, gm) in g.iter_mut().enumerate().take(max_m + 1) {
                let p = table.get(m).map(|poly| {
                    poly.iter()
                        .map(|&(k, c)| {
                            if k == 0 {
                                c
                            } else if s == 0.0 {
                                0.0
                            } else {
                                c * s.powi(k)
                            }
                        })
                        .sum::<f64>()
                });
                // Orders beyond the table only occur with vanishing monomials at r = 0.
                *gm = cpow * e * p.unwrap_or(0.0);
                cpow *= c2;
            }
        }
    }
}

/// `n`-th derivative in `δ` of `exp(a (cos(ω δ) - 1))`, with `θ = ω δ`.
fn periodic_derivative(a: f64, omega: f64, theta: f64, n: usize) -> f64 {
    let h = |k: usize| -> f64 {
        // k-th derivative of a (cos θ - 1) in δ, k >= 1
        let phase = theta + k as f64 * std::f64::consts::FRAC_PI_2;
        a * omega.powi(k as i32) * phase.cos()
    };
    let mut f = vec![(a * (theta.cos() - 1.0)).exp()];
    for m in 1..=n {
        let mut v = 0.0;
        let mut binom = 1.0;
        for k in 0..m {
            v += binom * h(k + 1) * f[m - 1 - k];
            binom = binom * (m - 1 - k) as f64 / (k + 1) as f64;
        }
        f.push(v);
    }
    f[n]
}

/// A linear differential operator `Σ c_k ∂^{β_k}` (used on either kernel argument).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOp {
    pub terms: SmallVec<[(f64, MultiIndex); 2]>,
}

impl LinearOp {
    pub fn identity() -> LinearOp {
        LinearOp { terms: smallvec::smallvec![(1.0, MultiIndex::ZERO)] }
    }

    pub fn partial(index: MultiIndex) -> LinearOp {
        LinearOp { terms: smallvec::smallvec![(1.0, index)] }
    }

    /// The same operator followed by an extra derivative `∂^{extra}`.
    pub fn shifted(&self, extra: MultiIndex) -> LinearOp {
        LinearOp { terms: self.terms.iter().map(|&(c, i)| (c, i.plus(&extra))).collect() }
    }

    pub fn is_identity(&self) -> bool {
        self.terms.len() == 1 && self.terms[0] == (1.0, MultiIndex::ZERO)
    }

    pub fn max_order(&self) -> u32 {
        self.terms.iter().map(|t| t.1.order()).max().unwrap_or(0)
    }
}

impl From<&BoundaryOperator> for LinearOp {
    fn from(op: &BoundaryOperator) -> LinearOp {
        let mut terms = SmallVec::new();
        if op.b != 0.0 {
            terms.push((op.b, MultiIndex::ZERO));
        }
        if op.a != 0.0 {
            terms.push((op.a, MultiIndex::unit(op.axis)));
        }
        LinearOp { terms }
    }
}

/// `L = a ∂_axis + b I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryOperator {
    pub a: f64,
    pub b: f64,
    pub axis: usize,
}

impl BoundaryOperator {
    pub fn new(a: f64, b: f64, axis: usize) -> Result<BoundaryOperator> {
        if !(a.is_finite() && b.is_finite()) || (a == 0.0 && b == 0.0) {
            return Err(Error::InvalidOperator(format!("need finite coefficients, not both zero (a={a}, b={b})")));
        }
        if axis >= MAX_DIM {
            return Err(Error::InvalidOperator(format!("axis {axis} out of range")));
        }
        Ok(BoundaryOperator { a, b, axis })
    }

    pub fn identity() -> BoundaryOperator {
        BoundaryOperator { a: 0.0, b: 1.0, axis: 0 }
    }

    pub fn derivative(axis: usize) -> BoundaryOperator {
        BoundaryOperator { a: 1.0, b: 0.0, axis }
    }

    pub fn is_identity(&self) -> bool {
        self.a == 0.0 && self.b == 1.0
    }

    pub fn has_derivative(&self) -> bool {
        self.a != 0.0
    }
}

/// `Σ c_k ∂^{α_k}_x ∂^{β_k}_{x'} k`.
#[derive(Clone, Debug)]
pub struct OperatorKernel {
    terms: Vec<(f64, KernelDerivative)>,
}

impl OperatorKernel {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.terms.iter().map(|(c, d)| c * d.eval(x, y)).sum()
    }
}

/// Base mean function `m_0`.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum MeanFunction {
    #[default]
    Zero,
    Expr(SmoothFn),
}

impl MeanFunction {
    pub fn is_zero(&self) -> bool {
        matches!(self, MeanFunction::Zero)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanFunction::Zero => 0.0,
            MeanFunction::Expr(f) => f.eval(x),
        }
    }

    pub fn eval_partial(&self, index: &MultiIndex, x: &[f64]) -> f64 {
        match self {
            MeanFunction::Zero => 0.0,
            MeanFunction::Expr(f) => f.eval_partial(&index.0, x),
        }
    }

    pub fn apply_operator(&self, op: &LinearOp, x: &[f64]) -> f64 {
        op.terms.iter().map(|(c, i)| c * self.eval_partial(i, x)).sum()
    }
}
