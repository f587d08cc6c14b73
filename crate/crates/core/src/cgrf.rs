//! Constrained Gaussian random fields.
//!
//! A [`ConstraintSet`] collects constraints `L_i u = g_i` on boundary segments `A_i`, each with a
//! projection `f_i` onto its segment and a weight `w_i`. The constrained field is
//!
//! `u^A(x) = u(x) + Σ_j w_j(x) (g_j(f_j(x)) - (L_j u)(f_j(x)))`.
//!
//! Any linear functional of `u^A` is an affine combination of derivatives of the base field `u`
//! at a handful of points ([`Expansion`]); covariances of such functionals are assembled from base
//! kernel derivatives. The direct mean/covariance formulas are also available and are used by
//! [`verify_conditions`], which differentiates them by central differences.

use crate::error::{Error, Result};
use crate::expr::SmoothFn;
use crate::geometry::{
    sample_boundary, sample_interior, BoundarySegment, Domain, Point, Projection, ProjectionJet, Scheme, SegmentKind,
    MAX_DIM,
};
use crate::kernels::{BoundaryOperator, Kernel, LinearOp, MeanFunction, MultiIndex, OperatorKernel};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use smallvec::SmallVec;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// Condition-number threshold above which the recipe system gets a ridge.
pub const RECIPE_COND_LIMIT: f64 = 1e12;
/// Ridge added to the recipe system, relative to `trace(M) / n`.
pub const RECIPE_RIDGE: f64 = 1e-10;
/// Default central-difference step for derivatives of the constrained covariance, relative to the
/// smallest kernel lengthscale.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// How a constraint's weight function is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSpec {
    /// `w(x) = v(x)^T M(x)^{-1}` from base-covariance blocks at the projected points.
    Recipe,
    ClosedForm(SmoothFn),
}

/// `L u = g` on one boundary segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub operator: BoundaryOperator,
    pub target: SmoothFn,
    pub projection: Projection,
    pub weight: WeightSpec,
}

impl Constraint {
    pub fn new(
        operator: BoundaryOperator,
        target: SmoothFn,
        segment: &BoundarySegment,
        projection: Projection,
        weight: WeightSpec,
    ) -> Result<Constraint> {
        if projection.target() != segment {
            return Err(Error::InvalidConstraint(format!(
                "projection targets segment {} but the constraint acts on segment {}",
                projection.target().id(),
                segment.id()
            )));
        }
        Ok(Constraint { operator, target, projection, weight })
    }

    /// Identity constraint on `segment`, projecting along `direction`.
    pub fn state(
        segment: &BoundarySegment,
        direction: &[f64],
        target: SmoothFn,
        weight: WeightSpec,
    ) -> Result<Constraint> {
        let projection = Projection::along(segment.clone(), direction)?;
        Constraint::new(BoundaryOperator::identity(), target, segment, projection, weight)
    }

    /// A prescribed derivative along the segment itself together with a constant boundary value
    /// is enforced as the equivalent state constraint `u = value` on the segment.
    pub fn tangential_derivative(
        segment: &BoundarySegment,
        direction: &[f64],
        value: f64,
        weight: WeightSpec,
    ) -> Result<Constraint> {
        let d = segment.domain().dim();
        let names = default_var_names(d);
        let names: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let target = SmoothFn::new(crate::expr::Expr::constant(value, &names));
        Constraint::state(segment, direction, target, weight)
    }

    pub fn segment(&self) -> &BoundarySegment {
        self.projection.target()
    }

    pub fn linear_op(&self) -> LinearOp {
        LinearOp::from(&self.operator)
    }
}

/// Variable names used when none are given: `x1..xd`.
pub fn default_var_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// The full specification of a constrained field.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    domain: Domain,
    constraints: Vec<Constraint>,
    base_mean: MeanFunction,
    base_kernel: Kernel,
}

impl ConstraintSet {
    pub fn new(
        domain: Domain,
        constraints: Vec<Constraint>,
        base_mean: MeanFunction,
        base_kernel: Kernel,
    ) -> Result<Self> {
        let d = domain.dim();
        if constraints.is_empty() {
            return Err(Error::InvalidConstraint("need at least one constraint".into()));
        }
        if base_kernel.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: base_kernel.dim() });
        }
        for (i, c) in constraints.iter().enumerate() {
            if c.segment().domain() != &domain {
                return Err(Error::InvalidConstraint(format!("constraint {i} uses a segment of another domain")));
            }
            if c.operator.axis >= d {
                return Err(Error::InvalidConstraint(format!(
                    "constraint {i} differentiates along axis {} of a {d}-dimensional domain",
                    c.operator.axis
                )));
            }
            if c.target.expr().vars().len() != d {
                return Err(Error::InvalidConstraint(format!("constraint {i} target must use exactly {d} variables")));
            }
            if let WeightSpec::ClosedForm(w) = &c.weight {
                if w.expr().vars().len() != d {
                    return Err(Error::InvalidConstraint(format!(
                        "constraint {i} weight must use exactly {d} variables"
                    )));
                }
            }
            let op = c.linear_op();
            base_kernel.apply_operator(&op, &op)?;
        }
        if let MeanFunction::Expr(m) = &base_mean {
            if m.expr().vars().len() != d {
                return Err(Error::InvalidConstraint(format!("base mean must use exactly {d} variables")));
            }
        }
        Ok(ConstraintSet { domain, constraints, base_mean, base_kernel })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn base_mean(&self) -> &MeanFunction {
        &self.base_mean
    }

    pub fn base_kernel(&self) -> &Kernel {
        &self.base_kernel
    }
}

/// A linear functional `L u(x)` of a field.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub op: LinearOp,
    pub point: Point,
}

impl Query {
    pub fn value(point: Point) -> Query {
        Query { op: LinearOp::identity(), point }
    }

    pub fn new(op: LinearOp, point: Point) -> Query {
        Query { op, point }
    }

    pub fn partial(index: MultiIndex, point: Point) -> Query {
        Query { op: LinearOp::partial(index), point }
    }
}

/// `coef · ∂^index u(point)` for the base field `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub coef: f64,
    pub point: Point,
    pub index: MultiIndex,
}

/// A functional of a field written as `offset + Σ atoms` over a zero-mean base field.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Expansion {
    pub offset: f64,
    pub atoms: SmallVec<[Atom; 8]>,
}

impl Expansion {
    fn push(&mut self, coef: f64, point: &Point, index: MultiIndex) {
        if coef == 0.0 {
            return;
        }
        if let Some(a) = self.atoms.iter_mut().find(|a| a.index == index && a.point == *point) {
            a.coef += coef;
        } else {
            self.atoms.push(Atom { coef, point: point.clone(), index });
        }
    }
}

/// `Cov(a, b)` for two expansions over the same base kernel.
pub fn expansion_cov(kernel: &Kernel, a: &Expansion, b: &Expansion) -> Result<f64> {
    let mut v = 0.0;
    for p in &a.atoms {
        for q in &b.atoms {
            v += p.coef * q.coef * kernel.eval_deriv(p.index, q.index, &p.point, &q.point)?;
        }
    }
    Ok(v)
}

/// A Gaussian field whose linear functionals reduce to derivatives of a base kernel.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn kernel(&self) -> &Kernel;
    fn expand(&self, q: &Query) -> Result<Expansion>;
}

/// The unconstrained field `GRF(m_0, k_0)`.
#[derive(Clone, Debug)]
pub struct BaseField {
    pub kernel: Kernel,
    pub mean: MeanFunction,
}

impl BaseField {
    pub fn new(kernel: Kernel, mean: MeanFunction) -> BaseField {
        BaseField { kernel, mean }
    }
}

impl Field for BaseField {
    fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn expand(&self, q: &Query) -> Result<Expansion> {
        check_query(self.dim(), q)?;
        let mut e = Expansion { offset: self.mean.apply_operator(&q.op, &q.point), atoms: SmallVec::new() };
        for &(c, idx) in &q.op.terms {
            e.push(c, &q.point, idx);
        }
        Ok(e)
    }
}

fn check_query(d: usize, q: &Query) -> Result<()> {
    if q.point.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: q.point.dim() });
    }
    if q.op.terms.iter().any(|t| !t.1 .0[d..].iter().all(|&o| o == 0)) {
        return Err(Error::DimensionMismatch { expected: d, got: MAX_DIM });
    }
    if q.op.max_order() > 2 {
        return Err(Error::Smoothness("functionals of constrained fields support derivative order at most 2".into()));
    }
    Ok(())
}

/// Scalar function of `x` with gradient and Hessian.
#[derive(Clone, Debug, Default)]
struct Jet {
    v: f64,
    g: [f64; MAX_DIM],
    h: [[f64; MAX_DIM]; MAX_DIM],
}

enum MapJet<'a> {
    Identity(&'a [f64]),
    Proj(&'a ProjectionJet),
}

impl MapJet<'_> {
    fn point(&self) -> &[f64] {
        match self {
            MapJet::Identity(x) => x,
            MapJet::Proj(p) => &p.value,
        }
    }

    fn jac(&self, c: usize, a: usize) -> f64 {
        match self {
            MapJet::Identity(_) => (c == a) as u8 as f64,
            MapJet::Proj(p) => p.jac(c, a),
        }
    }

    fn hess(&self, c: usize, a: usize, b: usize) -> f64 {
        match self {
            MapJet::Identity(_) => 0.0,
            MapJet::Proj(p) if p.axis == c => p.hess[a][b],
            MapJet::Proj(_) => 0.0,
        }
    }

    /// Image coordinates that vary with `x` (Jacobian row not identically zero).
    fn moving(&self, d: usize) -> SmallVec<[usize; MAX_DIM]> {
        (0..d).filter(|&c| (0..d).any(|a| self.jac(c, a) != 0.0)).collect()
    }
}

/// Weight values with first and second derivatives, one entry per constraint.
#[derive(Clone, Debug)]
pub struct WeightJet {
    pub w: Vec<f64>,
    pub dw: Vec<[f64; MAX_DIM]>,
    pub d2w: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
}

/// Solver for the symmetric recipe system via its eigendecomposition.
struct SymSolve {
    q: DMatrix<f64>,
    inv: DVector<f64>,
}

impl SymSolve {
    fn new(mut m: DMatrix<f64>, x: &[f64]) -> Result<SymSolve> {
        let n = m.nrows();
        let mut ridged = false;
        loop {
            let eig = SymmetricEigen::new(m.clone());
            let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
            let max = abs.iter().cloned().fold(0.0, f64::max);
            let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
            let cond = max / min;
            if cond.is_finite() && cond <= RECIPE_COND_LIMIT && max > 0.0 {
                let inv = eig.eigenvalues.map(|v| 1.0 / v);
                return Ok(SymSolve { q: eig.eigenvectors, inv });
            }
            if ridged || !max.is_finite() || max == 0.0 {
                return Err(Error::DegenerateGeometry {
                    point: x.to_vec(),
                    reason: format!("recipe system has condition estimate {cond:e} even after a ridge"),
                });
            }
            let ridge = RECIPE_RIDGE * m.trace() / n as f64;
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            ridged = true;
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let t = self.q.tr_mul(rhs).component_mul(&self.inv);
        &self.q * t
    }
}

type OpKey = (usize, usize, MultiIndex, MultiIndex);

/// Evaluators for the mean and covariance of a constrained field.
pub struct ConstrainedField {
    cs: ConstraintSet,
    ops: Vec<LinearOp>,
    /// Indices of constraints with recipe weights.
    recipe: Vec<usize>,
    opk_cache: RwLock<HashMap<OpKey, Arc<OperatorKernel>>>,
    fd_step: f64,
}

impl Clone for ConstrainedField {
    fn clone(&self) -> Self {
        ConstrainedField {
            cs: self.cs.clone(),
            ops: self.ops.clone(),
            recipe: self.recipe.clone(),
            opk_cache: RwLock::new(HashMap::new()),
            fd_step: self.fd_step,
        }
    }
}

impl std::fmt::Debug for ConstrainedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedField").field("constraints", &self.cs).finish()
    }
}

impl ConstrainedField {
    pub fn new(cs: ConstraintSet) -> ConstrainedField {
        let ops = cs.constraints.iter().map(|c| c.linear_op()).collect();
        let recipe = (0..cs.constraints.len()).filter(|&j| cs.constraints[j].weight == WeightSpec::Recipe).collect();
        let fd_step = DEFAULT_FD_STEP * cs.base_kernel.min_lengthscale();
        ConstrainedField { cs, ops, recipe, opk_cache: RwLock::new(HashMap::new()), fd_step }
    }

    /// Overrides the central-difference step used for operator-applied covariances.
    pub fn with_fd_step(mut self, step: f64) -> ConstrainedField {
        self.fd_step = step;
        self
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn constraint_set(&self) -> &ConstraintSet {
        &self.cs
    }

    pub fn n_constraints(&self) -> usize {
        self.ops.len()
    }

    fn op(&self, id: usize) -> LinearOp {
        if id == 0 {
            LinearOp::identity()
        } else {
            self.ops[id - 1].clone()
        }
    }

    /// `(L_l ∂^{sl}) k_0 (L_r ∂^{sr})*` where operator id 0 is the identity and `j + 1` is `L_j`.
    fn opk(&self, l: usize, r: usize, sl: MultiIndex, sr: MultiIndex) -> Result<Arc<OperatorKernel>> {
        let key = (l, r, sl, sr);
        if let Some(k) = self.opk_cache.read().unwrap().get(&key) {
            return Ok(k.clone());
        }
        let k = Arc::new(self.cs.base_kernel.apply_operator(&self.op(l).shifted(sl), &self.op(r).shifted(sr))?);
        self.opk_cache.write().unwrap().insert(key, k.clone());
        Ok(k)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        let dom = &self.cs.domain;
        dom.check_dim(x)?;
        if !dom.contains_unchecked(x) {
            return Err(Error::OutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    /// Jet of `x ↦ (L_l k_0 L_r*)(p(x), q(x))` up to `order`.
    fn composite_jet(&self, l: usize, r: usize, p: &MapJet, q: &MapJet, order: u8) -> Result<Jet> {
        let d = self.cs.domain.dim();
        let (py, qz) = (p.point(), q.point());
        let mut jet = Jet { v: self.opk(l, r, MultiIndex::ZERO, MultiIndex::ZERO)?.eval(py, qz), ..Jet::default() };
        if order == 0 {
            return Ok(jet);
        }
        let (pm, qm) = (p.moving(d), q.moving(d));
        let mut fy = [0.0; MAX_DIM];
        let mut fz = [0.0; MAX_DIM];
        for &c in &pm {
            fy[c] = self.opk(l, r, MultiIndex::unit(c), MultiIndex::ZERO)?.eval(py, qz);
        }
        for &c in &qm {
            fz[c] = self.opk(l, r, MultiIndex::ZERO, MultiIndex::unit(c))?.eval(py, qz);
        }
        for a in 0..d {
            jet.g[a] = pm.iter().map(|&c| fy[c] * p.jac(c, a)).sum::<f64>()
                + qm.iter().map(|&c| fz[c] * q.jac(c, a)).sum::<f64>();
        }
        if order == 1 {
            return Ok(jet);
        }
        let mut fyy = [[0.0; MAX_DIM]; MAX_DIM];
        let mut fzz = [[0.0; MAX_DIM]; MAX_DIM];
        let mut fyz = [[0.0; MAX_DIM]; MAX_DIM];
        for &c in &pm {
            for &e in &pm {
                if e >= c {
                    let v = self.opk(l, r, MultiIndex::unit(c).plus_axis(e), MultiIndex::ZERO)?.eval(py, qz);
                    fyy[c][e] = v;
                    fyy[e][c] = v;
                }
            }
            for &e in &qm {
                fyz[c][e] = self.opk(l, r, MultiIndex::unit(c), MultiIndex::unit(e))?.eval(py, qz);
            }
        }
        for &c in &qm {
            for &e in &qm {
                if e >= c {
                    let v = self.opk(l, r, MultiIndex::ZERO, MultiIndex::unit(c).plus_axis(e))?.eval(py, qz);
                    fzz[c][e] = v;
                    fzz[e][c] = v;
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let mut v = 0.0;
                for &c in &pm {
                    for &e in &pm {
                        v += fyy[c][e] * p.jac(c, a) * p.jac(e, b);
                    }
                    for &e in &qm {
                        v += fyz[c][e] * (p.jac(c, a) * q.jac(e, b) + p.jac(c, b) * q.jac(e, a));
                    }
                    v += fy[c] * p.hess(c, a, b);
                }
                for &c in &qm {
                    for &e in &qm {
                        v += fzz[c][e] * q.jac(c, a) * q.jac(e, b);
                    }
                    v += fz[c] * q.hess(c, a, b);
                }
                jet.h[a][b] = v;
                jet.h[b][a] = v;
            }
        }
        Ok(jet)
    }

    /// Weights and their derivatives up to `order` (0, 1 or 2) at `x`; no domain check.
    pub(crate) fn weight_jet(&self, x: &[f64], order: u8) -> Result<WeightJet> {
        let n = self.ops.len();
        let d = self.cs.domain.dim();
        let mut out =
            WeightJet { w: vec![0.0; n], dw: vec![[0.0; MAX_DIM]; n], d2w: vec![[[0.0; MAX_DIM]; MAX_DIM]; n] };
        for (j, c) in self.cs.constraints.iter().enumerate() {
            if let WeightSpec::ClosedForm(f) = &c.weight {
                out.w[j] = f.eval(x);
                if order >= 1 {
                    for a in 0..d {
                        out.dw[j][a] = f.eval_partial(&MultiIndex::unit(a).0, x);
                        if order >= 2 {
                            for b in 0..d {
                                out.d2w[j][a][b] = f.eval_partial(&MultiIndex::unit(a).plus_axis(b).0, x);
                            }
                        }
                    }
                }
            }
        }
        let r = &self.recipe;
        if r.is_empty() {
            return Ok(out);
        }
        let nr = r.len();
        let jets: Vec<ProjectionJet> = r.iter().map(|&j| self.cs.constraints[j].projection.jet(x)).collect();
        let mut v = Vec::with_capacity(nr);
        for (k, &j) in r.iter().enumerate() {
            v.push(self.composite_jet(0, j + 1, &MapJet::Identity(x), &MapJet::Proj(&jets[k]), order)?);
        }
        let mut m: Vec<Vec<Jet>> = vec![vec![Jet::default(); nr]; nr];
        for a in 0..nr {
            for b in a..nr {
                let jet =
                    self.composite_jet(r[a] + 1, r[b] + 1, &MapJet::Proj(&jets[a]), &MapJet::Proj(&jets[b]), order)?;
                m[b][a] = jet.clone();
                m[a][b] = jet;
            }
        }
        let solver = SymSolve::new(DMatrix::from_fn(nr, nr, |a, b| m[a][b].v), x)?;
        let w = solver.solve(&DVector::from_fn(nr, |a, _| v[a].v));
        let mut dw: Vec<DVector<f64>> = Vec::new();
        if order >= 1 {
            for ax in 0..d {
                let rhs = DVector::from_fn(nr, |a, _| v[a].g[ax] - (0..nr).map(|b| m[a][b].g[ax] * w[b]).sum::<f64>());
                dw.push(solver.solve(&rhs));
            }
        }
        for (k, &j) in r.iter().enumerate() {
            out.w[j] = w[k];
            for ax in 0..dw.len() {
                out.dw[j][ax] = dw[ax][k];
            }
        }
        if order >= 2 {
            for ax in 0..d {
                for bx in ax..d {
                    let rhs = DVector::from_fn(nr, |a, _| {
                        v[a].h[ax][bx]
                            - (0..nr)
                                .map(|b| {
                                    m[a][b].h[ax][bx] * w[b] + m[a][b].g[ax] * dw[bx][b] + m[a][b].g[bx] * dw[ax][b]
                                })
                                .sum::<f64>()
                    });
                    let s = solver.solve(&rhs);
                    for (k, &j) in r.iter().enumerate() {
                        out.d2w[j][ax][bx] = s[k];
                        out.d2w[j][bx][ax] = s[k];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Weight vector `w(x)` (recipe entries from `v^T M^{-1}`, others closed form).
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        Ok(self.weight_jet(x, 0)?.w)
    }

    /// `m^A(x) = m_0(x) + Σ_j w_j(x) (g_j(f_j(x)) - L_j m_0(f_j(x)))`.
    pub fn constrained_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.mean_unchecked(x)
    }

    fn mean_unchecked(&self, x: &[f64]) -> Result<f64> {
        let w = self.weight_jet(x, 0)?.w;
        let mut m = self.cs.base_mean.eval(x);
        for (j, c) in self.cs.constraints.iter().enumerate() {
            let y = c.projection.apply(x);
            m += w[j] * (c.target.eval(&y) - self.cs.base_mean.apply_operator(&self.ops[j], &y));
        }
        Ok(m)
    }

    fn cov_unchecked(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let n = self.ops.len();
        let (wx, wy) = (self.weight_jet(x, 0)?.w, self.weight_jet(y, 0)?.w);
        let fx: Vec<Point> = self.cs.constraints.iter().map(|c| c.projection.apply(x)).collect();
        let fy: Vec<Point> = self.cs.constraints.iter().map(|c| c.projection.apply(y)).collect();
        let z = MultiIndex::ZERO;
        let mut k = self.opk(0, 0, z, z)?.eval(x, y);
        for j in 0..n {
            k -= wy[j] * self.opk(0, j + 1, z, z)?.eval(x, &fy[j]);
            k -= wx[j] * self.opk(j + 1, 0, z, z)?.eval(&fx[j], y);
        }
        for i in 0..n {
            for j in 0..n {
                k += wx[i] * wy[j] * self.opk(i + 1, j + 1, z, z)?.eval(&fx[i], &fy[j]);
            }
        }
        Ok(k)
    }

    /// `(L_left k^A L_right*)(x, x')`. Operators are applied by central differences of the
    /// assembled covariance with step [`ConstrainedField::fd_step`].
    pub fn constrained_cov(
        &self,
        left: Option<&BoundaryOperator>,
        right: Option<&BoundaryOperator>,
        x: &[f64],
        y: &[f64],
    ) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        let base = &self.cs.base_kernel;
        for op in [left, right].into_iter().flatten() {
            if op.axis >= x.len() {
                return Err(Error::InvalidOperator(format!("axis {} out of range", op.axis)));
            }
            let lop = LinearOp::from(op);
            base.apply_operator(&lop, &lop)?;
        }
        let h = self.fd_step;
        let parts = |op: Option<&BoundaryOperator>| -> SmallVec<[(f64, Option<usize>); 2]> {
            match op {
                None => smallvec::smallvec![(1.0, None)],
                Some(o) => {
                    let mut v = SmallVec::new();
                    if o.b != 0.0 {
                        v.push((o.b, None));
                    }
                    if o.a != 0.0 {
                        v.push((o.a, Some(o.axis)));
                    }
                    v
                }
            }
        };
        let stencil = |axis: Option<usize>, p: &[f64]| -> SmallVec<[(f64, Point); 2]> {
            match axis {
                None => smallvec::smallvec![(1.0, Point::raw(p))],
                Some(a) => {
                    let (mut plus, mut minus) = (Point::raw(p), Point::raw(p));
                    plus.set(a, p[a] + h);
                    minus.set(a, p[a] - h);
                    smallvec::smallvec![(0.5 / h, plus), (-0.5 / h, minus)]
                }
            }
        };
        let mut total = 0.0;
        for (cl, al) in parts(left) {
            for (cr, ar) in parts(right) {
                let mut v = 0.0;
                for (sl, px) in stencil(al, x) {
                    for (sr, py) in stencil(ar, y) {
                        v += sl * sr * self.cov_unchecked(&px, &py)?;
                    }
                }
                total += cl * cr * v;
            }
        }
        Ok(total)
    }

    /// `(L m^A)(x)` by central differences of the constrained mean.
    pub fn constrained_mean_op(&self, op: &BoundaryOperator, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut v = op.b * self.mean_unchecked(x)?;
        if op.a != 0.0 {
            let h = self.fd_step;
            let (mut plus, mut minus) = (Point::raw(x), Point::raw(x));
            plus.set(op.axis, x[op.axis] + h);
            minus.set(op.axis, x[op.axis] - h);
            v += op.a * (self.mean_unchecked(&plus)? - self.mean_unchecked(&minus)?) / (2.0 * h);
        }
        Ok(v)
    }

    /// Partial derivatives `∂^δ (g_j - L_j m_0)` at `y`.
    fn target_partial(&self, j: usize, delta: MultiIndex, y: &[f64]) -> f64 {
        let c = &self.cs.constraints[j];
        let mut v = c.target.eval_partial(&delta.0, y);
        if !self.cs.base_mean.is_zero() {
            v -= self.cs.base_mean.apply_operator(&self.ops[j].shifted(delta), y);
        }
        v
    }
}

impl Field for ConstrainedField {
    fn dim(&self) -> usize {
        self.cs.domain.dim()
    }

    fn kernel(&self) -> &Kernel {
        &self.cs.base_kernel
    }

    fn expand(&self, q: &Query) -> Result<Expansion> {
        let d = self.dim();
        check_query(d, q)?;
        self.check_point(&q.point)?;
        let x = &q.point;
        let order = q.op.max_order() as u8;
        let wj = self.weight_jet(x, order)?;
        let mut e = Expansion { offset: self.cs.base_mean.apply_operator(&q.op, x), atoms: SmallVec::new() };
        for &(c, beta) in &q.op.terms {
            e.push(c, x, beta);
        }
        let mut axes: SmallVec<[usize; 2]> = SmallVec::new();
        for (j, con) in self.cs.constraints.iter().enumerate() {
            let pj = con.projection.jet(x);
            // coefficients of ∂^δ (G_j - L_j u) evaluated at f_j(x)
            let mut coefs: SmallVec<[(MultiIndex, f64); 8]> = SmallVec::new();
            let mut add = |delta: MultiIndex, v: f64| {
                if v == 0.0 {
                    return;
                }
                if let Some(t) = coefs.iter_mut().find(|t| t.0 == delta) {
                    t.1 += v;
                } else {
                    coefs.push((delta, v));
                }
            };
            for &(c, beta) in &q.op.terms {
                axes.clear();
                for a in 0..d {
                    for _ in 0..beta.get(a) {
                        axes.push(a);
                    }
                }
                match axes.len() {
                    0 => add(MultiIndex::ZERO, c * wj.w[j]),
                    1 => {
                        let a = axes[0];
                        add(MultiIndex::ZERO, c * wj.dw[j][a]);
                        for k in 0..d {
                            add(MultiIndex::unit(k), c * wj.w[j] * pj.jac(k, a));
                        }
                    }
                    _ => {
                        let (a, b) = (axes[0], axes[1]);
                        add(MultiIndex::ZERO, c * wj.d2w[j][a][b]);
                        for k in 0..d {
                            let first = wj.dw[j][a] * pj.jac(k, b)
                                + wj.dw[j][b] * pj.jac(k, a)
                                + wj.w[j] * if k == pj.axis { pj.hess[a][b] } else { 0.0 };
                            add(MultiIndex::unit(k), c * first);
                            for l in 0..d {
                                add(MultiIndex::unit(k).plus_axis(l), c * wj.w[j] * pj.jac(k, a) * pj.jac(l, b));
                            }
                        }
                    }
                }
            }
            for (delta, kappa) in coefs {
                e.offset += kappa * self.target_partial(j, delta, &pj.value);
                for &(a, gamma) in &self.ops[j].terms {
                    e.push(-kappa * a, &pj.value, gamma.plus(&delta));
                }
            }
        }
        e.atoms.retain(|a| a.coef != 0.0);
        Ok(e)
    }
}

/// Joint draw of the base field at evaluation points and of each `L_j u` at the projected points.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseDraw {
    /// `u(x_i)`.
    pub u: Vec<f64>,
    /// `projected[j][i] = (L_j u)(f_j(x_i))`.
    pub projected: Vec<Vec<Option<f64>>>,
}

/// The base-field functionals a [`BaseDraw`] needs, ordered as `u(x_i)` then `(L_j u)(f_j(x_i))`
/// for each constraint `j`.
pub fn base_draw_queries(cf: &ConstrainedField, x_eval: &[Point]) -> Result<Vec<Query>> {
    let mut qs: Vec<Query> = x_eval.iter().map(|x| Query::value(x.clone())).collect();
    for (j, c) in cf.cs.constraints.iter().enumerate() {
        for x in x_eval {
            cf.check_point(x)?;
            qs.push(Query::new(cf.ops[j].clone(), c.projection.apply(x)));
        }
    }
    Ok(qs)
}

impl BaseDraw {
    /// Splits a flat vector ordered as in [`base_draw_queries`].
    pub fn from_flat(values: &[f64], n_eval: usize, n_constraints: usize) -> Result<BaseDraw> {
        if values.len() != n_eval * (1 + n_constraints) {
            return Err(Error::DimensionMismatch { expected: n_eval * (1 + n_constraints), got: values.len() });
        }
        Ok(BaseDraw {
            u: values[..n_eval].to_vec(),
            projected: (0..n_constraints)
                .map(|j| values[n_eval * (j + 1)..n_eval * (j + 2)].iter().map(|&v| Some(v)).collect())
                .collect(),
        })
    }
}

/// Applies `u^A(x) = u(x) + Σ_j w_j(x) (g_j(f_j(x)) - (L_j u)(f_j(x)))` to a base draw.
pub fn transform_sample(cf: &ConstrainedField, x_eval: &[Point], draw: &BaseDraw) -> Result<Vec<f64>> {
    let n = cf.n_constraints();
    if draw.u.len() != x_eval.len() {
        return Err(Error::MissingDrawValue(format!(
            "base values: {} given for {} points",
            draw.u.len(),
            x_eval.len()
        )));
    }
    if draw.projected.len() != n {
        return Err(Error::MissingDrawValue(format!(
            "projected values: {} constraint rows given, {n} needed",
            draw.projected.len()
        )));
    }
    x_eval
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let w = cf.weights(x)?;
            let mut v = draw.u[i];
            for (j, c) in cf.cs.constraints.iter().enumerate() {
                let lu = draw.projected[j]
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::MissingDrawValue(format!("(L_{j} u)(f_{j}(x)) at point {i}")))?;
                v += w[j] * (c.target.eval(&c.projection.apply(x)) - lu);
            }
            Ok(v)
        })
        .collect()
}

/// Worst boundary violations for one constraint.
#[derive(Clone, Debug, Serialize)]
pub struct ConstraintReport {
    pub index: usize,
    pub segment: usize,
    pub max_mean_violation: f64,
    pub max_variance_violation: f64,
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub tol: f64,
    pub n_boundary_samples: usize,
    pub constraints: Vec<ConstraintReport>,
    pub pass: bool,
}

/// Checks `|L_i m^A - g_i| < tol` and `|L_i k^A L_i*(x, x)| < tol` at sampled points of each
/// constrained segment.
pub fn verify_conditions(cf: &ConstrainedField, n_boundary_samples: usize, tol: f64) -> Result<VerifyReport> {
    let mut reports = Vec::new();
    for (i, c) in cf.cs.constraints.iter().enumerate() {
        let mut worst = (0.0f64, 0.0f64, Vec::new());
        let mut worst_score = -1.0;
        for x in sample_boundary(c.segment(), n_boundary_samples, 0) {
            let mean = (cf.constrained_mean_op(&c.operator, &x)? - c.target.eval(&x)).abs();
            let var = cf.constrained_cov(Some(&c.operator), Some(&c.operator), &x, &x)?.abs();
            let score = mean.max(var);
            if score > worst_score || !score.is_finite() {
                worst_score = score;
                worst.2 = x.to_vec();
            }
            worst.0 = if mean.is_nan() { f64::NAN } else { worst.0.max(mean) };
            worst.1 = if var.is_nan() { f64::NAN } else { worst.1.max(var) };
        }
        let pass = worst.0 < tol && worst.1 < tol;
        reports.push(ConstraintReport {
            index: i,
            segment: c.segment().id(),
            max_mean_violation: worst.0,
            max_variance_violation: worst.1,
            worst_point: worst.2,
            pass,
        });
    }
    let pass = reports.iter().all(|r| r.pass);
    Ok(VerifyReport { tol, n_boundary_samples, constraints: reports, pass })
}

/// Maximum of `|k^A(x, x') - k_rest(x, x') k_axis^A(x_axis, x'_axis)|` over 100 sampled pairs,
/// where `k_axis^A` is the one-dimensional constrained factor along `axis`.
pub fn product_structure_check(cf: &ConstrainedField, axis: usize, seed: u64) -> Result<f64> {
    let cs = &cf.cs;
    let d = cs.domain.dim();
    if axis >= d {
        return Err(Error::Precondition(format!("axis {axis} out of range")));
    }
    let (factor, rest): (Kernel, Vec<(Vec<usize>, Kernel)>) = match &cs.base_kernel {
        Kernel::Product(fs) => {
            let Some(f) = fs.iter().find(|f| f.dims == [axis]) else {
                return Err(Error::Precondition(format!("no product factor acts on axis {axis} alone")));
            };
            (
                f.kernel.clone(),
                fs.iter().filter(|g| g.dims != [axis]).map(|g| (g.dims.clone(), g.kernel.clone())).collect(),
            )
        }
        k if d == 1 => (k.clone(), Vec::new()),
        _ => return Err(Error::Precondition("base kernel is not a product separating the constrained axis".into())),
    };
    for (i, c) in cs.constraints.iter().enumerate() {
        let on_axis_face = matches!(c.segment().kind(), SegmentKind::Face { axis: a, .. } if a == axis);
        let op_ok = c.operator.a == 0.0 || c.operator.axis == axis;
        if !on_axis_face || c.projection.axis() != axis || !op_ok || c.weight == WeightSpec::Recipe {
            return Err(Error::Precondition(format!(
                "constraint {i} must act on a face orthogonal to axis {axis} with a closed-form weight"
            )));
        }
    }
    let ops1: Vec<LinearOp> = cs
        .constraints
        .iter()
        .map(|c| LinearOp::from(&BoundaryOperator { a: c.operator.a, b: c.operator.b, axis: 0 }))
        .collect();
    let id = LinearOp::identity();
    let n = ops1.len();
    let k0 = factor.apply_operator(&id, &id)?;
    let kr: Vec<OperatorKernel> = ops1.iter().map(|o| factor.apply_operator(&id, o)).collect::<Result<_>>()?;
    let kl: Vec<OperatorKernel> = ops1.iter().map(|o| factor.apply_operator(o, &id)).collect::<Result<_>>()?;
    let mut kp = Vec::new();
    for oi in &ops1 {
        kp.push(ops1.iter().map(|oj| factor.apply_operator(oi, oj)).collect::<Result<Vec<_>>>()?);
    }
    let pts = sample_interior(&cs.domain, 200, Scheme::LowDiscrepancy, seed)?;
    let mut worst: f64 = 0.0;
    for pair in pts.chunks(2) {
        let (x, y) = (&pair[0], &pair[1]);
        let (wx, wy) = (cf.weights(x)?, cf.weights(y)?);
        let cx: Vec<f64> = cs.constraints.iter().map(|c| c.projection.apply(x)[axis]).collect();
        let cy: Vec<f64> = cs.constraints.iter().map(|c| c.projection.apply(y)[axis]).collect();
        let (a, b) = ([x[axis]], [y[axis]]);
        let mut k2 = k0.eval(&a, &b);
        for j in 0..n {
            k2 -= wy[j] * kr[j].eval(&a, &[cy[j]]);
            k2 -= wx[j] * kl[j].eval(&[cx[j]], &b);
        }
        for i in 0..n {
            for j in 0..n {
                k2 += wx[i] * wy[j] * kp[i][j].eval(&[cx[i]], &[cy[j]]);
            }
        }
        let k1: f64 = rest
            .iter()
            .map(|(dims, k)| {
                let xs: Vec<f64> = dims.iter().map(|&i| x[i]).collect();
                let ys: Vec<f64> = dims.iter().map(|&i| y[i]).collect();
                k.eval_unchecked(&xs, &ys)
            })
            .product();
        let full = cf.cov_unchecked(x, y)?;
        worst = worst.max((full - k1 * k2).abs());
    }
    Ok(worst)
}

/// Largest deviations found by [`bridge_check`].
#[derive(Clone, Debug, Serialize)]
pub struct BridgeReport {
    pub pairs: usize,
    /// Recipe two-endpoint cGRF on `[0, 1]` against the Gaussian-bridge covariance.
    pub bridge_max_deviation: f64,
    /// Endpoint-state cGRF with `w ≡ 1` against `k(x,x') - k(x,0) - k(0,x') + k(0,0)`.
    pub example_one_max_deviation: f64,
}

/// Compares two constrained covariances on `[0, 1]` with their closed forms at `pairs` random
/// pairs drawn from `seed`. `kernel` must be one-dimensional.
pub fn bridge_check(kernel: &Kernel, pairs: usize, seed: u64) -> Result<BridgeReport> {
    use rand::{Rng, SeedableRng};
    if kernel.dim() != 1 {
        return Err(Error::Precondition(format!("bridge check needs a 1-dimensional kernel, got {}", kernel.dim())));
    }
    let dom = Domain::interval(0.0, 1.0)?;
    let zero = || SmoothFn::parse("0", &["x1"]);
    let end = |seg: usize, dir: f64, w: WeightSpec| -> Result<Constraint> {
        Constraint::state(&dom.segment(seg)?, &[dir], zero()?, w)
    };
    let bridge = ConstrainedField::new(ConstraintSet::new(
        dom.clone(),
        vec![end(0, -1.0, WeightSpec::Recipe)?, end(1, 1.0, WeightSpec::Recipe)?],
        MeanFunction::Zero,
        kernel.clone(),
    )?);
    let pinned = ConstrainedField::new(ConstraintSet::new(
        dom.clone(),
        vec![end(0, -1.0, WeightSpec::ClosedForm(SmoothFn::parse("1", &["x1"])?))?],
        MeanFunction::Zero,
        kernel.clone(),
    )?);
    let k = |x: f64, y: f64| kernel.eval_unchecked(&[x], &[y]);
    let kb0 = |x: f64, y: f64| k(x, y) - k(x, 0.0) * k(0.0, y) / k(0.0, 0.0);
    let kb = |x: f64, y: f64| kb0(x, y) - kb0(1.0, x) * kb0(1.0, y) / kb0(1.0, 1.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut dev_b, mut dev_e) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let (x, y): (f64, f64) = (rng.random(), rng.random());
        dev_b = dev_b.max((bridge.constrained_cov(None, None, &[x], &[y])? - kb(x, y)).abs());
        let e1 = k(x, y) - k(x, 0.0) - k(0.0, y) + k(0.0, 0.0);
        dev_e = dev_e.max((pinned.constrained_cov(None, None, &[x], &[y])? - e1).abs());
    }
    Ok(BridgeReport { pairs, bridge_max_deviation: dev_b, example_one_max_deviation: dev_e })
}
