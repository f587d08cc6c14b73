//! JSON descriptions of domains, kernels and constraint sets.
//!
//! ```json
//! {
//!   "domain": {"shape": "box", "lo": [0, 0], "hi": [1, 1]},
//!   "kernel": {"form": "se", "precision": 1, "lengthscales": [0.3, 0.3]},
//!   "constraints": [
//!     {"segment": 0, "operator": {"a": 1, "b": 1, "axis": 0}, "target": "sin(x2)",
//!      "projection": {"direction": [-1, 0]}, "weight": "recipe"}
//!   ]
//! }
//! ```

use crate::cgrf::{default_var_names, ConstrainedField, Constraint, ConstraintSet, WeightSpec};
use crate::error::{Error, Result};
use crate::expr::SmoothFn;
use crate::geometry::{sample_boundary, sample_interior, DogBone, Domain, Point, Projection, Scheme};
use crate::kernels::{BoundaryOperator, Factor, Kernel, MeanFunction};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval { a: f64, b: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    UnitDisk,
    UnitTriangle,
    DogBone(DogBone),
    SpaceTime { t0: f64, t1: f64, space: std::boxed::Box<DomainConfig> },
}

impl DomainConfig {
    pub fn build(&self) -> Result<Domain> {
        match self {
            DomainConfig::Interval { a, b } => Domain::interval(*a, *b),
            DomainConfig::Box { lo, hi } => Domain::cube(lo, hi),
            DomainConfig::UnitDisk => Ok(Domain::UnitDisk),
            DomainConfig::UnitTriangle => Ok(Domain::UnitTriangle),
            DomainConfig::DogBone(p) => Domain::dog_bone(p.clone()),
            DomainConfig::SpaceTime { t0, t1, space } => Domain::space_time(*t0, *t1, space.build()?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Se { precision: f64, lengthscales: Vec<f64> },
    Matern { nu: f64, precision: f64, lengthscales: Vec<f64> },
    Periodic { precision: f64, lengthscale: f64, period: f64 },
    Product { factors: Vec<FactorConfig> },
    Sum { kernels: Vec<KernelConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub dims: Vec<usize>,
    pub kernel: KernelConfig,
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel> {
        match self {
            KernelConfig::Se { precision, lengthscales } => Kernel::se(*precision, lengthscales),
            KernelConfig::Matern { nu, precision, lengthscales } => Kernel::matern(*nu, *precision, lengthscales),
            KernelConfig::Periodic { precision, lengthscale, period } => {
                Kernel::periodic(*precision, *lengthscale, *period)
            }
            KernelConfig::Product { factors } => Kernel::product(
                factors
                    .iter()
                    .map(|f| Ok(Factor { dims: f.dims.clone(), kernel: f.kernel.build()? }))
                    .collect::<Result<Vec<_>>>()?,
            ),
            KernelConfig::Sum { kernels } => {
                Kernel::sum(kernels.iter().map(KernelConfig::build).collect::<Result<Vec<_>>>()?)
            }
        }
    }
}

/// `L = a ∂_axis + b I`; omitted means the identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default)]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default)]
    pub axis: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightConfig {
    /// `"recipe"`.
    Named(String),
    Expr {
        expr: String,
    },
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig::Named("recipe".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub segment: usize,
    pub operator: Option<OperatorConfig>,
    pub target: String,
    pub projection: ProjectionConfig,
    #[serde(default)]
    pub weight: WeightConfig,
}

/// Where `sample` evaluates draws: interior points plus points on every constrained segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointsConfig {
    pub interior: usize,
    pub boundary: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for PointsConfig {
    fn default() -> Self {
        PointsConfig { interior: 100, boundary: 20, scheme: Scheme::Grid, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    /// Base mean expression; zero when absent.
    pub mean: Option<String>,
    /// Names of the coordinates in expressions; `x1..xd` when absent.
    pub variables: Option<Vec<String>>,
    pub constraints: Vec<ConstraintConfig>,
    #[serde(default)]
    pub points: PointsConfig,
    /// Central-difference step for operator-applied constrained covariances, relative to the
    /// smallest lengthscale.
    pub fd_step: Option<f64>,
}

impl FieldConfig {
    pub fn from_json(src: &str) -> Result<FieldConfig> {
        serde_json::from_str(src).map_err(|e| Error::Config(e.to_string()))
    }

    fn vars(&self, d: usize) -> Result<Vec<String>> {
        let v = self.variables.clone().unwrap_or_else(|| default_var_names(d));
        if v.len() != d {
            return Err(Error::Config(format!("{} variable names given for a {d}-dimensional domain", v.len())));
        }
        Ok(v)
    }

    pub fn build(&self) -> Result<ConstrainedField> {
        let dom = self.domain.build()?;
        let vars = self.vars(dom.dim())?;
        let vars: Vec<&str> = vars.iter().map(String::as_str).collect();
        let mut cons = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let seg = dom.segment(c.segment)?;
            let op = match c.operator {
                None => BoundaryOperator::identity(),
                Some(o) if o.a == 0.0 && o.b == 1.0 => BoundaryOperator::identity(),
                Some(o) => BoundaryOperator::new(o.a, o.b, o.axis)?,
            };
            let weight = match &c.weight {
                WeightConfig::Named(n) if n == "recipe" => WeightSpec::Recipe,
                WeightConfig::Named(n) => {
                    return Err(Error::Config(format!(
                        "unknown weight '{n}', expected \"recipe\" or {{\"expr\": ...}}"
                    )))
                }
                WeightConfig::Expr { expr } => WeightSpec::ClosedForm(SmoothFn::parse(expr, &vars)?),
            };
            let proj = Projection::along(seg.clone(), &c.projection.direction)?;
            cons.push(Constraint::new(op, SmoothFn::parse(&c.target, &vars)?, &seg, proj, weight)?);
        }
        let mean = match &self.mean {
            None => MeanFunction::Zero,
            Some(m) => MeanFunction::Expr(SmoothFn::parse(m, &vars)?),
        };
        let kernel = self.kernel.build()?;
        let scale = kernel.min_lengthscale();
        let cf = ConstrainedField::new(ConstraintSet::new(dom, cons, mean, kernel)?);
        Ok(match self.fd_step {
            Some(h) => cf.with_fd_step(h * scale),
            None => cf,
        })
    }

    /// Interior points followed by boundary points of each constrained segment, with the flag
    /// `true` on the latter.
    pub fn evaluation_points(&self) -> Result<Vec<(Point, bool)>> {
        let dom = self.domain.build()?;
        let p = &self.points;
        let mut out: Vec<(Point, bool)> =
            sample_interior(&dom, p.interior, p.scheme, p.seed)?.into_iter().map(|x| (x, false)).collect();
        for c in &self.constraints {
            let seg = dom.segment(c.segment)?;
            out.extend(sample_boundary(&seg, p.boundary, p.seed).into_iter().map(|x| (x, true)));
        }
        Ok(out)
    }
}
