//! Observation datasets.

use crate::cgrf::Query;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::geometry::MAX_DIM;
use crate::io;
use crate::kernels::{LinearOp, MultiIndex};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Noisy observations `y_i = (L_i u)(x_i) + ε_i`, `ε_i ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Point>,
    pub y: Vec<f64>,
    pub noise_sd: f64,
    pub operators: Vec<LinearOp>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    operators: Option<Vec<Vec<(f64, [u8; MAX_DIM])>>>,
}

impl Dataset {
    /// Point observations of the field itself.
    pub fn new(inputs: Vec<Point>, y: Vec<f64>, noise_sd: f64) -> Result<Dataset> {
        let ops = vec![LinearOp::identity(); inputs.len()];
        Dataset::with_operators(inputs, y, noise_sd, ops)
    }

    pub fn with_operators(inputs: Vec<Point>, y: Vec<f64>, noise_sd: f64, operators: Vec<LinearOp>) -> Result<Dataset> {
        if inputs.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: y.len() });
        }
        if operators.len() != inputs.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), got: operators.len() });
        }
        if !noise_sd.is_finite() || noise_sd < 0.0 {
            return Err(Error::Config(format!("noise sd must be finite and non-negative, got {noise_sd}")));
        }
        if let Some(p) = inputs.first() {
            if let Some(q) = inputs.iter().find(|q| q.dim() != p.dim()) {
                return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
            }
        }
        Ok(Dataset { inputs, y, noise_sd, operators })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn queries(&self) -> Vec<Query> {
        self.inputs.iter().zip(&self.operators).map(|(p, op)| Query::new(op.clone(), p.clone())).collect()
    }

    /// Same observations with another noise level.
    pub fn with_noise(&self, noise_sd: f64) -> Dataset {
        Dataset { noise_sd, ..self.clone() }
    }

    /// Concatenation of two datasets with the noise level of `self`.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut d = self.clone();
        d.inputs.extend(other.inputs.iter().cloned());
        d.y.extend(&other.y);
        d.operators.extend(other.operators.iter().cloned());
        d
    }

    fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes `path` as CSV with columns `names..., y` and the noise level and operator tags to a
    /// JSON file next to it.
    pub fn write(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut header = names.to_vec();
        header.push("y".into());
        io::write_csv(
            path,
            &header,
            self.inputs.iter().zip(&self.y).map(|(p, &y)| {
                let mut row = p.to_vec();
                row.push(y);
                row
            }),
        )?;
        let ops = if self.operators.iter().all(|o| o.is_identity()) {
            None
        } else {
            Some(self.operators.iter().map(|o| o.terms.iter().map(|&(c, i)| (c, i.0)).collect()).collect())
        };
        let side = serde_json::to_string_pretty(&Sidecar { noise_sd: self.noise_sd, operators: ops })
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(Self::sidecar_path(path), side).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Reads a dataset written by [`Dataset::write`]; the last CSV column holds the targets.
    pub fn read(path: &Path) -> Result<Dataset> {
        let (header, rows) = io::read_csv(path)?;
        if header.len() < 2 || header.last().map(String::as_str) != Some("y") {
            return Err(Error::Config(format!("{}: expected coordinate columns followed by y", path.display())));
        }
        let side_path = Self::sidecar_path(path);
        let text =
            std::fs::read_to_string(&side_path).map_err(|e| Error::Config(format!("{}: {e}", side_path.display())))?;
        let side: Sidecar =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side_path.display())))?;
        let d = header.len() - 1;
        let inputs = rows.iter().map(|r| Point::new(&r[..d])).collect::<Result<Vec<_>>>()?;
        let y = rows.iter().map(|r| r[d]).collect();
        let ops = match side.operators {
            None => vec![LinearOp::identity(); rows.len()],
            Some(o) => o
                .into_iter()
                .map(|terms| LinearOp { terms: terms.into_iter().map(|(c, i)| (c, MultiIndex(i))).collect() })
                .collect(),
        };
        Dataset::with_operators(inputs, y, side.noise_sd, ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip() {
        let dir = std::env::temp_dir().join(format!("cgrf-data-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("d.csv");
        let pts = vec![Point::new(&[0.1, 0.2]).unwrap(), Point::new(&[0.3, 1.0 / 3.0]).unwrap()];
        let ops = vec![LinearOp::identity(), LinearOp::partial(MultiIndex::unit(1))];
        let d = Dataset::with_operators(pts, vec![1.5, -0.25], 0.1, ops).unwrap();
        d.write(&p, &["t".into(), "x1".into()]).unwrap();
        assert_eq!(Dataset::read(&p).unwrap(), d);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(Dataset::new(vec![Point::from(0.0)], vec![], 0.0).is_err());
        assert!(Dataset::new(vec![Point::from(0.0)], vec![1.0], f64::NAN).is_err());
    }
}
