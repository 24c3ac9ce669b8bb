use serde::{Deserialize, Serialize};

use super::project_zero_cog;
use crate::molecule::{FeatureLayout, Molecule};
use crate::tensor::Tensor;

/// Fallback coordinate radius, in Ångström, when no training geometry is known.
pub const DEFAULT_COORD_RADIUS: f64 = 10.0;

/// Range of clean data, used to clip the clean estimate during sampling.
///
/// Near `t = T` the reverse update divides by a per-step signal ratio of
/// order 0.01, so any error in the predicted noise is amplified a hundredfold
/// and the chain drifts away from the data. Clipping the clean estimate to
/// the range seen in training keeps the posterior mean a contraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanBounds {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    /// Largest distance of any atom from its molecule's center.
    pub coord_radius: f64,
}

impl CleanBounds {
    /// One-hot types in `[0, 1]`, integer columns in `[-4, 4]`.
    pub fn for_layout(layout: FeatureLayout) -> Self {
        let mut feature_min = vec![0.0; layout.types];
        let mut feature_max = vec![1.0; layout.types];
        feature_min.resize(layout.width(), -4.0);
        feature_max.resize(layout.width(), 4.0);
        Self {
            feature_min,
            feature_max,
            coord_radius: DEFAULT_COORD_RADIUS,
        }
    }

    /// Per-column feature range and the largest atom radius over `data`,
    /// falling back to [`CleanBounds::for_layout`] where the data says nothing.
    pub fn from_dataset(data: &[Molecule], layout: FeatureLayout) -> Self {
        let d = layout.width();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut radius: f64 = 0.0;
        let mut any_3d = false;
        for m in data {
            let h = m.features(layout);
            for i in 0..m.n_atoms() {
                for (k, &v) in h.row(i).iter().enumerate() {
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
            if m.has_3d {
                any_3d = true;
                for c in &m.coords {
                    radius = radius.max(c.iter().map(|v| v * v).sum::<f64>().sqrt());
                }
            }
        }
        let fallback = Self::for_layout(layout);
        for k in 0..d {
            if lo[k] > hi[k] {
                lo[k] = fallback.feature_min[k];
                hi[k] = fallback.feature_max[k];
            }
        }
        Self {
            feature_min: lo,
            feature_max: hi,
            coord_radius: if any_3d && radius > 0.0 { radius } else { fallback.coord_radius },
        }
    }

    pub fn width(&self) -> usize {
        self.feature_min.len()
    }

    pub fn clip_features(&self, h: &Tensor) -> Tensor {
        let d = h.shape()[1];
        Tensor::from_fn(h.shape().to_vec(), |k| h.data()[k].clamp(self.feature_min[k % d], self.feature_max[k % d]))
    }

    /// Shrinks atoms beyond the radius onto it, then re-centers. Depends on
    /// norms only, so it commutes with rotations.
    pub fn clip_coords(&self, x: &Tensor) -> Tensor {
        let n = x.shape()[0];
        let mut out = x.clone();
        for i in 0..n {
            let r = (0..3).map(|a| x.get(&[i, a]).powi(2)).sum::<f64>().sqrt();
            if r > self.coord_radius {
                for a in 0..3 {
                    out.set(&[i, a], x.get(&[i, a]) * self.coord_radius / r);
                }
            }
        }
        project_zero_cog(&out)
    }
}
