use serde::Serialize;
use statrs::function::erf::erfc;

use super::{sq_dist, Clean, DenoiserOutput, NoisySnapshot};
use crate::molecule::FeatureLayout;
use crate::schedule::NoiseSchedule;

/// Probability masses are floored here before taking logs.
pub const MASS_FLOOR: f64 = 1e-30;

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(hi) − Φ(lo)` evaluated on whichever tail keeps precision.
fn gaussian_interval(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        phi(-lo) - phi(-hi)
    } else {
        phi(hi) - phi(lo)
    }
}

/// Mass of the unit bin around integer `value` under `N(center, width²)`.
pub fn integer_mass(value: f64, center: f64, width: f64) -> f64 {
    gaussian_interval((value - 0.5 - center) / width, (value + 0.5 - center) / width)
}

/// Class probabilities from each class's Gaussian mass on `[½, 1½]`,
/// normalized to one.
pub fn categorical_masses(centers: &[f64], width: f64) -> Vec<f64> {
    let raw: Vec<f64> = centers
        .iter()
        .map(|&c| gaussian_interval((0.5 - c) / width, (1.5 - c) / width).max(MASS_FLOOR))
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / z).collect()
}

/// Log-likelihood of the clean molecule given the step-0 state, per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZerothLikelihood {
    pub h: f64,
    pub e: f64,
    pub x: f64,
}

impl ZerothLikelihood {
    pub fn total(&self) -> f64 {
        self.h + self.e + self.x
    }
}

/// Features are scored by discretized Gaussians centered on the noisy step-0
/// features with width `σ_0`; coordinates by `−½‖ε − ε̂‖²`; bonds by the
/// predicted probability of the true category.
pub fn zeroth_likelihood(
    clean: &Clean,
    snap: &NoisySnapshot,
    out: &DenoiserOutput,
    schedule: &NoiseSchedule,
    layout: FeatureLayout,
) -> ZerothLikelihood {
    let width = schedule.sigma(0);
    let n = clean.n_atoms();
    let d = layout.width();
    let mut h = 0.0;
    for i in 0..n {
        let row = &snap.h.data()[i * d..(i + 1) * d];
        let truth = &clean.h.data()[i * d..(i + 1) * d];
        if layout.types > 0 {
            let probs = categorical_masses(&row[..layout.types], width);
            let k = (0..layout.types).find(|&k| truth[k] == 1.0);
            if let Some(k) = k {
                h += probs[k].max(MASS_FLOOR).ln();
            }
        }
        for c in layout.types..d {
            h += integer_mass(truth[c], row[c], width).max(MASS_FLOOR).ln();
        }
    }
    let x = match (&snap.eps_x, &out.eps_x) {
        (Some(e), Some(eh)) => -0.5 * sq_dist(e, eh),
        _ => 0.0,
    };
    let e = match (&clean.e, &out.p_e) {
        (Some(e), Some(p)) => {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += p.get(&[i, j, e[i * n + j]]).max(MASS_FLOOR).ln();
                }
            }
            s
        }
        _ => 0.0,
    };
    ZerothLikelihood { h, e, x }
}
