//! Forward noising, denoising losses, reverse posteriors, ancestral sampling,
//! zeroth-step likelihoods, the variational bound and training.

mod bounds;
mod checkpoint;
mod denoiser;
mod elbo;
mod likelihood;
mod loss;
mod optim;
mod posterior;
mod sampling;
mod train;

pub use bounds::{CleanBounds, DEFAULT_COORD_RADIUS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointHeader};
pub use denoiser::{Denoiser, DenoiserOutput};
pub use elbo::{elbo, prior_kl, reverse_step_kl, ElboReport, Kl};
pub use likelihood::{categorical_masses, integer_mass, zeroth_likelihood, ZerothLikelihood, MASS_FLOOR};
pub use loss::{loss_on_tape, training_loss, LossBreakdown, OmegaMode, TapeLoss, PROB_FLOOR};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use posterior::{
    edge_posterior, posterior_continuous, posterior_discrete_sample, sample_edges, sampling_distribution,
};
pub use sampling::{sample, sample_batch, DecodeMode, SampleOptions, SampleTrace};
pub use train::{apply_limited_3d, record_gradient, train, AtomCountHistogram, LossRow, TrainConfig, TrainReport};

use thiserror::Error;

use crate::model::{ModelError, ModelInput, Mode};
use crate::molecule::{FeatureLayout, Molecule};
use crate::rng::{self, Rng};
use crate::schedule::{NoiseSchedule, Transitions};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("{0}")]
    Contract(String),
}

/// Clean molecule tensors. Missing modalities are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clean {
    /// `[n, d]`
    pub h: Tensor,
    /// Row-major `n × n` bond categories.
    pub e: Option<Vec<usize>>,
    /// `[n, 3]`, zero center of gravity.
    pub x: Option<Tensor>,
}

impl Clean {
    pub fn from_molecule(m: &Molecule, layout: FeatureLayout) -> Self {
        Self {
            h: m.features(layout),
            e: m.has_2d.then(|| m.bonds.categories()),
            x: m.has_3d.then(|| project_zero_cog(&m.coord_tensor())),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.h.shape()[0]
    }

    /// Drops the modalities `mode` does not use.
    pub fn restricted(&self, mode: Mode) -> Self {
        Self {
            h: self.h.clone(),
            e: if mode.uses_2d() { self.e.clone() } else { None },
            x: if mode.uses_3d() { self.x.clone() } else { None },
        }
    }

    pub fn mode(&self) -> Option<Mode> {
        Mode::for_modalities(self.e.is_some(), self.x.is_some())
    }
}

/// Noisy state at step `t` together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySnapshot {
    pub t: usize,
    pub h: Tensor,
    pub e: Option<Vec<usize>>,
    pub x: Option<Tensor>,
    pub eps_h: Tensor,
    pub eps_x: Option<Tensor>,
}

impl NoisySnapshot {
    pub fn model_input(&self, schedule: &NoiseSchedule) -> ModelInput {
        ModelInput {
            h: self.h.clone(),
            t_norm: schedule.normalized(self.t),
            edges: self.e.clone(),
            x: self.x.clone(),
        }
    }
}

/// Subtracts the column mean of an `[n, 3]` matrix.
pub fn project_zero_cog(v: &Tensor) -> Tensor {
    let n = v.shape()[0];
    let d = v.shape()[1];
    if n == 0 {
        return v.clone();
    }
    let mean: Vec<f64> = (0..d)
        .map(|a| (0..n).map(|i| v.get(&[i, a])).sum::<f64>() / n as f64)
        .collect();
    Tensor::from_fn([n, d], |k| v.get(&[k / d, k % d]) - mean[k % d])
}

/// Largest absolute column mean.
pub fn max_cog(v: &Tensor) -> f64 {
    let (n, d) = (v.shape()[0], v.shape()[1]);
    if n == 0 {
        return 0.0;
    }
    (0..d)
        .map(|a| ((0..n).map(|i| v.get(&[i, a])).sum::<f64>() / n as f64).abs())
        .fold(0.0, f64::max)
}

pub fn standard_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng::normal(rng))
}

/// Noises a clean molecule to step `t ∈ [1, T]`.
pub fn noise_molecule(
    clean: &Clean,
    schedule: &NoiseSchedule,
    transitions: &Transitions,
    t: usize,
    rng: &mut Rng,
) -> Result<NoisySnapshot, DiffusionError> {
    if t == 0 || t > schedule.steps() {
        return Err(DiffusionError::StepOutOfRange {
            t,
            steps: schedule.steps(),
        });
    }
    Ok(noise_at(clean, schedule, transitions, t, rng))
}

/// Like [`noise_molecule`] but also accepts `t = 0`, as the reconstruction
/// term needs.
pub fn noise_at(clean: &Clean, schedule: &NoiseSchedule, transitions: &Transitions, t: usize, rng: &mut Rng) -> NoisySnapshot {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let eps_h = standard_normal(clean.h.shape(), rng);
    let h = Tensor::from_fn(clean.h.shape().to_vec(), |k| a * clean.h.data()[k] + s * eps_h.data()[k]);
    let (x, eps_x) = match &clean.x {
        Some(x0) => {
            let eps = project_zero_cog(&standard_normal(x0.shape(), rng));
            let xt = Tensor::from_fn(x0.shape().to_vec(), |k| a * x0.data()[k] + s * eps.data()[k]);
            (Some(xt), Some(eps))
        }
        None => (None, None),
    };
    let e = clean.e.as_ref().map(|e0| {
        let n = clean.n_atoms();
        let mut et = vec![0usize; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let row = transitions.cumulative_row(t, e0[i * n + j]);
                let c = rng::categorical(rng, &row);
                et[i * n + j] = c;
                et[j * n + i] = c;
            }
        }
        et
    });
    NoisySnapshot {
        t,
        h,
        e,
        x,
        eps_h,
        eps_x,
    }
}

/// `noisy / α_t − (σ_t / α_t)·eps_hat`, the clean-data estimate.
pub fn estimate_clean(noisy: &Tensor, eps_hat: &Tensor, schedule: &NoiseSchedule, t: usize) -> Tensor {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    Tensor::from_fn(noisy.shape().to_vec(), |k| noisy.data()[k] / a - s / a * eps_hat.data()[k])
}

/// Squared Euclidean distance between two equal-shape tensors.
pub(crate) fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}
