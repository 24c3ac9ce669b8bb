use rand::Rng as _;
use serde::Serialize;

use super::likelihood::MASS_FLOOR;
use super::posterior::{edge_posterior, sampling_distribution};
use super::{noise_at, sq_dist, zeroth_likelihood, Clean, Denoiser, DenoiserOutput, DiffusionError, NoisySnapshot};
use crate::model::Mode;
use crate::rng::Rng;
use crate::schedule::{NoiseSchedule, Transitions};

/// A divergence split by modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Kl {
    pub h: f64,
    pub x: f64,
    pub e: f64,
}

impl Kl {
    pub fn total(&self) -> f64 {
        self.h + self.x + self.e
    }
}

/// Negative variational bound, `nelbo = prior_kl + diffusion_loss_sum −
/// reconstruction_loglik`, each averaged over Monte Carlo draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboReport {
    pub prior_kl: f64,
    pub reconstruction_loglik: f64,
    pub diffusion_loss_sum: f64,
    pub nelbo: f64,
    /// Standard error of `nelbo` across draws.
    pub std_err: f64,
    pub mc_samples: usize,
}

fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.max(MASS_FLOOR).ln()))
        .sum()
}

/// `KL(q(M_T | M) ‖ prior)` in closed form. Coordinates live in the
/// `3(n − 1)`-dimensional zero-mean subspace.
pub fn prior_kl(clean: &Clean, schedule: &NoiseSchedule, transitions: &Transitions) -> Kl {
    let t = schedule.steps();
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let var = s * s;
    let gauss = |sq_mean: f64, dims: usize| 0.5 * (a * a * sq_mean + dims as f64 * (var - 1.0 - var.ln()));
    let n = clean.n_atoms();
    let h = gauss(clean.h.sq_norm(), clean.h.numel());
    let x = clean
        .x
        .as_ref()
        .map_or(0.0, |x| gauss(x.sq_norm(), 3 * n.saturating_sub(1)));
    let e = clean.e.as_ref().map_or(0.0, |e| {
        let b = transitions.categories();
        let uniform = vec![1.0 / b as f64; b];
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += categorical_kl(&transitions.cumulative_row(t, e[i * n + j]), &uniform);
            }
        }
        total
    });
    Kl { h, x, e }
}

/// Divergence between the true and predicted reverse steps at `snap.t ≥ 1`.
pub fn reverse_step_kl(
    clean: &Clean,
    snap: &NoisySnapshot,
    out: &DenoiserOutput,
    schedule: &NoiseSchedule,
    transitions: &Transitions,
) -> Kl {
    let t = snap.t;
    let w = 0.5 * (schedule.snr(t - 1) / schedule.snr(t) - 1.0);
    let h = w * sq_dist(&snap.eps_h, &out.eps_h);
    let x = match (&snap.eps_x, &out.eps_x) {
        (Some(e), Some(eh)) => w * sq_dist(e, eh),
        _ => 0.0,
    };
    let e = match (&clean.e, &snap.e, &out.p_e) {
        (Some(e0), Some(et), Some(p)) => {
            let n = clean.n_atoms();
            let b = transitions.categories();
            let mut total = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let k = i * n + j;
                    let truth = edge_posterior(transitions, t, et[k], e0[k]);
                    let start = k * b;
                    let (model, _) = sampling_distribution(transitions, t, et[k], &p.data()[start..start + b]);
                    total += categorical_kl(&truth, &model);
                }
            }
            total
        }
        _ => 0.0,
    };
    Kl { h, x, e }
}

/// Monte Carlo estimate of the negative bound. Each draw picks one
/// `t ~ U{1..T}` (weighted by `T`) and one step-0 reconstruction.
pub fn elbo(
    clean: &Clean,
    net: &(impl Denoiser + ?Sized),
    schedule: &NoiseSchedule,
    transitions: &Transitions,
    mode: Mode,
    rng: &mut Rng,
    mc_samples: usize,
) -> Result<ElboReport, DiffusionError> {
    if mc_samples == 0 {
        return Err(DiffusionError::Contract("elbo needs at least one Monte Carlo sample".into()));
    }
    let clean = clean.restricted(mode);
    let steps = schedule.steps();
    let prior = prior_kl(&clean, schedule, transitions).total();
    let (mut diff_sum, mut rec_sum) = (0.0, 0.0);
    let mut draws = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        let t = rng.random_range(1..=steps);
        let snap = noise_at(&clean, schedule, transitions, t, rng);
        let out = net.denoise(&snap.model_input(schedule), mode)?;
        let diff = steps as f64 * reverse_step_kl(&clean, &snap, &out, schedule, transitions).total();

        let snap0 = noise_at(&clean, schedule, transitions, 0, rng);
        let out0 = net.denoise(&snap0.model_input(schedule), mode)?;
        let rec = zeroth_likelihood(&clean, &snap0, &out0, schedule, net.layout()).total();

        diff_sum += diff;
        rec_sum += rec;
        draws.push(prior + diff - rec);
    }
    let m = mc_samples as f64;
    let nelbo = draws.iter().sum::<f64>() / m;
    let std_err = if mc_samples > 1 {
        let var = draws.iter().map(|v| (v - nelbo).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    Ok(ElboReport {
        prior_kl: prior,
        reconstruction_loglik: rec_sum / m,
        diffusion_loss_sum: diff_sum / m,
        nelbo,
        std_err,
        mc_samples,
    })
}
