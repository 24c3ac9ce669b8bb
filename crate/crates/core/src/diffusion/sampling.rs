use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_clean, CleanBounds, max_cog, posterior::sample_edges, project_zero_cog, standard_normal, Denoiser, DiffusionError};
use crate::model::{ModelInput, Mode};
use crate::molecule::Molecule;
use crate::rng::{self, Rng};
use crate::schedule::{NoiseSchedule, Transitions};
use crate::tensor::Tensor;

/// How the step-0 state is turned into a molecule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Argmax types and bonds, rounded integers, mean coordinates.
    #[default]
    Deterministic,
    /// Draws every component from its step-0 likelihood.
    Stochastic,
}

/// Everything about a sampling run besides the network and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOptions {
    pub mode: Mode,
    pub decode: DecodeMode,
    /// Clip the clean estimate at every step; `None` runs the raw update.
    pub bounds: Option<CleanBounds>,
}

impl SampleOptions {
    pub fn new(mode: Mode, decode: DecodeMode, bounds: Option<CleanBounds>) -> Self {
        Self { mode, decode, bounds }
    }
}

/// Diagnostics collected along one reverse chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleTrace {
    /// Largest coordinate center-of-gravity deviation seen at any step.
    pub max_cog: f64,
    /// Reverse edge steps whose posterior degenerated to the prediction.
    pub fallback_warnings: usize,
    /// Whether every intermediate edge state was symmetric.
    pub edges_symmetric: bool,
    pub steps: usize,
}

fn check_finite(t: &Tensor, step: usize, what: &str) -> Result<(), DiffusionError> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(DiffusionError::NonFinite {
            step,
            detail: format!("{what} state"),
        })
    }
}

fn symmetric(e: &[usize], n: usize) -> bool {
    (0..n).all(|i| (0..n).all(|j| e[i * n + j] == e[j * n + i]))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b })
}

/// Runs the reverse chain from pure noise for an `n`-atom molecule.
pub fn sample(
    net: &(impl Denoiser + ?Sized),
    schedule: &NoiseSchedule,
    transitions: &Transitions,
    n: usize,
    options: &SampleOptions,
    rng: &mut Rng,
) -> Result<(Molecule, SampleTrace), DiffusionError> {
    let (mode, decode, bounds) = (options.mode, options.decode, options.bounds.as_ref());
    let layout = net.layout();
    let b = transitions.categories();
    if mode.uses_2d() && net.bond_categories() != b {
        return Err(DiffusionError::Contract(format!(
            "denoiser predicts {} bond categories, transitions have {b}",
            net.bond_categories()
        )));
    }
    if let Some(bounds) = bounds {
        if bounds.width() != layout.width() {
            return Err(DiffusionError::Contract(format!(
                "bounds cover {} feature columns, the denoiser uses {}",
                bounds.width(),
                layout.width()
            )));
        }
    }
    let d = layout.width();
    let steps = schedule.steps();
    let mut trace = SampleTrace {
        edges_symmetric: true,
        steps,
        ..Default::default()
    };

    let mut h = standard_normal(&[n, d], rng);
    let mut x = mode.uses_3d().then(|| project_zero_cog(&standard_normal(&[n, 3], rng)));
    let mut e = mode.uses_2d().then(|| {
        let uniform = vec![1.0; b];
        let mut e = vec![0usize; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let c = rng::categorical(rng, &uniform);
                e[i * n + j] = c;
                e[j * n + i] = c;
            }
        }
        e
    });
    if let Some(x) = &x {
        trace.max_cog = max_cog(x);
    }

    for t in (1..=steps).rev() {
        let input = ModelInput {
            h: h.clone(),
            t_norm: schedule.normalized(t),
            edges: e.clone(),
            x: x.clone(),
        };
        let out = net.denoise(&input, mode)?;
        let s = schedule.sigma_reverse(t);
        let noise = standard_normal(&[n, d], rng);
        h = reverse_mean(&h, &out.eps_h, schedule, t, bounds.map(|b| |v: &Tensor| b.clip_features(v)));
        for (v, z) in h.data_mut().iter_mut().zip(noise.data()) {
            *v += s * z;
        }
        check_finite(&h, t, "feature")?;
        if let Some(xt) = &x {
            let eps_hat = out
                .eps_x
                .as_ref()
                .ok_or_else(|| DiffusionError::Contract("denoiser returned no coordinate noise".into()))?;
            let noise = project_zero_cog(&standard_normal(&[n, 3], rng));
            let mut next = reverse_mean(xt, eps_hat, schedule, t, bounds.map(|b| |v: &Tensor| b.clip_coords(v)));
            for (v, z) in next.data_mut().iter_mut().zip(noise.data()) {
                *v += s * z;
            }
            check_finite(&next, t, "coordinate")?;
            trace.max_cog = trace.max_cog.max(max_cog(&next));
            x = Some(next);
        }
        if let Some(et) = &e {
            let p = out
                .p_e
                .as_ref()
                .ok_or_else(|| DiffusionError::Contract("denoiser returned no bond probabilities".into()))?;
            check_finite(p, t, "bond probability")?;
            let next = sample_edges(et, p, transitions, t, rng, &mut trace.fallback_warnings);
            trace.edges_symmetric &= symmetric(&next, n);
            e = Some(next);
        }
    }

    let input = ModelInput {
        h: h.clone(),
        t_norm: 0.0,
        edges: e.clone(),
        x: x.clone(),
    };
    let out = net.denoise(&input, mode)?;
    let mol = decode_zeroth(&input, &out, schedule, layout, b, decode, bounds, rng)?;
    Ok((mol, trace))
}

fn decode_zeroth(
    state: &ModelInput,
    out: &super::DenoiserOutput,
    schedule: &NoiseSchedule,
    layout: crate::molecule::FeatureLayout,
    b: usize,
    decode: DecodeMode,
    bounds: Option<&CleanBounds>,
    rng: &mut Rng,
) -> Result<Molecule, DiffusionError> {
    let n = state.n_atoms();
    let width = schedule.sigma(0) / schedule.alpha(0);
    let mut h_hat = estimate_clean(&state.h, &out.eps_h, schedule, 0);
    if let Some(b) = bounds {
        h_hat = b.clip_features(&h_hat);
    }
    check_finite(&h_hat, 0, "decoded feature")?;
    let mut atoms = Vec::with_capacity(n);
    let mut charges = Vec::with_capacity(n);
    for i in 0..n {
        let row = h_hat.row(i);
        let types = &row[..layout.types];
        let atom = match decode {
            DecodeMode::Deterministic => argmax(types),
            DecodeMode::Stochastic => rng::categorical(rng, &super::categorical_masses(types, width)),
        };
        atoms.push(atom);
        let charge = if layout.integers > 0 {
            let v = row[layout.types];
            let v = match decode {
                DecodeMode::Deterministic => v,
                DecodeMode::Stochastic => v + width * rng::normal(rng),
            };
            v.round() as i64
        } else {
            0
        };
        charges.push(charge);
    }

    let mut bonds = Vec::new();
    if let (Some(_), Some(p)) = (&state.edges, &out.p_e) {
        for i in 0..n {
            for j in i + 1..n {
                let start = (i * n + j) * b;
                let probs = &p.data()[start..start + b];
                let c = match decode {
                    DecodeMode::Deterministic => argmax(probs),
                    DecodeMode::Stochastic => rng::categorical(rng, probs),
                };
                if c > 0 {
                    bonds.push((i, j, c as u8));
                }
            }
        }
    }

    let coords = match (&state.x, &out.eps_x) {
        (Some(xt), Some(eps_hat)) => {
            let mut x_hat = project_zero_cog(&estimate_clean(xt, eps_hat, schedule, 0));
            if let Some(b) = bounds {
                x_hat = b.clip_coords(&x_hat);
            }
            if decode == DecodeMode::Stochastic {
                let noise = project_zero_cog(&standard_normal(&[n, 3], rng));
                for (v, z) in x_hat.data_mut().iter_mut().zip(noise.data()) {
                    *v += width * z;
                }
            }
            check_finite(&x_hat, 0, "decoded coordinate")?;
            Some((0..n).map(|i| [0, 1, 2].map(|a| x_hat.get(&[i, a]))).collect())
        }
        _ => None,
    };
    let mut mol = Molecule::new(atoms, &bonds, coords);
    mol.charges = charges;
    mol.has_2d = state.edges.is_some();
    Ok(mol)
}

/// Posterior mean of the previous state. Without clipping this is
/// `z/α_{t|t-1} − σ²_{t|t-1}/(α_{t|t-1} σ_t)·ε̂`; with it, the clean estimate
/// is clipped before being mixed back with the current state.
fn reverse_mean(z: &Tensor, eps_hat: &Tensor, schedule: &NoiseSchedule, t: usize, clip: Option<impl Fn(&Tensor) -> Tensor>) -> Tensor {
    let a = schedule.alpha_step(t);
    match clip {
        None => {
            let c = schedule.sigma_step(t).powi(2) / (a * schedule.sigma(t));
            Tensor::from_fn(z.shape().to_vec(), |k| z.data()[k] / a - c * eps_hat.data()[k])
        }
        Some(clip) => {
            let st2 = schedule.sigma(t).powi(2);
            let keep = a * schedule.sigma(t - 1).powi(2) / st2;
            let mix = schedule.alpha(t - 1) * schedule.sigma_step(t).powi(2) / st2;
            let clean = clip(&estimate_clean(z, eps_hat, schedule, t));
            Tensor::from_fn(z.shape().to_vec(), |k| keep * z.data()[k] + mix * clean.data()[k])
        }
    }
}

/// Samples one molecule per entry of `sizes` in parallel. Molecule `k` draws
/// from its own substream, so results do not depend on the thread count.
pub fn sample_batch(
    net: &(impl Denoiser + ?Sized),
    schedule: &NoiseSchedule,
    transitions: &Transitions,
    sizes: &[usize],
    options: &SampleOptions,
    seed: u64,
) -> Vec<Result<(Molecule, SampleTrace), DiffusionError>> {
    sizes
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut rng = rng::substream_indexed(seed, rng::SAMPLING, k as u64);
            sample(net, schedule, transitions, n, options, &mut rng)
        })
        .collect()
}
