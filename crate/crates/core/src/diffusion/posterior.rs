use crate::rng::{self, Rng};
use crate::schedule::{NoiseSchedule, Transitions};
use crate::tensor::Tensor;

/// Mean and standard deviation of the Gaussian reverse step from `t` to
/// `t − 1` with the clean value replaced by the estimate `x_hat`.
pub fn posterior_continuous(noisy: &Tensor, x_hat: &Tensor, schedule: &NoiseSchedule, t: usize) -> (Tensor, f64) {
    let st2 = schedule.sigma(t).powi(2);
    let c_noisy = schedule.alpha_step(t) * schedule.sigma(t - 1).powi(2) / st2;
    let c_hat = schedule.alpha(t - 1) * schedule.sigma_step(t).powi(2) / st2;
    let mean = Tensor::from_fn(noisy.shape().to_vec(), |k| c_noisy * noisy.data()[k] + c_hat * x_hat.data()[k]);
    (mean, schedule.sigma_reverse(t))
}

/// `q(e_{t−1} | e_t, e_0 = clean)` over all `b` categories. All zeros when the
/// observed `e_t` is impossible from `clean`.
pub fn edge_posterior(transitions: &Transitions, t: usize, e_t: usize, clean: usize) -> Vec<f64> {
    let b = transitions.categories();
    let evidence = transitions.cumulative_row(t, clean)[e_t];
    if evidence <= 0.0 {
        return vec![0.0; b];
    }
    let like = transitions.step_column(t, e_t);
    let prior = transitions.cumulative_row(t - 1, clean);
    let mut q: Vec<f64> = (0..b).map(|k| like[k] * prior[k]).collect();
    let z: f64 = q.iter().sum();
    if z <= 0.0 {
        return vec![0.0; b];
    }
    for v in &mut q {
        *v /= z;
    }
    q
}

/// Reverse-step edge distribution `Σ_ê q(· | e_t, ê)·p_hat(ê)`. The flag is set
/// when every term vanished and `p_hat` itself was returned.
pub fn sampling_distribution(transitions: &Transitions, t: usize, e_t: usize, p_hat: &[f64]) -> (Vec<f64>, bool) {
    let b = transitions.categories();
    let mut out = vec![0.0; b];
    for (clean, &w) in p_hat.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, q) in out.iter_mut().zip(edge_posterior(transitions, t, e_t, clean)) {
            *o += w * q;
        }
    }
    let z: f64 = out.iter().sum();
    if z > 0.0 && z.is_finite() {
        for v in &mut out {
            *v /= z;
        }
        (out, false)
    } else {
        let z: f64 = p_hat.iter().sum();
        (p_hat.iter().map(|p| p / z).collect(), true)
    }
}

/// Draws one reverse-step edge category. Increments `fallbacks` when the
/// posterior degenerated.
pub fn posterior_discrete_sample(
    transitions: &Transitions,
    t: usize,
    e_t: usize,
    p_hat: &[f64],
    rng: &mut Rng,
    fallbacks: &mut usize,
) -> usize {
    let (dist, fell_back) = sampling_distribution(transitions, t, e_t, p_hat);
    if fell_back {
        *fallbacks += 1;
    }
    rng::categorical(rng, &dist)
}

/// Reverse step for every upper-triangular pair, mirrored. `p_e` is the
/// `[n, n, b]` predicted clean-edge distribution.
pub fn sample_edges(
    e_t: &[usize],
    p_e: &Tensor,
    transitions: &Transitions,
    t: usize,
    rng: &mut Rng,
    fallbacks: &mut usize,
) -> Vec<usize> {
    let n = p_e.shape()[0];
    let b = p_e.shape()[2];
    let mut out = vec![0usize; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let start = (i * n + j) * b;
            let p_hat = &p_e.data()[start..start + b];
            let c = posterior_discrete_sample(transitions, t, e_t[i * n + j], p_hat, rng, fallbacks);
            out[i * n + j] = c;
            out[j * n + i] = c;
        }
    }
    out
}
