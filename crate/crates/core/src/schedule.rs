//! Cosine noise schedule, step conditionals and uniform edge transitions.

use crate::tensor::Tensor;

/// Lower and upper bound for every signal coefficient.
pub const ALPHA_MIN: f64 = 1e-5;
pub const ALPHA_MAX: f64 = 1.0 - 1e-5;

/// Signal and noise coefficients for steps `0..=T`.
///
/// The raw cosine value is mapped affinely onto `[ALPHA_MIN, ALPHA_MAX]`
/// instead of being clipped, so the sequence stays strictly decreasing even
/// at the endpoints where a hard clip would flatten it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    offset: f64,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    alpha_step: Vec<f64>,
    sigma_step: Vec<f64>,
    sigma_reverse: Vec<f64>,
}

/// The unclamped cosine coefficient `cos²(½π (t/T + s) / (1 + s))`.
pub fn raw_alpha(t: usize, steps: usize, offset: f64) -> f64 {
    let u = (t as f64 / steps as f64 + offset) / (1.0 + offset);
    (0.5 * std::f64::consts::PI * u).cos().powi(2)
}

impl NoiseSchedule {
    /// Panics when `steps == 0` or `offset < 0`.
    pub fn cosine(steps: usize, offset: f64) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        assert!(offset >= 0.0, "schedule offset must be non-negative");
        let alpha: Vec<f64> = (0..=steps)
            .map(|t| ALPHA_MIN + (ALPHA_MAX - ALPHA_MIN) * raw_alpha(t, steps, offset))
            .collect();
        let sigma: Vec<f64> = alpha.iter().map(|a| (1.0 - a * a).sqrt()).collect();
        let mut alpha_step = vec![1.0; steps + 1];
        let mut sigma_step = vec![0.0; steps + 1];
        let mut sigma_reverse = vec![0.0; steps + 1];
        for t in 1..=steps {
            let a = alpha[t] / alpha[t - 1];
            let var = (sigma[t] * sigma[t] - a * a * sigma[t - 1] * sigma[t - 1]).max(0.0);
            alpha_step[t] = a;
            sigma_step[t] = var.sqrt();
            sigma_reverse[t] = sigma_step[t] * sigma[t - 1] / sigma[t];
        }
        Self {
            steps,
            offset,
            alpha,
            sigma,
            alpha_step,
            sigma_step,
            sigma_reverse,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `α_t / α_{t-1}`; 1 at `t = 0`.
    pub fn alpha_step(&self, t: usize) -> f64 {
        self.alpha_step[t]
    }

    /// Standard deviation of the one-step forward kernel.
    pub fn sigma_step(&self, t: usize) -> f64 {
        self.sigma_step[t]
    }

    /// Standard deviation of the reverse posterior from `t` to `t-1`.
    pub fn sigma_reverse(&self, t: usize) -> f64 {
        self.sigma_reverse[t]
    }

    pub fn snr(&self, t: usize) -> f64 {
        let (a, s) = (self.alpha[t], self.sigma[t]);
        a * a / (s * s)
    }

    /// `1 - SNR(t-1)/SNR(t)`, negative for every `t >= 1`.
    pub fn omega(&self, t: usize) -> f64 {
        assert!(t >= 1, "omega is defined for t >= 1");
        1.0 - self.snr(t - 1) / self.snr(t)
    }

    /// `t / T`, the time input of the denoiser.
    pub fn normalized(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }
}

/// Uniform-mixing categorical kernels sharing the schedule's coefficients.
#[derive(Debug, Clone)]
pub struct Transitions {
    categories: usize,
    alpha: Vec<f64>,
}

/// `a·I + (1-a)·11ᵀ/b` as a b×b tensor.
pub fn mix_with_uniform(a: f64, b: usize) -> Tensor {
    let off = (1.0 - a) / b as f64;
    Tensor::from_fn([b, b], |k| if k / b == k % b { a + off } else { off })
}

impl Transitions {
    pub fn uniform(schedule: &NoiseSchedule, categories: usize) -> Self {
        assert!(categories >= 2, "need at least two edge categories");
        Self {
            categories,
            alpha: schedule.alphas().to_vec(),
        }
    }

    /// Kernels from an explicit coefficient list; `alpha[0]` belongs to step 0.
    pub fn from_alphas(alpha: Vec<f64>, categories: usize) -> Self {
        assert!(categories >= 2, "need at least two edge categories");
        Self { categories, alpha }
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    /// Weight on the identity in the cumulative kernel at `t`.
    pub fn keep_cumulative(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Weight on the identity in the one-step kernel at `t`.
    pub fn keep_step(&self, t: usize) -> f64 {
        if t == 0 {
            self.alpha[0]
        } else if self.alpha[t - 1] == 0.0 {
            // nothing is left to keep once the chain has forgotten everything
            0.0
        } else {
            self.alpha[t] / self.alpha[t - 1]
        }
    }

    pub fn cumulative(&self, t: usize) -> Tensor {
        mix_with_uniform(self.keep_cumulative(t), self.categories)
    }

    pub fn step(&self, t: usize) -> Tensor {
        mix_with_uniform(self.keep_step(t), self.categories)
    }

    /// Row `from` of the cumulative kernel.
    pub fn cumulative_row(&self, t: usize, from: usize) -> Vec<f64> {
        mix_row(self.keep_cumulative(t), self.categories, from)
    }

    /// Row `from` of the one-step kernel.
    pub fn step_row(&self, t: usize, from: usize) -> Vec<f64> {
        mix_row(self.keep_step(t), self.categories, from)
    }

    /// Column `to` of the one-step kernel, i.e. `q(e_t = to | e_{t-1} = ·)`.
    pub fn step_column(&self, t: usize, to: usize) -> Vec<f64> {
        // the kernel is symmetric
        self.step_row(t, to)
    }
}

fn mix_row(a: f64, b: usize, from: usize) -> Vec<f64> {
    let off = (1.0 - a) / b as f64;
    (0..b).map(|k| if k == from { a + off } else { off }).collect()
}

/// Dense product of two square matrices stored as rank-2 tensors.
pub fn matmul_square(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.shape()[0];
    Tensor::from_fn([n, n], |k| {
        let (i, j) = (k / n, k % n);
        (0..n).map(|p| a.get(&[i, p]) * b.get(&[p, j])).sum()
    })
}
