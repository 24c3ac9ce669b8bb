//! Self-contained numerical checks behind `mudiff verify`. Every suite uses
//! fixed seeds and reports the measured error next to its tolerance.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::diffusion::{
    elbo, noise_molecule, posterior_continuous, prior_kl, record_gradient, reverse_step_kl, sampling_distribution,
    training_loss, Clean, Denoiser, DenoiserOutput, OmegaMode,
};
use crate::model::{ModelConfig, ModelInput, Mode, Muformer};
use crate::molecule::{make_synthetic_dataset, Molecule};
use crate::rng::{self, Rng};
use crate::schedule::{matmul_square, NoiseSchedule, Transitions};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Gradients,
    Equivariance,
    Posteriors,
    Schedule,
    Elbo,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Gradients,
        Suite::Equivariance,
        Suite::Posteriors,
        Suite::Schedule,
        Suite::Elbo,
    ];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Gradients => "gradients",
            Suite::Equivariance => "equivariance",
            Suite::Posteriors => "posteriors",
            Suite::Schedule => "schedule",
            Suite::Elbo => "elbo",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; expected gradients, equivariance, posteriors, schedule or elbo"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured < tolerance`.
    fn below(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<13} {:<48} {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite.to_string(),
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

pub fn run(suites: &[Suite], seed: u64) -> VerifyReport {
    let mut checks = Vec::new();
    for &suite in suites {
        log::info!("running {suite} suite");
        checks.extend(match suite {
            Suite::Gradients => gradients(seed),
            Suite::Equivariance => equivariance(seed),
            Suite::Posteriors => posteriors(seed),
            Suite::Schedule => schedule(),
            Suite::Elbo => elbo_suite(seed),
        });
    }
    VerifyReport { checks }
}

fn toy_molecule(seed: u64, sizes: std::ops::RangeInclusive<usize>) -> Molecule {
    (0..)
        .flat_map(|k| make_synthetic_dataset(16, *sizes.end(), seed.wrapping_add(k)))
        .find(|m| sizes.contains(&m.n_atoms()))
        .expect("the generator eventually hits every size")
}

fn toy_net(seed: u64) -> Muformer {
    Muformer::new(ModelConfig::toy(), &mut rng::substream(seed, "verify-init")).expect("toy profile is valid")
}

/// Central differences of the total training loss over every parameter of
/// the toy network, on a 4 to 6 atom molecule.
fn gradients(seed: u64) -> Vec<Check> {
    let net = toy_net(seed);
    let sched = NoiseSchedule::cosine(50, 0.008);
    let trans = Transitions::uniform(&sched, net.config.bond_categories);
    let clean = Clean::from_molecule(&toy_molecule(seed, 4..=6), net.config.layout);
    let mut out = Vec::new();
    for t in [5, 30] {
        let snap = noise_molecule(&clean, &sched, &trans, t, &mut rng::substream(seed, "verify-noise"))
            .expect("t is in range");
        let Ok((_, grads)) = record_gradient(&net, &clean, &snap, &sched, Mode::Joint, OmegaMode::Training, None) else {
            out.push(Check::below(Suite::Gradients, format!("loss gradient at t = {t}"), f64::INFINITY, 1e-4));
            continue;
        };
        let input = snap.model_input(&sched);
        let loss = |p: &Muformer| match p.denoise(&input, Mode::Joint) {
            Ok(o) => training_loss(&clean, &snap, &o, &sched, OmegaMode::Training).total,
            Err(_) => f64::NAN,
        };
        let mut probe = net.clone();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.params.len() {
            for k in 0..net.params.tensor(i).numel() {
                let orig = net.params.tensor(i).data()[k];
                probe.params.tensor_mut(i).data_mut()[k] = orig + step;
                let up = loss(&probe);
                probe.params.tensor_mut(i).data_mut()[k] = orig - step;
                let down = loss(&probe);
                probe.params.tensor_mut(i).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * step);
                let err = (grads[i].data()[k] - numeric).abs() / numeric.abs().max(1.0);
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
        }
        out.push(Check::below(
            Suite::Gradients,
            format!("max relative error, {} params, t = {t}", net.params.scalar_count()),
            worst,
            1e-4,
        ));
    }
    out
}

/// Random orthogonal matrix, reflections included, from Gram-Schmidt on
/// normal draws.
pub fn random_orthogonal(rng: &mut Rng) -> [[f64; 3]; 3] {
    let mut cols: Vec<[f64; 3]> = Vec::new();
    while cols.len() < 3 {
        let mut v = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
        for c in &cols {
            let d: f64 = (0..3).map(|a| v[a] * c[a]).sum();
            for a in 0..3 {
                v[a] -= d * c[a];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            cols.push(v.map(|x| x / norm));
        }
    }
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| cols[j][i]))
}

fn move_rigidly(x: &Tensor, r: &[[f64; 3]; 3], shift: [f64; 3]) -> Tensor {
    let n = x.shape()[0];
    Tensor::from_fn([n, 3], |k| {
        let (i, a) = (k / 3, k % 3);
        (0..3).map(|b| r[a][b] * x.get(&[i, b])).sum::<f64>() + shift[a]
    })
}

/// 100 random rigid motions and one random relabeling of a noisy input.
fn equivariance(seed: u64) -> Vec<Check> {
    let net = toy_net(seed);
    let m = toy_molecule(seed, 5..=8);
    let n = m.n_atoms();
    let d = net.config.feature_width();
    let mut r = rng::substream(seed, "verify-motion");
    let input = ModelInput {
        h: m.features(net.config.layout).map(|v| 0.8 * v + 0.3 * rng::normal(&mut r)),
        t_norm: 0.4,
        edges: Some(m.bonds.categories()),
        x: Some(m.coord_tensor()),
    };
    let Ok(base) = net.predict(&input, Mode::Joint) else {
        return vec![Check::below(Suite::Equivariance, "forward pass", f64::INFINITY, 1e-8)];
    };
    let (mut dh, mut de, mut dx) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let rot = random_orthogonal(&mut r);
        let shift = [0, 1, 2].map(|_| 3.0 * rng::normal(&mut r));
        let mut moved = input.clone();
        moved.x = Some(move_rigidly(input.x.as_ref().expect("set above"), &rot, shift));
        let Ok(out) = net.predict(&moved, Mode::Joint) else {
            return vec![Check::below(Suite::Equivariance, "forward pass", f64::INFINITY, 1e-8)];
        };
        dh = dh.max(out.h.max_abs_diff(&base.h));
        de = de.max(out.e_prob.as_ref().zip(base.e_prob.as_ref()).map_or(f64::INFINITY, |(a, b)| a.max_abs_diff(b)));
        let want = move_rigidly(base.x.as_ref().expect("joint mode predicts coordinates"), &rot, shift);
        dx = dx.max(out.x.as_ref().map_or(f64::INFINITY, |x| x.max_abs_diff(&want)));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
    let pm = m.permuted(&perm);
    let permuted = ModelInput {
        h: Tensor::from_fn([n, d], |k| input.h.get(&[perm[k / d], k % d])),
        t_norm: input.t_norm,
        edges: Some(pm.bonds.categories()),
        x: Some(pm.coord_tensor()),
    };
    let mut dp = f64::INFINITY;
    if let Ok(out) = net.predict(&permuted, Mode::Joint) {
        let (xa, xb) = (base.x.as_ref().expect("joint"), out.x.as_ref().expect("joint"));
        let (pa, pb) = (base.e_prob.as_ref().expect("joint"), out.e_prob.as_ref().expect("joint"));
        let b = net.config.bond_categories;
        dp = 0.0;
        for i in 0..n {
            for c in 0..d {
                dp = dp.max((out.h.get(&[i, c]) - base.h.get(&[perm[i], c])).abs());
            }
            for c in 0..3 {
                dp = dp.max((xb.get(&[i, c]) - xa.get(&[perm[i], c])).abs());
            }
            for j in 0..n {
                for k in 0..b {
                    dp = dp.max((pb.get(&[i, j, k]) - pa.get(&[perm[i], perm[j], k])).abs());
                }
            }
        }
    }
    vec![
        Check::below(Suite::Equivariance, "feature output under 100 rigid motions", dh, 1e-8),
        Check::below(Suite::Equivariance, "bond output under 100 rigid motions", de, 1e-8),
        Check::below(Suite::Equivariance, "coordinate output under 100 rigid motions", dx, 1e-8),
        Check::below(Suite::Equivariance, "outputs under atom relabeling", dp, 1e-12),
    ]
}

type Mat = Vec<Vec<f64>>;

fn kernel(keep: f64, b: usize) -> Mat {
    (0..b)
        .map(|i| (0..b).map(|j| if i == j { keep } else { 0.0 } + (1.0 - keep) / b as f64).collect())
        .collect()
}

fn mat_mul(a: &Mat, c: &Mat) -> Mat {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * c[k][j]).sum()).collect())
        .collect()
}

/// Reverse edge distribution by summing the joint over every clean value and
/// previous state, with kernels built by explicit multiplication.
fn enumerate_reverse(alpha: &[f64], b: usize, t: usize, e_t: usize, p_hat: &[f64]) -> Option<Vec<f64>> {
    let keep = |s: usize| match s {
        0 => alpha[0],
        _ if alpha[s - 1] == 0.0 => 0.0,
        _ => alpha[s] / alpha[s - 1],
    };
    let mut bar = kernel(keep(0), b);
    for s in 1..t {
        bar = mat_mul(&bar, &kernel(keep(s), b));
    }
    let step = kernel(keep(t), b);
    let mut out = vec![0.0; b];
    for clean in 0..b {
        let joint: Vec<f64> = (0..b).map(|prev| bar[clean][prev] * step[prev][e_t]).collect();
        let evidence: f64 = joint.iter().sum();
        if evidence <= 1e-300 {
            continue;
        }
        for prev in 0..b {
            out[prev] += p_hat[clean] * joint[prev] / evidence;
        }
    }
    let z: f64 = out.iter().sum();
    (z > 0.0).then(|| out.iter().map(|v| v / z).collect())
}

fn posteriors(seed: u64) -> Vec<Check> {
    let mut r = rng::substream(seed, "verify-posterior");
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    for b in 2..=4 {
        for steps in 1..=4 {
            let cosine = NoiseSchedule::cosine(steps, 0.008).alphas().to_vec();
            let random: Vec<f64> = {
                let mut a = vec![1.0];
                for _ in 0..steps {
                    let last = *a.last().expect("non-empty");
                    a.push(last * rand::Rng::random_range(&mut r, 0.05..0.95));
                }
                a
            };
            for alpha in [cosine, random] {
                let trans = Transitions::from_alphas(alpha.clone(), b);
                for t in 1..=steps {
                    for e_t in 0..b {
                        for trial in 0..4 {
                            let p_hat: Vec<f64> = if trial == 0 {
                                vec![1.0 / b as f64; b]
                            } else {
                                let w: Vec<f64> = (0..b).map(|_| rand::Rng::random_range(&mut r, 0.01..1.0)).collect();
                                let z: f64 = w.iter().sum();
                                w.into_iter().map(|v| v / z).collect()
                            };
                            let Some(want) = enumerate_reverse(&alpha, b, t, e_t, &p_hat) else {
                                continue;
                            };
                            let (got, _) = sampling_distribution(&trans, t, e_t, &p_hat);
                            for k in 0..b {
                                worst = worst.max((got[k] - want[k]).abs());
                            }
                            cases += 1;
                        }
                    }
                }
            }
        }
    }

    // scalar Gaussian posterior against the product of the two densities
    let sched = NoiseSchedule::cosine(50, 0.008);
    let mut gauss: f64 = 0.0;
    for t in 1..=50 {
        let (z, x) = (rng::normal(&mut r), rng::normal(&mut r));
        let (mean, sd) = posterior_continuous(&Tensor::from_rows(&[vec![z]]), &Tensor::from_rows(&[vec![x]]), &sched, t);
        let (ap, sp2) = (sched.alpha(t - 1), sched.sigma(t - 1).powi(2));
        let (a, ss2) = (sched.alpha_step(t), sched.sigma_step(t).powi(2));
        let precision = 1.0 / sp2 + a * a / ss2;
        let want_mean = (ap * x / sp2 + a * z / ss2) / precision;
        let want_sd = (1.0 / precision).sqrt();
        gauss = gauss.max((mean.item() - want_mean).abs()).max((sd - want_sd).abs());
    }
    vec![
        Check::below(Suite::Posteriors, format!("discrete reverse step, {cases} enumerated cases"), worst, 1e-12),
        Check::below(Suite::Posteriors, "Gaussian reverse step against density product", gauss, 1e-9),
    ]
}

fn schedule() -> Vec<Check> {
    let mut vp: f64 = 0.0;
    let mut monotone: f64 = 0.0;
    let mut variance: f64 = 0.0;
    let mut omega: f64 = f64::NEG_INFINITY;
    let mut rows: f64 = 0.0;
    let mut telescope: f64 = 0.0;
    for steps in [1, 2, 5, 10, 50, 1000] {
        let s = NoiseSchedule::cosine(steps, 0.008);
        for t in 0..=steps {
            vp = vp.max((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs());
        }
        for t in 1..=steps {
            monotone = monotone.max(s.alpha(t) - s.alpha(t - 1));
            let v = s.sigma(t).powi(2) - s.alpha_step(t).powi(2) * s.sigma(t - 1).powi(2);
            variance = variance.max(-v);
            omega = omega.max(s.omega(t));
        }
        if steps <= 50 {
            for b in 2..=4 {
                let tr = Transitions::uniform(&s, b);
                for t in 0..=steps {
                    let (bar, step) = (tr.cumulative(t), tr.step(t));
                    for i in 0..b {
                        let sb: f64 = (0..b).map(|j| bar.get(&[i, j])).sum();
                        let ss: f64 = (0..b).map(|j| step.get(&[i, j])).sum();
                        rows = rows.max((sb - 1.0).abs()).max((ss - 1.0).abs());
                    }
                    if t >= 1 {
                        let composed = matmul_square(&tr.cumulative(t - 1), &step);
                        telescope = telescope.max(composed.max_abs_diff(&bar));
                    }
                }
            }
        }
    }
    let long = NoiseSchedule::cosine(1000, 0.008);
    let last = Transitions::uniform(&long, 4).cumulative(1000);
    let uniform = last.data().iter().fold(0.0f64, |m, v| m.max((v - 0.25).abs()));
    vec![
        Check::below(Suite::Schedule, "alpha^2 + sigma^2 - 1", vp, 1e-12),
        Check::below(Suite::Schedule, "largest increase of alpha", monotone, 1e-300),
        Check::below(Suite::Schedule, "most negative one-step variance", variance, 1e-15),
        Check::below(Suite::Schedule, "largest weight 1 - SNR(t-1)/SNR(t)", omega, 0.0),
        Check::below(Suite::Schedule, "row sums of edge kernels", rows, 1e-12),
        Check::below(Suite::Schedule, "cumulative kernel against step products", telescope, 1e-10),
        Check::below(Suite::Schedule, "final kernel (T = 1000) against uniform", uniform, 1e-4),
    ]
}

fn elbo_suite(seed: u64) -> Vec<Check> {
    let net = toy_net(seed);
    let m = toy_molecule(seed, 4..=6);
    let clean = Clean::from_molecule(&m, net.config.layout);
    let long = NoiseSchedule::cosine(1000, 0.008);
    let prior = prior_kl(&clean, &long, &Transitions::uniform(&long, 4)).total();

    // a denoiser handed the true noise and clean bonds leaves no gap
    let sched = NoiseSchedule::cosine(20, 0.008);
    let trans = Transitions::uniform(&sched, 4);
    let mut r = rng::substream(seed, "verify-elbo");
    let mut exact: f64 = 0.0;
    for t in [1, 7, 20] {
        let Ok(snap) = noise_molecule(&clean, &sched, &trans, t, &mut r) else {
            continue;
        };
        let n = clean.n_atoms();
        let e0 = clean.e.as_ref().expect("synthetic molecules carry bonds");
        let p_e = Tensor::from_fn([n, n, 4], |k| (e0[k / 4] == k % 4) as u8 as f64);
        let out = DenoiserOutput {
            eps_h: snap.eps_h.clone(),
            eps_x: snap.eps_x.clone(),
            p_e: Some(p_e),
        };
        exact = exact.max(reverse_step_kl(&clean, &snap, &out, &sched, &trans).total().abs());
    }

    // two independent Monte Carlo estimates of the bound agree
    let a = elbo(&clean, &net, &sched, &trans, Mode::Joint, &mut rng::substream(seed, "verify-elbo-a"), 400);
    let b = elbo(&clean, &net, &sched, &trans, Mode::Joint, &mut rng::substream(seed, "verify-elbo-b"), 400);
    let agreement = match (a, b) {
        (Ok(a), Ok(b)) if a.nelbo.is_finite() && b.nelbo.is_finite() => {
            (a.nelbo - b.nelbo).abs() / (a.std_err.hypot(b.std_err)).max(1e-12)
        }
        _ => f64::INFINITY,
    };
    vec![
        Check::below(Suite::Elbo, "prior KL of unit-scale data at T = 1000", prior, 1e-3),
        Check::below(Suite::Elbo, "reverse-step KL under exact prediction", exact, 1e-12),
        Check::below(Suite::Elbo, "gap between two estimates, in standard errors", agreement, 4.0),
    ]
}
