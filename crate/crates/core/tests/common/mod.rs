//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use mudiff::diffusion::{project_zero_cog, Denoiser, DenoiserOutput, DiffusionError};
use mudiff::model::{ModelInput, Mode};
use mudiff::molecule::FeatureLayout;
use mudiff::rng;
use mudiff::schedule::{NoiseSchedule, Transitions};
use mudiff::tensor::Tensor;

/// Random orthogonal matrix by Gram-Schmidt, reflections included.
pub fn rotation(seed: u64) -> [[f64; 3]; 3] {
    let mut r = rng::substream(seed, "rot");
    let mut cols: Vec<[f64; 3]> = Vec::new();
    while cols.len() < 3 {
        let mut v = [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)];
        for c in &cols {
            let d: f64 = (0..3).map(|a| v[a] * c[a]).sum();
            for a in 0..3 {
                v[a] -= d * c[a];
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-3 {
            cols.push(v.map(|x| x / nrm));
        }
    }
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| cols[j][i]))
}

pub fn rigid(x: &Tensor, r: &[[f64; 3]; 3], shift: [f64; 3]) -> Tensor {
    let n = x.shape()[0];
    Tensor::from_fn([n, 3], |k| {
        let (i, a) = (k / 3, k % 3);
        (0..3).map(|b| r[a][b] * x.get(&[i, b])).sum::<f64>() + shift[a]
    })
}

/// Dense b×b matrices as row vectors.
pub type Mat = Vec<Vec<f64>>;

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// One-step kernels written out from their definition, independent of the
/// library's closed forms.
pub fn step_kernel(keep: f64, b: usize) -> Mat {
    (0..b)
        .map(|i| (0..b).map(|j| keep * (i == j) as u8 as f64 + (1.0 - keep) / b as f64).collect())
        .collect()
}

/// `Q_0 Q_1 ⋯ Q_t` by explicit multiplication of step kernels.
pub fn composed_kernels(alpha: &[f64], b: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(alpha.len());
    let mut acc = step_kernel(alpha[0], b);
    out.push(acc.clone());
    for t in 1..alpha.len() {
        let keep = if alpha[t - 1] == 0.0 { 0.0 } else { alpha[t] / alpha[t - 1] };
        acc = mat_mul(&acc, &step_kernel(keep, b));
        out.push(acc.clone());
    }
    out
}

pub fn step_keep(alpha: &[f64], t: usize) -> f64 {
    if t == 0 {
        alpha[0]
    } else if alpha[t - 1] == 0.0 {
        0.0
    } else {
        alpha[t] / alpha[t - 1]
    }
}

/// Reverse-step distribution by enumerating the joint over the clean
/// category and the previous state, conditioning on `e_t` per clean value.
pub fn enumerate_reverse(alpha: &[f64], b: usize, t: usize, e_t: usize, p_hat: &[f64]) -> Vec<f64> {
    let bars = composed_kernels(alpha, b);
    let step = step_kernel(step_keep(alpha, t), b);
    let mut out = vec![0.0; b];
    for clean in 0..b {
        let joint: Vec<f64> = (0..b).map(|prev| bars[t - 1][clean][prev] * step[prev][e_t]).collect();
        let evidence: f64 = joint.iter().sum();
        if evidence <= 1e-300 || bars[t][clean][e_t] == 0.0 {
            continue;
        }
        for prev in 0..b {
            out[prev] += p_hat[clean] * joint[prev] / evidence;
        }
    }
    let z: f64 = out.iter().sum();
    out.iter().map(|v| v / z).collect()
}

/// True reverse step `q(e_{t-1} | e_t, clean)` by enumeration.
pub fn enumerate_true_reverse(alpha: &[f64], b: usize, t: usize, e_t: usize, clean: usize) -> Vec<f64> {
    let mut onehot = vec![0.0; b];
    onehot[clean] = 1.0;
    enumerate_reverse(alpha, b, t, e_t, &onehot)
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson quadrature with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `∫_lo^hi N(z; c, σ²) dz` by quadrature.
pub fn gaussian_mass_quadrature(lo: f64, hi: f64, c: f64, sigma: f64) -> f64 {
    simpson(|z| pdf((z - c) / sigma) / sigma, lo, hi, 4000)
}

/// Analytic denoiser used as a known, differentiable-free stand-in for the
/// network: `ε̂_H = s(t)·H̃ + c` with `s(t) = slope·(1 + t/T)`, bond
/// probabilities favoring the observed category with strength growing in t.
#[derive(Debug, Clone)]
pub struct LinearDenoiser {
    pub layout: FeatureLayout,
    pub categories: usize,
    pub slope: f64,
    pub bias: f64,
    pub sharpness: f64,
}

impl LinearDenoiser {
    pub fn slope_at(&self, t_norm: f64) -> f64 {
        self.slope * (1.0 + t_norm)
    }

    /// Predicted clean-bond distribution given the observed category.
    pub fn bond_probs(&self, observed: usize, t_norm: f64) -> Vec<f64> {
        let g = self.sharpness * (1.0 + t_norm);
        let w: Vec<f64> = (0..self.categories)
            .map(|k| if k == observed { g.exp() } else { 1.0 })
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }
}

impl Denoiser for LinearDenoiser {
    fn layout(&self) -> FeatureLayout {
        self.layout
    }

    fn bond_categories(&self) -> usize {
        self.categories
    }

    fn denoise(&self, input: &ModelInput, mode: Mode) -> Result<DenoiserOutput, DiffusionError> {
        let s = self.slope_at(input.t_norm);
        let eps_h = input.h.map(|v| s * v + self.bias);
        let eps_x = input
            .x
            .as_ref()
            .filter(|_| mode.uses_3d())
            .map(|x| project_zero_cog(&x.map(|v| s * v)));
        let p_e = input.edges.as_ref().filter(|_| mode.uses_2d()).map(|e| {
            let n = input.h.shape()[0];
            let b = self.categories;
            let mut p = Tensor::zeros([n, n, b]);
            for i in 0..n {
                for j in 0..n {
                    let probs = self.bond_probs(e[i * n + j], input.t_norm);
                    for k in 0..b {
                        p.set(&[i, j, k], probs[k]);
                    }
                }
            }
            p
        });
        Ok(DenoiserOutput { eps_h, eps_x, p_e })
    }
}

/// `log(Φ(hi) − Φ(lo))` via quadrature of the density, floored like the
/// library.
fn log_mass_quadrature(value: f64, center: f64, sigma: f64) -> f64 {
    gaussian_mass_quadrature(value - 0.5, value + 0.5, center, sigma)
        .max(1e-30)
        .ln()
}

/// Exact negative bound for integer-only features (one column) and
/// uncorrupted-coordinate-free molecules, under [`LinearDenoiser`].
/// Gaussian terms use the closed form
/// `E[(ε − s(αh + σε) − c)²] = (1 − sσ)² + (sαh + c)²`; edges are summed over every
/// noisy state; the step-0 feature likelihood is integrated numerically.
pub fn exact_nelbo(
    net: &LinearDenoiser,
    h: &[f64],
    edges: Option<&[usize]>,
    schedule: &NoiseSchedule,
) -> f64 {
    let steps = schedule.steps();
    let b = net.categories;
    let alpha = schedule.alphas();
    let bars = composed_kernels(alpha, b);
    let uniform = vec![1.0 / b as f64; b];

    let (at, st) = (schedule.alpha(steps), schedule.sigma(steps));
    let mut prior: f64 = h.iter().map(|v| 0.5 * (at * at * v * v + st * st - 1.0 - (st * st).ln())).sum();
    if let Some(e) = edges {
        prior += e.iter().map(|&c| kl(&bars[steps][c], &uniform)).sum::<f64>();
    }

    let mut diffusion = 0.0;
    for t in 1..=steps {
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        let tn = t as f64 / steps as f64;
        let slope = net.slope_at(tn);
        let w = 0.5 * (schedule.snr(t - 1) / schedule.snr(t) - 1.0);
        for &v in h {
            diffusion += w * ((1.0 - slope * s).powi(2) + (slope * a * v + net.bias).powi(2));
        }
        if let Some(e) = edges {
            for &c in e {
                for e_t in 0..b {
                    let prob = bars[t][c][e_t];
                    if prob == 0.0 {
                        continue;
                    }
                    let truth = enumerate_true_reverse(alpha, b, t, e_t, c);
                    let model = enumerate_reverse(alpha, b, t, e_t, &net.bond_probs(e_t, tn));
                    diffusion += prob * kl(&truth, &model);
                }
            }
        }
    }

    let (a0, s0) = (schedule.alpha(0), schedule.sigma(0));
    let mut recon = 0.0;
    for &v in h {
        recon += simpson(|z| pdf(z) * log_mass_quadrature(v, a0 * v + s0 * z, s0), -10.0, 10.0, 4000);
    }
    if let Some(e) = edges {
        for &c in e {
            for e0 in 0..b {
                recon += bars[0][c][e0] * net.bond_probs(e0, 0.0)[c].ln();
            }
        }
    }
    prior + diffusion - recon
}

/// Transitions matching `schedule`, for callers that want both.
pub fn transitions_for(schedule: &NoiseSchedule, b: usize) -> Transitions {
    Transitions::uniform(schedule, b)
}

/// Hand-built 12-molecule corpus with expected per-atom stability and
/// whole-molecule validity. Atom indices follow the default table
/// (H, C, N, O, F).
pub struct CorpusEntry {
    pub name: &'static str,
    pub molecule: mudiff::molecule::Molecule,
    pub atom_stable: Vec<bool>,
    pub valid: bool,
}

pub fn metrics_corpus() -> Vec<CorpusEntry> {
    use mudiff::molecule::Molecule;
    let (h, c, n, o, f) = (0, 1, 2, 3, 4);
    let entry = |name, atoms: Vec<usize>, bonds: &[(usize, usize, u8)], atom_stable: Vec<bool>, valid| CorpusEntry {
        name,
        molecule: Molecule::new(atoms, bonds, None),
        atom_stable,
        valid,
    };
    let t = true;
    let x = false;
    vec![
        entry("methane", vec![c, h, h, h, h], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)], vec![t; 5], t),
        entry("water", vec![o, h, h], &[(0, 1, 1), (0, 2, 1)], vec![t; 3], t),
        entry("ammonia", vec![n, h, h, h], &[(0, 1, 1), (0, 2, 1), (0, 3, 1)], vec![t; 4], t),
        entry(
            "ethene",
            vec![c, c, h, h, h, h],
            &[(0, 1, 2), (0, 2, 1), (0, 3, 1), (1, 4, 1), (1, 5, 1)],
            vec![t; 6],
            t,
        ),
        entry("hydrogen fluoride", vec![h, f], &[(0, 1, 1)], vec![t; 2], t),
        // implicit hydrogens fill the deficit, so a bare carbon is valid but unstable
        entry("lone carbon", vec![c], &[], vec![x], t),
        entry("hydronium-like oxygen", vec![o, h, h, h], &[(0, 1, 1), (0, 2, 1), (0, 3, 1)], vec![x, t, t, t], x),
        entry(
            "pentavalent carbon",
            vec![c, h, h, h, h, h],
            &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (0, 5, 1)],
            vec![x, t, t, t, t, t],
            x,
        ),
        entry(
            "methane missing a bond",
            vec![c, h, h, h, h],
            &[(0, 1, 1), (0, 2, 1), (0, 3, 1)],
            vec![x, t, t, t, x],
            x,
        ),
        entry(
            "two waters",
            vec![o, h, h, o, h, h],
            &[(0, 1, 1), (0, 2, 1), (3, 4, 1), (3, 5, 1)],
            vec![t; 6],
            x,
        ),
        entry(
            "ethene with a single carbon bond",
            vec![c, c, h, h, h, h],
            &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (1, 4, 1), (1, 5, 1)],
            vec![x, x, t, t, t, t],
            t,
        ),
        entry("water with a double O-H", vec![o, h, h], &[(0, 1, 2), (0, 2, 1)], vec![x, x, t], x),
    ]
}

/// Every simple graph on `n ≤ max_n` atoms with the first `k` atoms carbon
/// and the rest hydrogen (this covers every two-type labeling up to
/// relabeling). Returns the number of graphs checked, or the first
/// disagreement between [`mudiff::metrics::canonical_hash`] and brute-force
/// isomorphism over all type-preserving permutations.
pub fn check_hash_against_brute_force(max_n: usize) -> Result<usize, String> {
    use mudiff::metrics::canonical_hash;
    use mudiff::molecule::Molecule;
    use rayon::prelude::*;
    use std::collections::HashMap;

    let mut total = 0;
    for n in 1..=max_n {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let mut pair_index = vec![vec![0usize; n]; n];
        for (k, &(a, b)) in pairs.iter().enumerate() {
            pair_index[a][b] = k;
            pair_index[b][a] = k;
        }
        for carbons in 0..=n {
            let perms = block_permutations(n, carbons);
            let results: Vec<(u32, String)> = (0..1u32 << pairs.len())
                .into_par_iter()
                .map(|mask| {
                    let canon = perms
                        .iter()
                        .map(|p| {
                            let mut m = 0u32;
                            for (k, &(a, b)) in pairs.iter().enumerate() {
                                if mask >> k & 1 == 1 {
                                    m |= 1 << pair_index[p[a]][p[b]];
                                }
                            }
                            m
                        })
                        .min()
                        .expect("at least one permutation");
                    let atoms: Vec<usize> = (0..n).map(|i| usize::from(i < carbons)).collect();
                    let bonds: Vec<(usize, usize, u8)> = pairs
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| mask >> k & 1 == 1)
                        .map(|(_, &(a, b))| (a, b, 1))
                        .collect();
                    (canon, canonical_hash(&Molecule::new(atoms, &bonds, None)))
                })
                .collect();
            let mut by_canon: HashMap<u32, &str> = HashMap::new();
            let mut by_hash: HashMap<&str, u32> = HashMap::new();
            for (canon, hash) in &results {
                if let Some(prev) = by_canon.insert(*canon, hash) {
                    if prev != hash {
                        return Err(format!("n={n} carbons={carbons}: isomorphic graphs hash differently"));
                    }
                }
                if let Some(prev) = by_hash.insert(hash, *canon) {
                    if prev != *canon {
                        return Err(format!("n={n} carbons={carbons}: non-isomorphic graphs share a hash"));
                    }
                }
            }
            total += results.len();
        }
    }
    Ok(total)
}

/// All permutations of `0..n` that map `0..k` onto itself.
fn block_permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let left = permutations(&(0..k).collect::<Vec<_>>());
    let right = permutations(&(k..n).collect::<Vec<_>>());
    let mut out = Vec::with_capacity(left.len() * right.len());
    for l in &left {
        for r in &right {
            out.push(l.iter().chain(r).copied().collect());
        }
    }
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}
