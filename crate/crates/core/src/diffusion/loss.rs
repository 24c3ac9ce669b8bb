use serde::Serialize;

use super::{sq_dist, Clean, DenoiserOutput, DiffusionError, NoisySnapshot};
use crate::model::RawOutput;
use crate::schedule::NoiseSchedule;
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities below this are clipped before the log in the bond loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weighting of the noise-regression terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum OmegaMode {
    /// Weight 1, used for optimization.
    #[serde(rename = "training")]
    Training,
    /// Weight `1 − SNR(t−1)/SNR(t)` (negative).
    #[serde(rename = "elbo")]
    Elbo,
}

impl OmegaMode {
    pub fn weight(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            OmegaMode::Training => 1.0,
            OmegaMode::Elbo => schedule.omega(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub t: usize,
    pub loss_h: f64,
    pub loss_x: f64,
    pub loss_e: f64,
    pub total: f64,
    /// Bond probabilities that had to be clipped at [`PROB_FLOOR`].
    pub clipped: usize,
}

/// True-category probability averaged over unordered pairs, as `−mean log p`.
fn bond_cross_entropy(e: &[usize], p: &Tensor, clipped: &mut usize) -> f64 {
    let n = p.shape()[0];
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = p.get(&[i, j, e[i * n + j]]);
            if v < PROB_FLOOR {
                *clipped += 1;
            }
            total -= v.max(PROB_FLOOR).ln();
        }
    }
    total / pairs as f64
}

/// Loss from plain denoiser outputs.
pub fn training_loss(
    clean: &Clean,
    snap: &NoisySnapshot,
    out: &DenoiserOutput,
    schedule: &NoiseSchedule,
    omega: OmegaMode,
) -> LossBreakdown {
    let w = omega.weight(schedule, snap.t);
    let loss_h = 0.5 * w * sq_dist(&snap.eps_h, &out.eps_h);
    let loss_x = match (&snap.eps_x, &out.eps_x) {
        (Some(e), Some(eh)) => 0.5 * w * sq_dist(e, eh),
        _ => 0.0,
    };
    let mut clipped = 0;
    let loss_e = match (&clean.e, &out.p_e) {
        (Some(e), Some(p)) => bond_cross_entropy(e, p, &mut clipped),
        _ => 0.0,
    };
    LossBreakdown {
        t: snap.t,
        loss_h,
        loss_x,
        loss_e,
        total: loss_h + loss_x + loss_e,
        clipped,
    }
}

/// Loss terms recorded on a tape for backpropagation.
#[derive(Debug, Clone, Copy)]
pub struct TapeLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the loss on `tape` from a forward pass. The coordinate noise
/// estimate is `project(X_out − X̃_t)`.
pub fn loss_on_tape(
    tape: &mut Tape,
    out: &RawOutput,
    clean: &Clean,
    snap: &NoisySnapshot,
    schedule: &NoiseSchedule,
    omega: OmegaMode,
) -> Result<TapeLoss, DiffusionError> {
    let w = omega.weight(schedule, snap.t);
    let eps_h = tape.constant(snap.eps_h.clone());
    let dh = tape.sub(eps_h, out.h)?;
    let sq = tape.square(dh);
    let sh = tape.sum_all(sq);
    let loss_h = tape.scale(sh, 0.5 * w);
    let mut total = loss_h;

    let mut loss_x_val = 0.0;
    if let (Some(xo), Some(xt), Some(eps)) = (out.x, &snap.x, &snap.eps_x) {
        let xt = tape.constant(xt.clone());
        let raw = tape.sub(xo, xt)?;
        let mean = tape.mean(raw, 0)?;
        let eps_hat = tape.sub(raw, mean)?;
        let eps = tape.constant(eps.clone());
        let d = tape.sub(eps, eps_hat)?;
        let sq = tape.square(d);
        let s = tape.sum_all(sq);
        let lx = tape.scale(s, 0.5 * w);
        loss_x_val = tape.value(lx).item();
        total = tape.add(total, lx)?;
    }

    let mut loss_e_val = 0.0;
    let mut clipped = 0;
    if let (Some(p), Some(e)) = (out.e_prob, &clean.e) {
        let n = clean.n_atoms();
        let b = tape.shape(p)[2];
        let pairs = n * n.saturating_sub(1) / 2;
        if pairs > 0 {
            let mut pick = Tensor::zeros([n, n, b]);
            let mut weight = Tensor::zeros([n, n]);
            for i in 0..n {
                for j in i + 1..n {
                    pick.set(&[i, j, e[i * n + j]], 1.0);
                    weight.set(&[i, j], 1.0 / pairs as f64);
                }
            }
            let pick = tape.constant(pick);
            let chosen = tape.mul(p, pick)?;
            let chosen = tape.sum(chosen, 2)?;
            // pairs off the upper triangle read a harmless probability of one
            let pad = Tensor::from_fn([n, n], |k| if k % n > k / n { 0.0 } else { 1.0 });
            let pad = tape.constant(pad);
            let chosen = tape.add(chosen, pad)?;
            clipped = tape
                .value(chosen)
                .data()
                .iter()
                .filter(|&&v| v < PROB_FLOOR)
                .count();
            let chosen = tape.clamp_min(chosen, PROB_FLOOR);
            let logp = tape.log(chosen);
            let weight = tape.constant(weight);
            let wl = tape.mul(logp, weight)?;
            let s = tape.sum_all(wl);
            let le = tape.neg(s);
            loss_e_val = tape.value(le).item();
            total = tape.add(total, le)?;
        }
    }
    let loss_h_val = tape.value(loss_h).item();
    let total_val = tape.value(total).item();
    Ok(TapeLoss {
        total,
        breakdown: LossBreakdown {
            t: snap.t,
            loss_h: loss_h_val,
            loss_x: loss_x_val,
            loss_e: loss_e_val,
            total: total_val,
            clipped,
        },
    })
}
