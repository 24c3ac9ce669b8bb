use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{loss_on_tape, LossBreakdown, OmegaMode};
use super::optim::{clip_global_norm, Optimizer, OptimizerKind};
use super::{noise_molecule, Clean, CleanBounds, DiffusionError, NoisySnapshot};
use crate::model::{Mode, Muformer};
use crate::molecule::Molecule;
use crate::rng::{self, Rng};
use crate::schedule::{NoiseSchedule, Transitions};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Channels to train. Records missing a modality fall back to the
    /// channels they can support.
    pub mode: Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Sgd,
            clip_norm: Some(10.0),
            mode: Mode::Joint,
            seed: 0,
        }
    }
}

/// Batch-averaged losses at one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub loss_h: f64,
    pub loss_x: f64,
    pub loss_e: f64,
    pub total: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "step,loss_H,loss_X,loss_E,total";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.loss_h, self.loss_x, self.loss_e, self.total)
    }
}

/// Empirical distribution of atom counts, used to pick sample sizes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomCountHistogram {
    pub counts: BTreeMap<usize, usize>,
}

impl AtomCountHistogram {
    pub fn from_dataset(data: &[Molecule]) -> Self {
        let mut counts = BTreeMap::new();
        for m in data {
            *counts.entry(m.n_atoms()).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn draw(&self, rng: &mut Rng) -> Option<usize> {
        let sizes: Vec<usize> = self.counts.keys().copied().collect();
        let weights: Vec<f64> = self.counts.values().map(|&c| c as f64).collect();
        (!sizes.is_empty()).then(|| sizes[rng::categorical(rng, &weights)])
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    pub histogram: AtomCountHistogram,
    pub bounds: CleanBounds,
    /// Bond probabilities clipped in the cross-entropy over the whole run.
    pub clipped: usize,
}

impl TrainReport {
    /// Trailing mean of `total` over `window` rows ending at row `end`.
    pub fn moving_average(&self, end: usize, window: usize) -> f64 {
        let end = end.min(self.rows.len());
        let start = end.saturating_sub(window);
        let slice = &self.rows[start..end];
        slice.iter().map(|r| r.total).sum::<f64>() / slice.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LossRow::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

/// Keeps coordinates on `keep` randomly chosen records and drops them from
/// the rest, reproducing a regime where 3D structure is scarce.
pub fn apply_limited_3d(data: &[Molecule], keep: usize, rng: &mut Rng) -> Vec<Molecule> {
    let mut order: Vec<usize> = (0..data.len()).filter(|&i| data[i].has_3d).collect();
    order.shuffle(rng);
    let mut keep_flags = vec![false; data.len()];
    for &i in order.iter().take(keep) {
        keep_flags[i] = true;
    }
    data.iter()
        .zip(keep_flags)
        .map(|(m, k)| {
            let mut m = m.clone();
            if !k && m.has_2d {
                m.has_3d = false;
                m.coords = vec![[0.0; 3]; m.n_atoms()];
            }
            m
        })
        .collect()
}

/// Loss and parameter gradients for one noisy record. Parameters the mode
/// never touches receive exact zeros.
pub fn record_gradient(
    net: &Muformer,
    clean: &Clean,
    snap: &NoisySnapshot,
    schedule: &NoiseSchedule,
    mode: Mode,
    omega: OmegaMode,
    dropout: Option<&mut Rng>,
) -> Result<(LossBreakdown, Vec<Tensor>), DiffusionError> {
    let mut tape = Tape::new();
    let input = snap.model_input(schedule);
    let (out, bind) = net.forward(&mut tape, &input, mode, dropout)?;
    let loss = loss_on_tape(&mut tape, &out, clean, snap, schedule, omega)?;
    tape.backward(loss.total)?;
    Ok((loss.breakdown, bind.gradients(&tape)))
}

/// The mode a record trains under given the requested channels.
fn record_mode(requested: Mode, m: &Molecule) -> Option<Mode> {
    Mode::for_modalities(m.has_2d && requested.uses_2d(), m.has_3d && requested.uses_3d())
        .or_else(|| Mode::for_modalities(m.has_2d, m.has_3d))
}

/// Stochastic-gradient training with `ω = 1`. Each step draws a batch from a
/// reshuffled pass over the data, one uniform step `t` per record, and
/// averages gradients over the batch.
pub fn train(
    data: &[Molecule],
    net: &mut Muformer,
    schedule: &NoiseSchedule,
    transitions: &Transitions,
    config: &TrainConfig,
) -> Result<TrainReport, DiffusionError> {
    if data.is_empty() {
        return Err(DiffusionError::Contract("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(DiffusionError::Contract("batch size must be positive".into()));
    }
    let layout = net.config.layout;
    let records: Vec<(Clean, Mode)> = data
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mode = record_mode(config.mode, m)
                .ok_or_else(|| DiffusionError::Contract(format!("record {i} has neither bonds nor coordinates")))?;
            Ok((Clean::from_molecule(m, layout).restricted(mode), mode))
        })
        .collect::<Result<_, DiffusionError>>()?;

    let mut data_rng = rng::substream(config.seed, rng::DATA);
    let mut noise_rng = rng::substream(config.seed, rng::NOISE);
    let mut drop_rng = rng::substream(config.seed, rng::DROPOUT);
    let use_dropout = net.config.dropout > 0.0;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = Vec::new();
    let mut rows = Vec::with_capacity(config.steps);
    let mut clipped_total = 0;
    let steps_t = schedule.steps();

    for step in 1..=config.steps {
        let mut grads: Vec<Tensor> = net.params.tensors().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let mut sums = [0.0; 4];
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..records.len()).collect();
                order.shuffle(&mut data_rng);
            }
            let idx = order.pop().expect("refilled above");
            let (clean, mode) = &records[idx];
            let t = noise_rng.random_range(1..=steps_t);
            let snap = noise_molecule(clean, schedule, transitions, t, &mut noise_rng)?;
            let dropout = use_dropout.then_some(&mut drop_rng);
            let (loss, g) = record_gradient(net, clean, &snap, schedule, *mode, OmegaMode::Training, dropout)?;
            if !loss.total.is_finite() || g.iter().any(|g| !g.all_finite()) {
                return Err(DiffusionError::NonFinite {
                    step,
                    detail: format!(
                        "record {idx} ({} atoms, mode {mode}, t = {t}): loss_H {} loss_X {} loss_E {}",
                        clean.n_atoms(),
                        loss.loss_h,
                        loss.loss_x,
                        loss.loss_e
                    ),
                });
            }
            clipped_total += loss.clipped;
            sums[0] += loss.loss_h;
            sums[1] += loss.loss_x;
            sums[2] += loss.loss_e;
            sums[3] += loss.total;
            for (acc, g) in grads.iter_mut().zip(&g) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
        let scale = 1.0 / config.batch_size as f64;
        for g in &mut grads {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
        if let Some(max) = config.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        let mut params = net.params.tensors().to_vec();
        opt.apply(&mut params, &grads);
        net.params.set_tensors(params)?;

        let row = LossRow {
            step,
            loss_h: sums[0] * scale,
            loss_x: sums[1] * scale,
            loss_e: sums[2] * scale,
            total: sums[3] * scale,
        };
        debug!("step {step}: total {:.6}", row.total);
        if step % 100 == 0 || step == config.steps {
            info!("step {step}/{}: total loss {:.5}", config.steps, row.total);
        }
        rows.push(row);
    }
    Ok(TrainReport {
        rows,
        histogram: AtomCountHistogram::from_dataset(data),
        bounds: CleanBounds::from_dataset(data, layout),
        clipped: clipped_total,
    })
}
