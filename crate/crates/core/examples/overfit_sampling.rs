//! Overfits the desk network to methane, samples 100 molecules with the
//! clipped reverse chain, and scores them.
//!
//! `cargo run --release --example overfit_sampling -- [steps] [learning_rate]`

use mudiff::diffusion::{sample_batch, train, DecodeMode, SampleOptions, TrainConfig};
use mudiff::metrics::evaluate;
use mudiff::model::{Mode, ModelConfig, Muformer};
use mudiff::molecule::{AtomTable, Molecule};
use mudiff::rng;
use mudiff::schedule::{NoiseSchedule, Transitions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3000);
    let lr: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.02);

    let d = 1.09 / 3f64.sqrt();
    let methane = Molecule::new(
        vec![1, 0, 0, 0, 0],
        &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)],
        Some(vec![[0.0; 3], [d, d, d], [-d, -d, d], [-d, d, -d], [d, -d, -d]]),
    );
    let schedule = NoiseSchedule::cosine(50, 0.008);
    let transitions = Transitions::uniform(&schedule, 4);
    let mut net = Muformer::new(ModelConfig::desk(), &mut rng::substream(11, "init"))?;
    let cfg = TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let report = train(&[methane], &mut net, &schedule, &transitions, &cfg)?;
    println!(
        "loss {:.3} -> {:.3} after {steps} steps ({:.1?})",
        report.moving_average(10, 10),
        report.moving_average(steps, 100),
        started.elapsed()
    );

    let options = SampleOptions::new(Mode::Joint, DecodeMode::Deterministic, Some(report.bounds.clone()));
    let samples: Vec<Molecule> = sample_batch(&net, &schedule, &transitions, &[5; 100], &options, 3)
        .into_iter()
        .map(|r| r.map(|(m, _)| m))
        .collect::<Result<_, _>>()?;
    let r = evaluate(&samples, &AtomTable::default());
    println!(
        "atom stable {:.3}, molecule stable {:.3}, valid {:.3}, unique {:.3}",
        r.atom_stable_fraction, r.mol_stable_fraction, r.valid_fraction, r.unique_fraction
    );
    Ok(())
}
