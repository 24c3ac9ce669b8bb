//! Trains on a dataset where only a few records keep coordinates. Records
//! without them train the graph channel alone.
//!
//! `cargo run --release --example limited_3d -- [records_with_coordinates]`

use mudiff::diffusion::{apply_limited_3d, train, TrainConfig};
use mudiff::model::{ModelConfig, Muformer};
use mudiff::molecule::make_synthetic_dataset;
use mudiff::rng;
use mudiff::schedule::{NoiseSchedule, Transitions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let full = make_synthetic_dataset(64, 6, 9);
    let data = apply_limited_3d(&full, keep, &mut rng::substream(9, "limited"));
    println!(
        "{} of {} records keep coordinates",
        data.iter().filter(|m| m.has_3d).count(),
        data.len()
    );

    let schedule = NoiseSchedule::cosine(50, 0.008);
    let transitions = Transitions::uniform(&schedule, 4);
    let mut net = Muformer::new(ModelConfig::toy(), &mut rng::substream(9, "init"))?;
    let cfg = TrainConfig {
        steps: 600,
        batch_size: 8,
        learning_rate: 0.02,
        ..TrainConfig::default()
    };
    let report = train(&data, &mut net, &schedule, &transitions, &cfg)?;
    let mean = |f: fn(&mudiff::diffusion::LossRow) -> f64, from: usize, to: usize| {
        report.rows[from..to].iter().map(f).sum::<f64>() / (to - from) as f64
    };
    for (name, f) in [
        ("features", (|r: &mudiff::diffusion::LossRow| r.loss_h) as fn(&_) -> f64),
        ("coordinates", |r| r.loss_x),
        ("bonds", |r| r.loss_e),
        ("total", |r| r.total),
    ] {
        println!("{name:>12}: first 50 steps {:.4}, last 50 steps {:.4}", mean(f, 0, 50), mean(f, cfg.steps - 50, cfg.steps));
    }
    Ok(())
}
