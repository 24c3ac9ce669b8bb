//! Trains the toy network on synthetic molecules and prints the loss curve.
//!
//! `cargo run --release --example toy_training -- [steps] [learning_rate]`

use mudiff::diffusion::{train, TrainConfig};
use mudiff::model::{ModelConfig, Muformer};
use mudiff::molecule::make_synthetic_dataset;
use mudiff::rng;
use mudiff::schedule::{NoiseSchedule, Transitions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);
    let lr: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.02);

    let data = make_synthetic_dataset(64, 6, 7);
    let schedule = NoiseSchedule::cosine(50, 0.008);
    let transitions = Transitions::uniform(&schedule, 4);
    let mut net = Muformer::new(ModelConfig::toy(), &mut rng::substream(7, "init"))?;
    let cfg = TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let report = train(&data, &mut net, &schedule, &transitions, &cfg)?;
    for end in (50..=steps).step_by((steps / 10).max(50)) {
        println!("step {end:>6}: moving average {:.4}", report.moving_average(end, 50));
    }
    let first = report.moving_average(10, 10);
    let last = report.moving_average(steps, 100);
    println!(
        "step-10 average {first:.4}, final {last:.4} ({:.0}% lower) in {:.1?}",
        100.0 * (1.0 - last / first),
        started.elapsed()
    );
    Ok(())
}
