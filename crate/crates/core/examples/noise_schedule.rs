//! Prints the cosine schedule and shows the bond kernels mixing toward uniform.
//!
//! `cargo run --example noise_schedule -- [steps]`

use mudiff::schedule::{NoiseSchedule, Transitions};

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let schedule = NoiseSchedule::cosine(steps, 0.008);
    let transitions = Transitions::uniform(&schedule, 4);

    println!("{:>5} {:>10} {:>10} {:>12} {:>12}  cumulative row from 'single'", "t", "alpha", "sigma", "snr", "weight");
    for t in (0..=steps).step_by((steps / 10).max(1)) {
        let row = transitions.cumulative_row(t, 1);
        println!(
            "{t:>5} {:>10.6} {:>10.6} {:>12.4e} {:>12.4e}  [{}]",
            schedule.alpha(t),
            schedule.sigma(t),
            schedule.snr(t),
            if t == 0 { f64::NAN } else { schedule.omega(t) },
            row.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ")
        );
    }
    let last = transitions.cumulative(steps);
    let gap = last.data().iter().fold(0.0f64, |m, p| m.max((p - 0.25).abs()));
    println!("largest distance of the final kernel from uniform: {gap:.2e}");
}
