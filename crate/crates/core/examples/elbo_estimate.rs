//! Monte Carlo estimate of the negative variational bound for one molecule
//! under an untrained network, split into its three parts.
//!
//! `cargo run --release --example elbo_estimate -- [draws]`

use mudiff::diffusion::{elbo, Clean};
use mudiff::model::{ModelConfig, Mode, Muformer};
use mudiff::molecule::make_synthetic_dataset;
use mudiff::rng;
use mudiff::schedule::{NoiseSchedule, Transitions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let draws: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = ModelConfig::toy();
    let net = Muformer::new(cfg.clone(), &mut rng::substream(5, "init"))?;
    let schedule = NoiseSchedule::cosine(50, 0.008);
    let transitions = Transitions::uniform(&schedule, cfg.bond_categories);
    let m = &make_synthetic_dataset(4, 6, 5)[0];
    let clean = Clean::from_molecule(m, cfg.layout);
    for mode in [Mode::TwoD, Mode::ThreeD, Mode::Joint] {
        let r = elbo(&clean.restricted(mode), &net, &schedule, &transitions, mode, &mut rng::substream(5, "elbo"), draws)?;
        println!(
            "{mode}: nelbo {:>10.3} ± {:<8.3} = prior {:.2e} + diffusion {:.3} - reconstruction {:.3}",
            r.nelbo, r.std_err, r.prior_kl, r.diffusion_loss_sum, r.reconstruction_loglik
        );
    }
    Ok(())
}
