//! Moves, reflects and relabels a noisy input and measures how the network's
//! outputs follow.

use mudiff::model::{ModelConfig, ModelInput, Mode, Muformer};
use mudiff::molecule::make_synthetic_dataset;
use mudiff::rng;
use mudiff::tensor::Tensor;
use mudiff::verify::random_orthogonal;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::desk();
    let net = Muformer::new(cfg.clone(), &mut rng::substream(3, "init"))?;
    let m = make_synthetic_dataset(8, 9, 3).into_iter().max_by_key(|m| m.n_atoms()).expect("non-empty");
    let (n, d) = (m.n_atoms(), cfg.feature_width());
    let mut r = rng::substream(3, "example");
    let input = ModelInput {
        h: m.features(cfg.layout).map(|v| 0.8 * v + 0.3 * rng::normal(&mut r)),
        t_norm: 0.5,
        edges: Some(m.bonds.categories()),
        x: Some(m.coord_tensor()),
    };
    let base = net.predict(&input, Mode::Joint)?;
    let base_x = base.x.clone().expect("joint mode predicts coordinates");

    let rot = random_orthogonal(&mut r);
    let shift = [1.5, -2.0, 0.25];
    let apply = |x: &Tensor| {
        Tensor::from_fn([n, 3], |k| {
            let (i, a) = (k / 3, k % 3);
            (0..3).map(|b| rot[a][b] * x.get(&[i, b])).sum::<f64>() + shift[a]
        })
    };
    let moved = ModelInput {
        x: input.x.as_ref().map(apply),
        ..input.clone()
    };
    let out = net.predict(&moved, Mode::Joint)?;
    println!("{n} atoms, one random orthogonal map plus a shift:");
    println!("  feature output changed by   {:.2e}", out.h.max_abs_diff(&base.h));
    println!("  coordinate output is off by {:.2e} from the moved prediction", out.x.expect("joint").max_abs_diff(&apply(&base_x)));

    let perm: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
    let pm = m.permuted(&perm);
    let relabeled = ModelInput {
        h: Tensor::from_fn([n, d], |k| input.h.get(&[perm[k / d], k % d])),
        t_norm: input.t_norm,
        edges: Some(pm.bonds.categories()),
        x: Some(pm.coord_tensor()),
    };
    let out = net.predict(&relabeled, Mode::Joint)?;
    let gap = (0..n * d).fold(0.0f64, |g, k| g.max((out.h.get(&[k / d, k % d]) - base.h.get(&[perm[k / d], k % d])).abs()));
    println!("  relabeled atoms: feature outputs match the permuted originals within {gap:.2e}");
    Ok(())
}
