use mudiff::model::{cosine_cutoff, Group, ModelConfig, ModelInput, Mode, Muformer, RadialBasis};
use mudiff::molecule::{make_synthetic_dataset, FeatureLayout, Molecule};
use mudiff::rng;
use mudiff::tensor::{Tape, Tensor};

fn model(cfg: ModelConfig, seed: u64) -> Muformer {
    Muformer::new(cfg, &mut rng::substream(seed, "init")).unwrap()
}

fn noisy_input(m: &Molecule, layout: FeatureLayout, seed: u64) -> ModelInput {
    let mut r = rng::substream(seed, "test");
    let h = m.features(layout).map(|v| 0.8 * v + 0.3 * rng::normal(&mut r));
    ModelInput {
        h,
        t_norm: 0.4,
        edges: Some(m.bonds.categories()),
        x: Some(m.coord_tensor()),
    }
}

fn molecule(seed: u64, max_atoms: usize) -> Molecule {
    make_synthetic_dataset(8, max_atoms, seed)
        .into_iter()
        .max_by_key(|m| m.n_atoms())
        .unwrap()
}

fn rotation(seed: u64) -> [[f64; 3]; 3] {
    // random orthogonal matrix via Gram-Schmidt, with a random reflection
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

fn rigid(x: &Tensor, r: &[[f64; 3]; 3], shift: [f64; 3]) -> Tensor {
    let n = x.shape()[0];
    Tensor::from_fn([n, 3], |k| {
        let (i, a) = (k / 3, k % 3);
        (0..3).map(|b| r[a][b] * x.get(&[i, b])).sum::<f64>() + shift[a]
    })
}

#[test]
fn output_shapes_and_symmetry() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 1);
    let m = molecule(2, 8);
    let n = m.n_atoms();
    let out = net.predict(&noisy_input(&m, cfg.layout, 3), Mode::Joint).unwrap();
    assert_eq!(out.h.shape(), &[n, cfg.feature_width()]);
    assert_eq!(out.x.as_ref().unwrap().shape(), &[n, 3]);
    let p = out.e_prob.unwrap();
    assert_eq!(p.shape(), &[n, n, 4]);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..4).map(|k| p.get(&[i, j, k])).sum();
            assert!((s - 1.0).abs() < 1e-12);
            for k in 0..4 {
                assert_eq!(p.get(&[i, j, k]), p.get(&[j, i, k]));
            }
        }
    }
}

#[test]
fn modality_outputs_follow_mode() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 1);
    let m = molecule(2, 6);
    let input = noisy_input(&m, cfg.layout, 3);
    let two = net.predict(&input, Mode::TwoD).unwrap();
    assert!(two.x.is_none() && two.e_prob.is_some());
    let three = net.predict(&input, Mode::ThreeD).unwrap();
    assert!(three.x.is_some() && three.e_prob.is_none());
    let mut no_x = input.clone();
    no_x.x = None;
    assert!(net.predict(&no_x, Mode::Joint).is_err());
}

#[test]
fn rigid_motions_leave_invariants_and_rotate_coordinates() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 4);
    let m = molecule(5, 8);
    let input = noisy_input(&m, cfg.layout, 6);
    let base = net.predict(&input, Mode::Joint).unwrap();
    for trial in 0..10 {
        let r = rotation(trial);
        let shift = [1.5, -2.0, 0.25];
        let mut moved = input.clone();
        moved.x = Some(rigid(input.x.as_ref().unwrap(), &r, shift));
        let out = net.predict(&moved, Mode::Joint).unwrap();
        assert!(out.h.max_abs_diff(&base.h) < 1e-8);
        assert!(out.e_prob.unwrap().max_abs_diff(base.e_prob.as_ref().unwrap()) < 1e-8);
        let want = rigid(base.x.as_ref().unwrap(), &r, shift);
        assert!(out.x.unwrap().max_abs_diff(&want) < 1e-8);
    }
}

#[test]
fn permuting_atoms_permutes_outputs() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 7);
    let m = molecule(8, 8);
    let n = m.n_atoms();
    let input = noisy_input(&m, cfg.layout, 9);
    let d = cfg.feature_width();
    let a = net.predict(&input, Mode::Joint).unwrap();
    // a reversal is its own inverse, so also try a cyclic shift
    let mut shift: Vec<usize> = (0..n).collect();
    shift.rotate_left(1);
    for perm in [(0..n).rev().collect::<Vec<usize>>(), shift] {
        let permuted = ModelInput {
            h: Tensor::from_fn([n, d], |k| input.h.get(&[perm[k / d], k % d])),
            t_norm: input.t_norm,
            edges: Some(m.permuted(&perm).bonds.categories()),
            x: Some(m.permuted(&perm).coord_tensor()),
        };
        let b = net.predict(&permuted, Mode::Joint).unwrap();
        for i in 0..n {
            for c in 0..d {
                assert!((b.h.get(&[i, c]) - a.h.get(&[perm[i], c])).abs() < 1e-12);
            }
            for c in 0..3 {
                let (xa, xb) = (a.x.as_ref().unwrap(), b.x.as_ref().unwrap());
                assert!((xb.get(&[i, c]) - xa.get(&[perm[i], c])).abs() < 1e-12);
            }
            for j in 0..n {
                for k in 0..4 {
                    let (pa, pb) = (a.e_prob.as_ref().unwrap(), b.e_prob.as_ref().unwrap());
                    assert!((pb.get(&[i, j, k]) - pa.get(&[perm[i], perm[j], k])).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn disabled_channel_gets_exactly_zero_gradient() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 10);
    let m = molecule(11, 7);
    let input = noisy_input(&m, cfg.layout, 12);
    for (mode, dead) in [(Mode::TwoD, Group::ThreeD), (Mode::ThreeD, Group::TwoD)] {
        let mut tape = Tape::new();
        let (out, bind) = net.forward(&mut tape, &input, mode, None).unwrap();
        let mut parts = vec![tape.sum_all(out.h)];
        if let Some(x) = out.x {
            let sq = tape.square(x);
            parts.push(tape.sum_all(sq));
        }
        if let Some(l) = out.e_logits {
            let sq = tape.square(l);
            parts.push(tape.sum_all(sq));
        }
        let mut loss = parts[0];
        for &p in &parts[1..] {
            loss = tape.add(loss, p).unwrap();
        }
        tape.backward(loss).unwrap();
        let grads = bind.gradients(&tape);
        let mut live = 0;
        for (i, g) in grads.iter().enumerate() {
            if net.params.group(i) == dead {
                assert!(g.data().iter().all(|&v| v == 0.0), "{} in {mode}", net.params.names()[i]);
            } else if g.data().iter().any(|&v| v != 0.0) {
                live += 1;
            }
        }
        assert!(live > 10);
    }
}

#[test]
fn rbf_peaks_and_bounds() {
    let basis = RadialBasis::new(8, 5.0);
    for (k, &mu) in basis.centers().iter().enumerate() {
        let d = -mu.ln();
        assert!((basis.eval(d)[k] - 1.0).abs() < 1e-12);
    }
    for d in [0.0, 0.3, 1.0, 4.9, 20.0] {
        assert!(basis.eval(d).iter().all(|&v| v > 0.0 && v <= 1.0));
    }
    let far = basis.eval(1e6);
    for (v, mu) in far.iter().zip(basis.centers()) {
        assert!((v - (-basis.beta() * mu * mu).exp()).abs() < 1e-12);
    }
}

#[test]
fn cutoff_endpoints() {
    assert_eq!(cosine_cutoff(5.0, 5.0), 0.0);
    assert_eq!(cosine_cutoff(0.0, 5.0), 1.0);
    assert!((cosine_cutoff(2.5, 5.0) - 0.5).abs() < 1e-15);
}

#[test]
fn graph_encoding_contract() {
    let net = model(ModelConfig::toy(), 1);
    assert!(net.encode_graph(&[0.0; 12]).is_err());
    let z = net.encode_graph(&[0.0; 13]).unwrap();
    assert_eq!(z.data(), net.params.get("graph.b").data());
}

#[test]
fn isolated_atom_uses_only_atom_term() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 2);
    let m = Molecule::new(vec![1, 3], &[], None);
    let input = ModelInput { h: m.features(cfg.layout), t_norm: 0.0, edges: Some(m.bonds.categories()), x: None };
    let z = net.encode_atoms(&input, Mode::TwoD).unwrap();
    let mut tape = Tape::new();
    let hin = Tensor::from_fn([2, 7], |k| if k % 7 < 6 { input.h.get(&[k / 7, k % 7]) } else { 0.0 });
    let h = tape.constant(hin);
    let w = tape.constant(net.params.get("enc.atom1.w").clone());
    let b = tape.constant(net.params.get("enc.atom1.b").clone());
    let y = tape.matmul(h, w).unwrap();
    let y = tape.add(y, b).unwrap();
    assert!(z.max_abs_diff(tape.value(y)) < 1e-15);
}

#[test]
fn bias_tensors_are_symmetric_and_motion_invariant() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 3);
    let m = molecule(4, 8);
    let n = m.n_atoms();
    let input = noisy_input(&m, cfg.layout, 5);
    let (p2, p3) = net.biases(&input, Mode::Joint).unwrap();
    let (p2, p3) = (p2.unwrap(), p3.unwrap());
    for i in 0..n {
        for j in 0..n {
            assert_eq!(p2.get(&[i, j]), p2.get(&[j, i]));
            assert!((p3.get(&[i, j]) - p3.get(&[j, i])).abs() < 1e-15);
        }
    }
    let mut moved = input.clone();
    moved.x = Some(rigid(input.x.as_ref().unwrap(), &rotation(3), [3.0, 1.0, -1.0]));
    let (_, q3) = net.biases(&moved, Mode::Joint).unwrap();
    assert!(q3.unwrap().max_abs_diff(&p3) < 1e-10);
    let mut scaled = input.clone();
    scaled.x = Some(input.x.as_ref().unwrap().map(|v| 2.0 * v));
    let (_, s3) = net.biases(&scaled, Mode::Joint).unwrap();
    assert!(s3.unwrap().max_abs_diff(&p3) > 1e-6);
}

#[test]
fn bond_encoding_is_symmetric() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 3);
    let m = molecule(6, 8);
    let n = m.n_atoms();
    let z = net.encode_bond_pairs(&noisy_input(&m, cfg.layout, 1)).unwrap();
    for i in 0..n {
        for j in 0..n {
            for c in 0..cfg.edge_width {
                assert_eq!(z.get(&[i, j, c]), z.get(&[j, i, c]));
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::toy();
    let a = model(cfg.clone(), 9);
    let b = model(cfg.clone(), 9);
    let m = molecule(1, 6);
    let input = noisy_input(&m, cfg.layout, 2);
    let (oa, ob) = (a.predict(&input, Mode::Joint).unwrap(), b.predict(&input, Mode::Joint).unwrap());
    assert_eq!(oa.h, ob.h);
    assert_eq!(oa.x, ob.x);
}

#[test]
fn coincident_atoms_stay_finite() {
    let cfg = ModelConfig::toy();
    let net = model(cfg.clone(), 9);
    let m = Molecule::new(vec![1, 0], &[(0, 1, 1)], Some(vec![[0.0; 3], [0.0; 3]]));
    let input = noisy_input(&m, cfg.layout, 2);
    let out = net.predict(&input, Mode::Joint).unwrap();
    assert!(out.h.all_finite() && out.x.unwrap().all_finite());
}
