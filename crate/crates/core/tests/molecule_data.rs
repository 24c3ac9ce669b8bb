use mudiff::molecule::{
    center_of_gravity, components, cycle_counts, graph_features, jacobi_eigenvalues, load_dataset,
    make_synthetic_dataset, normalized_laplacian, parse_dataset, shortest_paths, to_jsonl, AtomTable, BondGraph,
    Molecule, MoleculeError, BOND_CATEGORIES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table() -> AtomTable {
    AtomTable::default()
}

fn random_graph(n: usize, p: f64, seed: u64) -> BondGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = BondGraph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                g.set(i, j, rng.random_range(1..=3));
            }
        }
    }
    g
}

#[test]
fn methane_record_loads() {
    let text = r#"{"atoms":["C","H","H","H","H"],"bonds":[[0,1,1],[0,2,1],[0,3,1],[0,4,1]]}"#;
    let ms = parse_dataset(text, &table()).unwrap();
    let m = &ms[0];
    assert_eq!(m.n_atoms(), 5);
    assert!(!m.has_3d && m.has_2d);
    let e = m.edge_onehot(BOND_CATEGORIES);
    let singles: f64 = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).map(|(i, j)| e.get(&[i, j, 1])).sum();
    assert_eq!(singles, 4.0);
    for i in 0..5 {
        for j in 0..5 {
            let row: f64 = (0..BOND_CATEGORIES).map(|k| e.get(&[i, j, k])).sum();
            assert_eq!(row, 1.0);
            assert_eq!(e.get(&[i, j, 1]), e.get(&[j, i, 1]));
        }
        assert_eq!(e.get(&[i, i, 0]), 1.0);
    }
}

#[test]
fn lone_atom_has_single_no_bond_entry() {
    let ms = parse_dataset(r#"{"atoms":["O"],"bonds":[]}"#, &table()).unwrap();
    let e = ms[0].edge_onehot(BOND_CATEGORIES);
    assert_eq!(e.shape(), &[1, 1, 4]);
    assert_eq!(e.data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn coordinates_are_centered_on_load() {
    let text = r#"{"atoms":["C","O","H"],"bonds":[[0,1,1]],"coords":[[1,0,0],[1,0,0],[1,0,0]]}"#;
    let m = &parse_dataset(text, &table()).unwrap()[0];
    assert!(m.has_3d);
    for c in center_of_gravity(&m.coords) {
        assert!(c.abs() < 1e-9);
    }
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "{\"atoms\":[\"C\"],\"bonds\":[]}\n\n{\"atoms\":[\"C\"],\"bonds\":[[0,5,1]]}\n";
    match parse_dataset(text, &table()) {
        Err(MoleculeError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    match parse_dataset("{\"atoms\":[\"Xe\"]}", &table()) {
        Err(MoleculeError::UnknownAtom { line, symbol }) => assert_eq!((line, symbol.as_str()), (1, "Xe")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_dataset("not json", &table()), Err(MoleculeError::Parse { line: 1, .. })));
}

#[test]
fn missing_file_reports_path() {
    let err = load_dataset("/nonexistent/data.jsonl").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/data.jsonl"));
}

#[test]
fn serialize_round_trip_is_identical() {
    let ms = make_synthetic_dataset(20, 9, 3);
    let text = to_jsonl(&ms, &table());
    let back = parse_dataset(&text, &table()).unwrap();
    assert_eq!(ms, back);
    assert_eq!(to_jsonl(&back, &table()), text);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let a = to_jsonl(&make_synthetic_dataset(16, 9, 11), &table());
    let b = to_jsonl(&make_synthetic_dataset(16, 9, 11), &table());
    assert_eq!(a, b);
    let c = to_jsonl(&make_synthetic_dataset(16, 9, 12), &table());
    assert_ne!(a, c);
}

#[test]
fn single_atom_dataset() {
    let ms = make_synthetic_dataset(1, 1, 0);
    assert_eq!(ms[0].n_atoms(), 1);
    assert!(ms[0].bond_list().is_empty());
}

#[test]
fn synthetic_molecules_are_saturated_connected_and_bonded_at_range() {
    let t = table();
    for m in make_synthetic_dataset(64, 9, 5) {
        assert!(m.n_atoms() >= 2 && m.n_atoms() <= 9);
        let sums = m.bonds.valence_sums();
        for (i, &a) in m.atoms.iter().enumerate() {
            assert_eq!(sums[i], t.valency(a));
        }
        assert_eq!(components(&m.bonds), 1);
        for (i, j, _) in m.bond_list() {
            let d: f64 = (0..3).map(|a| (m.coords[i][a] - m.coords[j][a]).powi(2)).sum::<f64>().sqrt();
            assert!((d - 1.5).abs() < 0.5, "bond length {d}");
        }
    }
}

#[test]
fn triangle_features() {
    let mut g = BondGraph::empty(3);
    g.set(0, 1, 1);
    g.set(1, 2, 1);
    g.set(0, 2, 1);
    let m = Molecule::new(vec![1, 1, 1], &g.bond_list(), None);
    let f = graph_features(&m, &table());
    assert_eq!(f.h_struct, [1.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(f.to_vector().len(), 13);
}

#[test]
fn hexagon_features() {
    let bonds: Vec<(usize, usize, u8)> = (0..6).map(|i| (i, (i + 1) % 6, 1)).collect();
    let m = Molecule::new(vec![1; 6], &bonds, None);
    let f = graph_features(&m, &table());
    assert_eq!(&f.h_struct[..4], &[0.0, 0.0, 0.0, 1.0]);
    assert_eq!(f.h_spect[0], 1.0);
    // normalized Laplacian of C6: 1 - cos(2πk/6)
    let want = [0.5, 0.5, 1.5, 1.5, 2.0];
    for (got, w) in f.h_spect[1..].iter().zip(want) {
        assert!((got - w).abs() < 1e-10, "{:?}", f.h_spect);
    }
}

#[test]
fn two_disjoint_edges() {
    let m = Molecule::new(vec![0, 0, 0, 0], &[(0, 1, 1), (2, 3, 1)], None);
    let f = graph_features(&m, &table());
    assert_eq!(f.h_struct[4], 2.0);
    assert_eq!(f.h_spect[0], 2.0);
    for (got, want) in f.h_spect[1..].iter().zip([2.0, 2.0, 0.0, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12, "{:?}", f.h_spect);
    }
}

#[test]
fn h_mol_is_mean_valence_and_weight() {
    let m = Molecule::new(vec![1, 0, 0, 0, 0], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1)], None);
    let f = graph_features(&m, &table());
    assert!((f.h_mol[0] - 8.0 / 5.0).abs() < 1e-15);
    assert!((f.h_mol[1] - (12.011 + 4.0 * 1.008)).abs() < 1e-12);
}

/// Brute-force simple-cycle count: enumerate vertex sequences, keep closed
/// simple walks, divide by rotations and reflections.
fn brute_cycles(g: &BondGraph) -> [usize; 4] {
    fn extend(g: &BondGraph, path: &mut Vec<usize>, counts: &mut [usize; 4]) {
        let len = path.len();
        if len >= 3 && g.bonded(path[len - 1], path[0]) {
            counts[len - 3] += 1;
        }
        if len == 6 {
            return;
        }
        for v in 0..g.n() {
            if !path.contains(&v) && g.bonded(path[len - 1], v) {
                path.push(v);
                extend(g, path, counts);
                path.pop();
            }
        }
    }
    let mut counts = [0; 4];
    for s in 0..g.n() {
        let mut p = vec![s];
        extend(g, &mut p, &mut counts);
    }
    let mut out = [0; 4];
    for k in 0..4 {
        out[k] = counts[k] / (2 * (k + 3));
    }
    out
}

#[test]
fn cycles_match_brute_force() {
    for seed in 0..40 {
        let g = random_graph(7, 0.45, seed);
        assert_eq!(cycle_counts(&g), brute_cycles(&g), "seed {seed}");
    }
}

#[test]
fn spd_matches_floyd_warshall() {
    for seed in 0..50 {
        let n = 1 + (seed as usize % 8);
        let g = random_graph(n, 0.35, 100 + seed);
        let sp = shortest_paths(&g);
        let inf = usize::MAX / 4;
        let mut d = vec![inf; n * n];
        for i in 0..n {
            d[i * n + i] = 0;
            for j in g.neighbors(i) {
                d[i * n + j] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = d[i * n + j].min(d[i * n + k] + d[k * n + j]);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let want = (d[i * n + j] < inf).then_some(d[i * n + j]);
                assert_eq!(sp.distance(i, j), want);
                let path = sp.path(i, j);
                assert_eq!(path.len(), want.unwrap_or(0));
                assert_eq!(path, sp.path(j, i));
                if let (Some(first), Some(last)) = (path.first(), path.last()) {
                    assert_eq!(first.0, i.min(j));
                    assert_eq!(last.1, i.max(j));
                    assert!(path.windows(2).all(|w| w[0].1 == w[1].0));
                    assert!(path.iter().all(|&(a, b)| g.bonded(a, b)));
                }
            }
        }
    }
}

#[test]
fn path_graph_shortest_path() {
    let m = Molecule::new(vec![1, 1, 1], &[(0, 1, 1), (1, 2, 2)], None);
    let sp = shortest_paths(&m.bonds);
    assert_eq!(sp.distance(0, 2), Some(2));
    assert_eq!(sp.path(0, 2), &[(0, 1), (1, 2)]);
    assert_eq!(sp.distance(1, 1), Some(0));
    assert!(sp.path(1, 1).is_empty());
}

#[test]
fn jacobi_matches_dense_eigensolver() {
    for seed in 0..20 {
        let n = 2 + seed as usize % 7;
        let g = random_graph(n, 0.5, 200 + seed);
        let l = normalized_laplacian(&g);
        let ours = jacobi_eigenvalues(&l, n);
        let m = nalgebra::DMatrix::from_row_slice(n, n, &l);
        let mut theirs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-10, "{ours:?} vs {theirs:?}");
        }
    }
}

#[test]
fn features_are_permutation_invariant() {
    let t = table();
    for (k, m) in make_synthetic_dataset(10, 9, 8).into_iter().enumerate() {
        let n = m.n_atoms();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(k % n);
        perm.reverse();
        let p = m.permuted(&perm);
        let (a, b) = (graph_features(&m, &t), graph_features(&p, &t));
        assert_eq!(a.h_struct, b.h_struct);
        assert_eq!(a.h_mol[0], b.h_mol[0]);
        assert!((a.h_mol[1] - b.h_mol[1]).abs() < 1e-12);
        for (x, y) in a.h_spect.iter().zip(&b.h_spect) {
            assert!((x - y).abs() < 1e-9);
        }
        for i in 0..n {
            for j in 0..n {
                assert_eq!(b.spd[i * n + j], a.spd[perm[i] * n + perm[j]]);
            }
        }
    }
}

#[test]
fn centering_is_idempotent() {
    let mut x = vec![[1.0, 2.0, 3.0], [0.3, -7.0, 2.0], [5.0, 1.0, 0.1]];
    mudiff::molecule::center_coords(&mut x);
    let once = x.clone();
    mudiff::molecule::center_coords(&mut x);
    assert_eq!(once, x);
}
