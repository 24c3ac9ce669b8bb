//! Graph descriptors for a few small skeletons: ring counts, spectrum,
//! hop distances and shortest-route counts.

use mudiff::molecule::{graph_features, shortest_paths, AtomTable, Molecule};

fn ring(n: usize, double_every: usize) -> Molecule {
    let bonds: Vec<_> = (0..n)
        .map(|i| (i, (i + 1) % n, if i % double_every == 0 { 2 } else { 1 }))
        .collect();
    Molecule::new(vec![1; n], &bonds, None)
}

fn main() {
    let table = AtomTable::default();
    let chain = Molecule::new(vec![1, 1, 3, 1], &[(0, 1, 1), (1, 2, 1), (2, 3, 1)], None);
    for (name, m) in [("benzene skeleton", ring(6, 2)), ("cyclobutane skeleton", ring(4, 9)), ("C-C-O-C", chain)] {
        let f = graph_features(&m, &table);
        let sp = shortest_paths(&m.bonds);
        let far = (0..m.n_atoms()).filter_map(|j| sp.distance(0, j)).max().unwrap_or(0);
        let far_j = (0..m.n_atoms()).find(|&j| sp.distance(0, j) == Some(far)).unwrap_or(0);
        println!("{name}:");
        println!("  cycles of length 3..6 {:?}, components {}", &f.h_struct[..4], f.h_struct[4]);
        println!("  zero eigenvalues {}, next eigenvalues {:?}", f.h_spect[0], &f.h_spect[1..]);
        println!("  mean bond-order sum {:.2}, weight {:.2}", f.h_mol[0], f.h_mol[1]);
        println!("  atom 0 to atom {far_j}: {far} hops along {} shortest routes", sp.count(0, far_j));
    }
}
