use rand::Rng as _;

use super::{center_coords, AtomTable, BondGraph, Molecule};
use crate::rng::{self, Rng};

const BOND_LENGTH: f64 = 1.5;
const NONBONDED_MIN: f64 = 2.4;

/// Small valency-saturated molecules over H, C, N, O, F with a relaxed 3D
/// embedding.
///
/// Every molecule with two or more atoms is connected and has each atom's
/// bond-order sum equal to its valency. With `max_atoms == 1` only lone atoms
/// are possible, which cannot satisfy a nonzero valency.
pub fn make_synthetic_dataset(count: usize, max_atoms: usize, seed: u64) -> Vec<Molecule> {
    assert!(max_atoms >= 1, "max_atoms must be at least 1");
    let table = AtomTable::default();
    let mut rng = rng::substream(seed, rng::DATA);
    (0..count).map(|_| generate(&mut rng, max_atoms, &table)).collect()
}

fn heavy_type(rng: &mut Rng) -> usize {
    // C, N, O, F
    let weights = [0.55, 0.2, 0.18, 0.07];
    1 + rng::categorical(rng, &weights)
}

fn generate(rng: &mut Rng, max_atoms: usize, table: &AtomTable) -> Molecule {
    if max_atoms == 1 {
        let atoms = vec![rng.random_range(0..table.len())];
        return Molecule::new(atoms, &[], Some(vec![[0.0; 3]]));
    }
    loop {
        if let Some((atoms, graph)) = try_graph(rng, max_atoms, table) {
            let coords = embed(rng, &graph);
            let bonds = graph.bond_list();
            return Molecule::new(atoms, &bonds, Some(coords));
        }
    }
}

fn try_graph(rng: &mut Rng, max_atoms: usize, table: &AtomTable) -> Option<(Vec<usize>, BondGraph)> {
    let heavy = rng.random_range(1..=max_atoms);
    let mut atoms: Vec<usize> = (0..heavy).map(|_| heavy_type(rng)).collect();
    let mut orders: Vec<(usize, usize, u8)> = Vec::new();
    let mut used = vec![0u32; heavy];
    let spare = |a: usize, used: &[u32], atoms: &[usize]| table.valency(atoms[a]) - used[a];

    for v in 1..heavy {
        let open: Vec<usize> = (0..v).filter(|&u| spare(u, &used, &atoms) > 0).collect();
        if open.is_empty() {
            return None;
        }
        let u = open[rng.random_range(0..open.len())];
        orders.push((u, v, 1));
        used[u] += 1;
        used[v] += 1;
        if used[v] > table.valency(atoms[v]) {
            return None;
        }
    }
    // occasional ring closure between atoms that are not yet bonded
    if heavy >= 3 && rng.random_bool(0.25) {
        let a = rng.random_range(0..heavy);
        let b = rng.random_range(0..heavy);
        let bonded = orders.iter().any(|&(i, j, _)| (i, j) == (a, b) || (i, j) == (b, a));
        if a != b && !bonded && spare(a, &used, &atoms) > 0 && spare(b, &used, &atoms) > 0 {
            orders.push((a.min(b), a.max(b), 1));
            used[a] += 1;
            used[b] += 1;
        }
    }
    for bond in orders.iter_mut() {
        let (i, j, _) = *bond;
        while bond.2 < 3 && spare(i, &used, &atoms) > 0 && spare(j, &used, &atoms) > 0 && rng.random_bool(0.2) {
            bond.2 += 1;
            used[i] += 1;
            used[j] += 1;
        }
    }
    let hydrogens: u32 = (0..heavy).map(|a| spare(a, &used, &atoms)).sum();
    let total = heavy + hydrogens as usize;
    if total > max_atoms || total < 2 {
        return None;
    }
    for a in 0..heavy {
        for _ in 0..spare(a, &used, &atoms) {
            atoms.push(0);
            orders.push((a, atoms.len() - 1, 1));
        }
    }
    let mut graph = BondGraph::empty(atoms.len());
    for (i, j, o) in orders {
        graph.set(i, j, o);
    }
    Some((atoms, graph))
}

/// Spring relaxation: bonded pairs pulled to `BOND_LENGTH`, other pairs
/// pushed apart until at least `NONBONDED_MIN`.
fn embed(rng: &mut Rng, g: &BondGraph) -> Vec<[f64; 3]> {
    let n = g.n();
    let mut x: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng::normal(rng), rng::normal(rng), rng::normal(rng)].map(|v| 1.5 * v))
        .collect();
    for _ in 0..400 {
        let mut force = vec![[0.0; 3]; n];
        for i in 0..n {
            for j in i + 1..n {
                let d: Vec<f64> = (0..3).map(|a| x[j][a] - x[i][a]).collect();
                let r = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
                let stretch = if g.bonded(i, j) {
                    r - BOND_LENGTH
                } else if r < NONBONDED_MIN {
                    0.5 * (r - NONBONDED_MIN)
                } else {
                    0.0
                };
                for a in 0..3 {
                    let f = stretch * d[a] / r;
                    force[i][a] += f;
                    force[j][a] -= f;
                }
            }
        }
        for i in 0..n {
            for a in 0..3 {
                x[i][a] += 0.1 * force[i][a];
            }
        }
    }
    center_coords(&mut x);
    x
}
