//! Canonical molecular graph labels.
//!
//! Colour refinement alone cannot separate some regular graphs (for example
//! the triangular prism and the complete bipartite graph K3,3), so refinement
//! is followed by individualization: every branch of the search ends in a
//! discrete colouring, and the lexicographically smallest adjacency
//! certificate over all branches is the canonical form.

use sha2::{Digest, Sha256};

use crate::molecule::Molecule;

/// Ranks `keys` densely in sorted order.
fn rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().copied().max().map_or(0, |m| m + 1)
}

/// Iterates neighborhood refinement from `colors` until the partition stops
/// splitting. Each atom's signature is its colour plus the sorted multiset of
/// `(bond order, neighbor colour)`.
pub fn refine(m: &Molecule, mut colors: Vec<usize>) -> Vec<usize> {
    let n = m.n_atoms();
    loop {
        let sigs: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u8, usize)> = m.bonds.neighbors(i).map(|j| (m.bonds.order(i, j), colors[j])).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = rank(&sigs);
        if class_count(&next) == class_count(&colors) {
            return next;
        }
        colors = next;
    }
}

fn initial_colors(m: &Molecule) -> Vec<usize> {
    let keys: Vec<(usize, i64)> = m.atoms.iter().zip(&m.charges).map(|(&a, &c)| (a, c)).collect();
    rank(&keys)
}

/// Atom labels and bond orders listed in the order given by a discrete
/// colouring.
fn certificate(m: &Molecule, colors: &[usize]) -> Vec<i64> {
    let n = m.n_atoms();
    let mut order = vec![0usize; n];
    for (i, &c) in colors.iter().enumerate() {
        order[c] = i;
    }
    let mut cert = Vec::with_capacity(2 * n + n * n / 2);
    for &i in &order {
        cert.push(m.atoms[i] as i64);
        cert.push(m.charges[i]);
    }
    for a in 0..n {
        for b in a + 1..n {
            cert.push(m.bonds.order(order[a], order[b]) as i64);
        }
    }
    cert
}

/// Same bond order to every third atom.
fn twins(m: &Molecule, u: usize, v: usize) -> bool {
    (0..m.n_atoms()).all(|w| w == u || w == v || m.bonds.order(u, w) == m.bonds.order(v, w))
}

fn search(m: &Molecule, colors: Vec<usize>, best: &mut Option<Vec<i64>>) {
    let n = m.n_atoms();
    let classes = class_count(&colors);
    if classes == n {
        let cert = certificate(m, &colors);
        if best.as_ref().is_none_or(|b| cert < *b) {
            *best = Some(cert);
        }
        return;
    }
    // first non-singleton cell in colour order
    let mut sizes = vec![0usize; classes];
    for &c in &colors {
        sizes[c] += 1;
    }
    let target = (0..classes).find(|&c| sizes[c] > 1).expect("a cell with several atoms");
    let mut tried: Vec<usize> = Vec::new();
    for v in (0..n).filter(|&v| colors[v] == target) {
        // swapping twins is an automorphism fixing the colouring, so their
        // branches give the same certificates
        if tried.iter().any(|&u| twins(m, u, v)) {
            continue;
        }
        tried.push(v);
        let split: Vec<usize> = (0..n)
            .map(|u| 2 * colors[u] + usize::from(colors[u] == target && u != v))
            .collect();
        search(m, refine(m, rank(&split)), best);
    }
}

/// Relabeling-invariant canonical certificate of the bond graph with atom
/// types and charges.
pub fn canonical_form(m: &Molecule) -> Vec<i64> {
    if m.n_atoms() == 0 {
        return Vec::new();
    }
    let mut best = None;
    search(m, refine(m, initial_colors(m)), &mut best);
    best.expect("search reaches a leaf")
}

/// Hex sha256 of the canonical form together with the atom count.
pub fn canonical_hash(m: &Molecule) -> String {
    let mut h = Sha256::new();
    h.update((m.n_atoms() as u64).to_le_bytes());
    for v in canonical_form(m) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
