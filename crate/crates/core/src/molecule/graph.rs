use std::collections::VecDeque;

use super::spectral::{jacobi_eigenvalues, normalized_laplacian};
use super::{AtomTable, Molecule};

/// Width of the graph-level feature vector.
pub const GRAPH_FEATURE_WIDTH: usize = 13;

/// Symmetric bond-order matrix; order 0 means no bond.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BondGraph {
    n: usize,
    orders: Vec<u8>,
}

impl BondGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            orders: vec![0; n * n],
        }
    }

    /// From an n×n row-major matrix of edge categories; the upper triangle wins.
    pub fn from_categories(n: usize, categories: &[usize]) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                g.set(i, j, categories[i * n + j] as u8);
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self, i: usize, j: usize) -> u8 {
        self.orders[i * self.n + j]
    }

    /// Sets a bond symmetrically. The diagonal is always "no bond".
    pub fn set(&mut self, i: usize, j: usize, order: u8) {
        if i == j {
            return;
        }
        self.orders[i * self.n + j] = order;
        self.orders[j * self.n + i] = order;
    }

    pub fn bonded(&self, i: usize, j: usize) -> bool {
        self.order(i, j) > 0
    }

    /// Bonded neighbors of `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.bonded(i, j))
    }

    /// `(i, j, order)` for every bond with `i < j`.
    pub fn bond_list(&self) -> Vec<(usize, usize, u8)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let o = self.order(i, j);
                if o > 0 {
                    out.push((i, j, o));
                }
            }
        }
        out
    }

    /// Sum of bond orders at each atom.
    pub fn valence_sums(&self) -> Vec<u32> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.order(i, j) as u32).sum())
            .collect()
    }

    pub fn categories(&self) -> Vec<usize> {
        self.orders.iter().map(|&o| o as usize).collect()
    }
}

/// Bond count per atom (in- and out-degree coincide for undirected bonds).
pub fn degrees(g: &BondGraph) -> Vec<usize> {
    (0..g.n()).map(|i| g.neighbors(i).count()).collect()
}

pub fn components(g: &BondGraph) -> usize {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// Number of simple cycles of length 3, 4, 5 and 6.
pub fn cycle_counts(g: &BondGraph) -> [usize; 4] {
    fn walk(g: &BondGraph, start: usize, u: usize, depth: usize, on_path: &mut [bool], counts: &mut [usize; 4]) {
        for v in g.neighbors(u) {
            if v == start && depth >= 3 {
                counts[depth - 3] += 1;
            } else if v > start && !on_path[v] && depth < 6 {
                on_path[v] = true;
                walk(g, start, v, depth + 1, on_path, counts);
                on_path[v] = false;
            }
        }
    }
    let mut counts = [0usize; 4];
    let mut on_path = vec![false; g.n()];
    // each cycle is rooted at its smallest vertex and traversed in both directions
    for s in 0..g.n() {
        on_path[s] = true;
        walk(g, s, s, 1, &mut on_path, &mut counts);
        on_path[s] = false;
    }
    counts.map(|c| c / 2)
}

/// Hop distances, shortest-path counts, and one canonical shortest path per
/// connected pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPaths {
    n: usize,
    dist: Vec<Option<usize>>,
    counts: Vec<f64>,
    paths: Vec<Vec<(usize, usize)>>,
}

impl ShortestPaths {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `None` for disconnected pairs.
    pub fn distance(&self, i: usize, j: usize) -> Option<usize> {
        self.dist[i * self.n + j]
    }

    /// Number of distinct shortest paths; zero for disconnected pairs, one on
    /// the diagonal.
    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.n + j]
    }

    /// Edges along the canonical path, walked from `min(i, j)` to `max(i, j)`.
    pub fn path(&self, i: usize, j: usize) -> &[(usize, usize)] {
        &self.paths[i * self.n + j]
    }
}

/// BFS from every source, visiting neighbors in ascending order so the first
/// discoverer of a vertex is its parent. The path of a pair is the one found
/// from its smaller endpoint, which makes both orientations agree.
pub fn shortest_paths(g: &BondGraph) -> ShortestPaths {
    let n = g.n();
    let mut dist = vec![None; n * n];
    let mut counts = vec![0.0; n * n];
    let mut paths = vec![Vec::new(); n * n];
    for s in 0..n {
        let mut parent = vec![usize::MAX; n];
        let mut d = vec![None; n];
        let mut c = vec![0.0; n];
        d[s] = Some(0);
        c[s] = 1.0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbors(u) {
                if d[v].is_none() {
                    d[v] = Some(d[u].unwrap() + 1);
                    parent[v] = u;
                    queue.push_back(v);
                }
                if d[v] == Some(d[u].unwrap() + 1) {
                    c[v] += c[u];
                }
            }
        }
        for t in 0..n {
            dist[s * n + t] = d[t];
            counts[s * n + t] = c[t];
            if t > s && d[t].is_some() {
                let mut edges = Vec::new();
                let mut cur = t;
                while cur != s {
                    edges.push((parent[cur], cur));
                    cur = parent[cur];
                }
                edges.reverse();
                paths[t * n + s] = edges.clone();
                paths[s * n + t] = edges;
            }
        }
    }
    ShortestPaths {
        n,
        dist,
        counts,
        paths,
    }
}

/// Structural descriptors used by the graph-level encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFeatures {
    /// Cycles of length 3..=6, then connected components.
    pub h_struct: [f64; 5],
    /// Zero-eigenvalue multiplicity, then the first five nonzero eigenvalues.
    pub h_spect: [f64; 6],
    /// Mean bond-order sum per atom and total molecular weight.
    pub h_mol: [f64; 2],
    pub in_deg: Vec<usize>,
    pub out_deg: Vec<usize>,
    pub spd: Vec<Option<usize>>,
}

impl GraphFeatures {
    /// `atom_weights[i]` is the mass of atom `i`.
    pub fn compute(g: &BondGraph, atom_weights: &[f64]) -> Self {
        let n = g.n();
        let cycles = cycle_counts(g);
        let h_struct = [
            cycles[0] as f64,
            cycles[1] as f64,
            cycles[2] as f64,
            cycles[3] as f64,
            components(g) as f64,
        ];
        let eig = jacobi_eigenvalues(&normalized_laplacian(g), n);
        let zero = eig.iter().filter(|v| v.abs() < 1e-8).count();
        let mut h_spect = [0.0; 6];
        h_spect[0] = zero as f64;
        for (slot, v) in h_spect[1..].iter_mut().zip(eig.iter().filter(|v| v.abs() >= 1e-8)) {
            *slot = *v;
        }
        let sums = g.valence_sums();
        let mean_valence = if n == 0 {
            0.0
        } else {
            sums.iter().map(|&s| s as f64).sum::<f64>() / n as f64
        };
        let h_mol = [mean_valence, atom_weights.iter().sum()];
        let deg = degrees(g);
        let sp = shortest_paths(g);
        Self {
            h_struct,
            h_spect,
            h_mol,
            in_deg: deg.clone(),
            out_deg: deg,
            spd: sp.dist,
        }
    }

    pub fn to_vector(&self) -> [f64; GRAPH_FEATURE_WIDTH] {
        let mut v = [0.0; GRAPH_FEATURE_WIDTH];
        v[..5].copy_from_slice(&self.h_struct);
        v[5..11].copy_from_slice(&self.h_spect);
        v[11..].copy_from_slice(&self.h_mol);
        v
    }
}

pub fn graph_features(m: &Molecule, table: &AtomTable) -> GraphFeatures {
    let weights: Vec<f64> = m.atoms.iter().map(|&a| table.weight(a)).collect();
    GraphFeatures::compute(&m.bonds, &weights)
}
