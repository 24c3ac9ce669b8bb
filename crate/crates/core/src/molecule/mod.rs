//! Molecules as (atom features, bond categories, coordinates), plus dataset
//! ingestion, a synthetic generator and structural graph features.

mod graph;
mod jsonl;
mod spectral;
mod synthetic;

pub use graph::{
    components, cycle_counts, degrees, graph_features, shortest_paths, BondGraph, GraphFeatures, ShortestPaths,
    GRAPH_FEATURE_WIDTH,
};
pub use jsonl::{load_dataset, parse_dataset, read_dataset, to_jsonl, write_dataset, Record};
pub use spectral::{jacobi_eigenvalues, normalized_laplacian};
pub use synthetic::make_synthetic_dataset;

use thiserror::Error;

use crate::tensor::Tensor;

/// Number of bond categories: none, single, double, triple.
pub const BOND_CATEGORIES: usize = 4;

#[derive(Debug, Error)]
pub enum MoleculeError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown atom type {symbol:?}")]
    UnknownAtom { line: usize, symbol: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomKind {
    pub symbol: &'static str,
    pub weight: f64,
    pub valency: u32,
}

/// Element lookup used for valency checks and molecular weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomTable {
    kinds: Vec<AtomKind>,
}

impl Default for AtomTable {
    fn default() -> Self {
        let kind = |symbol, weight, valency| AtomKind { symbol, weight, valency };
        Self {
            kinds: vec![
                kind("H", 1.008, 1),
                kind("C", 12.011, 4),
                kind("N", 14.007, 3),
                kind("O", 15.999, 2),
                kind("F", 18.998, 1),
            ],
        }
    }
}

impl AtomTable {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, index: usize) -> &AtomKind {
        &self.kinds[index]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.kinds.iter().position(|k| k.symbol == symbol)
    }

    pub fn symbol(&self, index: usize) -> &'static str {
        self.kinds[index].symbol
    }

    pub fn valency(&self, index: usize) -> u32 {
        self.kinds[index].valency
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.kinds[index].weight
    }
}

/// How atom features are laid out in H: a one-hot type block followed by
/// integer-valued columns (charge by default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureLayout {
    pub types: usize,
    pub integers: usize,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        Self { types: 5, integers: 1 }
    }
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.types + self.integers
    }
}

/// A molecule with explicit atoms, a symmetric bond-order matrix and
/// optional zero-centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub atoms: Vec<usize>,
    pub charges: Vec<i64>,
    pub bonds: BondGraph,
    pub coords: Vec<[f64; 3]>,
    pub has_2d: bool,
    pub has_3d: bool,
}

impl Molecule {
    /// Builds a molecule from atom indices and `(i, j, order)` bonds. Coordinates,
    /// when given, are centered.
    pub fn new(atoms: Vec<usize>, bonds: &[(usize, usize, u8)], coords: Option<Vec<[f64; 3]>>) -> Self {
        let n = atoms.len();
        let mut graph = BondGraph::empty(n);
        for &(i, j, order) in bonds {
            graph.set(i, j, order);
        }
        let has_3d = coords.is_some();
        let mut coords = coords.unwrap_or_else(|| vec![[0.0; 3]; n]);
        center_coords(&mut coords);
        Self {
            charges: vec![0; n],
            atoms,
            bonds: graph,
            coords,
            has_2d: true,
            has_3d,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Atom feature matrix H (n × layout width).
    pub fn features(&self, layout: FeatureLayout) -> Tensor {
        let d = layout.width();
        let mut h = Tensor::zeros([self.n_atoms(), d]);
        for (i, &a) in self.atoms.iter().enumerate() {
            if a < layout.types {
                h.set(&[i, a], 1.0);
            }
            if layout.integers > 0 {
                h.set(&[i, layout.types], self.charges[i] as f64);
            }
        }
        h
    }

    /// One-hot edge tensor E (n × n × b).
    pub fn edge_onehot(&self, categories: usize) -> Tensor {
        let n = self.n_atoms();
        let mut e = Tensor::zeros([n, n, categories]);
        for i in 0..n {
            for j in 0..n {
                e.set(&[i, j, self.bonds.order(i, j) as usize], 1.0);
            }
        }
        e
    }

    /// Coordinate matrix X (n × 3).
    pub fn coord_tensor(&self) -> Tensor {
        Tensor::from_fn([self.n_atoms(), 3], |k| self.coords[k / 3][k % 3])
    }

    pub fn bond_list(&self) -> Vec<(usize, usize, u8)> {
        self.bonds.bond_list()
    }

    pub fn molecular_weight(&self, table: &AtomTable) -> f64 {
        self.atoms.iter().map(|&a| table.weight(a)).sum()
    }

    /// Applies the permutation `perm`, where new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_atoms();
        let mut bonds = BondGraph::empty(n);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    bonds.set(a, b, self.bonds.order(perm[a], perm[b]));
                }
            }
        }
        Self {
            atoms: perm.iter().map(|&p| self.atoms[p]).collect(),
            charges: perm.iter().map(|&p| self.charges[p]).collect(),
            bonds,
            coords: perm.iter().map(|&p| self.coords[p]).collect(),
            has_2d: self.has_2d,
            has_3d: self.has_3d,
        }
    }
}

/// Per-axis mean of a coordinate list.
pub fn center_of_gravity(coords: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    if coords.is_empty() {
        return c;
    }
    for p in coords {
        for ax in 0..3 {
            c[ax] += p[ax];
        }
    }
    c.map(|v| v / coords.len() as f64)
}

/// Subtracts the center of gravity. Already-centered input (every axis mean
/// within 1e-12) is left untouched, which makes the operation idempotent
/// bit-for-bit.
pub fn center_coords(coords: &mut [[f64; 3]]) {
    let c = center_of_gravity(coords);
    if c.iter().all(|v| v.abs() <= 1e-12) {
        return;
    }
    for p in coords.iter_mut() {
        for ax in 0..3 {
            p[ax] -= c[ax];
        }
    }
}
