//! Parameter-free inputs derived from coordinates and bond structure.

use crate::molecule::{shortest_paths, BondGraph, GraphFeatures, GRAPH_FEATURE_WIDTH};
use crate::tensor::Tensor;

/// Exponential-normal radial basis with centers spaced evenly on
/// `[exp(-cutoff), 1]` and a shared width.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialBasis {
    centers: Vec<f64>,
    beta: f64,
}

impl RadialBasis {
    pub fn new(count: usize, cutoff: f64) -> Self {
        let lo = (-cutoff).exp();
        let centers = if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|i| lo + (1.0 - lo) * i as f64 / (count - 1) as f64)
                .collect()
        };
        let beta = (2.0 / count as f64 * (1.0 - lo)).powi(-2);
        Self { centers, beta }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, d: f64) -> Vec<f64> {
        let e = (-d).exp();
        self.centers
            .iter()
            .map(|mu| (-self.beta * (e - mu).powi(2)).exp())
            .collect()
    }
}

/// `½(cos(πd/cutoff) + 1)` inside the cutoff, zero beyond.
pub fn cosine_cutoff(d: f64, cutoff: f64) -> f64 {
    if d < cutoff {
        0.5 * ((std::f64::consts::PI * d / cutoff).cos() + 1.0)
    } else {
        0.0
    }
}

/// Pairwise distance features. All are rotation and translation invariant
/// except `directions`, which rotates with the frame.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub distances: Vec<f64>,
    /// `[n, n, k]` radial basis of each distance.
    pub rbf: Tensor,
    /// `[n, n, 1]` cutoff weight; bonded pairs get 1 when a bond graph is given.
    pub cutoff: Tensor,
    /// `[n, n, 3, 1]` unit vectors from atom i to atom j; zero for coincident atoms.
    pub directions: Tensor,
    /// `[n, n, 1]` averaging weights over each atom's in-range neighbors (j ≠ i).
    pub neighbor_mean: Tensor,
}

impl Geometry {
    pub fn new(x: &Tensor, basis: &RadialBasis, cutoff: f64, bonds: Option<&BondGraph>) -> Self {
        let n = x.shape()[0];
        let k = basis.centers().len();
        let mut distances = vec![0.0; n * n];
        let mut rbf = Vec::with_capacity(n * n * k);
        let mut cut = vec![0.0; n * n];
        let mut dirs = vec![0.0; n * n * 3];
        for i in 0..n {
            for j in 0..n {
                let delta = [0, 1, 2].map(|a| x.get(&[j, a]) - x.get(&[i, a]));
                let d = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                distances[i * n + j] = d;
                rbf.extend(basis.eval(d));
                let bonded = bonds.is_some_and(|g| g.bonded(i, j));
                cut[i * n + j] = if bonded { 1.0 } else { cosine_cutoff(d, cutoff) };
                if d > 0.0 {
                    for a in 0..3 {
                        dirs[(i * n + j) * 3 + a] = delta[a] / d;
                    }
                }
            }
        }
        let mut mean = vec![0.0; n * n];
        for i in 0..n {
            let count = (0..n).filter(|&j| j != i && cut[i * n + j] > 0.0).count();
            for j in 0..n {
                if j != i && cut[i * n + j] > 0.0 {
                    mean[i * n + j] = 1.0 / count as f64;
                }
            }
        }
        Self {
            distances,
            rbf: Tensor::new([n, n, k], rbf).expect("rbf shape"),
            cutoff: Tensor::new([n, n, 1], cut).expect("cutoff shape"),
            directions: Tensor::new([n, n, 3, 1], dirs).expect("direction shape"),
            neighbor_mean: Tensor::new([n, n, 1], mean).expect("mean shape"),
        }
    }
}

/// Inputs derived from the bond structure.
#[derive(Debug, Clone)]
pub struct Structure {
    /// `[n, n, b]` one-hot bond categories.
    pub onehot: Tensor,
    /// `[n, 1]` bond counts.
    pub degree: Tensor,
    /// `[n, n, 1]` averaging weights over bonded neighbors.
    pub neighbor_mean: Tensor,
    /// `[n·n, max_spd + 2]` one-hot hop-distance bucket; the last bucket is
    /// "unreachable".
    pub spd_onehot: Tensor,
    /// `[n·n, max_path · b]` bond categories along the shortest routes from
    /// `i` to `j`, averaged over all such routes, both walking directions and
    /// the used length.
    pub path_edges: Tensor,
    /// `[1, 13]` graph descriptors.
    pub graph: Tensor,
}

/// Molecular weights are divided by this before entering the network.
pub const WEIGHT_SCALE: f64 = 100.0;

impl Structure {
    pub fn new(g: &BondGraph, atom_weights: &[f64], categories: usize, max_spd: usize, max_path: usize) -> Self {
        let n = g.n();
        let mut onehot = Tensor::zeros([n, n, categories]);
        for i in 0..n {
            for j in 0..n {
                let c = (g.order(i, j) as usize).min(categories - 1);
                onehot.set(&[i, j, c], 1.0);
            }
        }
        let deg: Vec<f64> = (0..n).map(|i| g.neighbors(i).count() as f64).collect();
        let mut nbr = vec![0.0; n * n];
        for i in 0..n {
            for j in g.neighbors(i) {
                nbr[i * n + j] = 1.0 / deg[i];
            }
        }
        let buckets = max_spd + 2;
        let sp = shortest_paths(g);
        let mut spd = Tensor::zeros([n * n, buckets]);
        let mut path = Tensor::zeros([n * n, max_path * categories]);
        for i in 0..n {
            for j in 0..n {
                let row = i * n + j;
                match sp.distance(i, j) {
                    Some(d) => spd.set(&[row, d.min(max_spd)], 1.0),
                    None => spd.set(&[row, buckets - 1], 1.0),
                }
                let Some(d) = sp.distance(i, j) else { continue };
                let used = d.min(max_path);
                let total = sp.count(i, j);
                // every shortest route from i to j, weighted by its share of the routes
                for a in 0..n {
                    let Some(pos) = sp.distance(i, a) else { continue };
                    if pos >= used {
                        continue;
                    }
                    for b in g.neighbors(a) {
                        if sp.distance(i, b) != Some(pos + 1) || sp.distance(b, j) != Some(d - pos - 1) {
                            continue;
                        }
                        let c = (g.order(a, b) as usize).min(categories - 1);
                        let share = sp.count(i, a) * sp.count(b, j) / total;
                        let slot = [row, pos * categories + c];
                        path.set(&slot, path.get(&slot) + share / used as f64);
                    }
                }
            }
        }
        // bonds are undirected, so average the two walking directions
        let width = max_path * categories;
        let path = Tensor::from_fn([n * n, width], |k| {
            let (row, col) = (k / width, k % width);
            let (i, j) = (row / n, row % n);
            0.5 * (path.get(&[row, col]) + path.get(&[j * n + i, col]))
        });
        let mut feats = GraphFeatures::compute(g, atom_weights).to_vector();
        feats[GRAPH_FEATURE_WIDTH - 1] /= WEIGHT_SCALE;
        Self {
            onehot,
            degree: Tensor::new([n, 1], deg).expect("degree shape"),
            neighbor_mean: Tensor::new([n, n, 1], nbr).expect("neighbor shape"),
            spd_onehot: spd,
            path_edges: path,
            graph: Tensor::new([1, GRAPH_FEATURE_WIDTH], feats.to_vec()).expect("graph shape"),
        }
    }
}
