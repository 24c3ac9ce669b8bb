//! Named random substreams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

pub const DATA: &str = "data";
pub const NOISE: &str = "noise";
pub const DROPOUT: &str = "dropout";
pub const SAMPLING: &str = "sampling";

/// Generator for stream `name` of run `seed`.
pub fn substream(seed: u64, name: &str) -> Rng {
    substream_indexed(seed, name, 0)
}

/// Generator for item `index` of stream `name`, e.g. one per sampled molecule.
pub fn substream_indexed(seed: u64, name: &str, index: u64) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    Rng::from_seed(key)
}

/// Standard normal draw.
pub fn normal(rng: &mut Rng) -> f64 {
    use rand::Rng as _;
    rng.sample(rand_distr::StandardNormal)
}

/// Index drawn from unnormalized non-negative weights; falls back to the last
/// positive weight under rounding.
pub fn categorical(rng: &mut Rng, weights: &[f64]) -> usize {
    use rand::Rng as _;
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = k;
            if u < w {
                return k;
            }
            u -= w;
        }
    }
    last
}
