//! Deterministic parameter initialization.
//!
//! Each parameter tensor gets its own xoshiro-family generator seeded from
//! the master seed combined with an FNV-1a hash of the parameter's canonical
//! name. Two models sharing a name prefix (the trunk of the x-NN and control
//! models) therefore initialize those parameters identically for the same
//! master seed, independent of what else either model contains.

use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autodiff::Tensor;

fn fnv1a64(s: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in s.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub(crate) fn rng_for(master_seed: u64, name: &str) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(master_seed ^ fnv1a64(name))
}

/// Weight of shape rows x cols, uniform in +-sqrt(6 / fan_in) with
/// fan_in = rows (the input width of the affine map).
pub(crate) fn init_weight(master_seed: u64, name: &str, rows: usize, cols: usize) -> Tensor {
    let mut rng = rng_for(master_seed, name);
    let bound = (6.0 / rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let mut t = Tensor::new(rows, cols, data).expect("consistent shape");
    t.requires_grad = true;
    t
}

pub(crate) fn zero_bias(cols: usize) -> Tensor {
    let mut t = Tensor::zeros(1, cols);
    t.requires_grad = true;
    t
}
