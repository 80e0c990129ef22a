//! Dense tensors, a reverse-mode tape, and first-order optimizers.

pub mod gradcheck;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheck};
pub use nn::{collect_grads, BoundNet, Net};
pub use optim::{Algo, OptimConfig, Optimizer, Param};
pub use tape::{logistic, Activation, Tape, Var};
pub use tensor::{norm, squared_distance, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for a named stream under `parent`. Stable across runs and
/// independent of how many other streams exist.
pub fn derive_seed(parent: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, then mixed with the parent seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(parent) ^ h)
}
