//! Seed derivation. Every random task gets its own counter-based generator
//! keyed by the master seed and the task's coordinates, so results do not
//! depend on scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a parent seed together with a path of task coordinates.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix(parent), |acc, &k| mix(acc ^ mix(k.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

/// Stable numeric tag for a string label, used as a seed path component.
pub fn tag(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn task_rng(parent: u64, path: &[u64]) -> TaskRng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, path))
}
