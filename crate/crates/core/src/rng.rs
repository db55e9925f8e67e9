//! Seed derivation for reproducible parallel work.
//!
//! Every parallel task (fold, tree, bootstrap resample, replicate) gets its
//! own generator whose seed is a pure function of the parent seed and the
//! task index, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep sibling streams derived from the same parent apart.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Stream {
    Folds = 1,
    FoldModels = 2,
    Trees = 3,
    Bootstrap = 4,
    Replicate = 5,
    Pipeline = 6,
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child task of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix(parent
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(mix(index.wrapping_mul(0xd6e8_feb8_6659_fd93))))
}

pub(crate) fn child_seed(parent: u64, stream: Stream, index: u64) -> u64 {
    derive_seed(derive_seed(parent, stream as u64), index)
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_differ_and_repeat() {
        let a = child_seed(7, Stream::Trees, 0);
        let b = child_seed(7, Stream::Trees, 1);
        let c = child_seed(7, Stream::Folds, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, child_seed(7, Stream::Trees, 0));
    }
}
