//! Seedable, splittable random source shared by every stochastic routine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates (seed, stream) pairs before seeding ChaCha.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named seed from which independent child streams are derived by label.
///
/// `SeedStream::new(s).split(k)` is a pure function of `(s, k)`, so any consumer can
/// regenerate exactly the draws another consumer made.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self, stream: u64) -> SeedStream {
        SeedStream { seed: mix(self.seed ^ mix(stream.wrapping_add(0x5EED))) }
    }

    /// Child stream keyed by a string label.
    pub fn split_named(&self, label: &str) -> SeedStream {
        let h = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        self.split(h)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.seed))
    }
}
