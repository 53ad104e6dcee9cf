//! Seeded random streams shared by the generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per counter value in a keyed stream.
const WORDS_PER_CELL: u32 = 8;

/// Stream tags keep independent consumers of one seed from sharing draws.
pub(crate) mod stream {
    pub const SYNTH: u64 = 1;
    pub const FRAME_OCCLUSION: u64 = 2;
    pub const RANDOM_OCCLUSION: u64 = 3;
    pub const JITTER: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
}

/// SplitMix64 finaliser, used to derive child seeds.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Counter-based generator positioned at `counter`. Two cells with distinct
/// counters never share words unless a single cell consumes more than
/// `WORDS_PER_CELL * 16` words.
pub(crate) fn keyed(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = seeded(seed, stream);
    rng.set_word_pos((counter as u128) << (WORDS_PER_CELL + 4));
    rng
}
