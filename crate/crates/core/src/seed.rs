//! Deterministic seed derivation.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, tag, index)`; distinct tags give independent streams.
pub fn derive(parent: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ mix64(tag)).wrapping_add(index.wrapping_mul(GOLDEN)))
}

pub mod tags {
    pub const RUN: u64 = 1;
    pub const TRAIN_BATCH: u64 = 2;
    pub const EVAL_BATCH: u64 = 3;
    pub const INIT: u64 = 4;
    pub const MARKOVIAN: u64 = 5;
    pub const ERRORS: u64 = 6;
    pub const RATE: u64 = 7;
}
