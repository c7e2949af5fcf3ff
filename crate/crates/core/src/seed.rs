//! Deterministic seed derivation.
//!
//! `derive(parent, index) = splitmix64(parent ^ splitmix64(index + GOLDEN))`.
//! A root seed yields per-sequence seeds `derive(root, sequence)`, which in
//! turn yield per-grasp and per-chain seeds. The function is fixed: changing
//! it changes every generated dataset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(GOLDEN)))
}

/// Named sub-streams so different consumers of one seed never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Sequence = 0x5345_5155,
    ObjectScale = 0x5343_414c,
    Plan = 0x504c_414e,
    Split = 0x5350_4c54,
    Surface = 0x5355_5246,
    OsSelect = 0x4f53_454c,
}

pub fn stream(parent: u64, stream: Stream) -> u64 {
    derive(parent, stream as u64)
}

pub fn sequence_seed(root: u64, sequence: usize) -> u64 {
    derive(stream(root, Stream::Sequence), sequence as u64)
}

pub fn grasp_seed(sequence_seed: u64, grasp: usize) -> u64 {
    derive(sequence_seed, grasp as u64)
}

pub fn chain_seed(grasp_seed: u64, chain: usize) -> u64 {
    derive(grasp_seed, 0x4348_0000 + chain as u64)
}

pub fn rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}
