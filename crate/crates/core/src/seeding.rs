//! Stable seed derivation.
//!
//! Every randomized stage derives its generator from the run seed plus a list
//! of string tags, so adding an embedding or a hard prompt never shifts the
//! random stream of another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, tags: &[&str]) -> u64 {
    let mut hash = FNV_OFFSET;
    for tag in tags {
        hash = fnv1a(tag.as_bytes(), hash);
        // separator so ["ab","c"] and ["a","bc"] differ
        hash = fnv1a(&[0xff], hash);
    }
    splitmix64(seed ^ splitmix64(hash))
}

pub(crate) fn rng_for(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
