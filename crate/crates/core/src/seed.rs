//! Stable sub-seed derivation.
//!
//! Every random stage draws from its own ChaCha stream whose seed is a pure
//! function of the master seed and a path of labels, so results do not
//! depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A component of a seed derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Part<'a> {
    fn from(s: &'a str) -> Self {
        Part::Str(s)
    }
}

impl<'a> From<&'a String> for Part<'a> {
    fn from(s: &'a String) -> Self {
        Part::Str(s.as_str())
    }
}

macro_rules! int_part {
    ($($t:ty),*) => {$(
        impl From<$t> for Part<'_> {
            fn from(v: $t) -> Self {
                Part::Int(v as u64)
            }
        }
    )*};
}
int_part!(u64, u32, usize, i32);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `master` and a label path.
pub fn derive(master: u64, path: &[Part<'_>]) -> u64 {
    let mut h = splitmix64(master);
    for part in path {
        let v = match part {
            Part::Str(s) => fnv1a(s.as_bytes()),
            Part::Int(i) => splitmix64(*i ^ 0x5851_F42D_4C95_7F2D),
        };
        h = splitmix64(h ^ v);
    }
    h
}

/// Convenience: `derive` with heterogeneous parts.
#[macro_export]
macro_rules! subseed {
    ($master:expr $(, $part:expr)* $(,)?) => {
        $crate::seed::derive($master, &[$($crate::seed::Part::from($part)),*])
    };
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
