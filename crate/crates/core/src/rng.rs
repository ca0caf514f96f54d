//! Counter-based random substreams.
//!
//! Every consumer of randomness derives its generator from a key tuple
//! `(seed, domain, major, minor)` instead of sharing a sequential stream.
//! Results therefore do not depend on scheduling or on how work is split
//! between threads.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

/// Generator type handed out for every substream.
pub type StreamRng = Pcg64Mcg;

/// Separates the independent users of one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ObservedJitter = 1,
    NullIteration = 2,
    HistogramJitter = 3,
    SynthStation = 4,
    FraudSelection = 5,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key for the substream `(seed, domain, major, minor)`.
#[inline]
pub fn substream_key(seed: u64, domain: Domain, major: u64, minor: u64) -> u64 {
    let mut k = mix64(seed ^ GOLDEN.wrapping_mul(domain as u64));
    k = mix64(k ^ major.wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03));
    mix64(k ^ minor.wrapping_add(1).wrapping_mul(0xaef1_7502_108e_f2d9))
}

#[inline]
pub fn substream(seed: u64, domain: Domain, major: u64, minor: u64) -> StreamRng {
    StreamRng::seed_from_u64(substream_key(seed, domain, major, minor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashSet;

    #[test]
    fn same_key_same_stream() {
        let mut a = substream(7, Domain::NullIteration, 3, 9);
        let mut b = substream(7, Domain::NullIteration, 3, 9);
        for _ in 0..8 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn keys_do_not_collide_on_a_grid() {
        let mut seen = HashSet::new();
        for seed in 0..4 {
            for domain in [Domain::ObservedJitter, Domain::NullIteration, Domain::HistogramJitter] {
                for major in 0..50 {
                    for minor in 0..50 {
                        assert!(seen.insert(substream_key(seed, domain, major, minor)));
                    }
                }
            }
        }
    }
}
