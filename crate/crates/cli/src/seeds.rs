//! Seed derivation. Every random stream is a pure function of the master
//! seed, a stream tag and an index path:
//!
//! `seed = mix(mix(master ^ fnv1a(tag)) ^ i_1) ... ^ i_k)`, with `mix` the
//! SplitMix64 finalizer.
//!
//! Streams used by the harness:
//!
//! | tag        | indices             | drives                              |
//! |------------|---------------------|-------------------------------------|
//! | `design`   | replicate           | true locations and urban flags      |
//! | `field`    | replicate           | the Gaussian field                  |
//! | `response` | replicate           | binomial / Gaussian responses       |
//! | `jitter`   | replicate, cluster  | one cluster's displacement          |
//! | `predict`  | replicate, model    | posterior draws (0 = S, 1 = J)      |

use serde::{Deserialize, Serialize};

pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn derive(master: u64, tag: &str, indices: &[u64]) -> u64 {
    indices.iter().fold(mix(master ^ fnv1a(tag)), |s, &i| mix(s ^ i))
}

/// Per-replicate seeds, recorded in the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateSeeds {
    pub replicate: usize,
    pub design: u64,
    pub field: u64,
    pub response: u64,
    pub predict_standard: u64,
    pub predict_jittered: u64,
}

impl ReplicateSeeds {
    pub fn new(master: u64, replicate: usize) -> Self {
        let r = replicate as u64;
        Self {
            replicate,
            design: derive(master, "design", &[r]),
            field: derive(master, "field", &[r]),
            response: derive(master, "response", &[r]),
            predict_standard: derive(master, "predict", &[r, 0]),
            predict_jittered: derive(master, "predict", &[r, 1]),
        }
    }

    pub fn jitter(master: u64, replicate: usize, cluster: usize) -> u64 {
        derive(master, "jitter", &[replicate as u64, cluster as u64])
    }
}
