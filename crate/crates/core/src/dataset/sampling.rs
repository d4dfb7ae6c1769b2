use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed plus stream id for a ChaCha8 generator.
///
/// ChaCha is counter based, so each `(seed, stream)` pair addresses an
/// independent keystream and the draws do not depend on platform or on how
/// work is scheduled across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        RngSpec { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        RngSpec { stream, ..self }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Child spec for a labelled sub-task. Children of distinct labels, and
    /// children of distinct parents, address disjoint keystreams.
    pub fn child(&self, label: u64) -> RngSpec {
        RngSpec {
            seed: splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0xA076_1D64_78BD_642F))),
            stream: label,
        }
    }
}

/// Reusable partial Fisher-Yates sampler over `0..n`.
///
/// The index permutation persists between draws; a partial shuffle of any
/// starting permutation still yields every size-`s` subset with equal
/// probability.
#[derive(Debug, Clone)]
pub struct Subsampler {
    idx: Vec<usize>,
}

impl Subsampler {
    pub fn new(n: usize) -> Self {
        Subsampler {
            idx: (0..n).collect(),
        }
    }

    /// Draws `s` distinct indices; the returned slice is in draw order.
    pub fn draw<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> Result<&[usize]> {
        let n = self.idx.len();
        if s == 0 || s > n {
            return Err(Error::pre(format!("subsample size {s} outside [1, {n}]")));
        }
        for i in 0..s {
            // u64 range keeps the draw sequence identical on 32- and 64-bit targets
            let j = rng.gen_range(i as u64..n as u64) as usize;
            self.idx.swap(i, j);
        }
        Ok(&self.idx[..s])
    }
}

/// `s` distinct indices from `0..n`, uniform over all `C(n, s)` subsets.
pub fn subsample_without_replacement(n: usize, s: usize, rng: &RngSpec) -> Result<Vec<usize>> {
    let mut sampler = Subsampler::new(n);
    let mut r = rng.rng();
    sampler.draw(s, &mut r).map(<[usize]>::to_vec)
}
