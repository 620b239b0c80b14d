//! Counter-based random streams.
//!
//! A stream is addressed by `(master seed, purpose, index)`. Each stream is a
//! pure function from a 64-bit counter to a 64-bit output, so the `k`-th draw
//! of any stream can be computed directly without generating draws `0..k`.
//! This is what lets a single codebook row, or a single column of the pirate
//! copy, be regenerated in isolation, and what makes parallel runs
//! independent of the worker count.
//!
//! Construction follows the SplitMix64 family: the output is
//! `mix64(base + counter * gamma)` with a per-stream odd `gamma`, so two
//! streams never walk shifted copies of the same sequence.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a stream is used for. Distinct purposes never share streams even
/// under the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Secret bias vector, one stream per codebook.
    Bias,
    /// Codeword rows, one stream per user.
    Row,
    /// Coalition coin flips, one stream per forged copy.
    Forge,
    /// Per-trial sub-seeds in the simulator.
    Trial,
    /// Per-iteration draws in the parameter search.
    Search,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Bias => 0x6269_6173_0000_0001,
            Purpose::Row => 0x726f_7773_0000_0002,
            Purpose::Forge => 0x666f_7267_0000_0003,
            Purpose::Trial => 0x7472_6961_0000_0004,
            Purpose::Search => 0x7365_6172_0000_0005,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    base: u64,
    gamma: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        let root = mix64(mix64(seed) ^ purpose.tag());
        let id = mix64(root.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)));
        StreamKey {
            base: mix64(id ^ 0xD134_2543_DE82_EF95),
            gamma: mix_gamma(id),
        }
    }

    /// The `counter`-th output of this stream.
    #[inline(always)]
    pub fn at(&self, counter: u64) -> u64 {
        mix64(self.base.wrapping_add(counter.wrapping_mul(self.gamma)))
    }

    /// The `counter`-th output mapped to `[0, 1)` with 53 bits of resolution.
    #[inline(always)]
    pub fn unit_at(&self, counter: u64) -> f64 {
        to_unit(self.at(counter))
    }

    /// Derive a 64-bit seed for nested use (e.g. a simulator trial seeds a
    /// whole virtual codebook).
    pub fn derive_seed(&self, counter: u64) -> u64 {
        self.at(counter)
    }

    pub fn stream(self) -> Stream {
        Stream {
            key: self,
            counter: 0,
        }
    }
}

/// Sequential view over a [`StreamKey`].
#[derive(Clone, Debug)]
pub struct Stream {
    key: StreamKey,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        StreamKey::new(seed, purpose, index).stream()
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.key.at(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    /// Uniform on the open interval `(lo, hi)`; the lower end is excluded by
    /// resampling a zero draw.
    pub fn uniform_open(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let u = self.next_f64();
            if u > 0.0 {
                let v = lo + (hi - lo) * u;
                if v > lo && v < hi {
                    return v;
                }
            }
        }
    }
}

#[inline(always)]
pub fn to_unit(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Threshold `T` such that `P[U < T] = p` for `U` uniform on `u64`, up to
/// `2^-64` resolution.
#[inline]
pub fn bernoulli_threshold(p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        u64::MAX
    } else {
        // Saturating float-to-int cast.
        (p * 18_446_744_073_709_551_616.0) as u64
    }
}

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_gamma(z: u64) -> u64 {
    let mut g = mix64(z.wrapping_add(GOLDEN_GAMMA)) | 1;
    // Gammas with too few bit transitions give weakly mixed sequences.
    if (g ^ (g >> 1)).count_ones() < 24 {
        g ^= 0xAAAA_AAAA_AAAA_AAAA;
    }
    g
}
