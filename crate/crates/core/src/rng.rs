//! Reproducible per-path random streams.
//!
//! Every path owns an independent ChaCha12 stream keyed by `(seed, path)`,
//! so simulations are bit-identical for a given seed no matter how work is
//! scheduled across threads. Within a path the draw order is fixed: for each
//! time step, `dim` standard normals (the Brownian increments) followed by
//! one uniform per jump atom.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer; decorrelates consecutive path indices.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for one simulated path.
pub fn path_rng(seed: u64, path: usize) -> ChaCha12Rng {
    let key = mix(seed ^ mix((path as u64).wrapping_add(0x9e37_79b9_7f4a_7c15)));
    ChaCha12Rng::seed_from_u64(key)
}

pub fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Poisson sample by CDF inversion from a single uniform.
///
/// Inversion keeps counts monotonically coupled across different rates fed
/// the same uniform, which is what makes tilted-compensator simulations
/// comparable path by path under common random numbers.
pub fn poisson_inverse(u: f64, mean: f64) -> u64 {
    debug_assert!(mean >= 0.0);
    if mean == 0.0 {
        return 0;
    }
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    // mean*dt is small in practice; the loop terminates quickly.
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}
