//! Deterministic random streams.
//!
//! Every stochastic object is derived from a master seed and a realization
//! index. The index selects an independent ChaCha stream, so realization `k`
//! draws the same numbers whether it is generated first, last, or on another
//! thread.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain tags keep substreams of different consumers apart even when they
/// share a master seed and realization index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Screen = 1,
    Vacuum = 2,
    Detector = 3,
    Pairs = 4,
    Oracle = 5,
}

pub fn substream(master_seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ ((stream as u64) << 56));
    rng.set_stream(index);
    rng
}

/// Circular complex Gaussian sample with `E|z|^2 = variance`.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
