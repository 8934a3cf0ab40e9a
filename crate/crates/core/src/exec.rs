//! Order-independent parallel reductions.
//!
//! Work is split into fixed-size chunks of realization indices. Each chunk is
//! folded serially, and chunk results are combined in index order, so the
//! floating-point result does not depend on the number of threads or on
//! completion order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const DEFAULT_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Serial,
    Parallel,
}

impl Default for Mode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Mode::Parallel
        } else {
            Mode::Serial
        }
    }
}

/// Folds `count` realizations in chunks of `chunk`, then combines the chunk
/// accumulators left to right.
pub fn chunked_fold<A, Init, Fold, Comb>(count: usize, chunk: usize, mode: Mode, init: Init, fold: Fold, combine: Comb) -> A
where
    A: Send,
    Init: Fn() -> A + Sync + Send,
    Fold: Fn(&mut A, usize) + Sync + Send,
    Comb: Fn(&mut A, A),
{
    let chunk = chunk.max(1);
    let chunks = count.div_ceil(chunk);
    let run = |c: usize| {
        let mut acc = init();
        for i in c * chunk..((c + 1) * chunk).min(count) {
            fold(&mut acc, i);
        }
        acc
    };
    let parts: Vec<A> = match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => (0..chunks).into_par_iter().map(run).collect(),
        _ => (0..chunks).map(run).collect(),
    };
    let mut it = parts.into_iter();
    let mut total = it.next().unwrap_or_else(&init);
    for p in it {
        combine(&mut total, p);
    }
    total
}

/// Maps `count` indices, returning results in index order.
pub fn map_indexed<T, F>(count: usize, mode: Mode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => (0..count).into_par_iter().map(f).collect(),
        _ => (0..count).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let f = |acc: &mut f64, i: usize| *acc += (i as f64).sqrt().sin() * 1e-3;
        let a = chunked_fold(1000, 7, Mode::Serial, || 0.0, f, |a, b| *a += b);
        let b = chunked_fold(1000, 7, Mode::Parallel, || 0.0, f, |a, b| *a += b);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(map_indexed(10, Mode::Parallel, |i| i * i), map_indexed(10, Mode::Serial, |i| i * i));
    }
}
