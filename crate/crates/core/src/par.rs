//! Row-chunked data parallelism with a sequential fallback.
//!
//! Every helper splits a row-major buffer into fixed chunks of [`ROW_CHUNK`] rows and
//! combines per-chunk results in chunk order. The chunking does not depend on the
//! number of threads, so the sequential and rayon paths produce bit-identical output.
//!
//! Without the `parallel` feature everything runs sequentially. With it, parallelism
//! can still be switched off at runtime with [`set_enabled`] (the benches use this to
//! compare both paths in one binary).

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const ROW_CHUNK: usize = 16;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Whether the rayon path is active.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

/// Caps the global rayon pool at `threads` workers. Fails if the pool already exists.
/// A no-op without the `parallel` feature.
pub fn configure_threads(threads: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::Error::InvalidConfig(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

/// Applies `f(first_row, chunk)` to consecutive chunks of at most [`ROW_CHUNK`] rows and
/// returns the per-chunk results in order.
pub fn map_row_chunks_mut<T, F>(data: &mut [f64], ncols: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> T + Sync + Send,
{
    let step = (ROW_CHUNK * ncols).max(1);
    #[cfg(feature = "parallel")]
    if enabled() {
        return data
            .par_chunks_mut(step)
            .enumerate()
            .map(|(c, chunk)| f(c * ROW_CHUNK, chunk))
            .collect();
    }
    data.chunks_mut(step)
        .enumerate()
        .map(|(c, chunk)| f(c * ROW_CHUNK, chunk))
        .collect()
}

/// Read-only counterpart of [`map_row_chunks_mut`].
pub fn map_row_chunks<T, F>(data: &[f64], ncols: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync + Send,
{
    let step = (ROW_CHUNK * ncols).max(1);
    #[cfg(feature = "parallel")]
    if enabled() {
        return data
            .par_chunks(step)
            .enumerate()
            .map(|(c, chunk)| f(c * ROW_CHUNK, chunk))
            .collect();
    }
    data.chunks(step)
        .enumerate()
        .map(|(c, chunk)| f(c * ROW_CHUNK, chunk))
        .collect()
}

/// Maps `f` over `0..count` (used for independent blocks such as barycenter plans).
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if enabled() {
        return (0..count).into_par_iter().map(f).collect();
    }
    (0..count).map(f).collect()
}

pub fn row_sums(data: &[f64], ncols: usize) -> Vec<f64> {
    map_row_chunks(data, ncols, |_, chunk| {
        chunk
            .chunks(ncols.max(1))
            .map(|r| r.iter().sum::<f64>())
            .collect::<Vec<_>>()
    })
    .concat()
}

/// Column sums, accumulated per chunk and then combined in chunk order.
pub fn col_sums(data: &[f64], ncols: usize) -> Vec<f64> {
    let partials = map_row_chunks(data, ncols, |_, chunk| {
        let mut acc = vec![0.0; ncols];
        for r in chunk.chunks(ncols.max(1)) {
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        acc
    });
    combine_columns(partials, ncols)
}

pub(crate) fn combine_columns(partials: Vec<Vec<f64>>, ncols: usize) -> Vec<f64> {
    let mut out = vec![0.0; ncols];
    for p in partials {
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64], ncols: usize) -> f64 {
    let step = (ROW_CHUNK * ncols).max(1);
    let partial = |c: usize| -> f64 {
        let lo = c * step;
        let hi = (lo + step).min(a.len());
        a[lo..hi].iter().zip(&b[lo..hi]).map(|(x, y)| x * y).sum()
    };
    let chunks = a.len().div_ceil(step);
    map_indexed(chunks, partial).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_paths_agree_bitwise() {
        let n = 37;
        let data: Vec<f64> = (0..n * n).map(|k| ((k * 7919) % 1013) as f64 / 977.0).collect();
        set_enabled(false);
        let (r0, c0, d0) = (row_sums(&data, n), col_sums(&data, n), dot(&data, &data, n));
        set_enabled(true);
        let (r1, c1, d1) = (row_sums(&data, n), col_sums(&data, n), dot(&data, &data, n));
        assert_eq!(r0, r1);
        assert_eq!(c0, c1);
        assert_eq!(d0.to_bits(), d1.to_bits());
    }

    #[test]
    fn chunk_offsets_are_row_indices() {
        let n = 5;
        let mut data = vec![0.0; 40 * n];
        let firsts = map_row_chunks_mut(&mut data, n, |first, chunk| {
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                row.fill((first + r) as f64);
            }
            first
        });
        assert_eq!(firsts, vec![0, 16, 32]);
        assert_eq!(data[39 * n], 39.0);
    }
}
