//! Thin switch between rayon and sequential execution.
//!
//! Every helper here preserves output order and writes disjoint memory, so
//! the `parallel` and sequential builds produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to each row (length `row_len`) of a contiguous buffer.
pub fn for_each_row<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && buf.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential variant of [`for_each_row`], kept for benchmarking the
/// parallel build against its own fallback path.
pub fn for_each_row_seq<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert!(row_len > 0 && buf.len() % row_len == 0);
    buf.chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
}
