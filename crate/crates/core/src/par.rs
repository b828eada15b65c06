//! Chunked data-parallel helpers.
//!
//! Work is split into fixed-size chunks whose results are returned in chunk
//! order, so any reduction the caller performs afterwards sees the same
//! operands in the same order whether the chunks ran on the rayon pool or
//! sequentially. Results are therefore bit-identical across thread counts and
//! across builds with and without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Runs on the global rayon pool; identical to `Sequential` when the
    /// crate is built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub(crate) fn map_chunks<T, R, F>(exec: Exec, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_chunks(chunk).map(f).collect(),
        _ => items.chunks(chunk).map(f).collect(),
    }
}

pub(crate) fn map_range<R, F>(exec: Exec, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..len).into_par_iter().map(f).collect(),
        _ => (0..len).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_order_is_preserved() {
        let v: Vec<u32> = (0..1000).collect();
        let a = map_chunks(Exec::Parallel, &v, 7, |c| c.iter().sum::<u32>());
        let b = map_chunks(Exec::Sequential, &v, 7, |c| c.iter().sum::<u32>());
        assert_eq!(a, b);
        assert_eq!(a.len(), 143);
    }

    #[test]
    fn range_order_is_preserved() {
        let a = map_range(Exec::Parallel, 100, |i| i * i);
        assert_eq!(a, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
