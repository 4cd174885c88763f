//! Data-parallel execution helpers.
//!
//! With the default `parallel` feature the loops below fan out over rayon;
//! without it they run as plain sequential iterators. Both paths collect
//! results in index order and all floating point reductions in the crate fold
//! over the collected vectors sequentially, so output bits are identical for
//! any worker count, including the sequential fallback.

/// Maps `f` over `0..n` and collects results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n` and collects results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Maps a fallible `f` over `0..n`, short-circuiting on the first error in
/// index order.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let results = map_indexed(n, f);
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let out = map_indexed(100, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn try_map_indexed_reports_first_error() {
        let out: Result<Vec<usize>, usize> = try_map_indexed(10, |i| if i >= 7 { Err(i) } else { Ok(i) });
        assert_eq!(out, Err(7));
    }
}
