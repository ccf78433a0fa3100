//! Thin data-parallel layer.
//!
//! With the `parallel` feature (default) the helpers fan work out over rayon;
//! without it they run plain sequential loops, which keeps the crate usable on
//! targets where rayon is unwanted and gives the bench suite a baseline to
//! compare against.
//!
//! Reductions are always performed sequentially over index order so results
//! are bitwise reproducible regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `0..n` through `f`, collecting results in index order.
pub fn map_collect<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Run `f(i, &mut items[i])` for every element.
pub fn for_each_mut<T: Send>(items: &mut [T], f: impl Fn(usize, &mut T) + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        items
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, item)| f(i, item));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, item) in items.iter_mut().enumerate() {
            f(i, item);
        }
    }
}

/// Split `data` into equal chunks of `chunk` elements and run `f(chunk_index, chunk)`.
pub fn for_each_chunk_mut(data: &mut [f64], chunk: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    debug_assert_eq!(data.len() % chunk, 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

/// Deterministic sum of `f(i)` for `i in 0..n`: parallel map, sequential fold.
pub fn sum(n: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    const SEQ_CUTOFF: usize = 4096;
    if n <= SEQ_CUTOFF {
        return (0..n).map(f).sum();
    }
    let parts = map_collect(n, f);
    parts.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let v = map_collect(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn sum_matches_sequential() {
        let n = 10_000;
        let s = sum(n, |i| (i as f64).sqrt());
        let expect: f64 = (0..n).map(|i| (i as f64).sqrt()).sum();
        assert_eq!(s, expect);
    }
}
