/// How data-parallel loops are executed.
///
/// Without the `parallel` feature, [`Execution::Parallel`] degrades to the
/// sequential path. Reductions are always folded over fixed-size chunks in
/// index order, so the choice never changes a result bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Items per chunk in chunked reductions. Fixed so the summation tree does
/// not depend on thread count.
pub(crate) const REDUCE_CHUNK: usize = 256;

impl Execution {
    /// `true` when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map over a slice.
    pub(crate) fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `0..n`.
    pub(crate) fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps each [`REDUCE_CHUNK`]-sized chunk of `items` to a partial result,
    /// then folds the partials left to right.
    pub(crate) fn chunked_reduce<T, A, F, G>(self, items: &[T], chunk: F, fold: G) -> Option<A>
    where
        T: Sync,
        A: Send,
        F: Fn(usize, &[T]) -> A + Sync + Send,
        G: FnMut(A, A) -> A,
    {
        let n_chunks = items.len().div_ceil(REDUCE_CHUNK);
        let partials = self.map_range(n_chunks, |c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(items.len());
            chunk(lo, &items[lo..hi])
        });
        partials.into_iter().reduce(fold)
    }
}
