//! Data-parallel dispatch with a sequential fallback.
//!
//! With the `parallel` feature, row-independent kernels fan out over rayon.
//! Without it, or inside [`sequential`], the same closures run in order on the
//! calling thread. Kernels dispatched through here never split a reduction
//! across tasks, so both paths produce bit-identical results.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with every kernel dispatched from this thread forced sequential.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|s| s.set(self.0));
        }
    }
    let prev = FORCE_SEQUENTIAL.with(|s| s.replace(true));
    let _reset = Reset(prev);
    f()
}

/// True when kernels dispatched from this thread may run in parallel.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

/// Apply `f(index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 || data.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_scope_restores_flag() {
        let outer = parallel_enabled();
        sequential(|| assert!(!parallel_enabled()));
        assert_eq!(parallel_enabled(), outer);
    }

    #[test]
    fn chunk_and_map_agree_across_modes() {
        let run = || {
            let mut v: Vec<u64> = (0..1000).collect();
            for_each_chunk(&mut v, 7, |i, c| {
                for x in c.iter_mut() {
                    *x = *x * 3 + i as u64;
                }
            });
            (v, map_indices(50, |i| i * i))
        };
        assert_eq!(run(), sequential(run));
    }
}
