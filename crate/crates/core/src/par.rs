//! Data-parallel helpers.
//!
//! With the `parallel` feature the index-mapped loops below run on the rayon
//! pool; without it, or inside [`sequential`], they run on the calling thread.
//! Results are always collected in index order, so reductions performed by the
//! caller over the returned vector are deterministic either way.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every helper in this module pinned to the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|c| c.set(self.0));
        }
    }
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let _reset = Reset(prev);
    f()
}

/// True when the helpers would dispatch to the thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error by index wins.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Applies `f` to every element of `items` with its index, possibly in parallel.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            return;
        }
    }
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Number of worker threads the helpers would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Caps the global pool size. Only the first call has an effect; later calls
/// (and calls without the `parallel` feature) are ignored.
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
