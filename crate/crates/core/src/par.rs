//! Data-parallel helpers. With the `parallel` feature the maps run on the
//! rayon pool; without it (or with [`Exec::Sequential`]) they run in order.
//! Results are always collected in index order, and reductions are summed
//! sequentially afterwards, so output does not depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for the heavy kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Returns the first index in `0..n` for which `f` is true, if any.
pub fn find_any<F>(exec: Exec, n: usize, f: F) -> Option<usize>
where
    F: Fn(usize) -> bool + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().find_first(|&i| f(i)),
        _ => (0..n).find(|&i| f(i)),
    }
}

/// Configures the global pool. A no-op without the `parallel` feature.
pub fn set_threads(k: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = k;
        Ok(())
    }
}
