//! Data-parallel helpers.
//!
//! With the `parallel` feature the batch loops below run on the rayon pool;
//! without it (or with [`Execution::Sequential`]) they run in order on the
//! calling thread. Results are identical either way: every item is computed
//! independently and collected in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// What `Parallel` actually resolves to in this build.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }
}

pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

pub fn map_slice<I, T, F>(exec: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_slice_mut<I, T, F>(exec: Execution, items: &mut [I], f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(&mut I) -> T + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter_mut().map(f).collect(),
        _ => items.iter_mut().map(f).collect(),
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers when parallel
/// execution is available; otherwise just calls it.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(Execution::Sequential, 257, f);
        let b = map_range(Execution::Parallel, 257, f);
        assert_eq!(a, b);
    }

    #[test]
    fn mutable_map_preserves_order() {
        let mut v: Vec<u32> = (0..100).collect();
        let out = map_slice_mut(Execution::Parallel, &mut v, |x| {
            *x *= 2;
            *x + 1
        });
        assert_eq!(out[10], 21);
        assert_eq!(v[99], 198);
    }
}
