//! Execution policy for the data-parallel inner loops.
//!
//! Implants within a run, grid points within a sweep, and Monte Carlo
//! trials are all independent, so they can be mapped in parallel. Results
//! are collected in index order, which keeps parallel output bit-identical
//! to sequential output.

/// Whether independent work items run on the rayon pool or inline.
///
/// With the `parallel` feature disabled, `Parallel` degrades to the
/// sequential path so callers do not need to feature-gate their code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

/// Map `f` over `0..len`, preserving index order in the output.
pub(crate) fn map_indexed<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(|i| f(i)).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let seq = map_indexed(Execution::Sequential, 100, |i| i * i);
        let par = map_indexed(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
