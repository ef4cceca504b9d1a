//! Execution policy for the data-parallel loops (per-anchor realization,
//! per-index Hankel differences, Monte Carlo runs).
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] maps work
//! over the rayon pool. Without it, both variants run sequentially. Results
//! are returned in index order either way, so outputs are bit-identical.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Order-preserving map over `lo..=hi`.
    pub fn map_range<R, F>(self, lo: usize, hi: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if hi < lo {
            return Vec::new();
        }
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (lo..=hi).into_par_iter().map(f).collect();
        }
        (lo..=hi).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_and_keep_order() {
        let a = Execution::Sequential.map_range(3, 200, |k| k * k);
        let b = Execution::Parallel.map_range(3, 200, |k| k * k);
        assert_eq!(a, b);
        assert_eq!(a[0], 9);
        assert!(Execution::Parallel.map_range(5, 4, |k| k).is_empty());
    }
}
