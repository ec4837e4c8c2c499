//! The experiment implementations behind the CLI. Each returns typed result
//! rows (consumed directly by the acceptance suite) and renders them into
//! tables plus threshold checks.

pub mod classification;
pub mod gvi;
pub mod nets_experiments;
pub mod regression;
pub mod uncertainty;

use rayon::prelude::*;

/// Maps replica indices through a closure on a work pool sized by
/// `threads` (0 = all hardware threads), preserving index order in the
/// output regardless of scheduling.
pub(crate) fn par_replicas<T: Send>(
    threads: usize,
    count: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    if threads == 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}
