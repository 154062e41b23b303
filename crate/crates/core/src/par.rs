//! Data-parallel map over work items, with a sequential fallback.
//!
//! With the `parallel` feature the map runs on rayon's pool; without it, or
//! when the policy is switched to [`ExecPolicy::Sequential`], items are run in
//! index order.  Work items draw randomness from per-index streams, so both
//! paths return identical results.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecPolicy {
    Parallel,
    Sequential,
}

static POLICY: AtomicU8 = AtomicU8::new(0);

pub fn set_exec_policy(p: ExecPolicy) {
    POLICY.store(matches!(p, ExecPolicy::Sequential) as u8, Ordering::Relaxed);
}

pub fn exec_policy() -> ExecPolicy {
    if POLICY.load(Ordering::Relaxed) == 1 || !cfg!(feature = "parallel") {
        ExecPolicy::Sequential
    } else {
        ExecPolicy::Parallel
    }
}

pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec_policy() == ExecPolicy::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
