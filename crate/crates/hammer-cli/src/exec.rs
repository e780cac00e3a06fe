//! Deterministic fan-out over independent work items.
//!
//! `parallel_map` runs `f(0..n)` either sequentially or across a fixed number
//! of scoped threads. Each item writes into its own pre-allocated slot, and
//! items are assigned to threads in contiguous index ranges, so the returned
//! vector is in item order regardless of thread count: output is bit-for-bit
//! identical whether `threads` is 1 or 16, as long as `f` itself only depends
//! on the item index.

use anyhow::Result;

pub fn parallel_map<T, F>(n: usize, threads: usize, f: &F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    let workers = threads.max(1).min(n.max(1));
    if workers <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(f(i));
        }
    } else {
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            for (ci, slice) in slots.chunks_mut(chunk).enumerate() {
                let base = ci * chunk;
                scope.spawn(move || {
                    for (j, slot) in slice.iter_mut().enumerate() {
                        *slot = Some(f(base + j));
                    }
                });
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every slot is written exactly once"))
        .collect()
}
