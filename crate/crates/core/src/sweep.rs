//! Stage-block helpers shared by the backward and forward sweeps.
//!
//! A stage is split into one block per value of `n_C`. Blocks write to
//! disjoint output slices and are processed in parallel when the
//! `parallel` feature is enabled. Reductions always combine per-block
//! partial sums in block order, so results do not depend on the thread
//! count.

use alloc::vec::Vec;

use crate::state::block_offset;

/// Splits a stage-`t` buffer into its `n_C` blocks.
pub(crate) fn split_blocks<T>(mut buf: &mut [T], t: usize) -> Vec<&mut [T]> {
    let mut out = Vec::with_capacity(t + 1);
    for n_c in 0..=t {
        let len = (n_c + 1) * (t - n_c + 1);
        let (head, tail) = buf.split_at_mut(len);
        out.push(head);
        buf = tail;
    }
    debug_assert!(buf.is_empty());
    out
}

/// Range of the `n_C` block within stage `t`.
#[inline]
pub(crate) fn block_range(t: usize, n_c: usize) -> core::ops::Range<usize> {
    let start = block_offset(t, n_c);
    start..start + (n_c + 1) * (t - n_c + 1)
}

/// Applies `f(n_c, item)` to each block item, preserving order.
#[cfg(feature = "parallel")]
pub(crate) fn map_blocks<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items
        .into_par_iter()
        .enumerate()
        .map(|(k, it)| f(k, it))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_blocks<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(usize, T) -> R,
{
    items
        .into_iter()
        .enumerate()
        .map(|(k, it)| f(k, it))
        .collect()
}

/// Same as [`map_blocks`] over `0..=t` without borrowed items.
pub(crate) fn map_range<R, F>(t: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..=t).collect();
    map_blocks(idx, |_, k| f(k))
}
