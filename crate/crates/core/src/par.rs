//! Data-parallel helpers that fall back to sequential loops without the
//! `parallel` feature. Every helper preserves input order in its output, so
//! results do not depend on the thread count.

use alloc::vec::Vec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `f(i, chunk)` for consecutive `chunk_len`-sized chunks of `data`.
pub fn for_each_chunk_mut<T: Send, F>(data: &mut [T], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// `f(i, item)` for every element of a vector of disjoint mutable parts.
pub fn for_each_part<T: Send, F>(parts: Vec<T>, f: F)
where
    F: Fn(usize, T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    parts.into_par_iter().enumerate().for_each(|(i, p)| f(i, p));
    #[cfg(not(feature = "parallel"))]
    parts.into_iter().enumerate().for_each(|(i, p)| f(i, p));
}

/// `(0..n).map(f).collect()`, in order.
pub fn map_collect<R: Send, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

pub fn sort_unstable_by<T: Send, F>(data: &mut [T], cmp: F)
where
    F: Fn(&T, &T) -> core::cmp::Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    data.par_sort_unstable_by(cmp);
    #[cfg(not(feature = "parallel"))]
    data.sort_unstable_by(cmp);
}
