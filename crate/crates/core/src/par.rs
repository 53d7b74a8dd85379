//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these run on the rayon pool; without it they are
//! plain iterator loops. Work is always split into fixed-size chunks whose
//! partial results are combined in chunk order, so the output is bit-identical
//! whichever path runs and however many threads the pool has.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`map_reduce`]; independent of the thread count.
pub const CHUNK: usize = 1024;

/// Maps every element, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Folds each [`CHUNK`]-sized slice with `fold` starting from `init()`, then
/// combines the chunk results left to right with `combine`.
pub fn map_reduce<T, A, I, F, C>(items: &[T], init: I, fold: F, combine: C) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    C: Fn(A, A) -> A,
{
    let chunk = |c: &[T]| c.iter().fold(init(), &fold);
    #[cfg(feature = "parallel")]
    let partials: Vec<A> = items.par_chunks(CHUNK).map(chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<A> = items.chunks(CHUNK).map(chunk).collect();
    partials.into_iter().fold(init(), combine)
}

/// Runs `f` on every element of a mutable slice.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().for_each(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().for_each(f)
    }
}
