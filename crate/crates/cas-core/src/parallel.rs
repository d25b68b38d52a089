//! Data-parallel helpers for embarrassingly parallel sweeps.
//!
//! Seed sweeps, comparison repeats, trade-off-matrix rows, and random-instance
//! batches all reduce to "apply an independent function to each index and keep
//! the results in order". [`par_map_range`] runs that on the rayon pool when
//! the `parallel` feature (default) is enabled; [`seq_map_range`] is the plain
//! loop, kept available so benchmarks can compare both paths. Both preserve
//! input order, so results are identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
pub fn par_map_range<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
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

/// Sequential counterpart of [`par_map_range`].
pub fn seq_map_range<O, F>(n: usize, f: F) -> Vec<O>
where
    F: Fn(usize) -> O,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, in parallel when the `parallel` feature is on.
pub fn par_map_slice<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
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
