//! Data-parallel loop helpers with a sequential fallback.
//!
//! Every hot loop in the crate is phrased as "split the output buffer into
//! disjoint chunks, fill each chunk independently". With the `parallel`
//! feature (default) the chunks are distributed over a rayon pool; without
//! it the same closures run in a plain loop. Chunk boundaries and the
//! per-element accumulation order never depend on the thread count, so both
//! modes produce bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f` inside a dedicated pool of `threads` workers (0 = one per core).
///
/// Without the `parallel` feature the closure just runs on the caller's
/// thread and `threads` is ignored.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("building a rayon pool cannot fail for a sane thread count");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R>(threads: usize, f: impl FnOnce() -> R) -> R {
    let _ = threads;
    f()
}

/// Caps the worker count of the global pool. Call once, before any parallel
/// work; later calls fail silently (rayon only honors the first).
#[cfg(feature = "parallel")]
pub fn configure_global_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn configure_global_threads(_threads: usize) {}

/// Number of workers tasks will be spread over.
#[cfg(feature = "parallel")]
pub fn max_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
pub fn max_threads() -> usize {
    1
}

/// Calls `f(chunk_index, chunk)` for every `size`-element chunk of `data`
/// (last chunk may be shorter).
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    data.par_chunks_mut(size).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    for (i, c) in data.chunks_mut(size).enumerate() {
        f(i, c);
    }
}

/// Chunks `out` and `inp` in lockstep (`out_size` / `in_size` elements per
/// chunk) and calls `f(chunk_index, out_chunk, in_chunk)` for each pair.
/// Used where an output block is computed from a same-indexed input block,
/// e.g. GEMM row panels.
#[cfg(feature = "parallel")]
pub fn for_each_zip_chunks_mut<T, U, F>(out: &mut [T], inp: &[U], out_size: usize, in_size: usize, f: F)
where
    T: Send,
    U: Sync,
    F: Fn(usize, &mut [T], &[U]) + Sync,
{
    out.par_chunks_mut(out_size)
        .zip(inp.par_chunks(in_size))
        .enumerate()
        .for_each(|(i, (o, a))| f(i, o, a));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_zip_chunks_mut<T, U, F>(out: &mut [T], inp: &[U], out_size: usize, in_size: usize, f: F)
where
    T: Send,
    U: Sync,
    F: Fn(usize, &mut [T], &[U]) + Sync,
{
    for (i, (o, a)) in out.chunks_mut(out_size).zip(inp.chunks(in_size)).enumerate() {
        f(i, o, a);
    }
}

/// Lockstep chunking over three mutable slices and one shared slice, all of
/// equal length. This is the ADAM update shape: parameters and both moment
/// buffers are updated in place from the gradient.
#[cfg(feature = "parallel")]
pub fn for_each_zip4_mut<A, B, C, D, F>(a: &mut [A], b: &mut [B], c: &mut [C], d: &[D], size: usize, f: F)
where
    A: Send,
    B: Send,
    C: Send,
    D: Sync,
    F: Fn(&mut [A], &mut [B], &mut [C], &[D]) + Sync,
{
    a.par_chunks_mut(size)
        .zip(b.par_chunks_mut(size))
        .zip(c.par_chunks_mut(size))
        .zip(d.par_chunks(size))
        .for_each(|(((ca, cb), cc), cd)| f(ca, cb, cc, cd));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_zip4_mut<A, B, C, D, F>(a: &mut [A], b: &mut [B], c: &mut [C], d: &[D], size: usize, f: F)
where
    A: Send,
    B: Send,
    C: Send,
    D: Sync,
    F: Fn(&mut [A], &mut [B], &mut [C], &[D]) + Sync,
{
    for (((ca, cb), cc), cd) in a
        .chunks_mut(size)
        .zip(b.chunks_mut(size))
        .zip(c.chunks_mut(size))
        .zip(d.chunks(size))
    {
        f(ca, cb, cc, cd);
    }
}
