//! Threading strategy for the particle hot loops.
//!
//! Work is split into chunks whose boundaries depend only on the data
//! length, never on the worker count, and every chunk writes exclusively to
//! its own output slice. Reductions over chunk results run sequentially in
//! chunk order. Together these make `Parallel` and `Sequential` produce
//! bit-identical results.

/// Fixed chunk length for particle loops; also the unit of reduction order.
pub const CHUNK: usize = 1024;

/// Execution strategy selector.
///
/// `Parallel` uses the rayon pool when the `parallel` feature is enabled and
/// silently degrades to the sequential path otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threading {
    #[default]
    Parallel,
    Sequential,
}

#[cfg(feature = "parallel")]
fn use_pool(mode: Threading) -> bool {
    mode == Threading::Parallel
}

/// Applies `f` to consecutive chunks of `data`, passing each chunk's start
/// index. `f` must depend only on its arguments and captured immutable
/// state.
pub fn for_each_chunk<T, F>(mode: Threading, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if use_pool(mode) {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk_len, c));
        return;
    }
    let _ = mode;
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i * chunk_len, c);
    }
}

fn chunk_count(len: usize, chunk_len: usize) -> usize {
    len.div_ceil(chunk_len)
}

/// Chunked zip over two slices with a shared chunk grid: chunk `i` covers
/// `a[i*a_len..]` and `b[i*b_len..]`. Both slices must split into the same
/// number of chunks.
pub fn for_each_chunk2<A, B, F>(
    mode: Threading,
    a: &mut [A],
    a_len: usize,
    b: &mut [B],
    b_len: usize,
    f: F,
) where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync,
{
    assert!(a_len > 0 && b_len > 0);
    assert_eq!(
        chunk_count(a.len(), a_len),
        chunk_count(b.len(), b_len),
        "chunk grids must align"
    );
    #[cfg(feature = "parallel")]
    if use_pool(mode) {
        use rayon::prelude::*;
        a.par_chunks_mut(a_len)
            .zip(b.par_chunks_mut(b_len))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i, ca, cb));
        return;
    }
    let _ = mode;
    for (i, (ca, cb)) in a.chunks_mut(a_len).zip(b.chunks_mut(b_len)).enumerate() {
        f(i, ca, cb);
    }
}

/// Three-slice variant of [`for_each_chunk2`].
#[allow(clippy::too_many_arguments)]
pub fn for_each_chunk3<A, B, C, F>(
    mode: Threading,
    a: &mut [A],
    a_len: usize,
    b: &mut [B],
    b_len: usize,
    c: &mut [C],
    c_len: usize,
    f: F,
) where
    A: Send,
    B: Send,
    C: Send,
    F: Fn(usize, &mut [A], &mut [B], &mut [C]) + Sync,
{
    assert!(a_len > 0 && b_len > 0 && c_len > 0);
    assert_eq!(
        chunk_count(a.len(), a_len),
        chunk_count(b.len(), b_len),
        "chunk grids must align"
    );
    assert_eq!(
        chunk_count(a.len(), a_len),
        chunk_count(c.len(), c_len),
        "chunk grids must align"
    );
    #[cfg(feature = "parallel")]
    if use_pool(mode) {
        use rayon::prelude::*;
        a.par_chunks_mut(a_len)
            .zip(b.par_chunks_mut(b_len).zip(c.par_chunks_mut(c_len)))
            .enumerate()
            .for_each(|(i, (ca, (cb, cc)))| f(i, ca, cb, cc));
        return;
    }
    let _ = mode;
    for (i, ((ca, cb), cc)) in a
        .chunks_mut(a_len)
        .zip(b.chunks_mut(b_len))
        .zip(c.chunks_mut(c_len))
        .enumerate()
    {
        f(i, ca, cb, cc);
    }
}
