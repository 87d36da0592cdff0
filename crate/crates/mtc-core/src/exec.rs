//! Execution mode for the data-parallel inner loops.
//!
//! Heavy loops (loss assembly, batched network evaluation, grid row updates)
//! are written as chunked maps with a fixed chunk size and an ordered
//! reduction, so the floating-point result is bit-identical whether the
//! chunks run on one thread or many. `Parallelism` only selects who runs
//! the chunks.

/// How to run chunked work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Plain sequential loop; always available.
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    /// Rayon work-stealing pool (requires the `parallel` feature).
    #[cfg_attr(feature = "parallel", default)]
    Rayon,
}

impl Parallelism {
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::default()
        }
    }
}

/// Fixed chunk width used by all chunked loops. Changing this changes the
/// reduction grouping and therefore the bit pattern of accumulated sums.
pub const CHUNK: usize = 128;

/// Map `f` over `items` in `CHUNK`-sized chunks, returning per-chunk results
/// in order. `f` receives the chunk's starting index and the chunk slice.
pub fn chunked_map<T: Sync, R: Send>(
    mode: Parallelism,
    items: &[T],
    f: impl Fn(usize, &[T]) -> R + Sync,
) -> Vec<R> {
    match mode {
        Parallelism::Sequential => items
            .chunks(CHUNK)
            .enumerate()
            .map(|(i, c)| f(i * CHUNK, c))
            .collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items
                    .par_chunks(CHUNK)
                    .enumerate()
                    .map(|(i, c)| f(i * CHUNK, c))
                    .collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items
                    .chunks(CHUNK)
                    .enumerate()
                    .map(|(i, c)| f(i * CHUNK, c))
                    .collect()
            }
        }
    }
}

/// Run `f(start, end)` over `[0, len)` split into `CHUNK`-sized ranges,
/// writing into disjoint output slices obtained through `f` itself.
pub fn chunked_ranges(mode: Parallelism, len: usize, f: impl Fn(usize, usize) + Sync) {
    let ranges: Vec<(usize, usize)> = (0..len)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(len)))
        .collect();
    match mode {
        Parallelism::Sequential => {
            for &(s, e) in &ranges {
                f(s, e);
            }
        }
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                ranges.par_iter().for_each(|&(s, e)| f(s, e));
            }
            #[cfg(not(feature = "parallel"))]
            {
                for &(s, e) in &ranges {
                    f(s, e);
                }
            }
        }
    }
}

/// Map `f` over one mutable buffer in chunks of `chunk` elements.
pub fn map_chunks_mut(
    mode: Parallelism,
    chunk: usize,
    out: &mut [f64],
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    match mode {
        Parallelism::Sequential => {
            for (i, c) in out.chunks_mut(chunk).enumerate() {
                f(i * chunk, c);
            }
        }
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                out.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i * chunk, c));
            }
            #[cfg(not(feature = "parallel"))]
            for (i, c) in out.chunks_mut(chunk).enumerate() {
                f(i * chunk, c);
            }
        }
    }
}

/// Chunked map over three mutable buffers of equal length.
pub fn zip3_chunks_mut(
    mode: Parallelism,
    chunk: usize,
    a: &mut [f64],
    b: &mut [f64],
    c: &mut [f64],
    f: impl Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync,
) {
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    match mode {
        Parallelism::Sequential => {
            for (i, ((ca, cb), cc)) in a
                .chunks_mut(chunk)
                .zip(b.chunks_mut(chunk))
                .zip(c.chunks_mut(chunk))
                .enumerate()
            {
                f(i * chunk, ca, cb, cc);
            }
        }
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                a.par_chunks_mut(chunk)
                    .zip(b.par_chunks_mut(chunk))
                    .zip(c.par_chunks_mut(chunk))
                    .enumerate()
                    .for_each(|(i, ((ca, cb), cc))| f(i * chunk, ca, cb, cc));
            }
            #[cfg(not(feature = "parallel"))]
            for (i, ((ca, cb), cc)) in a
                .chunks_mut(chunk)
                .zip(b.chunks_mut(chunk))
                .zip(c.chunks_mut(chunk))
                .enumerate()
            {
                f(i * chunk, ca, cb, cc);
            }
        }
    }
}

/// Chunked map over four mutable buffers of equal length.
#[allow(clippy::too_many_arguments)]
pub fn zip4_chunks_mut(
    mode: Parallelism,
    chunk: usize,
    a: &mut [f64],
    b: &mut [f64],
    c: &mut [f64],
    d: &mut [f64],
    f: impl Fn(usize, &mut [f64], &mut [f64], &mut [f64], &mut [f64]) + Sync,
) {
    match mode {
        Parallelism::Sequential => {
            for (i, (((ca, cb), cc), cd)) in a
                .chunks_mut(chunk)
                .zip(b.chunks_mut(chunk))
                .zip(c.chunks_mut(chunk))
                .zip(d.chunks_mut(chunk))
                .enumerate()
            {
                f(i * chunk, ca, cb, cc, cd);
            }
        }
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                a.par_chunks_mut(chunk)
                    .zip(b.par_chunks_mut(chunk))
                    .zip(c.par_chunks_mut(chunk))
                    .zip(d.par_chunks_mut(chunk))
                    .enumerate()
                    .for_each(|(i, (((ca, cb), cc), cd))| f(i * chunk, ca, cb, cc, cd));
            }
            #[cfg(not(feature = "parallel"))]
            for (i, (((ca, cb), cc), cd)) in a
                .chunks_mut(chunk)
                .zip(b.chunks_mut(chunk))
                .zip(c.chunks_mut(chunk))
                .zip(d.chunks_mut(chunk))
                .enumerate()
            {
                f(i * chunk, ca, cb, cc, cd);
            }
        }
    }
}

/// Ordered sum of equally sized gradient vectors (deterministic reduction).
pub fn sum_vectors(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut total = match parts.first() {
        Some(v) => vec![0.0; v.len()],
        None => return Vec::new(),
    };
    for part in parts.drain(..) {
        debug_assert_eq!(part.len(), total.len());
        for (t, p) in total.iter_mut().zip(part.iter()) {
            *t += p;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_matches_sequential_bitwise() {
        let items: Vec<f64> = (0..2000).map(|i| (i as f64) * 0.1).collect();
        let f = |_s: usize, c: &[f64]| c.iter().map(|x| x.sin()).sum::<f64>();
        let seq = chunked_map(Parallelism::Sequential, &items, f);
        let par = chunked_map(Parallelism::Rayon, &items, f);
        assert_eq!(seq, par);
        let a = seq.iter().sum::<f64>();
        let b = par.iter().sum::<f64>();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn sum_vectors_empty_and_ordered() {
        assert!(sum_vectors(vec![]).is_empty());
        let s = sum_vectors(vec![vec![1.0, 2.0], vec![0.5, -2.0]]);
        assert_eq!(s, vec![1.5, 0.0]);
    }
}
