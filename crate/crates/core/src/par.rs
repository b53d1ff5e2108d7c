use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Sum of `f(0..len)` with a fixed chunking, so the result is bitwise
/// independent of the thread count.
pub(crate) fn par_sum(len: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let chunks = len.div_ceil(CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(len);
            (c * CHUNK..end).map(&f).sum()
        })
        .collect();
    partial.iter().sum()
}

/// Several sums over the same index range in one pass; see [`par_sum`].
pub(crate) fn par_sum_n<const K: usize>(len: usize, f: impl Fn(usize) -> [f64; K] + Sync) -> [f64; K] {
    let chunks = len.div_ceil(CHUNK);
    let partial: Vec<[f64; K]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(len);
            let mut acc = [0.0; K];
            for i in c * CHUNK..end {
                let v = f(i);
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; K];
    for p in partial {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    total
}
