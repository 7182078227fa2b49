//! Shared pieces of the two training loops: a clip-parallel gradient step
//! and per-epoch batch assembly.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{Adam, Gradients, ParamStore};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// One optimization step over a batch of per-clip gradient closures run in
/// parallel; reduction happens in clip order so the result is identical for
/// any thread count. Returns the mean clip loss.
pub fn batched_step<S, F>(
    store: &mut ParamStore<S>,
    opt: &mut Adam<S>,
    clip_norm: f64,
    batch: &[usize],
    loss_and_grad: F,
) -> Result<f64>
where
    S: Scalar,
    F: Fn(&ParamStore<S>, usize) -> Result<(f64, Gradients<S>)> + Sync,
{
    let frozen: &ParamStore<S> = store;
    let results: Vec<Result<(f64, Gradients<S>)>> = batch
        .par_iter()
        .map(|&ci| loss_and_grad(frozen, ci))
        .collect();
    let mut total = Gradients::empty(store.len());
    let mut loss_sum = 0.0;
    for r in results {
        let (l, g) = r?;
        loss_sum += l;
        total.accumulate(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(S::of(scale));
    if let Some(i) = total.first_nonfinite() {
        return Err(CoreError::Numerical(format!(
            "non-finite gradient in parameter {i} after batch reduction"
        )));
    }
    total.clip_global_norm(clip_norm);
    opt.step(store, &total)?;
    Ok(loss_sum * scale)
}

/// Shuffle clip indices and split into batches (last one may be short).
pub fn epoch_batches(n_clips: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}
