//! Finite-difference gradient oracle. Completely independent of the adjoint
//! code: it only calls a user-supplied forward evaluation, perturbing one
//! parameter coordinate at a time with a central difference.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Gradients, ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;

/// One checked coordinate: parameter, flat index within it, analytic and
/// numeric derivative, and the relative error between them.
#[derive(Debug, Clone)]
pub struct CoordReport {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Central-difference check of `grads` against the forward map `eval`.
/// `coords` lists (parameter, flat index) pairs to probe. The relative error
/// uses a symmetric denominator floored at 1.0 so near-zero derivative pairs
/// compare absolutely.
pub fn check_coords<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &Gradients<S>,
    coords: &[(ParamId, usize)],
    eps: f64,
    mut eval: impl FnMut(&ParamStore<S>) -> Result<f64>,
) -> Result<Vec<CoordReport>> {
    let mut reports = Vec::with_capacity(coords.len());
    for &(pid, idx) in coords {
        let orig = store.get(pid).data()[idx];
        store.get_mut(pid).data_mut()[idx] = orig + S::of(eps);
        let up = eval(store)?;
        store.get_mut(pid).data_mut()[idx] = orig - S::of(eps);
        let down = eval(store)?;
        store.get_mut(pid).data_mut()[idx] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads
            .get(pid)
            .map(|g| g.data()[idx].as_f64())
            .unwrap_or(0.0);
        let denom = analytic.abs().max(numeric.abs()).max(1.0);
        reports.push(CoordReport {
            param: store.name(pid).to_string(),
            index: idx,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    Ok(reports)
}

/// Worst relative error over the probed coordinates.
pub fn max_rel_error<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &Gradients<S>,
    coords: &[(ParamId, usize)],
    eps: f64,
    eval: impl FnMut(&ParamStore<S>) -> Result<f64>,
) -> Result<f64> {
    let reports = check_coords(store, grads, coords, eps, eval)?;
    Ok(reports.iter().map(|r| r.rel_error).fold(0.0, f64::max))
}

/// Every coordinate of every trainable parameter.
pub fn all_coords<S: Scalar>(store: &ParamStore<S>) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for (pid, _, t) in store.iter() {
        if store.is_trainable(pid) {
            for i in 0..t.numel() {
                out.push((pid, i));
            }
        }
    }
    out
}

/// A deterministic subsample of the trainable coordinates: every parameter
/// contributes at least one probe, and overall roughly `fraction` of all
/// coordinates are kept.
pub fn sample_coords<S: Scalar>(
    store: &ParamStore<S>,
    fraction: f64,
    rng: &mut impl Rng,
) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for (pid, _, t) in store.iter() {
        if !store.is_trainable(pid) {
            continue;
        }
        let n = t.numel();
        let keep = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let mut idxs: Vec<usize> = (0..n).collect();
        idxs.shuffle(rng);
        idxs.truncate(keep);
        idxs.sort_unstable();
        out.extend(idxs.into_iter().map(|i| (pid, i)));
    }
    out
}
