use rand::seq::index;
use rand::Rng;

use super::batch::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};
use crate::tensor::Tensor;

fn check_rate(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("rate {p} is outside [0, 1]")))
    }
}

fn mcar(batch: &TimeSeriesBatch, p: f64, seed: u64, keep_first: bool) -> Result<TimeSeriesBatch> {
    check_rate(p)?;
    let (t, b, d) = (batch.steps(), batch.batch_size(), batch.dims());
    let mut out = batch.clone();
    for (j, &id) in batch.ids.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Mask, id);
        for k in 0..t {
            for c in 0..d {
                // Draw for every entry so a sequence's pattern does not depend
                // on what was already missing.
                let drop = rng.gen::<f64>() < p;
                if drop && !(keep_first && k == 0) {
                    let off = (k * b + j) * d + c;
                    out.mask.data_mut()[off] = 0.0;
                    out.values.data_mut()[off] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Drops each observed entry independently with probability `p`. Randomness is
/// keyed per sequence id, so a sequence is masked the same way in any batch.
pub fn apply_mcar(batch: &TimeSeriesBatch, p: f64, seed: u64) -> Result<TimeSeriesBatch> {
    mcar(batch, p, seed, false)
}

/// [`apply_mcar`] that never drops entries at the first time step.
pub fn apply_mcar_keep_first(batch: &TimeSeriesBatch, p: f64, seed: u64) -> Result<TimeSeriesBatch> {
    mcar(batch, p, seed, true)
}

/// Number of time points kept at observed rate `q` out of `steps`: `⌈q T⌉`,
/// computed so that products like `0.3 × 10` do not round up spuriously.
pub fn kept_points(q: f64, steps: usize) -> Result<usize> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("observed rate {q} must lie in (0, 1]")));
    }
    let x = q * steps as f64;
    let n = (x - 1e-9 * x.max(1.0)).ceil() as usize;
    if n == 0 {
        return Err(Error::invalid(format!("observed rate {q} keeps no points of {steps}")));
    }
    Ok(n.min(steps))
}

/// Time indices kept for one sequence: the first point and a uniform random
/// subset of the rest, `n` in total, sorted.
pub fn holdout_indices<R: Rng + ?Sized>(rng: &mut R, steps: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = index::sample(rng, steps - 1, n - 1)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.push(0);
    idx.sort_unstable();
    idx
}

/// Keeps `⌈q T⌉` time points per sequence as conditioning input (others are
/// masked in every channel) and returns the full-grid targets alongside.
pub fn hold_out_observation(batch: &TimeSeriesBatch, q: f64, seed: u64) -> Result<(TimeSeriesBatch, Tensor)> {
    let (t, b, d) = (batch.steps(), batch.batch_size(), batch.dims());
    let n = kept_points(q, t)?;
    let targets = batch.targets.clone().unwrap_or_else(|| batch.values.clone());
    let mut out = batch.clone();
    out.targets = Some(targets.clone());
    if n == t {
        return Ok((out, targets));
    }
    for (j, &id) in batch.ids.iter().enumerate() {
        let mut rng = stream_rng(seed, Stream::Holdout, id);
        let keep = holdout_indices(&mut rng, t, n);
        let mut kept = keep.iter().peekable();
        for k in 0..t {
            if kept.peek() == Some(&&k) {
                kept.next();
                continue;
            }
            let off = (k * b + j) * d;
            out.mask.data_mut()[off..off + d].iter_mut().for_each(|m| *m = 0.0);
            out.values.data_mut()[off..off + d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((out, targets))
}
