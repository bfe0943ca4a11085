//! Interval-based context sampling and the stage-one keep set.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, IndexSet};

/// Absorbs f64 rounding in `u * n` (e.g. `0.35 * 180 = 62.99999999999999`)
/// without ever rounding a genuinely fractional product up.
const COUNT_SLACK: f64 = 1e-9;

/// Number of context samples retained out of `n_tokens` at fraction `u`.
pub fn context_count(n_tokens: usize, u: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Param(format!("context fraction must lie in [0, 1], got {u}")));
    }
    let count = (u * n_tokens as f64 + COUNT_SLACK).floor() as usize;
    Ok(count.min(n_tokens))
}

/// `floor(u * n)` indices at uniform stride from 0: `t * n / count` for each `t`.
pub fn context_indices(n_tokens: usize, u: f64) -> Result<IndexSet> {
    let count = context_count(n_tokens, u)?;
    let indices = (0..count)
        .map(|t| ((t as u128 * n_tokens as u128) / count as u128) as usize)
        .collect();
    IndexSet::from_sorted(indices)
}

/// Union of the expanded mask's tokens with the context samples.
pub fn keep_set(expanded: &BinaryMask, context: &IndexSet) -> Result<IndexSet> {
    context.check_bound(expanded.grid().total_tokens())?;
    Ok(expanded.to_index_set().union(context))
}
