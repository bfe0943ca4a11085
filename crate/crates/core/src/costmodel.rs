//! Analytical FLOPs of a decoder backbone under a token schedule.
//!
//! Per layer with `n` tokens, hidden width `d` and feed-forward width `f`:
//!
//! ```text
//! 8·n·d²      Q, K, V and output projections
//! 4·n²·d      attention scores and weighted sum
//! 4·n·d·f     the two feed-forward matmuls
//! ```
//!
//! A multiply-accumulate counts as two FLOPs. Norms, softmax, activations and
//! the KV cache are ignored; only ratios between schedules are meaningful.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::TokenSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub heads: usize,
}

impl Default for BackboneSpec {
    /// A 7B-class decoder.
    fn default() -> Self {
        Self {
            layers: 32,
            hidden: 4096,
            ffn: 11008,
            heads: 32,
        }
    }
}

impl BackboneSpec {
    pub fn new(layers: usize, hidden: usize, ffn: usize, heads: usize) -> Result<Self> {
        let spec = Self { layers, hidden, ffn, heads };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.ffn == 0 || self.heads == 0 {
            return Err(Error::Param("backbone dimensions must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Param(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

pub fn layer_flops(n: usize, spec: &BackboneSpec) -> u128 {
    let (n, d, f) = (n as u128, spec.hidden as u128, spec.ffn as u128);
    8 * n * d * d + 4 * n * n * d + 4 * n * d * f
}

pub fn schedule_flops(schedule: &TokenSchedule, spec: &BackboneSpec) -> Result<u128> {
    if schedule.layers() != spec.layers {
        return Err(Error::Shape(format!(
            "schedule covers {} layers, backbone has {}",
            schedule.layers(),
            spec.layers
        )));
    }
    Ok((0..schedule.layers())
        .map(|l| layer_flops(schedule.total_at(l), spec))
        .sum())
}

pub fn relative_flops(candidate: &TokenSchedule, baseline: &TokenSchedule, spec: &BackboneSpec) -> Result<f64> {
    let base = schedule_flops(baseline, spec)?;
    if base == 0 {
        return Err(Error::Param("baseline schedule has zero FLOPs".into()));
    }
    Ok(schedule_flops(candidate, spec)? as f64 / base as f64)
}
