//! Guided bipartite token merging.
//!
//! Tokens are split into sources (kept) and targets (absorbed). Similarity of
//! every target to every source is the dot product of their RMS-normalised
//! rows scaled by `1/sqrt(d)`; a matching strategy turns each target's row of
//! similarities into weights over sources. Source `j` then becomes
//! `(s_j + sum_i W[i][j] t_i) / (1 + sum_i W[i][j])`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::types::{IndexSet, TokenMatrix};

pub const DEFAULT_EPSILON: f32 = 1e-6;

/// Scales `x` by the reciprocal of its root-mean-square. No learned gain.
pub fn rms_norm(x: &[f32], epsilon: f32) -> Vec<f32> {
    rms_norm_f64(x, epsilon).into_iter().map(|v| v as f32).collect()
}

fn rms_norm_f64(x: &[f32], epsilon: f32) -> Vec<f64> {
    let mean_sq = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (mean_sq + f64::from(epsilon)).sqrt();
    x.iter().map(|&v| f64::from(v) * inv).collect()
}

/// Turns a row-major `n_t x n_s` similarity matrix into matching weights of
/// the same shape, one row per target.
pub trait MatchingStrategy: Named + Send + Sync {
    fn weights(&self, sim: &[f64], n_t: usize, n_s: usize) -> Vec<f64>;
}

/// Row-wise softmax of `sim / temperature`.
#[derive(Debug, Clone, Copy)]
pub struct SoftMatching {
    pub temperature: f64,
}

impl Default for SoftMatching {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

impl Named for SoftMatching {
    fn name(&self) -> &'static str {
        "soft"
    }
}

impl MatchingStrategy for SoftMatching {
    fn weights(&self, sim: &[f64], n_t: usize, n_s: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(n_t * n_s);
        for row in sim.chunks_exact(n_s.max(1)).take(n_t) {
            let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = w.len();
            let mut total = 0.0;
            for &v in row {
                let e = ((v - peak) / self.temperature).exp();
                total += e;
                w.push(e);
            }
            for e in &mut w[start..] {
                *e /= total;
            }
        }
        w
    }
}

/// Each target goes wholly to its most similar source (lowest index on ties).
#[derive(Debug, Clone, Copy, Default)]
pub struct HardMatching;

impl Named for HardMatching {
    fn name(&self) -> &'static str {
        "hard"
    }
}

impl MatchingStrategy for HardMatching {
    fn weights(&self, sim: &[f64], n_t: usize, n_s: usize) -> Vec<f64> {
        let mut w = vec![0.0; n_t * n_s];
        for (i, row) in sim.chunks_exact(n_s.max(1)).take(n_t).enumerate() {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            w[i * n_s + best] = 1.0;
        }
        w
    }
}

pub fn matchers() -> Registry<dyn MatchingStrategy> {
    let mut reg: Registry<dyn MatchingStrategy> = Registry::new("merge mode");
    reg.register(Arc::new(SoftMatching::default()))
        .register(Arc::new(HardMatching));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Number of source tokens kept.
    pub m: usize,
    /// Registered matching strategy name.
    pub mode: String,
    pub epsilon: f32,
    /// Width used in the `1/sqrt(d)` scaling; defaults to the embedding width.
    pub hidden_dim: Option<usize>,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            m: 80,
            mode: "soft".into(),
            epsilon: DEFAULT_EPSILON,
            hidden_dim: None,
        }
    }
}

impl MergeParams {
    pub fn validate(&self, token_count: usize) -> Result<()> {
        if self.m == 0 || self.m > token_count {
            return Err(Error::Param(format!(
                "source count m must satisfy 0 < m <= {token_count}, got {}",
                self.m
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Param(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Param("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeReport {
    /// Positions of the sources. Local `0..n_s` from [`soft_bipartite_merge`];
    /// offsets inside the visual range from [`crate::pipeline::merge_stage`].
    pub source_indices: IndexSet,
    /// Total matching weight absorbed by each source.
    pub absorbed: Vec<f32>,
    pub tokens_before: usize,
    pub tokens_after: usize,
}

/// Rows at `source` (ascending) and the remaining rows (ascending).
pub fn split_source_target(tokens: &TokenMatrix, source: &IndexSet) -> Result<(TokenMatrix, TokenMatrix)> {
    source.check_bound(tokens.rows())?;
    let s = tokens.select_rows(source)?;
    let t = tokens.select_rows(&source.complement(tokens.rows()))?;
    Ok((s, t))
}

/// The `n_t x n_s` similarity matrix of targets against sources.
pub fn similarity_scores(s: &TokenMatrix, t: &TokenMatrix, params: &MergeParams) -> Result<Vec<f64>> {
    if s.cols() != t.cols() {
        return Err(Error::Shape(format!(
            "source width {} differs from target width {}",
            s.cols(),
            t.cols()
        )));
    }
    let d = params.hidden_dim.unwrap_or(s.cols());
    if d == 0 {
        return Err(Error::Param("hidden_dim must be positive".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let src: Vec<Vec<f64>> = s.iter_rows().map(|r| rms_norm_f64(r, params.epsilon)).collect();
    let mut sim = Vec::with_capacity(t.rows() * s.rows());
    for row in t.iter_rows() {
        let tn = rms_norm_f64(row, params.epsilon);
        for sn in &src {
            let dot: f64 = tn.iter().zip(sn).map(|(a, b)| a * b).sum();
            sim.push(dot * scale);
        }
    }
    Ok(sim)
}

/// Matching weights (`n_t x n_s`, row-major) under `matcher`.
pub fn matching_weights(
    s: &TokenMatrix,
    t: &TokenMatrix,
    params: &MergeParams,
    matcher: &dyn MatchingStrategy,
) -> Result<Vec<f64>> {
    let sim = similarity_scores(s, t, params)?;
    Ok(matcher.weights(&sim, t.rows(), s.rows()))
}

/// Folds targets `t` into sources `s` with the matcher named by `params.mode`.
pub fn soft_bipartite_merge(
    s: &TokenMatrix,
    t: &TokenMatrix,
    params: &MergeParams,
) -> Result<(TokenMatrix, MergeReport)> {
    let matcher = matchers().get(&params.mode)?;
    merge_with(s, t, params, matcher.as_ref())
}

/// Folds targets into sources with an explicit matching strategy.
pub fn merge_with(
    s: &TokenMatrix,
    t: &TokenMatrix,
    params: &MergeParams,
    matcher: &dyn MatchingStrategy,
) -> Result<(TokenMatrix, MergeReport)> {
    if s.rows() == 0 {
        return Err(Error::Param("merging needs at least one source token".into()));
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::Param(format!("epsilon must be positive, got {}", params.epsilon)));
    }
    let (n_s, n_t, d) = (s.rows(), t.rows(), s.cols());
    let w = matching_weights(s, t, params, matcher)?;

    // Fixed summation order over targets keeps results reproducible.
    let mut acc = vec![0.0f64; n_s * d];
    let mut absorbed = vec![0.0f64; n_s];
    for (i, trow) in t.iter_rows().enumerate() {
        for j in 0..n_s {
            let wij = w[i * n_s + j];
            if wij == 0.0 {
                continue;
            }
            absorbed[j] += wij;
            for (a, &x) in acc[j * d..(j + 1) * d].iter_mut().zip(trow) {
                *a += wij * f64::from(x);
            }
        }
    }

    let mut merged = Vec::with_capacity(n_s * d);
    for (j, srow) in s.iter_rows().enumerate() {
        let denom = 1.0 + absorbed[j];
        for (c, &x) in srow.iter().enumerate() {
            merged.push(((f64::from(x) + acc[j * d + c]) / denom) as f32);
        }
    }
    let report = MergeReport {
        source_indices: IndexSet::range(0..n_s),
        absorbed: absorbed.iter().map(|&v| v as f32).collect(),
        tokens_before: n_s + n_t,
        tokens_after: n_s,
    };
    Ok((TokenMatrix::new(n_s, d, merged)?, report))
}
