//! Two-stage compression: prune visual tokens before the backbone, merge them
//! at a middle layer.
//!
//! The backbone itself is not run. Embeddings pass through unchanged between
//! the two reduction points, so every count and selection here is exactly what
//! a real model would see given the same hidden states.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expand::{expand_mask, ExpandParams};
use crate::merge::{matchers, merge_with, split_source_target, MergeParams, MergeReport, DEFAULT_EPSILON};
use crate::rng::RngState;
use crate::sampling::{context_indices, keep_set};
use crate::similarity::{aggregators, anchor_mask, relevance_scores, top_m, AnchorScope};
use crate::types::{BinaryMask, IndexSet, PatchGrid, TokenMatrix};

/// All compression hyperparameters. Field names double as the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub kernel_size: usize,
    pub tau: u32,
    pub context_fraction: f64,
    pub top_m: usize,
    pub merge_mode: String,
    pub merge_layer: usize,
    pub total_layers: usize,
    pub seed: u64,
    pub aggregation: String,
    pub anchor_scope: AnchorScope,
    pub epsilon: f32,
}

impl Default for CompressionConfig {
    /// The LIBERO Goal/Long setting: u = 0.25, m = 80, k = 3, tau = 1, merge at 16 of 32.
    fn default() -> Self {
        Self {
            kernel_size: 3,
            tau: 1,
            context_fraction: 0.25,
            top_m: 80,
            merge_mode: "soft".into(),
            merge_layer: 16,
            total_layers: 32,
            seed: 0,
            aggregation: "max".into(),
            anchor_scope: AnchorScope::Global,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl CompressionConfig {
    pub fn expand_params(&self) -> ExpandParams {
        ExpandParams {
            kernel_size: self.kernel_size,
            tau: self.tau,
        }
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            m: self.top_m,
            mode: self.merge_mode.clone(),
            epsilon: self.epsilon,
            hidden_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.expand_params().validate()?;
        if !(0.0..=1.0).contains(&self.context_fraction) {
            return Err(Error::Param(format!(
                "context_fraction must lie in [0, 1], got {}",
                self.context_fraction
            )));
        }
        if self.merge_layer >= self.total_layers {
            return Err(Error::Param(format!(
                "merge_layer {} must be below total_layers {}",
                self.merge_layer, self.total_layers
            )));
        }
        if self.top_m == 0 {
            return Err(Error::Param("top_m must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Param("epsilon must be positive".into()));
        }
        matchers().get(&self.merge_mode)?;
        aggregators().get(&self.aggregation)?;
        Ok(())
    }
}

/// Visual-token count entering each backbone layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSchedule {
    /// Visual tokens produced by the encoder, before any pruning.
    pub input_visual: usize,
    /// Visual tokens seen by layer `l`.
    pub visual: Vec<usize>,
    /// Language, state and action tokens; never reduced.
    pub non_visual: usize,
}

impl TokenSchedule {
    pub fn flat(visual: usize, non_visual: usize, layers: usize) -> Self {
        Self {
            input_visual: visual,
            visual: vec![visual; layers],
            non_visual,
        }
    }

    /// `kept` visual tokens up to `merge_layer`, `merged` from there on.
    pub fn two_stage(input_visual: usize, kept: usize, merged: usize, merge_layer: usize, layers: usize, non_visual: usize) -> Self {
        let visual = (0..layers)
            .map(|l| if l < merge_layer { kept } else { merged })
            .collect();
        Self {
            input_visual,
            visual,
            non_visual,
        }
    }

    pub fn layers(&self) -> usize {
        self.visual.len()
    }

    pub fn total_at(&self, layer: usize) -> usize {
        self.visual[layer] + self.non_visual
    }

    /// Layers whose visual count is below the previous layer's (layer 0
    /// compares against the encoder output).
    pub fn step_downs(&self) -> Vec<usize> {
        let mut prev = self.input_visual;
        let mut out = Vec::new();
        for (l, &c) in self.visual.iter().enumerate() {
            if c < prev {
                out.push(l);
            }
            prev = c;
        }
        out
    }

    pub fn is_non_increasing(&self) -> bool {
        let mut prev = self.input_visual;
        self.visual.iter().all(|&c| {
            let ok = c <= prev;
            prev = c;
            ok
        })
    }

    pub fn final_visual(&self) -> usize {
        self.visual.last().copied().unwrap_or(self.input_visual)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub prune_ms: f64,
    pub merge_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub visual_tokens: usize,
    pub anchors: usize,
    pub expanded: usize,
    pub context: usize,
    pub keep_size: usize,
    /// Visual tokens dropped before the backbone.
    pub pruned: usize,
    /// Visual tokens folded into sources at the merge layer.
    pub merged: usize,
    pub final_visual: usize,
    pub schedule: TokenSchedule,
    pub kept_indices: IndexSet,
    pub source_indices: IndexSet,
    pub timings: StageTimings,
}

/// Everything stage one produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub kept: TokenMatrix,
    pub kept_idx: IndexSet,
    pub anchors: BinaryMask,
    pub expanded: BinaryMask,
    pub context: IndexSet,
}

/// Stage one: language anchors, expansion and context sampling.
pub fn prune_stage(
    e_img: &TokenMatrix,
    e_lang: &TokenMatrix,
    grid: PatchGrid,
    config: &CompressionConfig,
) -> Result<PruneOutcome> {
    config.validate()?;
    let anchors = anchor_mask(e_lang, e_img, grid, config.anchor_scope)?;
    let mut rng = RngState::new(config.seed);
    let expanded = expand_mask(&anchors, config.expand_params(), &mut rng)?;
    let context = context_indices(grid.total_tokens(), config.context_fraction)?;
    let kept_idx = keep_set(&expanded, &context)?;
    let kept = e_img.select_rows(&kept_idx)?;
    Ok(PruneOutcome {
        kept,
        kept_idx,
        anchors,
        expanded,
        context,
    })
}

/// Stage two: replace the visual rows of `hidden` by `top_m` merged sources.
///
/// Sources keep their relative positions; rows outside `visual_range` are
/// copied through untouched.
pub fn merge_stage(
    hidden: &TokenMatrix,
    guidance: &TokenMatrix,
    visual_range: Range<usize>,
    config: &CompressionConfig,
) -> Result<(TokenMatrix, MergeReport)> {
    if visual_range.start > visual_range.end || visual_range.end > hidden.rows() {
        return Err(Error::Range {
            axis: "visual range",
            index: visual_range.end,
            limit: hidden.rows(),
        });
    }
    let params = config.merge_params();
    params.validate(visual_range.len())?;
    let matcher = matchers().get(&config.merge_mode)?;
    let aggregator = aggregators().get(&config.aggregation)?;

    let visual = hidden.slice_rows(visual_range.clone())?;
    let scores = relevance_scores(&visual, guidance, aggregator.as_ref())?;
    let sources = top_m(&scores, params.m)?;
    let (s, t) = split_source_target(&visual, &sources)?;
    let (merged, mut report) = merge_with(&s, &t, &params, matcher.as_ref())?;
    report.source_indices = sources;

    let before = hidden.slice_rows(0..visual_range.start)?;
    let after = hidden.slice_rows(visual_range.end..hidden.rows())?;
    let out = TokenMatrix::vstack(&[&before, &merged, &after])?;
    Ok((out, report))
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs both stages. Language and guidance tokens form the non-visual part of
/// the sequence and follow the kept visual tokens.
pub fn run_pipeline(
    e_img: &TokenMatrix,
    e_lang: &TokenMatrix,
    guidance: &TokenMatrix,
    grid: PatchGrid,
    config: &CompressionConfig,
) -> Result<PipelineReport> {
    let start = Instant::now();
    let pruned = prune_stage(e_img, e_lang, grid, config)?;
    let prune_ms = elapsed_ms(start);

    let merge_start = Instant::now();
    let kept_count = pruned.kept.rows();
    let hidden = TokenMatrix::vstack(&[&pruned.kept, e_lang, guidance])?;
    let (_, merge) = merge_stage(&hidden, guidance, 0..kept_count, config)?;
    let merge_ms = elapsed_ms(merge_start);

    let visual_tokens = grid.total_tokens();
    let non_visual = e_lang.rows() + guidance.rows();
    let schedule = TokenSchedule::two_stage(
        visual_tokens,
        kept_count,
        merge.tokens_after,
        config.merge_layer,
        config.total_layers,
        non_visual,
    );
    Ok(PipelineReport {
        visual_tokens,
        anchors: pruned.anchors.count(),
        expanded: pruned.expanded.count(),
        context: pruned.context.len(),
        keep_size: kept_count,
        pruned: visual_tokens - kept_count,
        merged: merge.tokens_before - merge.tokens_after,
        final_visual: schedule.final_visual(),
        schedule,
        kept_indices: pruned.kept_idx,
        source_indices: merge.source_indices,
        timings: StageTimings {
            prune_ms,
            merge_ms,
            total_ms: elapsed_ms(start),
        },
    })
}
