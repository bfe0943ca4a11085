//! Timed repetitions of individual pipeline stages on a synthetic workload.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expand::expand_mask;
use crate::pipeline::{merge_stage, prune_stage, run_pipeline, CompressionConfig};
use crate::registry::{Named, Registry};
use crate::rng::RngState;
use crate::sampling::{context_indices, keep_set};
use crate::similarity::anchor_mask;
use crate::types::{BinaryMask, TokenMatrix};
use crate::workload::Workload;

/// Inputs shared by every stage, prepared once outside the timed region.
pub struct BenchContext {
    pub workload: Workload,
    pub config: CompressionConfig,
    pub anchors: BinaryMask,
    pub hidden: TokenMatrix,
    pub kept: usize,
}

impl BenchContext {
    pub fn new(workload: Workload, config: CompressionConfig) -> Result<Self> {
        let pruned = prune_stage(&workload.e_img, &workload.e_lang, workload.grid, &config)?;
        let hidden = TokenMatrix::vstack(&[&pruned.kept, &workload.e_lang, &workload.guidance])?;
        Ok(Self {
            anchors: pruned.anchors,
            kept: pruned.kept.rows(),
            hidden,
            workload,
            config,
        })
    }
}

pub trait BenchStage: Named + Send + Sync {
    /// One timed call. `rep` lets stages vary their rng seed per call.
    fn run(&self, ctx: &BenchContext, rep: u64) -> Result<()>;
}

macro_rules! stage {
    ($ty:ident, $name:literal, |$ctx:ident, $rep:ident| $body:expr) => {
        pub struct $ty;

        impl Named for $ty {
            fn name(&self) -> &'static str {
                $name
            }
        }

        impl BenchStage for $ty {
            fn run(&self, $ctx: &BenchContext, $rep: u64) -> Result<()> {
                $body.map(|_| ())
            }
        }
    };
}

stage!(AnchorStage, "anchor", |ctx, _rep| anchor_mask(
    &ctx.workload.e_lang,
    &ctx.workload.e_img,
    ctx.workload.grid,
    ctx.config.anchor_scope
));
stage!(ExpandStage, "expand", |ctx, rep| expand_mask(
    &ctx.anchors,
    ctx.config.expand_params(),
    &mut RngState::new(ctx.config.seed.wrapping_add(rep))
));
stage!(ContextStage, "context", |ctx, _rep| context_indices(
    ctx.workload.grid.total_tokens(),
    ctx.config.context_fraction
)
.and_then(|c| keep_set(&ctx.anchors, &c)));
stage!(PruneStage, "prune", |ctx, _rep| prune_stage(
    &ctx.workload.e_img,
    &ctx.workload.e_lang,
    ctx.workload.grid,
    &ctx.config
));
stage!(MergeStage, "merge", |ctx, _rep| merge_stage(
    &ctx.hidden,
    &ctx.workload.guidance,
    0..ctx.kept,
    &ctx.config
));
stage!(PipelineStage, "pipeline", |ctx, _rep| run_pipeline(
    &ctx.workload.e_img,
    &ctx.workload.e_lang,
    &ctx.workload.guidance,
    ctx.workload.grid,
    &ctx.config
));

pub fn stages() -> Registry<dyn BenchStage> {
    let mut reg: Registry<dyn BenchStage> = Registry::new("bench stage");
    reg.register(Arc::new(AnchorStage))
        .register(Arc::new(ExpandStage))
        .register(Arc::new(ContextStage))
        .register(Arc::new(PruneStage))
        .register(Arc::new(MergeStage))
        .register(Arc::new(PipelineStage));
    reg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub stage: String,
    pub reps: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of ascending `sorted`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn summarise(stage: &str, mut samples_ms: Vec<f64>) -> Result<BenchResult> {
    if samples_ms.is_empty() {
        return Err(Error::Param("no samples".into()));
    }
    samples_ms.sort_by(f64::total_cmp);
    let mean = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    Ok(BenchResult {
        stage: stage.to_string(),
        reps: samples_ms.len(),
        mean_ms: mean,
        p50_ms: percentile(&samples_ms, 0.50),
        p95_ms: percentile(&samples_ms, 0.95),
        min_ms: samples_ms[0],
        max_ms: samples_ms[samples_ms.len() - 1],
    })
}

/// Times `reps` sequential calls of `stage` on one thread, after one warm-up call.
pub fn run_bench(stage: &dyn BenchStage, ctx: &BenchContext, reps: usize) -> Result<BenchResult> {
    if reps == 0 {
        return Err(Error::Param("reps must be positive".into()));
    }
    stage.run(ctx, u64::MAX)?;
    let mut samples = Vec::with_capacity(reps);
    for rep in 0..reps {
        let t = Instant::now();
        stage.run(ctx, rep as u64)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    summarise(stage.name(), samples)
}

pub fn render(r: &BenchResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stage={}", r.stage);
    let _ = writeln!(s, "reps={}", r.reps);
    let _ = writeln!(s, "mean_ms={:.6}", r.mean_ms);
    let _ = writeln!(s, "p50_ms={:.6}", r.p50_ms);
    let _ = writeln!(s, "p95_ms={:.6}", r.p95_ms);
    let _ = writeln!(s, "min_ms={:.6}", r.min_ms);
    let _ = writeln!(s, "max_ms={:.6}", r.max_ms);
    s
}
