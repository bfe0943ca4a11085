//! Line-oriented `key=value` reports with an optional JSON mirror.

use std::fmt::Write as _;

use serde_json::Value;

use crate::merge::MergeReport;
use crate::pipeline::{PipelineReport, PruneOutcome};

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn render_pipeline(r: &PipelineReport, timing: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "visual_tokens={}", r.visual_tokens);
    let _ = writeln!(s, "anchors={}", r.anchors);
    let _ = writeln!(s, "expanded={}", r.expanded);
    let _ = writeln!(s, "context={}", r.context);
    let _ = writeln!(s, "keep_size={}", r.keep_size);
    let _ = writeln!(s, "pruned={}", r.pruned);
    let _ = writeln!(s, "merged={}", r.merged);
    let _ = writeln!(s, "final_visual={}", r.final_visual);
    let _ = writeln!(s, "non_visual={}", r.schedule.non_visual);
    let _ = writeln!(s, "schedule={}", join(&r.schedule.visual));
    let _ = writeln!(s, "step_downs={}", join(r.schedule.step_downs()));
    let _ = writeln!(s, "kept_indices={}", join(r.kept_indices.as_slice()));
    let _ = writeln!(s, "source_indices={}", join(r.source_indices.as_slice()));
    if timing {
        let _ = writeln!(s, "prune_ms={:.6}", r.timings.prune_ms);
        let _ = writeln!(s, "merge_ms={:.6}", r.timings.merge_ms);
        let _ = writeln!(s, "total_ms={:.6}", r.timings.total_ms);
    }
    s
}

pub fn pipeline_json(r: &PipelineReport, timing: bool) -> Value {
    let mut v = serde_json::to_value(r).expect("report serialises");
    if !timing {
        if let Value::Object(map) = &mut v {
            map.remove("timings");
        }
    }
    v
}

pub fn render_prune(p: &PruneOutcome, visual_tokens: usize, elapsed_ms: Option<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "visual_tokens={visual_tokens}");
    let _ = writeln!(s, "anchors={}", p.anchors.count());
    let _ = writeln!(s, "expanded={}", p.expanded.count());
    let _ = writeln!(s, "context={}", p.context.len());
    let _ = writeln!(s, "keep_size={}", p.kept_idx.len());
    let _ = writeln!(s, "pruned={}", visual_tokens - p.kept_idx.len());
    let _ = writeln!(s, "kept_indices={}", join(p.kept_idx.as_slice()));
    if let Some(ms) = elapsed_ms {
        let _ = writeln!(s, "prune_ms={ms:.6}");
    }
    s
}

pub fn render_merge(r: &MergeReport, elapsed_ms: Option<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tokens_before={}", r.tokens_before);
    let _ = writeln!(s, "tokens_after={}", r.tokens_after);
    let _ = writeln!(s, "source_indices={}", join(r.source_indices.as_slice()));
    let _ = writeln!(s, "absorbed={}", join(r.absorbed.iter().map(|w| format!("{w:.6}"))));
    let total: f64 = r.absorbed.iter().map(|&w| f64::from(w)).sum();
    let _ = writeln!(s, "absorbed_total={total:.6}");
    if let Some(ms) = elapsed_ms {
        let _ = writeln!(s, "merge_ms={ms:.6}");
    }
    s
}

/// Reads `key=value` lines back into pairs, skipping blanks.
pub fn parse_kv(text: &str) -> Vec<(&str, &str)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .collect()
}
