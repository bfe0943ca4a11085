//! Cosine similarity between token sets: language anchors and guidance relevance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::types::{BinaryMask, IndexSet, PatchGrid, TokenMatrix};

/// Row-major `rows x cols` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl CosineMatrix {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

/// One relevance score per image token.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f32>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

fn row_norms(m: &TokenMatrix) -> Vec<f64> {
    m.iter_rows()
        .map(|r| r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt())
        .collect()
}

/// Pairwise cosine similarity of the rows of `a` against the rows of `b`.
/// Rows with zero norm score 0 against everything.
pub fn cosine_similarity_matrix(a: &TokenMatrix, b: &TokenMatrix) -> Result<CosineMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "embedding widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Shape("cosine similarity of an empty token set".into()));
    }
    let na = row_norms(a);
    let nb = row_norms(b);
    let mut values = Vec::with_capacity(a.rows() * b.rows());
    for (ra, &norm_a) in a.iter_rows().zip(&na) {
        for (rb, &norm_b) in b.iter_rows().zip(&nb) {
            let denom = norm_a * norm_b;
            if denom == 0.0 {
                values.push(0.0);
                continue;
            }
            let dot: f64 = ra
                .iter()
                .zip(rb)
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum();
            values.push((dot / denom).clamp(-1.0, 1.0) as f32);
        }
    }
    Ok(CosineMatrix {
        rows: a.rows(),
        cols: b.rows(),
        values,
    })
}

/// Which image tokens compete for each language token's argmax.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorScope {
    /// One argmax across the concatenated multi-view sequence.
    #[default]
    Global,
    /// One argmax per view.
    PerView,
}

fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Marks the most similar image token of every language token.
pub fn anchor_mask(
    e_lang: &TokenMatrix,
    e_img: &TokenMatrix,
    grid: PatchGrid,
    scope: AnchorScope,
) -> Result<BinaryMask> {
    if e_img.rows() != grid.total_tokens() {
        return Err(Error::Shape(format!(
            "{} image tokens for a grid of {} cells",
            e_img.rows(),
            grid.total_tokens()
        )));
    }
    if e_lang.rows() == 0 {
        return Err(Error::Shape("no language tokens".into()));
    }
    let sims = cosine_similarity_matrix(e_lang, e_img)?;
    let mut mask = BinaryMask::empty(grid);
    let per_view = grid.cells_per_view();
    for l in 0..sims.rows {
        let row = sims.row(l);
        match scope {
            AnchorScope::Global => mask.set_index(argmax(row))?,
            AnchorScope::PerView => {
                for (v, chunk) in row.chunks_exact(per_view).enumerate() {
                    mask.set_index(v * per_view + argmax(chunk))?;
                }
            }
        }
    }
    Ok(mask)
}

/// Folds one image token's similarities to every guide token into a score.
pub trait GuidanceAggregator: Named + Send + Sync {
    fn aggregate(&self, sims: &[f32]) -> f32;
}

pub struct MaxAggregator;

impl Named for MaxAggregator {
    fn name(&self) -> &'static str {
        "max"
    }
}

impl GuidanceAggregator for MaxAggregator {
    fn aggregate(&self, sims: &[f32]) -> f32 {
        sims.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

pub struct MeanAggregator;

impl Named for MeanAggregator {
    fn name(&self) -> &'static str {
        "mean"
    }
}

impl GuidanceAggregator for MeanAggregator {
    fn aggregate(&self, sims: &[f32]) -> f32 {
        let sum: f64 = sims.iter().map(|&s| f64::from(s)).sum();
        (sum / sims.len() as f64) as f32
    }
}

pub fn aggregators() -> Registry<dyn GuidanceAggregator> {
    let mut reg: Registry<dyn GuidanceAggregator> = Registry::new("aggregation");
    reg.register(Arc::new(MaxAggregator))
        .register(Arc::new(MeanAggregator));
    reg
}

/// Relevance of each image token to a set of guide tokens.
pub fn relevance_scores(
    e_img: &TokenMatrix,
    guides: &TokenMatrix,
    aggregator: &dyn GuidanceAggregator,
) -> Result<ScoreVector> {
    if guides.rows() == 0 {
        return Err(Error::Shape("no guidance tokens".into()));
    }
    if e_img.rows() == 0 {
        if e_img.cols() != guides.cols() {
            return Err(Error::Shape("embedding widths differ".into()));
        }
        return Ok(ScoreVector(Vec::new()));
    }
    let sims = cosine_similarity_matrix(e_img, guides)?;
    Ok(ScoreVector(
        (0..sims.rows).map(|i| aggregator.aggregate(sims.row(i))).collect(),
    ))
}

/// Indices of the `m` highest scores; equal scores prefer the lower index.
pub fn top_m(scores: &ScoreVector, m: usize) -> Result<IndexSet> {
    if m > scores.len() {
        return Err(Error::Range {
            axis: "top_m",
            index: m,
            limit: scores.len(),
        });
    }
    let s = scores.as_slice();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(IndexSet::from_unsorted(order))
}
