//! Synthetic visual workloads with planted foreground blocks.
//!
//! Each planted block `b` owns a unit "instruction" direction `l_b`; all
//! instruction directions are mutually orthogonal. A block cell's embedding is
//! `a·l_b + sqrt(1-a²)·w` with `a` drawn from `[margin, 1]` and `w` a unit
//! vector orthogonal to every instruction direction, so its cosine to `l_b` is
//! exactly `a`. Background cells lean slightly away from every instruction
//! direction (cosine `<= 0`). Every block cell therefore beats every
//! background cell by at least `margin` against its own instruction token.
//!
//! Language tokens are verbatim copies of a random `anchor_fraction` of each
//! block's cells, so their similarity argmax lands exactly on those cells.
//! Each embedding is finally scaled by a random factor in `[0.5, 2]`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::types::{BinaryMask, IndexSet, PatchGrid, TokenMatrix};

const BACKGROUND_LEAN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub blocks: usize,
    pub block_min: usize,
    pub block_max: usize,
    pub dim: usize,
    /// Minimum cosine gap between block and background cells.
    pub margin: f64,
    /// Share of each block's cells copied into language tokens.
    pub anchor_fraction: f64,
    /// Extra action-like guidance tokens besides the instruction tokens.
    pub guide_tokens: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            views: 2,
            height: 16,
            width: 16,
            blocks: 2,
            block_min: 4,
            block_max: 6,
            dim: 64,
            margin: 0.5,
            anchor_fraction: 0.3,
            guide_tokens: 4,
            seed: 0,
        }
    }
}

impl WorkloadSpec {
    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.views, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::Param(format!("margin must lie in (0, 1), got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.anchor_fraction) {
            return Err(Error::Param(format!(
                "anchor_fraction must lie in [0, 1], got {}",
                self.anchor_fraction
            )));
        }
        if self.blocks > 0 {
            if self.block_min == 0 || self.block_min > self.block_max {
                return Err(Error::Param(format!(
                    "block size range {}..={} is empty",
                    self.block_min, self.block_max
                )));
            }
            if self.block_max > grid.height.min(grid.width) {
                return Err(Error::Param(format!(
                    "blocks up to {} do not fit a {}x{} view",
                    self.block_max, grid.height, grid.width
                )));
            }
        }
        if self.dim < self.blocks + 2 {
            return Err(Error::Param(format!(
                "embedding dim {} too small for {} blocks (needs blocks + 2)",
                self.dim, self.blocks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub grid: PatchGrid,
    pub e_img: TokenMatrix,
    pub e_lang: TokenMatrix,
    /// One unit direction per planted block.
    pub instruction: TokenMatrix,
    pub guidance: TokenMatrix,
    pub truth: BinaryMask,
    /// Token indices of each planted block.
    pub blocks: Vec<IndexSet>,
    /// Cells whose embeddings were copied into `e_lang`.
    pub anchor_cells: IndexSet,
}

fn gaussian(rng: &mut RngState, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.inner_mut().sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalise(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Random unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_unit(rng: &mut RngState, dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        if dot(&v, &v) > 1e-6 {
            normalise(&mut v);
            return v;
        }
    }
}

fn place_blocks(spec: &WorkloadSpec, grid: PatchGrid, rng: &mut RngState) -> Result<Vec<IndexSet>> {
    let mut occupied = BinaryMask::empty(grid);
    let mut blocks = Vec::with_capacity(spec.blocks);
    for b in 0..spec.blocks {
        let size = spec.block_min + rng.index(spec.block_max - spec.block_min + 1);
        let mut placed = None;
        for _ in 0..1000 {
            let view = rng.index(grid.views);
            let row = rng.index(grid.height - size + 1);
            let col = rng.index(grid.width - size + 1);
            let cells: Vec<usize> = (row..row + size)
                .flat_map(|i| (col..col + size).map(move |j| (i, j)))
                .map(|(i, j)| grid.flatten_index(view, i, j))
                .collect::<Result<_>>()?;
            if cells.iter().all(|&c| !occupied.is_set(c)) {
                placed = Some(cells);
                break;
            }
        }
        let cells = placed.ok_or_else(|| {
            Error::Param(format!("could not place block {b} without overlap"))
        })?;
        for &c in &cells {
            occupied.set_index(c)?;
        }
        blocks.push(IndexSet::from_unsorted(cells));
    }
    Ok(blocks)
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let grid = spec.grid()?;
    let dim = spec.dim;
    let mut rng = RngState::new(spec.seed);

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(spec.blocks);
    for _ in 0..spec.blocks {
        let v = orthogonal_unit(&mut rng, dim, &directions);
        directions.push(v);
    }
    let lean: Vec<f64> = if directions.is_empty() {
        vec![0.0; dim]
    } else {
        let mut u = vec![0.0; dim];
        for d in &directions {
            u.iter_mut().zip(d).for_each(|(x, y)| *x += y);
        }
        normalise(&mut u);
        u
    };

    let blocks = place_blocks(spec, grid, &mut rng)?;
    let mut owner = vec![None; grid.total_tokens()];
    for (b, cells) in blocks.iter().enumerate() {
        for &c in cells.as_slice() {
            owner[c] = Some(b);
        }
    }

    let mut data = Vec::with_capacity(grid.total_tokens() * dim);
    for cell_owner in &owner {
        let (axis, along) = match *cell_owner {
            Some(b) => (&directions[b], spec.margin + (1.0 - spec.margin) * rng.unit()),
            None => (&lean, -BACKGROUND_LEAN * rng.unit()),
        };
        let w = orthogonal_unit(&mut rng, dim, &directions);
        let across = (1.0 - along * along).max(0.0).sqrt();
        let scale = 0.5 + 1.5 * rng.unit();
        data.extend(
            axis.iter()
                .zip(&w)
                .map(|(a, x)| (scale * (along * a + across * x)) as f32),
        );
    }
    let e_img = TokenMatrix::new(grid.total_tokens(), dim, data)?;

    let mut anchors = Vec::new();
    for cells in &blocks {
        let n = ((spec.anchor_fraction * cells.len() as f64) + 1e-9).floor() as usize;
        let n = n.max(1).min(cells.len());
        for i in sample(rng.inner_mut(), cells.len(), n) {
            anchors.push(cells.as_slice()[i]);
        }
    }
    let anchor_cells = IndexSet::from_unsorted(anchors);
    let e_lang = if anchor_cells.is_empty() {
        let v: Vec<f32> = gaussian(&mut rng, dim).into_iter().map(|x| x as f32).collect();
        TokenMatrix::new(1, dim, v)?
    } else {
        e_img.select_rows(&anchor_cells)?
    };

    let instruction = TokenMatrix::new(
        directions.len(),
        dim,
        directions.iter().flatten().map(|&x| x as f32).collect(),
    )?;
    let mut guide_rows: Vec<Vec<f32>> = directions
        .iter()
        .map(|d| d.iter().map(|&x| x as f32).collect())
        .collect();
    for g in 0..spec.guide_tokens {
        let mut v = gaussian(&mut rng, dim);
        normalise(&mut v);
        if let Some(d) = directions.get(g % directions.len().max(1)) {
            v.iter_mut().zip(d).for_each(|(x, y)| *x = 0.4 * *x + 0.9 * y);
        }
        guide_rows.push(v.into_iter().map(|x| x as f32).collect());
    }
    if guide_rows.is_empty() {
        guide_rows.push(gaussian(&mut rng, dim).into_iter().map(|x| x as f32).collect());
    }
    let guidance = TokenMatrix::from_rows(&guide_rows)?;

    let truth_cells: Vec<usize> = blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect();
    let truth = BinaryMask::from_indices(grid, &truth_cells)?;
    Ok(Workload {
        grid,
        e_img,
        e_lang,
        instruction,
        guidance,
        truth,
        blocks,
        anchor_cells,
    })
}
