//! Token expansion: grow sparse anchor cells into coherent regions.
//!
//! A `k x k` all-ones kernel is convolved over each view's mask with zero
//! padding, giving a density `F`. Cells with `F > tau` are dense: their whole
//! window is switched on. Cells with `0 < F < tau` are sparse: one currently
//! unset cell in their window is switched on at random. Cells with `F == tau`
//! do nothing. Both rules read the density of the input mask; dense dilation
//! runs first, then sparse cells are visited in token order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::types::{BinaryMask, DensityMap, IndexSet, PatchGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandParams {
    pub kernel_size: usize,
    pub tau: u32,
}

impl Default for ExpandParams {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            tau: 1,
        }
    }
}

impl ExpandParams {
    pub fn new(kernel_size: usize, tau: u32) -> Result<Self> {
        let p = Self { kernel_size, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        validate_kernel(self.kernel_size)
    }
}

fn validate_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Param(format!(
            "kernel size must be a positive odd integer, got {k}"
        )));
    }
    Ok(())
}

/// Per-view inclusive prefix sums with a zero guard row and column.
struct PrefixSums {
    width: usize,
    sums: Vec<u32>,
}

impl PrefixSums {
    fn build(height: usize, width: usize, cell: impl Fn(usize, usize) -> bool) -> Self {
        let w1 = width + 1;
        let mut sums = vec![0u32; (height + 1) * w1];
        for i in 0..height {
            let mut run = 0;
            for j in 0..width {
                run += u32::from(cell(i, j));
                sums[(i + 1) * w1 + j + 1] = sums[i * w1 + j + 1] + run;
            }
        }
        Self { width, sums }
    }

    /// Count in rows `r0..r1`, cols `c0..c1` (half-open).
    fn rect(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> u32 {
        let w1 = self.width + 1;
        self.sums[r1 * w1 + c1] + self.sums[r0 * w1 + c0]
            - self.sums[r0 * w1 + c1]
            - self.sums[r1 * w1 + c0]
    }
}

/// Half-open window bounds `(r0, r1, c0, c1)` of the `k x k` window centred
/// at `(row, col)`, clipped to the grid.
fn window_bounds(grid: PatchGrid, row: usize, col: usize, k: usize) -> (usize, usize, usize, usize) {
    let r = k / 2;
    (
        row.saturating_sub(r),
        (row + r + 1).min(grid.height),
        col.saturating_sub(r),
        (col + r + 1).min(grid.width),
    )
}

/// Token indices inside the `k x k` window centred at token `idx`, in token order.
pub fn window_cells(grid: PatchGrid, idx: usize, k: usize) -> Result<Vec<usize>> {
    validate_kernel(k)?;
    let (view, row, col) = grid.unflatten_index(idx)?;
    let (r0, r1, c0, c1) = window_bounds(grid, row, col, k);
    let base = view * grid.cells_per_view();
    let mut cells = Vec::with_capacity((r1 - r0) * (c1 - c0));
    for i in r0..r1 {
        for j in c0..c1 {
            cells.push(base + i * grid.width + j);
        }
    }
    Ok(cells)
}

/// Number of set cells in each cell's `k x k` neighbourhood, per view, zero padded.
pub fn density_map(mask: &BinaryMask, k: usize) -> Result<DensityMap> {
    validate_kernel(k)?;
    let grid = mask.grid();
    let per_view = grid.cells_per_view();
    let mut counts = Vec::with_capacity(grid.total_tokens());
    for v in 0..grid.views {
        let bits = &mask.bits()[v * per_view..(v + 1) * per_view];
        let ps = PrefixSums::build(grid.height, grid.width, |i, j| bits[i * grid.width + j]);
        for i in 0..grid.height {
            for j in 0..grid.width {
                let (r0, r1, c0, c1) = window_bounds(grid, i, j, k);
                counts.push(ps.rect(r0, r1, c0, c1));
            }
        }
    }
    Ok(DensityMap {
        grid,
        kernel: k,
        counts,
    })
}

/// Cells of the dense (`F > tau`) and sparse (`0 < F < tau`) neighbourhood sets.
pub fn neighbourhood_sets(density: &DensityMap, tau: u32) -> (IndexSet, IndexSet) {
    let mut dense = Vec::new();
    let mut sparse = Vec::new();
    for (i, &f) in density.counts().iter().enumerate() {
        if f > tau {
            dense.push(i);
        } else if f > 0 && f < tau {
            sparse.push(i);
        }
    }
    (IndexSet::from_unsorted(dense), IndexSet::from_unsorted(sparse))
}

/// Expands `mask` by dense dilation followed by seeded sparse flips.
pub fn expand_mask(mask: &BinaryMask, params: ExpandParams, rng: &mut RngState) -> Result<BinaryMask> {
    params.validate()?;
    let k = params.kernel_size;
    let density = density_map(mask, k)?;
    let grid = mask.grid();
    let per_view = grid.cells_per_view();
    let tau = params.tau;
    let mut out = mask.clone();

    // Dense rule: a cell lies in some dense window iff a dense centre lies in
    // its own window, since windows are symmetric.
    let counts = density.counts();
    for v in 0..grid.views {
        let base = v * per_view;
        let ps = PrefixSums::build(grid.height, grid.width, |i, j| {
            counts[base + i * grid.width + j] > tau
        });
        let bits = out.bits_mut();
        for i in 0..grid.height {
            for j in 0..grid.width {
                let (r0, r1, c0, c1) = window_bounds(grid, i, j, k);
                if ps.rect(r0, r1, c0, c1) > 0 {
                    bits[base + i * grid.width + j] = true;
                }
            }
        }
    }

    // Sparse rule, visited in token order so one rng stream is reproducible.
    if tau > 1 {
        let mut candidates = Vec::with_capacity(k * k);
        for (idx, &f) in counts.iter().enumerate() {
            if f == 0 || f >= tau {
                continue;
            }
            let view = idx / per_view;
            let rem = idx % per_view;
            let (r0, r1, c0, c1) = window_bounds(grid, rem / grid.width, rem % grid.width, k);
            let base = view * per_view;
            candidates.clear();
            let bits = out.bits();
            for i in r0..r1 {
                for j in c0..c1 {
                    let cell = base + i * grid.width + j;
                    if !bits[cell] {
                        candidates.push(cell);
                    }
                }
            }
            if !candidates.is_empty() {
                let pick = candidates[rng.index(candidates.len())];
                out.bits_mut()[pick] = true;
            }
        }
    }
    Ok(out)
}
