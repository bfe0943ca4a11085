//! Token matrices, patch-grid geometry, masks and index sets.
//!
//! Visual tokens are laid out view-major, then row-major inside each view:
//! token `view * (height * width) + row * width + col`. For the usual
//! two-camera setup the first view's tokens come first, then the second's.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of `f32` token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    /// Builds a matrix, rejecting `cols == 0`, a length mismatch, or any NaN/Inf.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::Shape("token matrix needs at least one column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Gathers the rows at `indices`, in order.
    pub fn select_rows(&self, indices: &IndexSet) -> Result<Self> {
        indices.check_bound(self.rows)?;
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices.as_slice() {
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Stacks `parts` vertically. All parts must share a column count.
    pub fn vstack(parts: &[&TokenMatrix]) -> Result<Self> {
        let cols = parts
            .first()
            .map(|m| m.cols)
            .ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for m in parts {
            if m.cols != cols {
                return Err(Error::Shape(format!(
                    "cannot stack {} columns onto {cols}",
                    m.cols
                )));
            }
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.rows {
            return Err(Error::Range {
                axis: "row",
                index: range.end,
                limit: self.rows,
            });
        }
        Ok(Self {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        })
    }
}

/// Geometry of a stack of `views` patch grids, each `height x width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchGrid {
    pub views: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchGrid {
    pub fn new(views: usize, height: usize, width: usize) -> Result<Self> {
        if views == 0 || height == 0 || width == 0 {
            return Err(Error::Param(format!(
                "grid dimensions must be positive, got {views}x{height}x{width}"
            )));
        }
        Ok(Self {
            views,
            height,
            width,
        })
    }

    pub fn cells_per_view(&self) -> usize {
        self.height * self.width
    }

    pub fn total_tokens(&self) -> usize {
        self.views * self.cells_per_view()
    }

    pub fn flatten_index(&self, view: usize, row: usize, col: usize) -> Result<usize> {
        check_axis("view", view, self.views)?;
        check_axis("row", row, self.height)?;
        check_axis("col", col, self.width)?;
        Ok(view * self.cells_per_view() + row * self.width + col)
    }

    pub fn unflatten_index(&self, idx: usize) -> Result<(usize, usize, usize)> {
        check_axis("token", idx, self.total_tokens())?;
        let per_view = self.cells_per_view();
        let rem = idx % per_view;
        Ok((idx / per_view, rem / self.width, rem % self.width))
    }
}

fn check_axis(axis: &'static str, index: usize, limit: usize) -> Result<()> {
    if index < limit {
        Ok(())
    } else {
        Err(Error::Range { axis, index, limit })
    }
}

/// One relevance bit per grid cell, stacked per view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: PatchGrid,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(grid: PatchGrid) -> Self {
        Self {
            grid,
            bits: vec![false; grid.total_tokens()],
        }
    }

    pub fn full(grid: PatchGrid) -> Self {
        Self {
            grid,
            bits: vec![true; grid.total_tokens()],
        }
    }

    pub fn from_bits(grid: PatchGrid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.total_tokens() {
            return Err(Error::Shape(format!(
                "{} mask bits for a grid of {} cells",
                bits.len(),
                grid.total_tokens()
            )));
        }
        Ok(Self { grid, bits })
    }

    pub fn from_indices(grid: PatchGrid, indices: &[usize]) -> Result<Self> {
        let mut mask = Self::empty(grid);
        for &i in indices {
            mask.set_index(i)?;
        }
        Ok(mask)
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, view: usize, row: usize, col: usize) -> bool {
        self.bits[view * self.grid.cells_per_view() + row * self.grid.width + col]
    }

    pub fn is_set(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    pub fn set_index(&mut self, idx: usize) -> Result<()> {
        check_axis("token", idx, self.bits.len())?;
        self.bits[idx] = true;
        Ok(())
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Token indices of set cells, ascending.
    pub fn to_index_set(&self) -> IndexSet {
        IndexSet(
            self.bits
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect(),
        )
    }

    /// The single-view mask for `view`.
    pub fn view(&self, view: usize) -> Result<BinaryMask> {
        check_axis("view", view, self.grid.views)?;
        let n = self.grid.cells_per_view();
        Ok(BinaryMask {
            grid: PatchGrid {
                views: 1,
                ..self.grid
            },
            bits: self.bits[view * n..(view + 1) * n].to_vec(),
        })
    }

    /// Stacks single-view masks sharing one `height x width` into a multi-view mask.
    pub fn stack(views: &[BinaryMask]) -> Result<BinaryMask> {
        let first = views
            .first()
            .ok_or_else(|| Error::Shape("no views to stack".into()))?
            .grid;
        let mut bits = Vec::new();
        for m in views {
            if m.grid.height != first.height || m.grid.width != first.width {
                return Err(Error::Shape("view sizes differ".into()));
            }
            bits.extend_from_slice(&m.bits);
        }
        let grid = PatchGrid::new(bits.len() / first.cells_per_view(), first.height, first.width)?;
        Ok(BinaryMask { grid, bits })
    }
}

/// Per-cell count of set mask bits inside a `kernel x kernel` window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityMap {
    pub(crate) grid: PatchGrid,
    pub(crate) kernel: usize,
    pub(crate) counts: Vec<u32>,
}

impl DensityMap {
    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, view: usize, row: usize, col: usize) -> u32 {
        self.counts[view * self.grid.cells_per_view() + row * self.grid.width + col]
    }
}

/// Strictly increasing token indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Sorts and deduplicates arbitrary indices.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    /// Wraps indices that are already strictly increasing.
    pub fn from_sorted(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Param("indices are not strictly increasing".into()));
        }
        Ok(Self(indices))
    }

    pub fn range(range: std::ops::Range<usize>) -> Self {
        Self(range.collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.binary_search(&idx).is_ok()
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        IndexSet(out)
    }

    /// Indices in `0..n` not present in `self`.
    pub fn complement(&self, n: usize) -> IndexSet {
        let mut out = Vec::with_capacity(n.saturating_sub(self.len()));
        let mut it = self.0.iter().peekable();
        for i in 0..n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSet(out)
    }

    pub fn check_bound(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(Error::Range {
                axis: "token",
                index: last,
                limit: n,
            }),
            _ => Ok(()),
        }
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Self {
        s.0
    }
}
