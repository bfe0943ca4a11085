//! Brute-force reference evaluators used by the integration and acceptance
//! tests. None of these call into the library's computational routines.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamc::{BinaryMask, PatchGrid, RngState, TokenMatrix};

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> TokenMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    TokenMatrix::new(rows, cols, data).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Set of argmax image tokens over all language tokens, lower index on ties.
pub fn argmax_anchors(lang: &TokenMatrix, img: &TokenMatrix) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for l in 0..lang.rows() {
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..img.rows() {
            let c = cosine(lang.row(l), img.row(i)) as f32 as f64;
            if c > best.0 {
                best = (c, i);
            }
        }
        out.insert(best.1);
    }
    out
}

fn in_window(r: isize, i: isize, j: isize, g: PatchGrid) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for y in i - r..=i + r {
        for x in j - r..=j + r {
            if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                cells.push((y as usize, x as usize));
            }
        }
    }
    cells
}

/// Direct neighbourhood counts, view by view.
pub fn naive_density(bits: &[bool], g: PatchGrid, k: usize) -> Vec<u32> {
    let r = (k / 2) as isize;
    let per = g.height * g.width;
    let mut f = Vec::with_capacity(bits.len());
    for v in 0..g.views {
        for i in 0..g.height {
            for j in 0..g.width {
                let n = in_window(r, i as isize, j as isize, g)
                    .into_iter()
                    .filter(|&(y, x)| bits[v * per + y * g.width + x])
                    .count();
                f.push(n as u32);
            }
        }
    }
    f
}

/// Rule-by-rule expansion: dense windows switched on, then one random unset
/// cell per sparse centre (token order, candidates in row-major window order).
pub fn naive_expand(mask: &BinaryMask, k: usize, tau: u32, rng: &mut RngState) -> Vec<bool> {
    let g = mask.grid();
    let per = g.height * g.width;
    let r = (k / 2) as isize;
    let f = naive_density(mask.bits(), g, k);
    let mut out = mask.bits().to_vec();
    let window = |c: usize| -> Vec<usize> {
        let v = c / per;
        let (i, j) = ((c % per) / g.width, c % g.width);
        in_window(r, i as isize, j as isize, g)
            .into_iter()
            .map(|(y, x)| v * per + y * g.width + x)
            .collect()
    };
    let dense: Vec<usize> = (0..f.len()).filter(|&c| f[c] > tau).collect();
    let sparse: Vec<usize> = (0..f.len()).filter(|&c| f[c] > 0 && f[c] < tau).collect();
    for c in dense {
        for n in window(c) {
            out[n] = true;
        }
    }
    for c in sparse {
        let cand: Vec<usize> = window(c).into_iter().filter(|&n| !out[n]).collect();
        if !cand.is_empty() {
            out[cand[rng.index(cand.len())]] = true;
        }
    }
    out
}

/// Union of windows around dense centres, ignoring the random rule.
pub fn dense_region(mask: &BinaryMask, k: usize, tau: u32) -> BTreeSet<usize> {
    let g = mask.grid();
    let per = g.height * g.width;
    let r = (k / 2) as isize;
    let f = naive_density(mask.bits(), g, k);
    let mut out = BTreeSet::new();
    for c in 0..f.len() {
        if f[c] > tau {
            let v = c / per;
            for (y, x) in in_window(r, ((c % per) / g.width) as isize, (c % g.width) as isize, g) {
                out.insert(v * per + y * g.width + x);
            }
        }
    }
    out
}

/// Every cell some sparse centre could flip.
pub fn sparse_reach(mask: &BinaryMask, k: usize, tau: u32) -> BTreeSet<usize> {
    let g = mask.grid();
    let per = g.height * g.width;
    let r = (k / 2) as isize;
    let f = naive_density(mask.bits(), g, k);
    let mut out = BTreeSet::new();
    for c in 0..f.len() {
        if f[c] > 0 && f[c] < tau {
            let v = c / per;
            for (y, x) in in_window(r, ((c % per) / g.width) as isize, (c % g.width) as isize, g) {
                out.insert(v * per + y * g.width + x);
            }
        }
    }
    out
}

pub struct MergeOracle {
    pub w: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub merged: Vec<Vec<f64>>,
}

fn rms(x: &[f32], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    x.iter().map(|&v| v as f64 / (ms + eps).sqrt()).collect()
}

/// Literal evaluation: similarity, softmax (or one-hot), aggregation, weight
/// totals and the normalised source update.
pub fn merge_oracle(src: &TokenMatrix, tgt: &TokenMatrix, eps: f64, hard: bool) -> MergeOracle {
    let (ns, nt, d) = (src.rows(), tgt.rows(), src.cols());
    let rs: Vec<Vec<f64>> = (0..ns).map(|j| rms(src.row(j), eps)).collect();
    let rt: Vec<Vec<f64>> = (0..nt).map(|i| rms(tgt.row(i), eps)).collect();
    let sim: Vec<Vec<f64>> = (0..nt)
        .map(|i| {
            (0..ns)
                .map(|j| (0..d).map(|c| rt[i][c] * rs[j][c]).sum::<f64>() / (d as f64).sqrt())
                .collect()
        })
        .collect();
    let w: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| {
            if hard {
                let mut best = 0;
                for j in 1..ns {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                (0..ns).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
            } else {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                row.iter().map(|v| v.exp() / z).collect()
            }
        })
        .collect();
    let a: Vec<Vec<f64>> = (0..ns)
        .map(|j| (0..d).map(|c| (0..nt).map(|i| w[i][j] * tgt.row(i)[c] as f64).sum()).collect())
        .collect();
    let s: Vec<f64> = (0..ns).map(|j| (0..nt).map(|i| w[i][j]).sum()).collect();
    let merged = (0..ns)
        .map(|j| (0..d).map(|c| (src.row(j)[c] as f64 + a[j][c]) / (1.0 + s[j])).collect())
        .collect();
    MergeOracle { w, a, s, merged }
}

pub fn flops_oracle(n: u128, d: u128, ff: u128) -> u128 {
    let projections = 4 * (2 * n * d * d);
    let scores = 2 * n * n * d;
    let weighted_sum = 2 * n * n * d;
    let ffn = 2 * (2 * n * d * ff);
    projections + scores + weighted_sum + ffn
}

/// Stride oracle: element t of `count` samples out of n.
pub fn stride_set(n: usize, count: usize) -> BTreeSet<usize> {
    (0..count).map(|t| t * n / count).collect()
}
