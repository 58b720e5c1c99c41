use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Rows handed to one rayon task in [`spmm`].
const SPMM_ROW_BLOCK: usize = 64;

/// Compressed sparse row matrix of `f32` values.
///
/// Column indices are strictly increasing within each row and no explicit
/// zeros are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f32>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f32)>,
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f32)>> = vec![Vec::new(); rows];
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidMatrix(format!("non-finite entry at ({r}, {c})")));
            }
            per_row[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut entries in per_row {
            entries.sort_by_key(|&(c, _)| c);
            let mut iter = entries.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Validating constructor from raw CSR arrays.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidMatrix(msg));
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return bad("row_offsets must have length rows+1 and start at 0".into());
        }
        if col_indices.len() != values.len() || row_offsets[rows] != values.len() {
            return bad("row_offsets[rows] must equal the number of stored values".into());
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return bad(format!("row_offsets decrease at row {r}"));
            }
            for idx in lo..hi {
                if col_indices[idx] >= cols {
                    return bad(format!("column {} out of range in row {r}", col_indices[idx]));
                }
                if idx > lo && col_indices[idx] <= col_indices[idx - 1] {
                    return bad(format!("columns not strictly increasing in row {r}"));
                }
                if values[idx] == 0.0 {
                    return bad(format!("explicit zero stored in row {r}"));
                }
                if !values[idx].is_finite() {
                    return bad(format!("non-finite value stored in row {r}"));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Converts a dense matrix, dropping exact zeros.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), triplets).expect("dense entries are in range")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f32]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.iter() {
            out.set(i, j, v);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0f32; self.nnz()];
        // Rows are visited in increasing order, so each output row stays sorted.
        for (i, j, v) in self.iter() {
            let p = next[j];
            col_indices[p] = i;
            values[p] = v;
            next[j] += 1;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// True when `|a_ij - a_ji| <= tol` for every stored entry.
    pub fn is_symmetric(&self, tol: f32) -> bool {
        if self.rows != self.cols {
            return false;
        }
        self.iter().all(|(i, j, v)| (v - self.get(j, i)).abs() <= tol)
    }

    /// Sum of each row, accumulated in f64.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).1.iter().map(|&v| v as f64).sum())
            .collect()
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.rows.min(self.cols)).all(|i| self.get(i, i) == 0.0)
    }

    /// Returns a copy with every entry multiplied by `s`.
    pub fn scale(&self, s: f32) -> Self {
        let triplets = self.iter().map(|(i, j, v)| (i, j, v * s));
        Self::from_triplets(self.rows, self.cols, triplets).expect("same pattern")
    }

    /// Returns `self + I`. Requires a square matrix.
    pub fn add_identity(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_identity",
                left: self.shape(),
                right: (self.rows, self.rows),
            });
        }
        let triplets = self.iter().chain((0..self.rows).map(|i| (i, i, 1.0)));
        Self::from_triplets(self.rows, self.cols, triplets)
    }

    /// Matrix-vector product in f64.
    pub fn matvec_f64(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v as f64 * x[j]).sum()
            })
            .collect()
    }
}

/// Sparse-dense product `P X`.
///
/// Rows are processed in blocks in parallel; each output row is accumulated
/// in f64 over the row's stored entries in column order, so the result is
/// identical for any thread count.
pub fn spmm(p: &CsrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if p.cols != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "spmm",
            left: p.shape(),
            right: x.shape(),
        });
    }
    let n = x.cols();
    let mut out = DenseMatrix::zeros(p.rows, n);
    if n == 0 || p.rows == 0 {
        return Ok(out);
    }
    out.data_mut()
        .par_chunks_mut(SPMM_ROW_BLOCK * n)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut acc = vec![0.0f64; n];
            let first = block * SPMM_ROW_BLOCK;
            for (offset, out_row) in chunk.chunks_mut(n).enumerate() {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let (cols, vals) = p.row(first + offset);
                for (&j, &v) in cols.iter().zip(vals) {
                    let v = v as f64;
                    for (a, &xv) in acc.iter_mut().zip(x.row(j)) {
                        *a += v * xv as f64;
                    }
                }
                for (o, &a) in out_row.iter_mut().zip(acc.iter()) {
                    *o = a as f32;
                }
            }
        });
    Ok(out)
}

/// Sparse-sparse product `A B` (row-wise Gustavson with a dense accumulator).
pub fn spgemm(a: &CsrMatrix, b: &CsrMatrix) -> Result<CsrMatrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "spgemm",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let rows: Vec<(Vec<usize>, Vec<f32>)> = (0..a.rows)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; b.cols], vec![false; b.cols]),
            |(acc, seen), i| {
                let mut touched = Vec::new();
                let (acols, avals) = a.row(i);
                for (&k, &av) in acols.iter().zip(avals) {
                    let (bcols, bvals) = b.row(k);
                    for (&j, &bv) in bcols.iter().zip(bvals) {
                        if !seen[j] {
                            seen[j] = true;
                            touched.push(j);
                        }
                        acc[j] += av as f64 * bv as f64;
                    }
                }
                touched.sort_unstable();
                let mut cols = Vec::with_capacity(touched.len());
                let mut vals = Vec::with_capacity(touched.len());
                for j in touched {
                    let v = acc[j] as f32;
                    if v != 0.0 {
                        cols.push(j);
                        vals.push(v);
                    }
                    acc[j] = 0.0;
                    seen[j] = false;
                }
                (cols, vals)
            },
        )
        .collect();
    let mut row_offsets = Vec::with_capacity(a.rows + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    for (cols, vals) in rows {
        col_indices.extend(cols);
        values.extend(vals);
        row_offsets.push(col_indices.len());
    }
    Ok(CsrMatrix {
        rows: a.rows,
        cols: b.cols,
        row_offsets,
        col_indices,
        values,
    })
}
