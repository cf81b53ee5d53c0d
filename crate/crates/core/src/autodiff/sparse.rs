use super::Tensor;
use crate::error::{Error, Result};

/// Constant sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::ShapeMismatch {
                op: "sparse",
                detail: format!("entry ({r}, {c}) outside {rows}x{cols}"),
            });
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            offsets[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        })
    }

    /// Block-diagonal matrix from dense square blocks.
    pub fn block_diagonal(blocks: &[&Tensor]) -> Result<Self> {
        let n: usize = blocks.iter().map(|b| b.rows()).sum();
        let mut entries = Vec::new();
        let mut base = 0;
        for b in blocks {
            if b.rows() != b.cols() {
                return Err(Error::ShapeMismatch {
                    op: "block_diagonal",
                    detail: format!("block is {}x{}", b.rows(), b.cols()),
                });
            }
            for r in 0..b.rows() {
                for c in 0..b.cols() {
                    let v = b.get(r, c);
                    if v != 0.0 {
                        entries.push((base + r, base + c, v));
                    }
                }
            }
            base += b.rows();
        }
        Self::from_triplets(n, n, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, t.get(r, c) + v);
            }
        }
        t
    }

    pub fn mul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                detail: format!("sparse {}x{} times {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            });
        }
        let mut out = Tensor::zeros(self.rows, x.cols());
        for r in 0..self.rows {
            let span = self.offsets[r]..self.offsets[r + 1];
            for (&c, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                let src = x.row(c);
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * g`.
    pub fn transpose_mul_dense(&self, g: &Tensor) -> Result<Tensor> {
        if self.rows != g.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm_t",
                detail: format!("sparse ({}x{})^T times {}x{}", self.rows, self.cols, g.rows(), g.cols()),
            });
        }
        let mut out = Tensor::zeros(self.cols, g.cols());
        for r in 0..self.rows {
            let span = self.offsets[r]..self.offsets[r + 1];
            let src = g.row(r);
            for (&c, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                for (o, s) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }
}
