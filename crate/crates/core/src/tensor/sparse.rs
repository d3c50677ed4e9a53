use std::sync::{Arc, OnceLock};

use super::TensorError;

/// Compressed sparse row matrix with constant (non-differentiable) weights.
#[derive(Debug)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    transposed: OnceLock<Arc<SparseMatrix>>,
}

impl Clone for SparseMatrix {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.clone(),
            transposed: OnceLock::new(),
        }
    }
}

impl PartialEq for SparseMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.indptr == other.indptr
            && self.indices == other.indices
            && self.values == other.values
    }
}

impl SparseMatrix {
    /// Builds from `(row, col, weight)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, TensorError> {
        for &(r, c, w) in triplets {
            if r >= rows || c >= cols {
                return Err(TensorError::Sparse(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
            if !w.is_finite() {
                return Err(TensorError::Sparse(format!("non-finite weight at ({r}, {c})")));
            }
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += w;
                continue;
            }
            indices.push(c);
            values.push(w);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self { rows, cols, indptr, indices, values, transposed: OnceLock::new() })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
            transposed: OnceLock::new(),
        }
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

    /// Nonzeros of row `r` as `(col, weight)`, in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows).flat_map(|r| self.row(r).map(move |(c, w)| (r, c, w))).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, w)| w).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, w) in self.triplets() {
            out[r * self.cols + c] = w;
        }
        out
    }

    /// Entrywise sum of two matrices of equal shape.
    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix, TensorError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::Shape {
                op: "sparse_add",
                lhs: [self.rows, self.cols],
                rhs: [other.rows, other.cols],
            });
        }
        let mut t = self.triplets();
        t.extend(other.triplets());
        SparseMatrix::from_triplets(self.rows, self.cols, &t)
    }

    pub fn transpose(&self) -> Arc<SparseMatrix> {
        self.transposed
            .get_or_init(|| {
                let t: Vec<_> = self.triplets().into_iter().map(|(r, c, w)| (c, r, w)).collect();
                Arc::new(
                    SparseMatrix::from_triplets(self.cols, self.rows, &t)
                        .expect("transpose of a valid matrix is valid"),
                )
            })
            .clone()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().into_iter().all(|(r, c, w)| self.get(c, r) == w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_bounds_entry_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, &[(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.transpose().get(2, 1), 1.5);
    }
}
