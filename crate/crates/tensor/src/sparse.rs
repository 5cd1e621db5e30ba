use crate::{Element, Tensor};

/// Constant sparse matrix in compressed-row form.
///
/// Used for structure that carries no trainable weight: graph adjacency,
/// segment pooling and bag-of-rows averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Element> SparseMatrix<T> {
    /// Builds from `(row, col, value)` triplets. Triplets may arrive in any
    /// order; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<_> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                let tail = values.last_mut().unwrap();
                *tail = *tail + v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(t: &Tensor<T>) -> Self {
        let mut trip = Vec::new();
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                let v = t.get(r, c);
                if v != T::zero() {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(t.rows(), t.cols(), &trip)
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

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                out.data_mut()[r * cols + c] = v;
            }
        }
        out
    }

    /// `self · x` for dense `x` of shape `[cols, n]`.
    pub(crate) fn mul_dense(&self, x: &[T], n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * n];
        for r in 0..self.rows {
            let orow = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (o, &xv) in orow.iter_mut().zip(&x[c * n..(c + 1) * n]) {
                    *o = *o + v * xv;
                }
            }
        }
        out
    }

    /// `acc += selfᵀ · g` for dense `g` of shape `[rows, n]`.
    pub(crate) fn tmul_dense_acc(&self, g: &[T], n: usize, acc: &mut [T]) {
        for r in 0..self.rows {
            let grow = &g[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (a, &gv) in acc[c * n..(c + 1) * n].iter_mut().zip(grow) {
                    *a = *a + v * gv;
                }
            }
        }
    }
}
