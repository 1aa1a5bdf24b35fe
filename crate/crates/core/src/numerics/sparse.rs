use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::par;

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-row `(col, value)` lists. Columns are sorted and must
    /// be unique within a row.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::shape("csr", format!("duplicate column {} in row {r}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c >= n_cols {
                    return Err(Error::shape("csr", format!("column {c} out of range {n_cols}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    /// Keeps the nonzero entries of a dense matrix.
    pub fn from_dense(t: &Tensor) -> Self {
        let rows = (0..t.rows())
            .map(|r| {
                t.row(r)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_rows(t.cols(), rows).expect("dense rows are well formed")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    /// Iterates `(row, col, value)` over stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            t.set(r, c, v);
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// `self * dense`.
    pub fn matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.n_cols != dense.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} sparse times {}x{}", self.n_rows, self.n_cols, dense.rows(), dense.cols()),
            ));
        }
        let m = dense.cols();
        let mut out = Tensor::zeros(self.n_rows, m);
        par::for_each_row_mut(out.data_mut(), m, |i, out_row| {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &b) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += v * b;
                }
            }
        });
        Ok(out)
    }

    /// `selfᵀ * dense`.
    pub fn t_matmul_dense(&self, dense: &Tensor) -> Result<Tensor> {
        if self.n_rows != dense.rows() {
            return Err(Error::shape(
                "spmm_t",
                format!("({}x{})ᵀ sparse times {}x{}", self.n_rows, self.n_cols, dense.rows(), dense.cols()),
            ));
        }
        let m = dense.cols();
        let mut out = Tensor::zeros(self.n_cols, m);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let src = dense.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &b) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }
}
