//! Minimal CSR sparse matrix support: assembly from triplets, matvec,
//! transpose, and MatrixMarket export.

use std::io::Write;

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in triplets {
            debug_assert!(r < nrows);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            debug_assert!(c < ncols);
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }
        // sort each row by column and merge duplicates
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut row_buf: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row_buf.clear();
            for k in counts[r]..counts[r + 1] {
                row_buf.push((cols[k], vals[k]));
            }
            row_buf.sort_unstable_by_key(|&(c, _)| c);
            let mut last_col = usize::MAX;
            for &(c, v) in row_buf.iter() {
                if c == last_col {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last_col = c;
                }
            }
            indptr[r + 1] = indices.len();
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] += alpha * acc;
        }
    }

    /// y += alpha * A^T x
    pub fn matvec_transpose_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for r in 0..self.nrows {
            let xr = alpha * x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[k]] += self.values[k] * xr;
            }
        }
    }

    /// Multiply all stored values by `s`, in place.
    pub fn scaled(mut self, s: f64) -> CsrMatrix {
        for v in self.values.iter_mut() {
            *v *= s;
        }
        self
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r, self.values[k]));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for r in 0..d.len() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.indices[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    /// x^T A y
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let mut row = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                row += self.values[k] * y[self.indices[k]];
            }
            acc += x[r] * row;
        }
        acc
    }

    /// Maximum absolute asymmetry |A - A^T| over all entries.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let a = &self.indices[self.indptr[r]..self.indptr[r + 1]];
            let av = &self.values[self.indptr[r]..self.indptr[r + 1]];
            let b = &t.indices[t.indptr[r]..t.indptr[r + 1]];
            let bv = &t.values[t.indptr[r]..t.indptr[r + 1]];
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                if j >= b.len() || (i < a.len() && a[i] < b[j]) {
                    worst = worst.max(av[i].abs());
                    i += 1;
                } else if i >= a.len() || b[j] < a[i] {
                    worst = worst.max(bv[j].abs());
                    j += 1;
                } else {
                    worst = worst.max((av[i] - bv[j]).abs());
                    i += 1;
                    j += 1;
                }
            }
        }
        worst
    }

    /// Write in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                writeln!(w, "{} {} {:.17e}", r + 1, self.indices[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 5.0)]);
        assert_eq!(a.nnz(), 2);
        let mut y = vec![0.0; 2];
        a.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![3.0, 5.0]);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.5), (1, 0, -2.0), (1, 2, 4.0)]);
        let att = a.transpose().transpose();
        let x = [1.0, 2.0, 3.0];
        let mut y0 = vec![0.0; 2];
        let mut y1 = vec![0.0; 2];
        a.matvec(&x, &mut y0);
        att.matvec(&x, &mut y1);
        assert_eq!(y0, y1);
    }

    #[test]
    fn asymmetry_detects_mismatch() {
        let sym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 2.0)]);
        assert_eq!(sym.asymmetry(), 0.0);
        let asym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 1.0)]);
        assert_eq!(asym.asymmetry(), 1.0);
    }
}
