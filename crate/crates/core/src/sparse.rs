//! Minimal sparse linear algebra: compressed columns, a simplicial Cholesky
//! factorization and a Jacobi-preconditioned conjugate gradient.

use crate::Real;

/// Compressed sparse column matrix. For symmetric use only the lower
/// triangle (including the diagonal) is stored.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub values: Vec<Real>,
}

impl CscMatrix {
    /// Builds from triplets; duplicate entries are summed. Triplets need not
    /// be sorted.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(u32, u32, Real)]) -> Self {
        let mut entries: Vec<(u32, u32, Real)> = triplets.to_vec();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<Real> = Vec::with_capacity(entries.len());
        let mut counts = vec![0usize; n_cols];
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in &entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                counts[c as usize] += 1;
                last = Some((r, c));
            }
        }
        let mut col_ptr = vec![0usize; n_cols + 1];
        for c in 0..n_cols {
            col_ptr[c + 1] = col_ptr[c] + counts[c];
        }
        CscMatrix {
            n_rows,
            n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y += A x
    pub fn add_mul_vec(&self, x: &[Real], y: &mut [Real]) {
        for c in 0..self.n_cols {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k] as usize] += self.values[k] * xc;
            }
        }
    }

    /// y = A x where only the lower triangle of a symmetric A is stored.
    pub fn sym_mul_vec(&self, x: &[Real], y: &mut [Real]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n_cols {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k] as usize;
                let v = self.values[k];
                y[r] += v * xc;
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }
}

/// Why a Cholesky factorization could not be completed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CholeskyError {
    /// Pivot at this column was non-positive (or negligibly small relative
    /// to the matrix scale): the matrix is not positive definite.
    NotPositiveDefinite { column: usize, pivot: Real },
}

/// Simplicial left-looking Cholesky of a symmetric positive definite matrix
/// given by its lower triangle. No fill-reducing ordering is applied; the
/// systems solved here are small or band-structured.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    // L in CSC, diagonal entry first in each column
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<Real>,
}

impl SparseCholesky {
    pub fn factor(a_lower: &CscMatrix) -> Result<Self, CholeskyError> {
        let n = a_lower.n_cols;
        assert_eq!(a_lower.n_rows, n);

        // relative pivot threshold from the diagonal scale
        let mut max_diag: Real = 0.0;
        for c in 0..n {
            for k in a_lower.col_ptr[c]..a_lower.col_ptr[c + 1] {
                if a_lower.row_idx[k] as usize == c {
                    max_diag = max_diag.max(a_lower.values[k].abs());
                }
            }
        }
        let pivot_tol = max_diag * (n as Real) * 1e-14;

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx: Vec<u32> = Vec::new();
        let mut values: Vec<Real> = Vec::new();
        // columns k that have an entry in row j, with the position of that entry
        let mut row_lists: Vec<Vec<(u32, usize)>> = vec![Vec::new(); n];

        let mut work = vec![0.0 as Real; n];
        let mut marked = vec![false; n];
        let mut pattern: Vec<u32> = Vec::new();

        for j in 0..n {
            pattern.clear();
            // load A(j.., j)
            for k in a_lower.col_ptr[j]..a_lower.col_ptr[j + 1] {
                let r = a_lower.row_idx[k];
                debug_assert!(r as usize >= j, "store only the lower triangle");
                work[r as usize] = a_lower.values[k];
                if !marked[r as usize] {
                    marked[r as usize] = true;
                    pattern.push(r);
                }
            }
            if !marked[j] {
                marked[j] = true;
                pattern.push(j as u32);
            }
            // subtract contributions of earlier columns with an entry in row j
            for &(kcol, kpos) in &row_lists[j] {
                let ljk = values[kpos];
                // entries of column kcol at rows >= j start at kpos
                for p in kpos..col_ptr[kcol as usize + 1] {
                    let r = row_idx[p] as usize;
                    work[r] -= ljk * values[p];
                    if !marked[r] {
                        marked[r] = true;
                        pattern.push(r as u32);
                    }
                }
            }

            let pivot = work[j];
            if !(pivot > pivot_tol) {
                // clean up scratch state before returning
                for &r in &pattern {
                    work[r as usize] = 0.0;
                    marked[r as usize] = false;
                }
                return Err(CholeskyError::NotPositiveDefinite { column: j, pivot });
            }
            let dj = pivot.sqrt();

            pattern.sort_unstable();
            col_ptr[j + 1] = col_ptr[j] + pattern.len();
            for &r in &pattern {
                let r = r as usize;
                let v = if r == j { dj } else { work[r] / dj };
                if r != j {
                    row_lists[r].push((j as u32, row_idx.len()));
                    // the stored position is where row r sits in column j;
                    // later eliminations scan from there to the column end
                }
                row_idx.push(r as u32);
                values.push(v);
                work[r] = 0.0;
                marked[r] = false;
            }
        }

        Ok(SparseCholesky {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Solves A x = b via forward and back substitution.
    pub fn solve(&self, b: &[Real]) -> Vec<Real> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        // L y = b
        for j in 0..self.n {
            let start = self.col_ptr[j];
            let end = self.col_ptr[j + 1];
            let yj = x[j] / self.values[start];
            x[j] = yj;
            for k in start + 1..end {
                x[self.row_idx[k] as usize] -= self.values[k] * yj;
            }
        }
        // L^T x = y
        for j in (0..self.n).rev() {
            let start = self.col_ptr[j];
            let end = self.col_ptr[j + 1];
            let mut s = x[j];
            for k in start + 1..end {
                s -= self.values[k] * x[self.row_idx[k] as usize];
            }
            x[j] = s / self.values[start];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// semi-definite systems. Starts from zero, so for a consistent singular
/// system it converges to the minimum-norm solution.
pub fn conjugate_gradient(
    a: &CscMatrix,
    b: &[Real],
    rel_tol: Real,
    max_iter: usize,
) -> (Vec<Real>, usize) {
    let n = b.len();
    let mut diag = vec![1.0 as Real; n];
    for c in 0..a.n_cols {
        for k in a.col_ptr[c]..a.col_ptr[c + 1] {
            if a.row_idx[k] as usize == c && a.values[k] > 0.0 {
                diag[c] = a.values[k];
            }
        }
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = r.iter().map(|v| v * v).sum::<Real>().sqrt();
    if b_norm == 0.0 {
        return (x, 0);
    }
    let mut z: Vec<Real> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: Real = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        a.sym_mul_vec(&p, &mut ap);
        let pap: Real = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return (x, it);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<Real>().sqrt();
        if r_norm <= rel_tol * b_norm {
            return (x, it + 1);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: Real = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter)
}
