//! Compressed sparse storage and a direct LU solver.
//!
//! The assembler produces a triplet list which is canonically sorted before
//! summation so that assembly is order-independent down to the bit level.
//! Systems at this scale (tens to a few thousand unknowns) are factored with
//! a left-looking column LU using a dense scatter column and partial
//! pivoting; a failed pivot reports the offending unknown.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("matrix is singular: no acceptable pivot for unknown {unknown} (|pivot| = {pivot:.3e})")]
    SingularPivot { unknown: usize, pivot: f64 },
    #[error("dimension mismatch: matrix is {n}x{n}, rhs has length {rhs}")]
    DimensionMismatch { n: usize, rhs: usize },
}

/// One additive contribution to the system matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub val: f64,
}

impl Triplet {
    pub fn new(row: usize, col: usize, val: f64) -> Self {
        Triplet { row, col, val }
    }
}

/// Square sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from triplets.
    ///
    /// Triplets are sorted by (row, col, value bits) before duplicate entries
    /// are summed, so any permutation of the same contribution multiset
    /// produces a bit-identical matrix.
    pub fn from_triplets(n: usize, triplets: &[Triplet]) -> Self {
        let mut sorted: Vec<Triplet> = triplets.to_vec();
        sorted.sort_by(|a, b| {
            (a.row, a.col)
                .cmp(&(b.row, b.col))
                .then(a.val.total_cmp(&b.val))
        });

        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;

        for t in &sorted {
            debug_assert!(t.row < n && t.col < n, "triplet out of bounds");
            if last == Some((t.row, t.col)) {
                *values.last_mut().unwrap() += t.val;
            } else {
                col_idx.push(t.col);
                values.push(t.val);
                row_ptr[t.row + 1] += 1;
                last = Some((t.row, t.col));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }

        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for row in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[row] = acc;
        }
        y
    }

    /// True when the sparsity pattern is symmetric (a_ij present iff a_ji present).
    pub fn pattern_is_symmetric(&self) -> bool {
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[k];
                let lo = self.row_ptr[col];
                let hi = self.row_ptr[col + 1];
                if self.col_idx[lo..hi].binary_search(&row).is_err() {
                    return false;
                }
            }
        }
        true
    }
}

/// LU factorization of a sparse matrix with partial pivoting.
///
/// Stored column-wise; `perm[i]` gives the original row living at factored
/// position i.
pub struct SparseLu {
    n: usize,
    // columns of the combined L\U factor, each a list of (row, value) in
    // factored row coordinates, unit diagonal of L implicit
    cols: Vec<Vec<(usize, f64)>>,
    perm: Vec<usize>,
}

const PIVOT_THRESHOLD: f64 = 1e-13;

impl SparseLu {
    /// Factors `a` by left-looking column elimination with partial pivoting.
    pub fn factor(a: &CsrMatrix) -> Result<Self, SparseError> {
        let n = a.n;
        // transpose into column lists (original row indices)
        let mut acols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for row in 0..n {
            for k in a.row_ptr[row]..a.row_ptr[row + 1] {
                acols[a.col_idx[k]].push((row, a.values[k]));
            }
        }

        // U entries per column in pivot-position coordinates (incl. diagonal)
        let mut ucols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        // L entries per column in ORIGINAL row coordinates; rows below the
        // diagonal may receive their pivot position only in later columns,
        // so updates during factorization must address the work array by
        // original row
        let mut lcols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        // pos_of[orig_row] = factored position, usize::MAX while unpivoted
        let mut pos_of = vec![usize::MAX; n];
        let mut perm: Vec<usize> = Vec::with_capacity(n);

        let mut work = vec![0.0f64; n]; // dense column, indexed by original row
        let mut in_work = vec![false; n];
        let mut touched: Vec<usize> = Vec::with_capacity(n);

        for j in 0..n {
            // scatter column j of A
            for &(r, v) in &acols[j] {
                if !in_work[r] {
                    in_work[r] = true;
                    touched.push(r);
                }
                work[r] += v;
            }

            // forward-substitute against previously factored columns
            for p in 0..j {
                let multiplier = work[perm[p]];
                if multiplier == 0.0 {
                    continue;
                }
                for &(orig, v) in &lcols[p] {
                    if !in_work[orig] {
                        in_work[orig] = true;
                        touched.push(orig);
                    }
                    work[orig] -= multiplier * v;
                }
            }

            // partial pivot among rows not yet assigned
            let mut best = usize::MAX;
            let mut best_abs = 0.0f64;
            for &r in &touched {
                if pos_of[r] == usize::MAX {
                    let a = work[r].abs();
                    if a > best_abs {
                        best_abs = a;
                        best = r;
                    }
                }
            }
            if best == usize::MAX || best_abs < PIVOT_THRESHOLD {
                return Err(SparseError::SingularPivot {
                    unknown: j,
                    pivot: best_abs,
                });
            }

            pos_of[best] = j;
            perm.push(best);
            let pivot = work[best];

            let mut ucol: Vec<(usize, f64)> = Vec::new();
            let mut lcol: Vec<(usize, f64)> = Vec::new();
            for &r in &touched {
                let v = work[r];
                if v != 0.0 {
                    let pos = pos_of[r];
                    if pos == usize::MAX {
                        lcol.push((r, v / pivot));
                    } else if pos < j {
                        ucol.push((pos, v));
                    }
                }
            }
            ucol.push((j, pivot));
            ucols.push(ucol);
            lcols.push(lcol);

            for &r in &touched {
                work[r] = 0.0;
                in_work[r] = false;
            }
            touched.clear();
        }

        // combine into position-space columns for the solve phase
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for j in 0..n {
            let mut col = std::mem::take(&mut ucols[j]);
            for &(orig, v) in &lcols[j] {
                col.push((pos_of[orig], v));
            }
            col.sort_by_key(|e| e.0);
            cols.push(col);
        }

        Ok(SparseLu { n, cols, perm })
    }

    /// Solves A x = b for the factored A.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::DimensionMismatch {
                n: self.n,
                rhs: b.len(),
            });
        }
        let n = self.n;
        // permute rhs into factored order
        let mut y = vec![0.0; n];
        for (pos, &orig) in self.perm.iter().enumerate() {
            y[pos] = b[orig];
        }

        // forward substitution with unit-diagonal L (column oriented)
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for &(pos, v) in self.cols[j].iter().filter(|&&(pos, _)| pos > j) {
                    y[pos] -= v * yj;
                }
            }
        }

        // back substitution with U (column oriented)
        let mut x = y;
        for j in (0..n).rev() {
            let diag = self.cols[j]
                .iter()
                .find(|&&(pos, _)| pos == j)
                .map(|&(_, v)| v)
                .expect("diagonal present by construction");
            let xj = x[j] / diag;
            x[j] = xj;
            if xj != 0.0 {
                for &(pos, v) in self.cols[j].iter().filter(|&&(pos, _)| pos < j) {
                    x[pos] -= v * xj;
                }
            }
        }
        Ok(x)
    }
}

/// Convenience: factor and solve in one call.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, SparseError> {
    SparseLu::factor(a)?.solve(b)
}
