//! Banded Cholesky factorization for the SPD systems arising in the dual
//! path (`D_I D_I^T` for a subset of operator rows) and the trend-filter
//! ADMM (`I + rho * D^T D`). All operators here are banded after sorting,
//! so the factor stays within the band.

use crate::error::{Error, Result};
use crate::penalty::DifferenceOp;

/// Lower-banded SPD matrix in row-major band storage.
/// `band[i * (bw + 1) + d]` holds `M[i][i - d]` for `d <= min(i, bw)`.
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j <= i && i - j <= self.bw);
        self.band[i * (self.bw + 1) + (i - j)] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + (i - j)]
    }

    /// In-place Cholesky; fails on a non-positive pivot (rank deficiency).
    pub fn cholesky(mut self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j.saturating_sub(bw).max(j0);
                let mut sum = self.get(i, j);
                for k in k0..j {
                    sum -= self.get(i, k) * self.get(j, k);
                }
                if j == i {
                    if sum <= 0.0 {
                        return Err(Error::NonConvergence(format!(
                            "banded Cholesky pivot {sum:.3e} at index {i}; matrix is not positive definite (rank-deficient rows?)"
                        )));
                    }
                    self.band[i * (bw + 1)] = sum.sqrt();
                } else {
                    let piv = self.get(j, j);
                    self.band[i * (bw + 1) + (i - j)] = sum / piv;
                }
            }
        }
        Ok(BandedCholesky {
            n,
            bw,
            l: self.band,
        })
    }
}

/// Cholesky factor of a banded SPD matrix; solves `L L^T x = b`.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut sum = b[i];
            for j in j0..i {
                sum -= self.l[i * (bw + 1) + (i - j)] * b[j];
            }
            b[i] = sum / self.l[i * (bw + 1)];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut sum = b[i];
            let jmax = (i + bw).min(n - 1);
            for j in i + 1..=jmax {
                sum -= self.l[j * (bw + 1) + (j - i)] * b[j];
            }
            b[i] = sum / self.l[i * (bw + 1)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn sparse_row_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut p, mut q) = (0, 0);
    let mut sum = 0.0;
    while p < a.len() && q < b.len() {
        let (ja, ca) = a[p];
        let (jb, cb) = b[q];
        if ja == jb {
            sum += ca * cb;
            p += 1;
            q += 1;
        } else if ja < jb {
            p += 1;
        } else {
            q += 1;
        }
    }
    sum
}

/// Cholesky factor of the Gram matrix `D_I D_I^T` for the given subset of
/// operator rows (in the subset's own indexing).
pub fn gram_cholesky(op: &DifferenceOp, subset: &[usize]) -> Result<BandedCholesky> {
    let m = subset.len();
    if m == 0 {
        return Ok(BandedCholesky {
            n: 0,
            bw: 0,
            l: Vec::new(),
        });
    }
    // Column spans decide which subset pairs can overlap; the band must
    // cover every overlapping pair.
    let spans: Vec<(usize, usize)> = subset
        .iter()
        .map(|&r| {
            let row = op.row(r);
            (row.first().unwrap().0, row.last().unwrap().0)
        })
        .collect();
    let sorted_by_start = spans.windows(2).all(|w| w[0].0 <= w[1].0);
    let mut bw = 0usize;
    if sorted_by_start {
        // two-pointer scan: furthest q whose span starts within span p
        let mut q = 0usize;
        for p in 0..m {
            if q < p + 1 {
                q = p + 1;
            }
            while q < m && spans[q].0 <= spans[p].1 {
                q += 1;
            }
            if q > p + 1 {
                bw = bw.max(q - 1 - p);
            }
        }
    } else {
        for p in 0..m {
            for q in (p + 1)..m {
                if spans[q].0 <= spans[p].1 && spans[p].0 <= spans[q].1 {
                    bw = bw.max(q - p);
                }
            }
        }
    }
    let mut mat = BandedMatrix::zeros(m, bw);
    for p in 0..m {
        for q in p.saturating_sub(bw)..=p {
            let v = sparse_row_dot(op.row(subset[p]), op.row(subset[q]));
            if p == q || v != 0.0 {
                mat.add(p, q, v);
            }
        }
    }
    mat.cholesky()
}

/// Cholesky factor of `I + rho * D^T D` (n x n, banded by D's row span).
pub fn ridge_gram_cholesky(op: &DifferenceOp, rho: f64) -> Result<BandedCholesky> {
    let n = op.n_cols();
    let mut bw = 0usize;
    for row in op.rows() {
        if let (Some(first), Some(last)) = (row.first(), row.last()) {
            bw = bw.max(last.0 - first.0);
        }
    }
    let mut mat = BandedMatrix::zeros(n, bw);
    for i in 0..n {
        mat.add(i, i, 1.0);
    }
    for row in op.rows() {
        for &(j1, c1) in row {
            for &(j2, c2) in row {
                if j2 <= j1 {
                    mat.add(j1, j2, rho * c1 * c2);
                }
            }
        }
    }
    mat.cholesky()
}
