//! Sparse LDL^T factorization for quasi-definite matrices.
//!
//! Up-looking factorization over the elimination tree with a fill-reducing
//! AMD ordering. Pivots whose sign disagrees with the expected sign are
//! replaced by a small regularization value, so that the factorization
//! never breaks down on the KKT systems of the interior-point method.

use crate::sparse::CscMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("diagonal entry {0} missing from pattern")]
    MissingDiagonal(usize),
    #[error("ordering failed: {0}")]
    Ordering(String),
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
}

/// Regularization applied to pivots of the wrong sign or too small magnitude.
#[derive(Debug, Clone, Copy)]
pub struct DynamicRegularization {
    pub eps: f64,
    pub delta: f64,
}

const NONE: usize = usize::MAX;

/// Fill-reducing ordering choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    /// AMD on the leading block; the last `fixed_tail` rows stay last.
    Amd {
        fixed_tail: usize,
    },
}

/// Symbolic and numeric LDL^T factor of a symmetric matrix given by its
/// upper triangle.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    // permuted upper triangle
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    // position of each original nonzero in the permuted values
    map: Vec<usize>,
    signs: Vec<i8>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    // workspaces
    y_vals: Vec<f64>,
    y_used: Vec<bool>,
    y_idx: Vec<usize>,
    elim: Vec<usize>,
    next_space: Vec<usize>,
}

impl LdlFactor {
    /// Symbolic analysis. `upper` must store the upper triangle including
    /// every diagonal entry. `signs[i]` is the expected pivot sign of row `i`.
    pub fn new(upper: &CscMatrix, signs: &[i8]) -> Result<Self, LdlError> {
        Self::with_ordering(upper, signs, Ordering::Amd { fixed_tail: 0 })
    }

    pub fn with_ordering(
        upper: &CscMatrix,
        signs: &[i8],
        ordering: Ordering,
    ) -> Result<Self, LdlError> {
        if upper.nrows != upper.ncols {
            return Err(LdlError::NotSquare(upper.nrows, upper.ncols));
        }
        let n = upper.ncols;
        for c in 0..n {
            let col = &upper.rowval[upper.colptr[c]..upper.colptr[c + 1]];
            if col.binary_search(&c).is_err() {
                return Err(LdlError::MissingDiagonal(c));
            }
        }
        let perm: Vec<usize> = match ordering {
            Ordering::Amd { fixed_tail } if n > fixed_tail => {
                // columns of the leading block only reference leading rows
                let lead = n - fixed_tail;
                let colptr = &upper.colptr[..=lead];
                let rowval = &upper.rowval[..colptr[lead]];
                let (mut p, _pinv, _info) =
                    amd::order::<usize>(lead, colptr, rowval, &amd::Control::default())
                        .map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
                p.extend(lead..n);
                p
            }
            _ => (0..n).collect(),
        };
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // permuted upper triangle with a map back to the original entries
        let mut counts = vec![0usize; n + 1];
        for c in 0..n {
            for k in upper.colptr[c]..upper.colptr[c + 1] {
                let r = upper.rowval[k];
                let (pr, pc) = (iperm[r], iperm[c]);
                counts[pr.max(pc) + 1] += 1;
            }
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let nnz = upper.nnz();
        let mut next = counts.clone();
        let mut ai = vec![0usize; nnz];
        let mut src = vec![0usize; nnz];
        for c in 0..n {
            for k in upper.colptr[c]..upper.colptr[c + 1] {
                let r = upper.rowval[k];
                let (pr, pc) = (iperm[r], iperm[c]);
                let col = pr.max(pc);
                let slot = next[col];
                ai[slot] = pr.min(pc);
                src[slot] = k;
                next[col] += 1;
            }
        }
        // sort rows within each column
        let mut map = vec![0usize; nnz];
        let mut ai_sorted = vec![0usize; nnz];
        let mut order: Vec<usize> = Vec::new();
        for c in 0..n {
            order.clear();
            order.extend(counts[c]..counts[c + 1]);
            order.sort_by_key(|&k| ai[k]);
            for (off, &k) in order.iter().enumerate() {
                let slot = counts[c] + off;
                ai_sorted[slot] = ai[k];
                map[src[k]] = slot;
            }
        }
        let ap = counts;
        let ai = ai_sorted;

        let mut psigns = vec![1i8; n];
        for (k, &p) in perm.iter().enumerate() {
            psigns[k] = signs[p];
        }

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &ai[ap[j]..ap[j + 1]] {
                let mut i = i0;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let total = lp[n];
        Ok(Self {
            n,
            perm,
            ap,
            ai,
            ax: vec![0.0; nnz],
            map,
            signs: psigns,
            etree,
            lnz,
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            y_vals: vec![0.0; n],
            y_used: vec![false; n],
            y_idx: vec![0; n],
            elim: vec![0; n],
            next_space: vec![0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored off-diagonal entries of `L`.
    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }

    /// Loads all values from the original (unpermuted) nonzero array.
    pub fn set_values(&mut self, nzval: &[f64]) {
        for (k, &v) in nzval.iter().enumerate() {
            self.ax[self.map[k]] = v;
        }
    }

    /// Overwrites a single original nonzero.
    pub fn set_value(&mut self, original_index: usize, v: f64) {
        self.ax[self.map[original_index]] = v;
    }

    /// Numeric factorization. Returns the number of regularized pivots.
    pub fn factor(&mut self, reg: Option<DynamicRegularization>) -> Result<usize, LdlError> {
        let n = self.n;
        let mut nreg = 0usize;
        for i in 0..n {
            self.next_space[i] = self.lp[i];
            self.y_used[i] = false;
            self.y_vals[i] = 0.0;
            self.d[i] = 0.0;
        }
        for k in 0..n {
            let mut nnz_y = 0usize;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                self.y_vals[b] = self.ax[p];
                if !self.y_used[b] {
                    self.y_used[b] = true;
                    self.elim[0] = b;
                    let mut ne = 1usize;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if self.y_used[nx] {
                            break;
                        }
                        self.y_used[nx] = true;
                        self.elim[ne] = nx;
                        ne += 1;
                        nx = self.etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        self.y_idx[nnz_y] = self.elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = self.y_idx[i];
                let tmp = self.next_space[c];
                let yc = self.y_vals[c];
                for j in self.lp[c]..tmp {
                    self.y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                let l = yc * self.dinv[c];
                self.lx[tmp] = l;
                self.d[k] -= yc * l;
                self.next_space[c] += 1;
                self.y_vals[c] = 0.0;
                self.y_used[c] = false;
            }
            if let Some(r) = reg {
                let s = f64::from(self.signs[k]);
                if s * self.d[k] <= r.eps {
                    self.d[k] = s * r.delta;
                    nreg += 1;
                }
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(nreg)
    }

    /// Pivots of `D` in permuted order.
    pub fn diag(&self) -> &[f64] {
        &self.d
    }

    /// Solves `K x = b` in place, `b` in original ordering.
    pub fn solve(&self, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.resize(n, 0.0);
        for k in 0..n {
            work[k] = b[self.perm[k]];
        }
        for i in 0..n {
            let xi = work[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    work[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            work[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = work[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * work[self.li[j]];
            }
            work[i] = acc;
        }
        for k in 0..n {
            b[self.perm[k]] = work[k];
        }
    }

    #[allow(dead_code)]
    pub(crate) fn column_counts(&self) -> &[usize] {
        &self.lnz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quasidefinite(n1: usize, n2: usize, seed: u64) -> (CscMatrix, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n1 + n2;
        let mut t = Vec::new();
        for i in 0..n1 {
            t.push((i, i, 1.0 + rng.gen::<f64>()));
        }
        for i in n1..n {
            t.push((i, i, -1.0 - rng.gen::<f64>()));
        }
        for _ in 0..(2 * n) {
            let i = rng.gen_range(0..n1);
            let j = rng.gen_range(n1..n);
            t.push((i, j, rng.gen::<f64>() - 0.5));
        }
        for _ in 0..n1 {
            let i = rng.gen_range(0..n1);
            let j = rng.gen_range(0..n1);
            if i < j {
                let v = 0.1 * (rng.gen::<f64>() - 0.5);
                t.push((i, j, v));
            }
        }
        let m = CscMatrix::from_triplets(n, n, &t);
        let signs = (0..n).map(|i| if i < n1 { 1 } else { -1 }).collect();
        (m, signs)
    }

    fn residual(m: &CscMatrix, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; b.len()];
        m.symv_upper(1.0, x, &mut y);
        y.iter()
            .zip(b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn solves_random_quasidefinite_systems() {
        for seed in 0..20 {
            let (m, signs) = random_quasidefinite(15, 9, seed);
            for ord in [
                Ordering::Natural,
                Ordering::Amd { fixed_tail: 0 },
                Ordering::Amd { fixed_tail: 3 },
            ] {
                let mut f = LdlFactor::with_ordering(&m, &signs, ord).unwrap();
                f.set_values(&m.nzval);
                assert_eq!(f.factor(None).unwrap(), 0);
                let b: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
                let mut x = b.clone();
                let mut w = Vec::new();
                f.solve(&mut x, &mut w);
                assert!(residual(&m, &x, &b) < 1e-10, "seed {seed}");
            }
        }
    }

    #[test]
    fn missing_diagonal_is_rejected() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0)]);
        assert_eq!(
            LdlFactor::new(&m, &[1, -1]).unwrap_err(),
            LdlError::MissingDiagonal(1)
        );
    }

    #[test]
    fn wrong_sign_pivot_is_regularized() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 0.0), (1, 1, -1.0)]);
        let mut f = LdlFactor::new(&m, &[1, -1]).unwrap();
        f.set_values(&m.nzval);
        let reg = DynamicRegularization {
            eps: 1e-13,
            delta: 1e-7,
        };
        assert_eq!(f.factor(Some(reg)).unwrap(), 1);
    }
}
