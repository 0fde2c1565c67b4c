//! Assembly and solution of the interior-point KKT system
//!
//! ```text
//! [ P   Aᵀ ] [x]   [r1]
//! [ A  −H  ] [z] = [r2]
//! ```
//!
//! with `H = W²` from the cone scaling. Large second-order cones are
//! expanded with two auxiliary rows each, kept at the end of the
//! elimination order so the expected pivot signs stay valid.

use crate::cones::{ConeSet, SOC_DENSE_MAX};
use crate::ldl::{DynamicRegularization, LdlError, LdlFactor, Ordering};
use crate::program::Cone;
use crate::sparse::{norm_inf, CscMatrix};

struct SocDense {
    cone: usize,
    // indices of upper-triangle entries (i <= j), row-major over the block
    idx: Vec<(usize, usize, usize)>,
}

struct SocExpanded {
    cone: usize,
    u_idx: Vec<usize>,
    v_idx: usize,
    t1_diag: usize,
    t2_diag: usize,
}

pub(crate) struct Kkt {
    n: usize,
    m: usize,
    dim: usize,
    mat: CscMatrix,
    base: Vec<f64>,
    reg: Vec<f64>,
    p_diag: Vec<usize>,
    h_diag: Vec<usize>,
    soc_dense: Vec<SocDense>,
    soc_exp: Vec<SocExpanded>,
    ldl: LdlFactor,
    work: Vec<f64>,
    static_reg: f64,
    dyn_reg: DynamicRegularization,
    refine_iters: usize,
}

fn find(m: &CscMatrix, r: usize, c: usize) -> usize {
    let col = &m.rowval[m.colptr[c]..m.colptr[c + 1]];
    m.colptr[c] + col.binary_search(&r).expect("entry in KKT pattern")
}

pub(crate) enum ScalingMode {
    Identity,
    Current,
}

impl Kkt {
    pub fn new(
        p: &CscMatrix,
        a: &CscMatrix,
        cones: &ConeSet,
        static_reg: f64,
        dyn_reg: DynamicRegularization,
        refine_iters: usize,
    ) -> Result<Self, LdlError> {
        let n = p.ncols;
        let m = a.nrows;
        let n_exp = cones
            .cones
            .iter()
            .filter(|c| matches!(c, Cone::SecondOrder(d) if *d > SOC_DENSE_MAX))
            .count();
        let dim = n + m + 2 * n_exp;
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(p.nnz() + a.nnz() + dim);
        for (r, c, v) in p.triplets() {
            if r <= c {
                t.push((r, c, v));
            }
        }
        for i in 0..dim {
            t.push((i, i, 0.0));
        }
        for (r, c, v) in a.triplets() {
            t.push((c, n + r, v));
        }
        let mut aux = n + m;
        let mut aux_cols = Vec::new();
        for (k, c, r) in cones.iter() {
            if let Cone::SecondOrder(d) = c {
                if d <= SOC_DENSE_MAX {
                    for i in r.clone() {
                        for j in i + 1..r.end {
                            t.push((n + i, n + j, 0.0));
                        }
                    }
                } else {
                    for i in r.clone() {
                        t.push((n + i, aux, 0.0));
                    }
                    t.push((n + r.start, aux + 1, 0.0));
                    aux_cols.push((k, aux));
                    aux += 2;
                }
            }
        }
        let mat = CscMatrix::from_triplets(dim, dim, &t);
        let base = mat.nzval.clone();
        let p_diag: Vec<usize> = (0..n).map(|j| find(&mat, j, j)).collect();
        let h_diag: Vec<usize> = (0..m).map(|i| find(&mat, n + i, n + i)).collect();
        let mut soc_dense = Vec::new();
        let mut soc_exp = Vec::new();
        let mut aux_iter = aux_cols.into_iter();
        for (k, c, r) in cones.iter() {
            if let Cone::SecondOrder(d) = c {
                if d <= SOC_DENSE_MAX {
                    let mut idx = Vec::new();
                    for i in r.clone() {
                        for j in i..r.end {
                            idx.push((i - r.start, j - r.start, find(&mat, n + i, n + j)));
                        }
                    }
                    soc_dense.push(SocDense { cone: k, idx });
                } else {
                    let (_, col) = aux_iter.next().unwrap();
                    soc_exp.push(SocExpanded {
                        cone: k,
                        u_idx: r.clone().map(|i| find(&mat, n + i, col)).collect(),
                        v_idx: find(&mat, n + r.start, col + 1),
                        t1_diag: find(&mat, col, col),
                        t2_diag: find(&mat, col + 1, col + 1),
                    });
                }
            }
        }
        let mut signs = vec![1i8; dim];
        for s in signs.iter_mut().skip(n).take(m) {
            *s = -1;
        }
        for k in 0..n_exp {
            signs[n + m + 2 * k + 1] = -1;
        }
        let ldl = LdlFactor::with_ordering(
            &mat,
            &signs,
            Ordering::Amd {
                fixed_tail: 2 * n_exp,
            },
        )?;
        Ok(Self {
            n,
            m,
            dim,
            reg: base.clone(),
            base,
            mat,
            p_diag,
            h_diag,
            soc_dense,
            soc_exp,
            ldl,
            work: Vec::new(),
            static_reg,
            dyn_reg,
            refine_iters,
        })
    }

    /// Writes the scaling block and factorizes. Returns the number of
    /// dynamically regularized pivots.
    pub fn factor(&mut self, cones: &ConeSet, mode: ScalingMode) -> Result<usize, LdlError> {
        let vals = &mut self.mat.nzval;
        vals.copy_from_slice(&self.base);
        for (_, c, r) in cones.iter() {
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => {
                    for i in r {
                        let h = match mode {
                            ScalingMode::Identity => 1.0,
                            ScalingMode::Current => cones.w[i] * cones.w[i],
                        };
                        vals[self.h_diag[i]] = -h;
                    }
                }
                Cone::SecondOrder(_) => {}
            }
        }
        for blk in &self.soc_dense {
            let d = cones.cones[blk.cone].dim();
            let h = match mode {
                ScalingMode::Identity => {
                    let mut h = vec![0.0; d * d];
                    (0..d).for_each(|i| h[i * d + i] = 1.0);
                    h
                }
                ScalingMode::Current => cones.soc_w2_dense(blk.cone),
            };
            for &(i, j, k) in &blk.idx {
                vals[k] = -h[i * d + j];
            }
        }
        for blk in &self.soc_exp {
            let (eta, u) = match mode {
                ScalingMode::Identity => (1.0, vec![0.0; cones.cones[blk.cone].dim()]),
                ScalingMode::Current => cones.soc_expansion(blk.cone),
            };
            let start = cones.offsets[blk.cone];
            for (i, &k) in blk.u_idx.iter().enumerate() {
                vals[self.h_diag[start + i]] = -eta * eta;
                vals[k] = eta * u[i];
            }
            let v0 = match mode {
                ScalingMode::Identity => 0.0,
                ScalingMode::Current => std::f64::consts::SQRT_2,
            };
            vals[blk.v_idx] = eta * v0;
            vals[blk.t1_diag] = 1.0;
            vals[blk.t2_diag] = -1.0;
        }
        // regularized copy for the factorization
        self.reg.copy_from_slice(&self.mat.nzval);
        let max_diag = self
            .p_diag
            .iter()
            .chain(&self.h_diag)
            .fold(0.0f64, |mx, &k| mx.max(self.reg[k].abs()));
        let delta = self.static_reg + f64::EPSILON * f64::EPSILON * max_diag;
        for &k in &self.p_diag {
            self.reg[k] += delta;
        }
        for &k in &self.h_diag {
            self.reg[k] -= delta;
        }
        self.ldl.set_values(&self.reg);
        self.ldl.factor(Some(self.dyn_reg))
    }

    /// Solves `K [x; z] = [r1; r2]` with iterative refinement against the
    /// unregularized matrix.
    pub fn solve(&mut self, r1: &[f64], r2: &[f64], x: &mut [f64], z: &mut [f64]) {
        let (n, m, dim) = (self.n, self.m, self.dim);
        let mut rhs = vec![0.0; dim];
        rhs[..n].copy_from_slice(r1);
        rhs[n..n + m].copy_from_slice(r2);
        let mut sol = rhs.clone();
        self.ldl.solve(&mut sol, &mut self.work);
        self.refine(&rhs, &mut sol);
        x.copy_from_slice(&sol[..n]);
        z.copy_from_slice(&sol[n..n + m]);
    }

    /// Like [`Kkt::solve`] but refines from the guess in `x`, `z`. Along
    /// null directions of the unregularized matrix the result stays close
    /// to the guess.
    pub fn solve_from(&mut self, r1: &[f64], r2: &[f64], x: &mut [f64], z: &mut [f64]) {
        let (n, m, dim) = (self.n, self.m, self.dim);
        let mut rhs = vec![0.0; dim];
        rhs[..n].copy_from_slice(r1);
        rhs[n..n + m].copy_from_slice(r2);
        let mut sol = vec![0.0; dim];
        sol[..n].copy_from_slice(x);
        sol[n..n + m].copy_from_slice(z);
        self.refine(&rhs, &mut sol);
        x.copy_from_slice(&sol[..n]);
        z.copy_from_slice(&sol[n..n + m]);
    }

    fn refine(&mut self, rhs: &[f64], sol: &mut [f64]) {
        let dim = self.dim;
        let rhs_norm = norm_inf(rhs);
        let mut res = vec![0.0; dim];
        let mut prev = f64::INFINITY;
        for _ in 0..self.refine_iters {
            res.copy_from_slice(rhs);
            self.mat.symv_upper(-1.0, sol, &mut res);
            let rn = norm_inf(&res);
            if rn <= 1e-13 * (1.0 + rhs_norm) || rn >= prev * 0.9 {
                break;
            }
            prev = rn;
            self.ldl.solve(&mut res, &mut self.work);
            for (s, d) in sol.iter_mut().zip(&res) {
                *s += d;
            }
        }
    }
}
