//! Ruiz equilibration of the KKT data plus objective scaling.

use crate::cones::ConeSet;
use crate::program::Cone;
use crate::sparse::{norm_inf, CscMatrix};

const MIN_NORM: f64 = 1e-4;
const MAX_NORM: f64 = 1e4;

/// Scaling such that the solver works on `P̂ = c D P D`, `q̂ = c D q`,
/// `Â = E A D`, `b̂ = E b`.
#[derive(Debug, Clone)]
pub(crate) struct Equilibration {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub c: f64,
}

impl Equilibration {
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            d: vec![1.0; n],
            e: vec![1.0; m],
            c: 1.0,
        }
    }
}

fn inv_sqrt_clamped(v: f64) -> f64 {
    if v == 0.0 {
        1.0
    } else {
        1.0 / v.clamp(MIN_NORM, MAX_NORM).sqrt()
    }
}

pub(crate) fn equilibrate(
    p: &mut CscMatrix,
    q: &mut [f64],
    a: &mut CscMatrix,
    b: &mut [f64],
    cones: &ConeSet,
    iters: usize,
) -> Equilibration {
    let n = q.len();
    let m = b.len();
    let mut eq = Equilibration::identity(n, m);
    for _ in 0..iters {
        let pn = p.sym_col_norms_inf();
        let an = a.col_norms_inf();
        let rn = a.row_norms_inf();
        let dd: Vec<f64> = (0..n).map(|j| inv_sqrt_clamped(pn[j].max(an[j]))).collect();
        let mut de: Vec<f64> = rn.iter().map(|&v| inv_sqrt_clamped(v)).collect();
        // second-order cones need one scale per block
        for (_, c, r) in cones.iter() {
            if let Cone::SecondOrder(_) = c {
                let mean = de[r.clone()].iter().sum::<f64>() / r.len() as f64;
                de[r].fill(mean);
            }
        }
        p.scale(&dd, &dd);
        a.scale(&de, &dd);
        for j in 0..n {
            q[j] *= dd[j];
            eq.d[j] *= dd[j];
        }
        for i in 0..m {
            b[i] *= de[i];
            eq.e[i] *= de[i];
        }
    }
    let pn = p.sym_col_norms_inf();
    let mean_p = if n > 0 {
        pn.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let scale = mean_p.max(norm_inf(q));
    let c = if scale == 0.0 {
        1.0
    } else {
        1.0 / scale.clamp(MIN_NORM, MAX_NORM)
    };
    p.nzval.iter_mut().for_each(|v| *v *= c);
    q.iter_mut().for_each(|v| *v *= c);
    eq.c = c;
    eq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_balances_rows() {
        let mut p = CscMatrix::from_triplets(2, 2, &[(0, 0, 1e3), (1, 1, 1e-3)]);
        let mut a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1e2), (1, 1, 1.0), (0, 1, 1e-2)]);
        let mut q = vec![1.0, 1.0];
        let mut b = vec![1.0, 1.0];
        let cones = ConeSet::new(&[Cone::Nonneg(2)]);
        let orig_a = a.clone();
        let e = equilibrate(&mut p, &mut q, &mut a, &mut b, &cones, 10);
        let rn = a.row_norms_inf();
        for v in rn {
            assert!(v > 0.1 && v < 10.0);
        }
        // unscaling recovers the original entries
        for (r, c, v) in a.triplets() {
            let o = orig_a
                .triplets()
                .find(|&(rr, cc, _)| rr == r && cc == c)
                .unwrap()
                .2;
            assert!((v / (e.e[r] * e.d[c]) - o).abs() < 1e-12 * o.abs());
        }
    }
}
