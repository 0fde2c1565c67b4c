//! Active-set polishing for programs made of zero and orthant cones.
//!
//! Interior-point iterates stop at a small but nonzero barrier parameter,
//! which leaves multipliers off by roughly `mu / slack`. Guessing the
//! active set from the final iterate and solving the equality-constrained
//! KKT system once more gives duals that are exact up to the linear solve.

use crate::cones::ConeSet;
use crate::equilibrate::Equilibration;
use crate::kkt::{Kkt, ScalingMode};
use crate::ldl::DynamicRegularization;
use crate::program::{Cone, ConvexProgram};
use crate::sparse::CscMatrix;

const PASSES: usize = 4;
const STATIC_REG: f64 = 1e-8;
const REFINE_ITERS: usize = 50;

pub(crate) struct Scaled<'a> {
    pub p: &'a CscMatrix,
    pub q: &'a [f64],
    pub a: &'a CscMatrix,
    pub b: &'a [f64],
    pub eq: &'a Equilibration,
}

/// Candidate solutions in original units, one per pass. The caller keeps
/// whichever scores best.
pub(crate) fn polish(
    prog: &ConvexProgram,
    data: &Scaled,
    x: &[f64],
    z: &[f64],
    s: &[f64],
) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if prog.cones.iter().any(|c| matches!(c, Cone::SecondOrder(_))) {
        return Vec::new();
    }
    let (n, m) = (prog.num_vars(), prog.num_rows());
    let eq = data.eq;
    let mut equality = vec![false; m];
    let mut start = 0;
    for c in &prog.cones {
        if let Cone::Zero(d) = c {
            equality[start..start + d]
                .iter_mut()
                .for_each(|v| *v = true);
        }
        start += c.dim();
    }
    // scaled slacks and multipliers decide the initial guess
    let mut active: Vec<bool> = (0..m)
        .map(|i| equality[i] || z[i] * eq.c / eq.e[i] > s[i] * eq.e[i])
        .collect();
    let x0: Vec<f64> = x.iter().zip(&eq.d).map(|(v, d)| v / d).collect();
    let z0: Vec<f64> = z.iter().zip(&eq.e).map(|(v, e)| v * eq.c / e).collect();
    let triplets: Vec<(usize, usize, f64)> = data.a.triplets().collect();
    let mut out = Vec::new();
    for _ in 0..PASSES {
        let rows: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
        let mut pos = vec![usize::MAX; m];
        rows.iter().enumerate().for_each(|(k, &i)| pos[i] = k);
        let t: Vec<(usize, usize, f64)> = triplets
            .iter()
            .filter(|(r, ..)| pos[*r] != usize::MAX)
            .map(|&(r, c, v)| (pos[r], c, v))
            .collect();
        let a_act = CscMatrix::from_triplets(rows.len(), n, &t);
        let cones = ConeSet::new(&[Cone::Zero(rows.len())]);
        let dyn_reg = DynamicRegularization {
            eps: 1e-13,
            delta: 1e-10,
        };
        let Ok(mut kkt) = Kkt::new(data.p, &a_act, &cones, STATIC_REG, dyn_reg, REFINE_ITERS)
        else {
            break;
        };
        if kkt.factor(&cones, ScalingMode::Identity).is_err() {
            break;
        }
        let neg_q: Vec<f64> = data.q.iter().map(|v| -v).collect();
        let b_act: Vec<f64> = rows.iter().map(|&i| data.b[i]).collect();
        let mut xs: Vec<f64> = x0.clone();
        let mut ys: Vec<f64> = rows.iter().map(|&i| z0[i]).collect();
        kkt.solve_from(&neg_q, &b_act, &mut xs, &mut ys);
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            break;
        }
        let mut zs = vec![0.0; m];
        rows.iter().zip(&ys).for_each(|(&i, &y)| zs[i] = y);
        let mut ss = data.b.to_vec();
        data.a.gemv(-1.0, &xs, &mut ss);
        rows.iter().for_each(|&i| ss[i] = 0.0);

        // drop rows whose multiplier went negative, add rows now violated
        let mut changed = false;
        for i in 0..m {
            if equality[i] {
                continue;
            }
            if active[i] && zs[i] < 0.0 {
                active[i] = false;
                changed = true;
            } else if !active[i] && ss[i] < 0.0 {
                active[i] = true;
                changed = true;
            }
        }
        let xo = xs.iter().zip(&eq.d).map(|(v, d)| v * d).collect();
        let zo = zs.iter().zip(&eq.e).map(|(v, e)| v * e / eq.c).collect();
        let so = ss.iter().zip(&eq.e).map(|(v, e)| v / e).collect();
        out.push((xo, zo, so));
        if !changed {
            break;
        }
    }
    out
}
