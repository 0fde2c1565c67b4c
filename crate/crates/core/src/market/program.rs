//! Shared program assembly: one prosumer's variables, negated utility and
//! local constraints.

use crate::prosumer::ProsumerParams;
use gridmarket_solver::{ConeKind, DualSign, ProgramBuilder, ProgramError, VarBlock};

pub(crate) struct ProsumerVars {
    pub u: VarBlock,
    pub x: VarBlock,
    /// Absent when the trade is substituted out as `p = a − h(u)`.
    pub p: Option<VarBlock>,
    pub m: usize,
    pub n: usize,
}

impl ProsumerVars {
    pub fn u(&self, t: usize, k: usize) -> usize {
        self.u.at(t * self.m + k)
    }

    /// Variable of `x(t + 1)`.
    pub fn x_next(&self, t: usize, j: usize) -> usize {
        self.x.at(t * self.n + j)
    }

    pub fn p(&self, t: usize) -> usize {
        self.p.as_ref().expect("trade variable").at(t)
    }
}

pub(crate) fn cap_block(i: usize) -> String {
    format!("cap{i}")
}

/// Adds prosumer `i` to the builder: `−utility` to the objective plus
/// dynamics, availability masks, input and state boxes and, when
/// `with_trade`, the trade cap `p(t) ≤ a(t) − h(u(t))`.
pub(crate) fn add_prosumer(
    b: &mut ProgramBuilder,
    pr: &ProsumerParams,
    i: usize,
    with_trade: bool,
) -> Result<ProsumerVars, ProgramError> {
    let (n, m, horizon) = (pr.states(), pr.inputs(), pr.horizon());
    let u = b.add_variables(format!("u{i}"), m * horizon);
    let x = b.add_variables(format!("x{i}"), n * horizon);
    let p = with_trade.then(|| b.add_variables(format!("p{i}"), horizon));
    let v = ProsumerVars { u, x, p, m, n };
    let ut = &pr.utility;

    // −f: ϑ₁‖u‖² + Σ ϑ (x − target)², the x(0) term being constant
    for t in 0..horizon {
        for k in 0..m {
            b.add_quadratic(v.u(t, k), v.u(t, k), ut.theta_input);
        }
    }
    for j in 0..n {
        b.add_constant(ut.theta_state[0][j] * (pr.x0[j] - ut.target[j]).powi(2));
    }
    for t in 0..horizon {
        for j in 0..n {
            // x(t+1) carries the stage weight of step t+1, or φ at the end
            let th = if t + 1 < horizon {
                ut.theta_state[t + 1][j]
            } else {
                ut.theta_terminal
            };
            let idx = v.x_next(t, j);
            b.add_quadratic(idx, idx, th);
            b.add_linear(idx, -2.0 * th * ut.target[j]);
            b.add_constant(th * ut.target[j] * ut.target[j]);
        }
    }

    b.begin_block(format!("dyn{i}"), ConeKind::Zero, DualSign::Direct)?;
    for t in 0..horizon {
        for j in 0..n {
            let mut row = vec![(v.x_next(t, j), 1.0)];
            let mut rhs = 0.0;
            for l in 0..n {
                let a = pr.a[(j, l)];
                if t == 0 {
                    rhs += a * pr.x0[l];
                } else if a != 0.0 {
                    row.push((v.x_next(t - 1, l), -a));
                }
            }
            for k in 0..m {
                let bb = pr.b[(j, k)];
                if bb != 0.0 {
                    row.push((v.u(t, k), -bb));
                }
            }
            b.push_row(&row, rhs);
        }
    }
    b.end_block()?;

    b.begin_block(format!("mask{i}"), ConeKind::Zero, DualSign::Direct)?;
    for t in 0..horizon {
        for k in 0..m {
            if !pr.available(k, t) {
                b.push_row(&[(v.u(t, k), 1.0)], 0.0);
            }
        }
    }
    b.end_block()?;

    if with_trade {
        b.begin_block(cap_block(i), ConeKind::Nonneg, DualSign::Direct)?;
        for t in 0..horizon {
            let mut row = vec![(v.p(t), 1.0)];
            for k in 0..m {
                row.push((v.u(t, k), pr.energy_map.coef[k]));
            }
            b.push_row(&row, pr.net_supply[t] - pr.energy_map.offset);
        }
        b.end_block()?;
    }

    b.begin_block(format!("ubox{i}"), ConeKind::Nonneg, DualSign::Direct)?;
    for t in 0..horizon {
        for k in 0..m {
            if pr.available(k, t) {
                b.push_row(&[(v.u(t, k), 1.0)], pr.u_upper[k]);
                b.push_row(&[(v.u(t, k), -1.0)], -pr.u_lower[k]);
            }
        }
    }
    b.end_block()?;

    b.begin_block(format!("xbox{i}"), ConeKind::Nonneg, DualSign::Direct)?;
    for t in 0..horizon {
        for j in 0..n {
            b.push_row(&[(v.x_next(t, j), 1.0)], pr.x_upper[j]);
            b.push_row(&[(v.x_next(t, j), -1.0)], -pr.x_lower[j]);
        }
    }
    b.end_block()?;
    Ok(v)
}

/// Splits a stacked solution into `(u, x(1..=T) per step)`.
pub(crate) fn read_prosumer(
    x: &[f64],
    v: &ProsumerVars,
    horizon: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let u = x[v.u.start..v.u.start + v.u.len].to_vec();
    let states = (0..horizon)
        .map(|t| (0..v.n).map(|j| x[v.x_next(t, j)]).collect())
        .collect();
    (u, states)
}
