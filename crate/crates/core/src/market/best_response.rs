//! A single prosumer's payoff-maximizing reaction to fixed prices.
//!
//! Under locational pricing and limit trading the trade is only capped
//! from above, and the income term is linear in it. With the effective
//! price `λ' = λ − β·c ≥ 0` the cap binds at an optimum, so the trade is
//! substituted out as `p = a − h(u)`; a negative effective price makes the
//! problem unbounded (selling ever more negative quantities pays). Under
//! uniform pricing with envelopes the trade is also bounded below and the
//! problem is solved as is.

use super::program::add_prosumer;
use super::{Mechanism, ZERO_ROW_TOL};
use crate::prosumer::ProsumerParams;
use gridmarket_solver::{solve, ConeKind, DualSign, ProgramBuilder, Settings, SolveFailure};
use thiserror::Error;

/// Prices as seen by one prosumer.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualPrices {
    /// Energy price `λ_i(t)` (equal to `λ(t)` under uniform pricing).
    pub energy: Vec<f64>,
    /// `β(t)` per component under limit trading.
    pub limits: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub l: Option<Vec<Vec<f64>>>,
    /// Payoff at the best response; `+∞` when unbounded.
    pub payoff: f64,
    pub unbounded: bool,
    /// Smallest effective trade price `λ − β·c` over the horizon.
    pub min_effective_price: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BestResponseError {
    #[error("prosumer {id}: individual problem is infeasible")]
    Infeasible { id: usize },
    #[error("prosumer {id}: {reason}")]
    Solver { id: usize, reason: String },
    #[error("prosumer {id}: {mechanism} needs envelope shares")]
    MissingShares { id: usize, mechanism: Mechanism },
}

/// Effective prices at or above `−price_tol·(1 + max|λ|)` count as
/// nonnegative.
pub fn best_response(
    pr: &ProsumerParams,
    coeffs: &[f64],
    mechanism: Mechanism,
    prices: &IndividualPrices,
    shares: Option<&[Vec<f64>]>,
    settings: &Settings,
    price_tol: f64,
) -> Result<BestResponse, BestResponseError> {
    let id = pr.id;
    let horizon = pr.horizon();
    let perr = |e: gridmarket_solver::ProgramError| BestResponseError::Solver {
        id,
        reason: e.to_string(),
    };
    let beta = prices.limits.as_deref();
    let shares = match (mechanism, shares) {
        (Mechanism::Locational, _) => None,
        (_, Some(s)) => Some(s),
        (_, None) => return Err(BestResponseError::MissingShares { id, mechanism }),
    };

    let mut b = ProgramBuilder::new();
    let substitute = mechanism != Mechanism::UniformDoe;
    let v = add_prosumer(&mut b, pr, 0, !substitute).map_err(perr)?;
    let m = pr.inputs();
    let mut min_eff = f64::INFINITY;
    if substitute {
        // p(t) = a(t) − h(u(t)); income λ' p becomes linear in u
        let eff: Vec<f64> = (0..horizon)
            .map(|t| {
                let bc = match (mechanism, beta) {
                    (Mechanism::UniformLimit, Some(beta)) => {
                        beta[t].iter().zip(coeffs).map(|(b, c)| b * c).sum()
                    }
                    _ => 0.0,
                };
                prices.energy[t] - bc
            })
            .collect();
        min_eff = eff.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = 1.0 + prices.energy.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // a negative limit price rewards selling unbounded amounts of headroom
        let min_beta = beta.map_or(0.0, |b| b.iter().flatten().copied().fold(0.0, f64::min));
        if min_eff.min(min_beta) < -price_tol * scale {
            return Ok(BestResponse {
                u: vec![],
                p: vec![],
                l: None,
                payoff: f64::INFINITY,
                unbounded: true,
                min_effective_price: min_eff,
            });
        }
        for (t, &e) in eff.iter().enumerate() {
            for k in 0..m {
                b.add_linear(v.u(t, k), e * pr.energy_map.coef[k]);
            }
        }
    } else {
        for t in 0..horizon {
            b.add_linear(v.p(t), -prices.energy[t]);
        }
        let w = shares.expect("envelope shares");
        b.begin_block("envelope", ConeKind::Nonneg, DualSign::Direct)
            .map_err(perr)?;
        for (t, wt) in w.iter().enumerate() {
            for (&c, &wr) in coeffs.iter().zip(wt) {
                if c != 0.0 {
                    b.push_row(&[(v.p(t), c)], wr);
                } else if wr < -ZERO_ROW_TOL {
                    return Err(BestResponseError::Infeasible { id });
                }
            }
        }
        b.end_block().map_err(perr)?;
    }

    let prog = b.build().map_err(perr)?;
    let sol = solve(&prog, settings).map_err(|e| BestResponseError::Solver {
        id,
        reason: e.to_string(),
    })?;
    match sol.require_optimal() {
        Ok(_) => {}
        Err(SolveFailure::Infeasible { .. }) => return Err(BestResponseError::Infeasible { id }),
        Err(SolveFailure::Unbounded) => {
            return Ok(BestResponse {
                u: vec![],
                p: vec![],
                l: None,
                payoff: f64::INFINITY,
                unbounded: true,
                min_effective_price: min_eff,
            })
        }
        Err(e) => {
            return Err(BestResponseError::Solver {
                id,
                reason: e.to_string(),
            })
        }
    }
    let u = sol.x[v.u.start..v.u.start + v.u.len].to_vec();
    let p: Vec<f64> = if substitute {
        (0..horizon)
            .map(|t| pr.trade_cap(t, &u[t * m..(t + 1) * m]))
            .collect()
    } else {
        (0..horizon).map(|t| sol.x[v.p(t)]).collect()
    };
    let l = match (mechanism, shares) {
        (Mechanism::UniformLimit, Some(w)) => Some(
            (0..horizon)
                .map(|t| {
                    w[t].iter()
                        .zip(coeffs)
                        .map(|(wr, c)| wr - c * p[t])
                        .collect()
                })
                .collect::<Vec<Vec<f64>>>(),
        ),
        _ => None,
    };
    let limit_terms = match (&l, beta) {
        (Some(l), Some(beta)) => Some((beta, l.as_slice())),
        _ => None,
    };
    let payoff = pr
        .payoff(&u, &p, &prices.energy, limit_terms)
        .map_err(|e| BestResponseError::Solver {
            id,
            reason: e.to_string(),
        })?;
    if !substitute {
        min_eff = prices.energy.iter().copied().fold(f64::INFINITY, f64::min);
    }
    Ok(BestResponse {
        u,
        p,
        l,
        payoff,
        unbounded: false,
        min_effective_price: min_eff,
    })
}
