//! Payments, incomes and the coordinator's budget.

use super::ClearingResult;
use crate::feeder::AffineConstraintMap;
use serde::{Deserialize, Serialize};

/// A prosumer's income over the horizon, internal currency (¢).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Income {
    /// `Σ_t λ_i(t) p_i(t)`.
    pub energy: f64,
    /// `Σ_t β(t)·l_i(t)`, the limit-trading (ancillary) part.
    pub limits: f64,
    pub total: f64,
}

/// Net payments collected by the coordinator at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLine {
    pub energy: f64,
    pub limits: f64,
    pub total: f64,
    /// `Σ_i (|λ_i p_i| + |β·l_i|)`, the size of the flows being netted.
    pub gross: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub incomes: Vec<Income>,
    pub budget: Vec<BudgetLine>,
    pub budget_total: f64,
    /// `1 + Σ_t gross(t)`, the scale budget residuals are measured against.
    pub scale: f64,
}

impl Settlement {
    /// Weak budget balance: the coordinator never pays out.
    pub fn weakly_balanced(&self, rel_tol: f64) -> bool {
        self.budget_total >= -rel_tol * self.scale
    }

    /// Strong budget balance at every step.
    pub fn strongly_balanced(&self, rel_tol: f64) -> bool {
        self.budget
            .iter()
            .all(|b| b.total.abs() <= rel_tol * self.scale)
    }
}

/// Incomes and budget of a cleared market. The budget is minus the sum of
/// the incomes, so a positive value is a surplus kept by the coordinator.
pub fn settle(res: &ClearingResult) -> Settlement {
    let (n, horizon) = (res.prosumers(), res.horizon());
    let mut incomes = vec![Income::default(); n];
    let mut budget = vec![BudgetLine::default(); horizon];
    for t in 0..horizon {
        for (i, inc) in incomes.iter_mut().enumerate() {
            let e = res.prices.price_for(i, t) * res.injections[i][t];
            let l = match (&res.prices.limits, &res.limits) {
                (Some(beta), Some(lim)) => beta[t].iter().zip(&lim[i][t]).map(|(b, v)| b * v).sum(),
                _ => 0.0,
            };
            inc.energy += e;
            inc.limits += l;
            budget[t].energy -= e;
            budget[t].limits -= l;
            budget[t].gross += e.abs() + l.abs();
        }
        budget[t].total = budget[t].energy + budget[t].limits;
    }
    for inc in &mut incomes {
        inc.total = inc.energy + inc.limits;
    }
    Settlement {
        incomes,
        budget_total: budget.iter().map(|b| b.total).sum(),
        scale: 1.0 + budget.iter().map(|b| b.gross).sum::<f64>(),
        budget,
    }
}

/// Limit trades that make a locational dispatch feasible for limit
/// trading: `l_i = w_i − g_i(p_i) + (Σ_j g_j(p_j) − Σ_j w_j)/N`.
/// Input shares are `[t][i][r]`, injections `[i][t]`; output is `[i][t][r]`.
pub fn construct_limit_trades(
    map: &AffineConstraintMap,
    w: &[Vec<Vec<f64>>],
    p: &[Vec<f64>],
) -> Vec<Vec<Vec<f64>>> {
    let (n, horizon, m) = (map.prosumers(), map.horizon(), map.m());
    let mut out = vec![vec![vec![0.0; m]; horizon]; n];
    for t in 0..horizon {
        let pt: Vec<f64> = p.iter().map(|pi| pi[t]).collect();
        let g_sum = map.total(&pt);
        for r in 0..m {
            let w_sum: f64 = w[t].iter().map(|wi| wi[r]).sum();
            let shift = (g_sum[r] - w_sum) / n as f64;
            for i in 0..n {
                out[i][t][r] = w[t][i][r] - map.coeffs[i][r] * pt[i] + shift;
            }
        }
    }
    out
}
