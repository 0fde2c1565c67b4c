//! Welfare-maximizing market clearing under three pricing mechanisms.
//!
//! Each mechanism is one multi-period program minimizing negated welfare.
//! Prices are read from its multipliers:
//!
//! | constraint                        | block            | price            |
//! |-----------------------------------|------------------|------------------|
//! | `Σ_i p_i(t) = 0`                  | `balance`        | `α(t) = λ(t)`    |
//! | `Σ_i c_i p_i(t) ≤ ν(t)`           | `grid`           | `ξ̄(t), ξ̲(t)`     |
//! | `l_i(t) + c_i p_i(t) ≤ w_i(t)`    | `limits`         | per-row `π_i(t)` |
//! | `Σ_i l_i(t) = 0`                  | `limit_balance`  | `β(t) = δ(t)`    |
//!
//! Both balance rows are negated so the read-out prices are nonnegative at
//! a typical optimum. Locational prices are `λ_i = α − c_i·μ` with `μ` the
//! grid multipliers, which for the voltage band is
//! `α + Σ_k (ξ̲_k − ξ̄_k) R_{k,node(i)}`.

mod best_response;
mod program;
mod settle;

pub use best_response::{best_response, BestResponse, BestResponseError, IndividualPrices};
pub use settle::{construct_limit_trades, settle, BudgetLine, Income, Settlement};

use crate::envelope::EnvelopeAllocation;
use crate::feeder::{AffineConstraintMap, BoundKind, FeederModel};
use crate::prosumer::ProsumerFleet;
use gridmarket_solver::{
    check_slater, solve, ConeKind, ConvexProgram, DualSign, ProgramBuilder, Settings, SlaterReport,
    Solution, SolveFailure, VarBlock,
};
use program::{add_prosumer, read_prosumer, ProsumerVars};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Locational,
    UniformDoe,
    UniformLimit,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [
        Mechanism::Locational,
        Mechanism::UniformDoe,
        Mechanism::UniformLimit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Locational => "locational",
            Mechanism::UniformDoe => "uniform-doe",
            Mechanism::UniformLimit => "uniform-limit",
        }
    }

    pub fn uses_envelopes(self) -> bool {
        !matches!(self, Mechanism::Locational)
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mechanism `{s}` (expected locational, uniform-doe or uniform-limit)"
                )
            })
    }
}

/// All prices in internal units (¢ per p.u. per interval for energy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSet {
    /// Balance multiplier `α(t)`; the uniform energy price.
    pub energy: Vec<f64>,
    /// `β(t)` per constraint component (limit trading).
    pub limits: Option<Vec<Vec<f64>>>,
    /// `λ_i(t) = α(t) − c_i·μ(t)` per prosumer, `[t][i]` (locational).
    pub prosumer: Option<Vec<Vec<f64>>>,
    /// `α + Σ_k (ξ̲_k − ξ̄_k) R_{kj}` per feeder node j, `[t][j−1]`.
    pub nodal: Option<Vec<Vec<f64>>>,
    /// Grid multipliers split by bound kind, `[t][k−1]`.
    pub xi_upper: Option<Vec<Vec<f64>>>,
    pub xi_lower: Option<Vec<Vec<f64>>>,
}

impl PriceSet {
    /// Energy price faced by prosumer i at step t.
    pub fn price_for(&self, i: usize, t: usize) -> f64 {
        match &self.prosumer {
            Some(p) => p[t][i],
            None => self.energy[t],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: String,
    pub iterations: usize,
    /// Relative KKT residuals.
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
    pub objective: f64,
    pub dual_objective: f64,
    pub solve_seconds: f64,
    pub variables: usize,
    pub rows: usize,
}

impl SolverReport {
    fn from_solution(sol: &Solution, prog: &ConvexProgram) -> Self {
        Self {
            status: sol.status.to_string(),
            iterations: sol.iterations,
            stationarity: sol.kkt.stationarity,
            primal_feasibility: sol.kkt.primal_feasibility,
            dual_feasibility: sol.kkt.dual_feasibility,
            complementarity: sol.kkt.complementarity,
            objective: sol.objective,
            dual_objective: sol.dual_objective,
            solve_seconds: sol.solve_time.as_secs_f64(),
            variables: prog.num_vars(),
            rows: prog.num_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub mechanism: Mechanism,
    /// Injections `p_i(t)` in p.u., `[i][t]`.
    pub injections: Vec<Vec<f64>>,
    /// Stacked inputs `u_i`, `[i][t * m + k]`.
    pub controls: Vec<Vec<f64>>,
    /// States `x_i(1..=T)`, `[i][t][j]`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Traded limits `l_i(t)`, `[i][t][r]` (limit trading only).
    pub limits: Option<Vec<Vec<Vec<f64>>>>,
    /// Envelope shares the clearing used, `[t][i][r]`.
    pub envelopes: Option<Vec<Vec<Vec<f64>>>>,
    /// Multipliers of the per-prosumer envelope rows, `[t][i][r]`; zero on
    /// rows left out because their coefficient vanishes.
    pub envelope_duals: Option<Vec<Vec<Vec<f64>>>>,
    /// Multipliers `ψ_i(t)` of the trade caps, `[i][t]`.
    pub cap_duals: Vec<Vec<f64>>,
    /// `Σ_i utility_i` evaluated at the solution.
    pub welfare: f64,
    pub prices: PriceSet,
    pub solver: SolverReport,
    pub settlement: Settlement,
}

impl ClearingResult {
    pub fn horizon(&self) -> usize {
        self.prices.energy.len()
    }

    pub fn prosumers(&self) -> usize {
        self.injections.len()
    }

    /// Injections of all prosumers at step t.
    pub fn injections_at(&self, t: usize) -> Vec<f64> {
        self.injections.iter().map(|p| p[t]).collect()
    }

    /// Prosumer i's traded limits by step.
    pub fn limits_of(&self, i: usize) -> Option<&[Vec<f64>]> {
        self.limits.as_ref().map(|l| l[i].as_slice())
    }
}

/// Which group of constraints a clearing program failed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityDetail {
    /// Constraint families carrying weight in the infeasibility
    /// certificate, heaviest first.
    pub families: Vec<String>,
    /// Prosumers whose envelopes take part in the certificate.
    pub prosumers: Vec<usize>,
    /// Steps at which a zero-coefficient envelope row is already negative.
    pub empty_envelope_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClearingError {
    #[error("{mechanism} clearing is infeasible")]
    Infeasible {
        mechanism: Mechanism,
        detail: InfeasibilityDetail,
    },
    #[error("{mechanism} clearing is unbounded")]
    Unbounded { mechanism: Mechanism },
    #[error("{mechanism} clearing failed: {reason}")]
    SolverFailure {
        mechanism: Mechanism,
        reason: String,
    },
    #[error("inputs do not match: {0}")]
    Mismatch(String),
}

impl ClearingError {
    /// Longer explanation for the operator, used by the command-line tool.
    pub fn explanation(&self) -> String {
        match self {
            ClearingError::Infeasible {
                mechanism: Mechanism::UniformDoe,
                detail,
            } => {
                let who = if detail.prosumers.is_empty() {
                    String::new()
                } else {
                    format!(
                        " The envelopes of prosumers {:?} are involved.",
                        detail.prosumers
                    )
                };
                format!(
                    "No balanced trade fits inside the dynamic operating envelopes: with trading confined to each \
                     prosumer's own envelope share, the injections the prosumers must make cannot be matched.{who} \
                     Limit trading (--mechanism uniform-limit) lets prosumers exchange unused envelope headroom and \
                     can restore feasibility."
                )
            }
            ClearingError::Infeasible { detail, .. } => {
                format!(
                    "The certificate of infeasibility involves: {}.",
                    detail.families.join(", ")
                )
            }
            other => other.to_string(),
        }
    }
}

/// Scenario pieces a clearing needs.
#[derive(Debug, Clone, Copy)]
pub struct Market<'a> {
    pub feeder: &'a FeederModel,
    pub fleet: &'a ProsumerFleet,
    pub map: &'a AffineConstraintMap,
}

enum Coupling<'a> {
    Global,
    Envelopes(&'a EnvelopeAllocation),
    Limits(&'a EnvelopeAllocation),
}

impl<'a> Market<'a> {
    pub fn new(
        feeder: &'a FeederModel,
        fleet: &'a ProsumerFleet,
        map: &'a AffineConstraintMap,
    ) -> Result<Self, ClearingError> {
        if map.prosumers() != fleet.len() || map.horizon() != fleet.horizon {
            return Err(ClearingError::Mismatch(format!(
                "constraint map covers {} prosumers over {} steps, fleet has {} over {}",
                map.prosumers(),
                map.horizon(),
                fleet.len(),
                fleet.horizon
            )));
        }
        Ok(Self { feeder, fleet, map })
    }

    pub fn clear(
        &self,
        mechanism: Mechanism,
        allocation: Option<&EnvelopeAllocation>,
        settings: &Settings,
    ) -> Result<ClearingResult, ClearingError> {
        let need = || {
            ClearingError::Mismatch(format!("{mechanism} clearing needs an envelope allocation"))
        };
        match mechanism {
            Mechanism::Locational => self.clear_locational(settings),
            Mechanism::UniformDoe => self.clear_uniform_doe(allocation.ok_or_else(need)?, settings),
            Mechanism::UniformLimit => {
                self.clear_uniform_limit(allocation.ok_or_else(need)?, settings)
            }
        }
    }

    pub fn clear_locational(&self, settings: &Settings) -> Result<ClearingResult, ClearingError> {
        self.run(Mechanism::Locational, Coupling::Global, settings)
    }

    pub fn clear_uniform_doe(
        &self,
        alloc: &EnvelopeAllocation,
        settings: &Settings,
    ) -> Result<ClearingResult, ClearingError> {
        self.check_allocation(alloc)?;
        self.run(Mechanism::UniformDoe, Coupling::Envelopes(alloc), settings)
    }

    pub fn clear_uniform_limit(
        &self,
        alloc: &EnvelopeAllocation,
        settings: &Settings,
    ) -> Result<ClearingResult, ClearingError> {
        self.check_allocation(alloc)?;
        self.run(Mechanism::UniformLimit, Coupling::Limits(alloc), settings)
    }

    fn check_allocation(&self, alloc: &EnvelopeAllocation) -> Result<(), ClearingError> {
        let ok = alloc.w.len() == self.map.horizon()
            && alloc.w.iter().all(|wt| {
                wt.len() == self.map.prosumers() && wt.iter().all(|w| w.len() == self.map.m())
            });
        if ok {
            Ok(())
        } else {
            Err(ClearingError::Mismatch(
                "envelope allocation does not match the scenario dimensions".into(),
            ))
        }
    }

    /// The clearing program with its prosumer variables, the origin
    /// `(t, i or usize::MAX, r)` of every coupling row and the limit
    /// variables when there are any.
    #[allow(clippy::type_complexity)]
    fn program(
        &self,
        mechanism: Mechanism,
        coupling: &Coupling,
    ) -> Result<
        (
            ConvexProgram,
            Vec<ProsumerVars>,
            Vec<(usize, usize, usize)>,
            Option<VarBlock>,
        ),
        ClearingError,
    > {
        let (n, horizon, mm) = (self.fleet.len(), self.fleet.horizon, self.map.m());
        let fail = |reason: String| ClearingError::SolverFailure { mechanism, reason };
        let perr = |e: gridmarket_solver::ProgramError| fail(e.to_string());

        // a zero-coefficient envelope row with a negative share can never hold
        if let Coupling::Envelopes(alloc) = *coupling {
            let steps: Vec<usize> = (0..horizon)
                .filter(|&t| {
                    (0..n).any(|i| {
                        (0..mm).any(|r| {
                            self.map.coeffs[i][r] == 0.0 && alloc.w[t][i][r] < -ZERO_ROW_TOL
                        })
                    })
                })
                .collect();
            if !steps.is_empty() {
                return Err(ClearingError::Infeasible {
                    mechanism,
                    detail: InfeasibilityDetail {
                        families: vec!["envelope".into()],
                        prosumers: vec![],
                        empty_envelope_steps: steps,
                    },
                });
            }
        }

        let mut b = ProgramBuilder::new();
        let vars: Vec<ProsumerVars> = self
            .fleet
            .prosumers
            .iter()
            .enumerate()
            .map(|(i, pr)| add_prosumer(&mut b, pr, i, true))
            .collect::<Result<_, _>>()
            .map_err(perr)?;

        b.begin_block("balance", ConeKind::Zero, DualSign::Negated)
            .map_err(perr)?;
        for t in 0..horizon {
            let row: Vec<(usize, f64)> = vars.iter().map(|v| (v.p(t), 1.0)).collect();
            b.push_row(&row, 0.0);
        }
        b.end_block().map_err(perr)?;

        // rows of the coupling block, remembered as (t, i or usize::MAX, r)
        let mut grid_rows: Vec<(usize, usize, usize)> = Vec::new();
        let mut lim_block = None;
        match *coupling {
            Coupling::Global => {
                b.begin_block("grid", ConeKind::Nonneg, DualSign::Direct)
                    .map_err(perr)?;
                for t in 0..horizon {
                    for r in 0..mm {
                        let row: Vec<(usize, f64)> = (0..n)
                            .filter(|&i| self.map.coeffs[i][r] != 0.0)
                            .map(|i| (vars[i].p(t), self.map.coeffs[i][r]))
                            .collect();
                        if !row.is_empty() {
                            b.push_row(&row, self.map.bound[t][r]);
                            grid_rows.push((t, usize::MAX, r));
                        }
                    }
                }
                b.end_block().map_err(perr)?;
            }
            Coupling::Envelopes(alloc) => {
                b.begin_block("envelope", ConeKind::Nonneg, DualSign::Direct)
                    .map_err(perr)?;
                for t in 0..horizon {
                    for i in 0..n {
                        for r in 0..mm {
                            let c = self.map.coeffs[i][r];
                            if c != 0.0 {
                                b.push_row(&[(vars[i].p(t), c)], alloc.w[t][i][r]);
                                grid_rows.push((t, i, r));
                            }
                        }
                    }
                }
                b.end_block().map_err(perr)?;
            }
            Coupling::Limits(alloc) => {
                let l = b.add_variables("l", n * horizon * mm);
                let li = |i: usize, t: usize, r: usize| l.at((i * horizon + t) * mm + r);
                b.begin_block("limits", ConeKind::Nonneg, DualSign::Direct)
                    .map_err(perr)?;
                for t in 0..horizon {
                    for i in 0..n {
                        for r in 0..mm {
                            let c = self.map.coeffs[i][r];
                            let mut row = vec![(li(i, t, r), 1.0)];
                            if c != 0.0 {
                                row.push((vars[i].p(t), c));
                            }
                            b.push_row(&row, alloc.w[t][i][r]);
                            grid_rows.push((t, i, r));
                        }
                    }
                }
                b.end_block().map_err(perr)?;
                b.begin_block("limit_balance", ConeKind::Zero, DualSign::Negated)
                    .map_err(perr)?;
                for t in 0..horizon {
                    for r in 0..mm {
                        let row: Vec<(usize, f64)> = (0..n).map(|i| (li(i, t, r), 1.0)).collect();
                        b.push_row(&row, 0.0);
                    }
                }
                b.end_block().map_err(perr)?;
                lim_block = Some(l);
            }
        }

        let prog = b.build().map_err(perr)?;
        Ok((prog, vars, grid_rows, lim_block))
    }

    /// Largest uniform slack on every inequality of the clearing program,
    /// a measure of how strictly feasible it is.
    pub fn slater_margin(
        &self,
        mechanism: Mechanism,
        allocation: Option<&EnvelopeAllocation>,
    ) -> Result<SlaterReport, ClearingError> {
        let need = || ClearingError::Mismatch(format!("{mechanism} needs an envelope allocation"));
        let coupling = match mechanism {
            Mechanism::Locational => Coupling::Global,
            Mechanism::UniformDoe => Coupling::Envelopes(allocation.ok_or_else(need)?),
            Mechanism::UniformLimit => Coupling::Limits(allocation.ok_or_else(need)?),
        };
        let (prog, ..) = self.program(mechanism, &coupling)?;
        check_slater(&prog, SLATER_CAP).map_err(|e| ClearingError::SolverFailure {
            mechanism,
            reason: e.to_string(),
        })
    }

    fn run(
        &self,
        mechanism: Mechanism,
        coupling: Coupling,
        settings: &Settings,
    ) -> Result<ClearingResult, ClearingError> {
        let (n, horizon, mm) = (self.fleet.len(), self.fleet.horizon, self.map.m());
        let fail = |reason: String| ClearingError::SolverFailure { mechanism, reason };
        let (prog, vars, grid_rows, lim_block) = self.program(mechanism, &coupling)?;
        let lim_vars =
            lim_block.map(|l| move |i: usize, t: usize, r: usize| l.at((i * horizon + t) * mm + r));
        let sol = solve(&prog, settings).map_err(|e| fail(e.to_string()))?;
        match sol.require_optimal() {
            Ok(_) => {}
            Err(SolveFailure::Infeasible { .. }) => {
                return Err(ClearingError::Infeasible {
                    mechanism,
                    detail: self.diagnose(&prog, &sol, &coupling),
                })
            }
            Err(SolveFailure::Unbounded) => return Err(ClearingError::Unbounded { mechanism }),
            Err(e) => return Err(fail(e.to_string())),
        }

        let x = &sol.x;
        let mut controls = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        let mut injections = Vec::with_capacity(n);
        let mut cap_duals = Vec::with_capacity(n);
        for (i, v) in vars.iter().enumerate() {
            let (u, s) = read_prosumer(x, v, horizon);
            controls.push(u);
            states.push(s);
            injections.push((0..horizon).map(|t| x[v.p(t)]).collect::<Vec<f64>>());
            cap_duals.push(sol.dual(&prog, &program::cap_block(i)).expect("cap block"));
        }
        let welfare = self
            .fleet
            .prosumers
            .iter()
            .zip(&controls)
            .map(|(pr, u)| pr.utility(u).expect("dimensions checked"))
            .sum();

        let alpha = sol.dual(&prog, "balance").expect("balance block");
        let coupling_duals = match coupling {
            Coupling::Global => sol.dual(&prog, "grid"),
            Coupling::Envelopes(_) => sol.dual(&prog, "envelope"),
            Coupling::Limits(_) => sol.dual(&prog, "limits"),
        }
        .unwrap_or_default();

        let mut prices = PriceSet {
            energy: alpha.clone(),
            limits: None,
            prosumer: None,
            nodal: None,
            xi_upper: None,
            xi_lower: None,
        };
        let mut limits = None;
        let mut envelopes = None;
        let mut envelope_duals = None;
        match coupling {
            Coupling::Global => {
                let mut mu = vec![vec![0.0; mm]; horizon];
                for (&(t, _, r), &z) in grid_rows.iter().zip(&coupling_duals) {
                    mu[t][r] = z;
                }
                let pros: Vec<Vec<f64>> = (0..horizon)
                    .map(|t| {
                        (0..n)
                            .map(|i| {
                                alpha[t]
                                    - self.map.coeffs[i]
                                        .iter()
                                        .zip(&mu[t])
                                        .map(|(c, m)| c * m)
                                        .sum::<f64>()
                            })
                            .collect()
                    })
                    .collect();
                prices.prosumer = Some(pros);
                if self.map.components.len() == 2 * self.feeder.node_count() {
                    let (xu, xl) = split_by_kind(self.map, &mu);
                    prices.nodal = Some(nodal_prices(self.feeder, &alpha, &xu, &xl));
                    prices.xi_upper = Some(xu);
                    prices.xi_lower = Some(xl);
                }
            }
            Coupling::Envelopes(alloc) => {
                let mut d = vec![vec![vec![0.0; mm]; n]; horizon];
                for (&(t, i, r), &z) in grid_rows.iter().zip(&coupling_duals) {
                    d[t][i][r] = z;
                }
                envelope_duals = Some(d);
                envelopes = Some(alloc.w.clone());
            }
            Coupling::Limits(alloc) => {
                let li = lim_vars.expect("limit variables");
                limits = Some(
                    (0..n)
                        .map(|i| {
                            (0..horizon)
                                .map(|t| (0..mm).map(|r| x[li(i, t, r)]).collect())
                                .collect()
                        })
                        .collect(),
                );
                let delta = sol
                    .dual(&prog, "limit_balance")
                    .expect("limit balance block");
                prices.limits = Some(delta.chunks(mm).map(|c| c.to_vec()).collect());
                let mut d = vec![vec![vec![0.0; mm]; n]; horizon];
                for (&(t, i, r), &z) in grid_rows.iter().zip(&coupling_duals) {
                    d[t][i][r] = z;
                }
                envelope_duals = Some(d);
                envelopes = Some(alloc.w.clone());
            }
        }

        let mut result = ClearingResult {
            mechanism,
            injections,
            controls,
            states,
            limits,
            envelopes,
            envelope_duals,
            cap_duals,
            welfare,
            prices,
            solver: SolverReport::from_solution(&sol, &prog),
            settlement: Settlement::default(),
        };
        result.settlement = settle(&result);
        Ok(result)
    }

    fn diagnose(
        &self,
        prog: &ConvexProgram,
        sol: &Solution,
        coupling: &Coupling,
    ) -> InfeasibilityDetail {
        let n = self.fleet.len();
        let mut fam: Vec<(String, f64)> = Vec::new();
        let mut add = |name: &str, w: f64| match fam.iter_mut().find(|(f, _)| f == name) {
            Some(e) => e.1 += w,
            None => fam.push((name.to_string(), w)),
        };
        for blk in &prog.con_blocks {
            let w = sol.certificate_weight(prog, &blk.name).unwrap_or(0.0);
            let family = blk.name.trim_end_matches(|c: char| c.is_ascii_digit());
            add(family, w);
        }
        let top = fam.iter().map(|(_, w)| *w).fold(0.0, f64::max);
        fam.retain(|(_, w)| *w > 1e-9 * top.max(f64::MIN_POSITIVE));
        fam.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut prosumers = Vec::new();
        if matches!(coupling, Coupling::Envelopes(_)) {
            if let (Some(cert), Some(blk)) = (&sol.certificate, prog.con_block("envelope")) {
                let mut weight = vec![0.0; n];
                let horizon = self.fleet.horizon;
                let mut row = blk.start;
                for _t in 0..horizon {
                    for (i, wi) in weight.iter_mut().enumerate() {
                        for r in 0..self.map.m() {
                            if self.map.coeffs[i][r] != 0.0 {
                                *wi += cert[row].abs();
                                row += 1;
                            }
                        }
                    }
                }
                let top = weight.iter().copied().fold(0.0, f64::max);
                prosumers = (0..n)
                    .filter(|&i| weight[i] > 1e-6 * top && top > 0.0)
                    .collect();
            }
        }
        InfeasibilityDetail {
            families: fam.into_iter().map(|(f, _)| f).collect(),
            prosumers,
            empty_envelope_steps: vec![],
        }
    }
}

/// Shares below this on a zero-coefficient row count as negative.
pub(crate) const ZERO_ROW_TOL: f64 = 1e-9;
/// Slack beyond which the Slater search stops; any larger margin is as good.
const SLATER_CAP: f64 = 1.0;

fn split_by_kind(map: &AffineConstraintMap, mu: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nodes = map.components.iter().map(|c| c.node).max().unwrap_or(0);
    let mut up = vec![vec![0.0; nodes]; mu.len()];
    let mut lo = vec![vec![0.0; nodes]; mu.len()];
    for (t, mt) in mu.iter().enumerate() {
        for (c, &z) in map.components.iter().zip(mt) {
            match c.kind {
                BoundKind::Upper => up[t][c.node - 1] = z,
                BoundKind::Lower => lo[t][c.node - 1] = z,
            }
        }
    }
    (up, lo)
}

/// `λ_j = α + Σ_k (ξ̲_k − ξ̄_k) R_kj` for every node j.
pub fn nodal_prices(
    feeder: &FeederModel,
    alpha: &[f64],
    xi_upper: &[Vec<f64>],
    xi_lower: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let nn = feeder.node_count();
    alpha
        .iter()
        .enumerate()
        .map(|(t, &a)| {
            (0..nn)
                .map(|j| {
                    a + (0..nn)
                        .map(|k| (xi_lower[t][k] - xi_upper[t][k]) * feeder.r[(k, j)])
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}
