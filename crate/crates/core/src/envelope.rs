//! Dynamic operating envelopes by right-hand-side decomposition.
//!
//! For each step the operator splits the constraint bound `ν(t)` into
//! per-prosumer shares `w_i(t)` with `Σ_i w_i = ν`, maximizing the export
//! capacity the shares admit and pulling them toward the equal split
//! `Ē = ν/N`:
//!
//! ```text
//! max Σ_i p_i − ε·O(w)   s.t.  c_i p_i ≤ w_i,  p_i ≥ 0,  Σ_i w_i = ν
//! ```
//!
//! The capacity term only counts exports, which keeps the program concave;
//! see the README for why imports are left out.

use crate::feeder::AffineConstraintMap;
use gridmarket_solver::{solve, ConeKind, DualSign, ProgramBuilder, Settings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// `O(w) = ‖w − Ē‖²`, keeps the allocation a QP.
    #[default]
    Sqnorm,
    /// `O(w) = ‖w − Ē‖`, a second-order cone term.
    Norm,
}

impl std::str::FromStr for ObjectiveMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sqnorm" => Ok(Self::Sqnorm),
            "norm" => Ok(Self::Norm),
            _ => Err(format!(
                "unknown objective mode `{s}` (expected sqnorm or norm)"
            )),
        }
    }
}

impl ObjectiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sqnorm => "sqnorm",
            Self::Norm => "norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("no prosumers to allocate to")]
    Empty,
    #[error("allocation at step {t} is infeasible")]
    InfeasibleAllocation { t: usize },
    #[error("allocation at step {t} failed: {reason}")]
    SolverFailure { t: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeAllocation {
    /// `w[t][i][r]`.
    pub w: Vec<Vec<Vec<f64>>>,
    /// `Ē(t) = ν(t)/N`.
    pub equal_share: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub mode: ObjectiveMode,
    /// Export capacity `Σ_i p_i` reached at each step.
    pub capacity: Vec<f64>,
    /// Export levels behind the capacity figure, `[t][i]`.
    pub exports: Vec<Vec<f64>>,
}

impl EnvelopeAllocation {
    /// Shares fixed at the equal split, bypassing the allocation program.
    pub fn equal(map: &AffineConstraintMap) -> Self {
        let n = map.prosumers() as f64;
        let eq: Vec<Vec<f64>> = map
            .bound
            .iter()
            .map(|nu| nu.iter().map(|v| v / n).collect())
            .collect();
        let exports: Vec<Vec<f64>> = eq
            .iter()
            .map(|e| {
                (0..map.prosumers())
                    .map(|i| max_export(&map.coeffs[i], e))
                    .collect()
            })
            .collect();
        Self {
            w: eq
                .iter()
                .map(|e| vec![e.clone(); map.prosumers()])
                .collect(),
            capacity: exports.iter().map(|x| x.iter().sum()).collect(),
            exports,
            equal_share: eq,
            epsilon: f64::INFINITY,
            mode: ObjectiveMode::Sqnorm,
        }
    }

    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    /// `max_t ‖Σ_i w_i(t) − ν(t)‖∞`.
    pub fn decomposition_residual(&self, map: &AffineConstraintMap) -> f64 {
        let mut worst = 0.0f64;
        for (t, wt) in self.w.iter().enumerate() {
            for (r, nu) in map.bound[t].iter().enumerate() {
                let s: f64 = wt.iter().map(|w| w[r]).sum();
                worst = worst.max((s - nu).abs());
            }
        }
        worst
    }

    /// `‖w(t) − Ē(t)‖₂` over all prosumers and components.
    pub fn distance_from_equal(&self, t: usize) -> f64 {
        self.w[t]
            .iter()
            .flat_map(|wi| {
                wi.iter()
                    .zip(&self.equal_share[t])
                    .map(|(a, b)| (a - b).powi(2))
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Interval `[lo, hi]` of injections admitted by prosumer i's envelope.
    pub fn interval(&self, map: &AffineConstraintMap, t: usize, i: usize) -> (f64, f64) {
        envelope_interval(&map.coeffs[i], &self.w[t][i])
    }
}

/// Largest `p ≥ 0` with `c p ≤ w` (`∞` when no component limits exports).
fn max_export(c: &[f64], w: &[f64]) -> f64 {
    c.iter()
        .zip(w)
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, w)| w / c)
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Scalar injections `p` with `c p ≤ w`. Empty when `lo > hi`; rows with
/// `c = 0` and `w < 0` also make the set empty and are reported as
/// `(∞, −∞)`.
pub fn envelope_interval(c: &[f64], w: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (&c, &w) in c.iter().zip(w) {
        if c > 0.0 {
            hi = hi.min(w / c);
        } else if c < 0.0 {
            lo = lo.max(w / c);
        } else if w < 0.0 {
            return (f64::INFINITY, f64::NEG_INFINITY);
        }
    }
    (lo, hi)
}

/// `g_it(p) − w`; the envelope holds iff every entry is ≤ 0.
pub fn envelope_check(map: &AffineConstraintMap, i: usize, w_i: &[f64], p_i: f64) -> Vec<f64> {
    map.g(i, p_i).iter().zip(w_i).map(|(g, w)| g - w).collect()
}

pub fn allocate(
    map: &AffineConstraintMap,
    mode: ObjectiveMode,
    epsilon: f64,
    settings: &Settings,
) -> Result<EnvelopeAllocation, EnvelopeError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(EnvelopeError::InvalidEpsilon(epsilon));
    }
    let n = map.prosumers();
    if n == 0 {
        return Err(EnvelopeError::Empty);
    }
    // the program depends on t only through ν(t); solve each distinct bound once
    let mut distinct: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut first_step = Vec::new();
    let key_of: Vec<usize> = map
        .bound
        .iter()
        .enumerate()
        .map(|(t, nu)| {
            let key: Vec<u64> = nu.iter().map(|v| v.to_bits()).collect();
            let next = distinct.len();
            *distinct.entry(key).or_insert_with(|| {
                first_step.push(t);
                next
            })
        })
        .collect();
    let solved: Vec<Result<(Vec<Vec<f64>>, Vec<f64>), EnvelopeError>> = first_step
        .par_iter()
        .map(|&t| allocate_step(map, t, mode, epsilon, settings))
        .collect();
    let solved: Vec<(Vec<Vec<f64>>, Vec<f64>)> = solved.into_iter().collect::<Result<_, _>>()?;
    let equal_share: Vec<Vec<f64>> = map
        .bound
        .iter()
        .map(|nu| nu.iter().map(|v| v / n as f64).collect())
        .collect();
    let w: Vec<Vec<Vec<f64>>> = key_of.iter().map(|&k| solved[k].0.clone()).collect();
    let exports: Vec<Vec<f64>> = key_of.iter().map(|&k| solved[k].1.clone()).collect();
    Ok(EnvelopeAllocation {
        w,
        equal_share,
        epsilon,
        mode,
        capacity: exports.iter().map(|x| x.iter().sum()).collect(),
        exports,
    })
}

type StepShares = (Vec<Vec<f64>>, Vec<f64>);

fn allocate_step(
    map: &AffineConstraintMap,
    t: usize,
    mode: ObjectiveMode,
    epsilon: f64,
    settings: &Settings,
) -> Result<StepShares, EnvelopeError> {
    let (n, m) = (map.prosumers(), map.m());
    let nu = &map.bound[t];
    let eq: Vec<f64> = nu.iter().map(|v| v / n as f64).collect();
    // prosumers whose injection does not enter any constraint add unbounded
    // capacity and are left out of the objective
    let active: Vec<bool> = map
        .coeffs
        .iter()
        .map(|c| c.iter().any(|v| *v > 0.0))
        .collect();
    let mut b = ProgramBuilder::new();
    let p = b.add_variables("p", n);
    let w = b.add_variables("w", n * m);
    let wi = |i: usize, r: usize| w.at(i * m + r);
    for i in (0..n).filter(|&i| active[i]) {
        b.add_linear(p.at(i), -1.0);
    }
    let tau = (mode == ObjectiveMode::Norm).then(|| b.add_variables("tau", 1));
    match tau {
        None => {
            for i in 0..n {
                for r in 0..m {
                    b.add_quadratic(wi(i, r), wi(i, r), epsilon);
                    b.add_linear(wi(i, r), -2.0 * epsilon * eq[r]);
                    b.add_constant(epsilon * eq[r] * eq[r]);
                }
            }
        }
        Some(ref tau) => b.add_linear(tau.at(0), epsilon),
    }
    let bad = |e: gridmarket_solver::ProgramError| EnvelopeError::SolverFailure {
        t,
        reason: e.to_string(),
    };
    b.begin_block("split", ConeKind::Zero, DualSign::Direct)
        .map_err(bad)?;
    for (r, &nu_r) in nu.iter().enumerate() {
        let row: Vec<(usize, f64)> = (0..n).map(|i| (wi(i, r), 1.0)).collect();
        b.push_row(&row, nu_r);
    }
    b.end_block().map_err(bad)?;
    b.begin_block("envelope", ConeKind::Nonneg, DualSign::Direct)
        .map_err(bad)?;
    for i in 0..n {
        for r in 0..m {
            let c = if active[i] { map.coeffs[i][r] } else { 0.0 };
            b.push_row(&[(p.at(i), c), (wi(i, r), -1.0)], 0.0);
        }
    }
    b.end_block().map_err(bad)?;
    b.begin_block("export", ConeKind::Nonneg, DualSign::Direct)
        .map_err(bad)?;
    for i in 0..n {
        b.push_row(&[(p.at(i), -1.0)], 0.0);
    }
    b.end_block().map_err(bad)?;
    if let Some(tau) = tau {
        b.begin_block("fairness", ConeKind::SecondOrder, DualSign::Direct)
            .map_err(bad)?;
        b.push_row(&[(tau.at(0), -1.0)], 0.0);
        for i in 0..n {
            for r in 0..m {
                b.push_row(&[(wi(i, r), -1.0)], -eq[r]);
            }
        }
        b.end_block().map_err(bad)?;
    }
    let prog = b.build().map_err(bad)?;
    let sol = solve(&prog, settings).map_err(|e| EnvelopeError::SolverFailure {
        t,
        reason: e.to_string(),
    })?;
    match sol.require_optimal() {
        Ok(_) => {}
        Err(gridmarket_solver::SolveFailure::Infeasible { .. }) => {
            return Err(EnvelopeError::InfeasibleAllocation { t })
        }
        Err(e) => {
            return Err(EnvelopeError::SolverFailure {
                t,
                reason: e.to_string(),
            })
        }
    }
    let x = &sol.x;
    let shares = (0..n)
        .map(|i| (0..m).map(|r| x[wi(i, r)]).collect())
        .collect();
    let exports = (0..n)
        .map(|i| if active[i] { x[p.at(i)].max(0.0) } else { 0.0 })
        .collect();
    Ok((shares, exports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{FeederModel, Line};

    fn band() -> (f64, f64) {
        (0.95f64.powi(2), 1.05f64.powi(2))
    }

    fn chain() -> FeederModel {
        let (lo, hi) = band();
        FeederModel::with_uniform_bounds(
            &[Line::new(0, 1, 0.1, 0.0), Line::new(1, 2, 0.1, 0.0)],
            2,
            1.0,
            lo,
            hi,
        )
        .unwrap()
    }

    fn settings() -> Settings {
        Settings::default()
    }

    #[test]
    fn single_prosumer_gets_everything() {
        let f = chain();
        let map = f.voltage_constraint_map(&[2], 2);
        for eps in [1e-4, 1.0] {
            let a = allocate(&map, ObjectiveMode::Sqnorm, eps, &settings()).unwrap();
            for (x, nu) in a.w[0][0].iter().zip(&map.bound[0]) {
                assert!((x - nu).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn shared_node_splits_equally() {
        let f = chain();
        let map = f.voltage_constraint_map(&[2, 2], 1);
        for mode in [ObjectiveMode::Sqnorm, ObjectiveMode::Norm] {
            let a = allocate(&map, mode, 1e-4, &settings()).unwrap();
            for i in 0..2 {
                for (x, nu) in a.w[0][i].iter().zip(&map.bound[0]) {
                    assert!((x - nu / 2.0).abs() < 1e-6, "{mode:?}: {x} vs {}", nu / 2.0);
                }
            }
        }
    }

    #[test]
    fn star_shares_are_swap_symmetric() {
        let (lo, hi) = band();
        let f = FeederModel::with_uniform_bounds(
            &[Line::new(0, 1, 0.1, 0.0), Line::new(0, 2, 0.1, 0.0)],
            2,
            1.0,
            lo,
            hi,
        )
        .unwrap();
        let map = f.voltage_constraint_map(&[1, 2], 1);
        let a = allocate(&map, ObjectiveMode::Sqnorm, 1e-4, &settings()).unwrap();
        let swap = [1, 0, 3, 2];
        for r in 0..4 {
            assert!((a.w[0][0][r] - a.w[0][1][swap[r]]).abs() < 1e-6);
        }
        // lower-bound shares are not needed for exports; with a regularizer
        // strong enough to resolve them they sit at the equal split
        let a = allocate(&map, ObjectiveMode::Sqnorm, 1.0, &settings()).unwrap();
        assert!((a.w[0][0][2] - map.bound[0][2] / 2.0).abs() < 1e-6);
    }

    #[test]
    fn chain_beats_equal_split() {
        let f = chain();
        let map = f.voltage_constraint_map(&[1, 2], 3);
        let a = allocate(&map, ObjectiveMode::Sqnorm, 1e-4, &settings()).unwrap();
        assert!(a.decomposition_residual(&map) < 1e-6);
        // exports at the equal split: p_i = min over limiting rows of Ē_r / c_ir
        let eq = &a.equal_share[0];
        let baseline: f64 = (0..2)
            .map(|i| {
                map.coeffs[i]
                    .iter()
                    .zip(eq)
                    .filter(|(c, _)| **c > 0.0)
                    .map(|(c, e)| e / c)
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        assert!(
            a.capacity[0] >= baseline - 1e-7,
            "{} < {}",
            a.capacity[0],
            baseline
        );
        // here concentrating headroom on node 1 is strictly better
        assert!(a.capacity[0] > baseline + 1e-3);
    }

    #[test]
    fn larger_epsilon_moves_toward_equal_split() {
        let f = chain();
        let map = f.voltage_constraint_map(&[1, 2, 2], 1);
        let dist: Vec<f64> = [1e-4, 1.0, 1e3]
            .iter()
            .map(|&e| {
                allocate(&map, ObjectiveMode::Sqnorm, e, &settings())
                    .unwrap()
                    .distance_from_equal(0)
            })
            .collect();
        assert!(
            dist[0] >= dist[1] - 1e-8 && dist[1] >= dist[2] - 1e-8,
            "{dist:?}"
        );
        assert!(dist[2] < 1e-3);
    }

    #[test]
    fn envelope_check_slack() {
        let f = FeederModel::with_uniform_bounds(
            &[Line::new(0, 1, 0.1, 0.0)],
            1,
            1.0,
            band().0,
            band().1,
        )
        .unwrap();
        let map = f.voltage_constraint_map(&[1], 1);
        let w = vec![0.02, 0.0975];
        assert!(envelope_check(&map, 0, &w, 0.0).iter().all(|s| *s <= 0.0));
        // 0.2 p = 0.03 exceeds the upper share 0.02 by 0.01
        let s = envelope_check(&map, 0, &w, 0.15);
        assert!((s[0] - 0.01).abs() < 1e-12);
        assert!(envelope_check(&map, 0, &w, 0.1)[0].abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let map = chain().voltage_constraint_map(&[1], 1);
        assert_eq!(
            allocate(&map, ObjectiveMode::Sqnorm, 0.0, &settings()),
            Err(EnvelopeError::InvalidEpsilon(0.0))
        );
    }
}
