//! Reference optimum for tiny instances by exhaustive search.
//!
//! Welfare depends on the inputs `U` only; trades enter through
//! feasibility. For fixed `U` the trades at step t must lie in the polytope
//! `{p : p ≤ a − h(u), Σp = 0, coupling rows}`, which is bounded, so it is
//! nonempty exactly when it has a vertex. The search grids the input box,
//! decides feasibility of each grid point by enumerating vertices, and then
//! zooms in around the best point. Zooming can stall along a constraint
//! that is oblique to the grid, so with one or two prosumers the search is
//! finished by an exact enumeration of active sets.

use crate::envelope::EnvelopeAllocation;
use crate::feeder::AffineConstraintMap;
use crate::market::Mechanism;
use crate::prosumer::ProsumerFleet;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when testing a vertex against the remaining rows.
const VERTEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Grid points per input dimension on every level.
    pub points: usize,
    /// Zoom levels after the first full grid. Each level spans four
    /// spacings of the previous one, halving the box.
    pub refinements: usize,
    /// Welfare change between the last two levels tolerated without a
    /// warning.
    pub requested_gap: f64,
    /// Finish instances of at most two prosumers by exact active-set
    /// enumeration.
    pub active_sets: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            points: 9,
            refinements: 40,
            requested_gap: 1e-6,
            active_sets: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OracleWarning {
    /// The last zoom still moved the optimum by more than requested.
    GridTooCoarse { gap: f64, requested: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    /// Best welfare found; `None` when no grid point is feasible on the
    /// full first-level grid.
    pub welfare: Option<f64>,
    /// Inputs of the best point, `[i][t * m + k]`.
    pub controls: Vec<Vec<f64>>,
    /// One feasible trade vector for them, `[i][t]`.
    pub injections: Vec<Vec<f64>>,
    /// Welfare change over the last zoom.
    pub gap: f64,
    /// Final grid spacing, largest over dimensions.
    pub spacing: f64,
    pub evaluations: usize,
    pub warning: Option<OracleWarning>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search: {prosumers} prosumers, {horizon} steps, {dims} free inputs")]
    TooLarge {
        prosumers: usize,
        horizon: usize,
        dims: usize,
    },
    #[error("{0} needs envelope shares")]
    NeedsAllocation(Mechanism),
    #[error("grid needs at least 2 points per dimension")]
    BadConfig,
}

/// Free input coordinate: prosumer, flat input index, bounds.
struct Dim {
    i: usize,
    idx: usize,
    lo: f64,
    hi: f64,
}

struct Point {
    welfare: f64,
    p: Vec<Vec<f64>>,
}

pub fn brute_force_oracle(
    fleet: &ProsumerFleet,
    map: &AffineConstraintMap,
    mechanism: Mechanism,
    alloc: Option<&EnvelopeAllocation>,
    cfg: &OracleConfig,
) -> Result<OracleOutcome, OracleError> {
    if cfg.points < 2 {
        return Err(OracleError::BadConfig);
    }
    let (n, horizon) = (fleet.len(), fleet.horizon);
    let mut dims = Vec::new();
    for (i, pr) in fleet.prosumers.iter().enumerate() {
        let m = pr.inputs();
        for t in 0..horizon {
            for k in 0..m {
                if pr.available(k, t) {
                    dims.push(Dim {
                        i,
                        idx: t * m + k,
                        lo: pr.u_lower[k],
                        hi: pr.u_upper[k],
                    });
                }
            }
        }
    }
    if n > 3 || horizon > 3 || dims.len() > 6 {
        return Err(OracleError::TooLarge {
            prosumers: n,
            horizon,
            dims: dims.len(),
        });
    }
    let shares = match (mechanism, alloc) {
        (Mechanism::UniformDoe, Some(a)) => Some(&a.w),
        (Mechanism::UniformDoe, None) => return Err(OracleError::NeedsAllocation(mechanism)),
        // with Σ w = ν, tradable limits admit exactly the trades the
        // global band admits
        _ => None,
    };

    let template: Vec<Vec<f64>> = fleet
        .prosumers
        .iter()
        .map(|pr| vec![0.0; pr.inputs() * horizon])
        .collect();
    let evaluate = |coords: &[f64]| -> Option<Point> {
        let mut u = template.clone();
        for (d, &c) in dims.iter().zip(coords) {
            u[d.i][d.idx] = c;
        }
        let mut welfare = 0.0;
        for (pr, ui) in fleet.prosumers.iter().zip(&u) {
            let xs = pr.expand_trajectory(ui).ok()?;
            let inside = xs.iter().all(|x| {
                x.iter()
                    .enumerate()
                    .all(|(j, &v)| v >= pr.x_lower[j] - 1e-12 && v <= pr.x_upper[j] + 1e-12)
            });
            if !inside {
                return None;
            }
            welfare += pr.utility(ui).ok()?;
        }
        let mut p = vec![vec![0.0; horizon]; n];
        for t in 0..horizon {
            let caps: Vec<f64> = fleet
                .prosumers
                .iter()
                .zip(&u)
                .map(|(pr, ui)| {
                    let m = pr.inputs();
                    pr.trade_cap(t, &ui[t * m..(t + 1) * m])
                })
                .collect();
            let pt = feasible_trades(map, t, &caps, shares.map(|w| w[t].as_slice()))?;
            for (i, v) in pt.into_iter().enumerate() {
                p[i][t] = v;
            }
        }
        Some(Point { welfare, p })
    };

    let mut boxes: Vec<(f64, f64)> = dims.iter().map(|d| (d.lo, d.hi)).collect();
    let mut best: Option<(Vec<f64>, Point)> = None;
    let mut previous = f64::NAN;
    let mut gap = f64::INFINITY;
    let mut spacing = 0.0;
    let mut evaluations = 0;
    for level in 0..=cfg.refinements {
        let axes: Vec<Vec<f64>> = boxes
            .iter()
            .map(|&(a, b)| {
                if b - a <= 0.0 {
                    vec![a]
                } else {
                    (0..cfg.points)
                        .map(|s| a + (b - a) * s as f64 / (cfg.points - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        evaluations += total;
        let found = (0..total)
            .into_par_iter()
            .filter_map(|mut idx| {
                let coords: Vec<f64> = axes
                    .iter()
                    .map(|ax| {
                        let c = ax[idx % ax.len()];
                        idx /= ax.len();
                        c
                    })
                    .collect();
                evaluate(&coords).map(|pt| (coords, pt))
            })
            // ties go to the lexicographically smaller point so the result
            // does not depend on scheduling
            .reduce_with(|a, b| match a.1.welfare.total_cmp(&b.1.welfare) {
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Equal => {
                    if a.0
                        .iter()
                        .zip(&b.0)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        == Some(std::cmp::Ordering::Greater)
                    {
                        b
                    } else {
                        a
                    }
                }
            });
        if let Some(f) = found {
            if best.as_ref().is_none_or(|b| f.1.welfare >= b.1.welfare) {
                best = Some(f);
            }
        }
        let Some((centre, pt)) = &best else {
            // no feasible point on the full grid
            break;
        };
        if level > 0 {
            gap = (pt.welfare - previous).abs();
        }
        previous = pt.welfare;
        let steps: Vec<f64> = axes
            .iter()
            .map(|ax| if ax.len() > 1 { ax[1] - ax[0] } else { 0.0 })
            .collect();
        spacing = steps.iter().copied().fold(0.0, f64::max);
        boxes = dims
            .iter()
            .zip(centre)
            .zip(&steps)
            .map(|((d, &c), &h)| ((c - 2.0 * h).max(d.lo), (c + 2.0 * h).min(d.hi)))
            .collect();
    }

    // with at most two prosumers the trades eliminate exactly and the
    // optimum follows from enumerating active sets
    if cfg.active_sets && n <= 2 && !dims.is_empty() {
        // exact, so it replaces grid points that gain from the vertex
        // tolerance
        if let Some(Some(coords)) =
            enumerate_active_sets(fleet, map, shares.map(|w| w.as_slice()), &dims, &template)
        {
            if let Some(pt) = evaluate(&coords) {
                best = Some((coords, pt));
                gap = 0.0;
            }
        }
    }

    let Some((coords, pt)) = best else {
        return Ok(OracleOutcome {
            welfare: None,
            controls: vec![],
            injections: vec![],
            gap: 0.0,
            spacing,
            evaluations,
            warning: None,
        });
    };
    let mut controls = template;
    for (d, &c) in dims.iter().zip(&coords) {
        controls[d.i][d.idx] = c;
    }
    if dims.is_empty() {
        gap = 0.0;
    }
    let warning = (gap > cfg.requested_gap).then_some(OracleWarning::GridTooCoarse {
        gap,
        requested: cfg.requested_gap,
    });
    Ok(OracleOutcome {
        welfare: Some(pt.welfare),
        controls,
        injections: pt.p,
        gap,
        spacing,
        evaluations,
        warning,
    })
}

/// A point of `{p : p_i ≤ cap_i, Σp = 0, coupling rows}` at step t, found
/// among the polytope's vertices.
fn feasible_trades(
    map: &AffineConstraintMap,
    t: usize,
    caps: &[f64],
    shares: Option<&[Vec<f64>]>,
) -> Option<Vec<f64>> {
    let n = caps.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (i, &c) in caps.iter().enumerate() {
        let mut a = vec![0.0; n];
        a[i] = 1.0;
        rows.push((a, c));
    }
    match shares {
        None => {
            for r in 0..map.m() {
                let a: Vec<f64> = (0..n).map(|i| map.coeffs[i][r]).collect();
                if a.iter().any(|v| *v != 0.0) {
                    rows.push((a, map.bound[t][r]));
                } else if map.bound[t][r] < 0.0 {
                    return None;
                }
            }
        }
        Some(w) => {
            for i in 0..n {
                for r in 0..map.m() {
                    let c = map.coeffs[i][r];
                    if c != 0.0 {
                        let mut a = vec![0.0; n];
                        a[i] = c;
                        rows.push((a, w[i][r]));
                    } else if w[i][r] < 0.0 {
                        return None;
                    }
                }
            }
        }
    }
    let holds = |p: &[f64]| {
        rows.iter()
            .all(|(a, b)| a.iter().zip(p).map(|(x, y)| x * y).sum::<f64>() <= b + VERTEX_TOL)
    };
    if n == 1 {
        let p = vec![0.0];
        return holds(&p).then_some(p);
    }
    // every (n − 1)-subset of rows together with Σp = 0
    let k = n - 1;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if pick.iter().all(|&j| j < rows.len()) {
            let mut mat = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (row, &j) in pick.iter().enumerate() {
                for c in 0..n {
                    mat[(row, c)] = rows[j].0[c];
                }
                rhs[row] = rows[j].1;
            }
            for c in 0..n {
                mat[(k, c)] = 1.0;
            }
            if let Some(sol) = mat.lu().solve(&rhs) {
                let p: Vec<f64> = sol.iter().copied().collect();
                if p.iter().all(|v| v.is_finite()) && holds(&p) {
                    return Some(p);
                }
            }
        }
        // next combination in lexicographic order
        let mut pos = k;
        loop {
            if pos == 0 {
                return None;
            }
            pos -= 1;
            if pick[pos] < rows.len() - k + pos {
                break;
            }
            if pos == 0 {
                return None;
            }
        }
        pick[pos] += 1;
        for q in pos + 1..k {
            pick[q] = pick[q - 1] + 1;
        }
    }
}

/// Most subsets of constraints tried by [`enumerate_active_sets`].
const MAX_SUBSETS: usize = 2_000_000;

/// `c0 + g · coords`.
#[derive(Clone)]
struct Affine {
    c0: f64,
    g: Vec<f64>,
}

impl Affine {
    fn scaled(&self, k: f64) -> Self {
        Self {
            c0: self.c0 * k,
            g: self.g.iter().map(|v| v * k).collect(),
        }
    }

    fn minus(&self, o: &Self) -> Self {
        Self {
            c0: self.c0 - o.c0,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect(),
        }
    }

    fn constant(c0: f64, d: usize) -> Self {
        Self {
            c0,
            g: vec![0.0; d],
        }
    }
}

/// Exact optimum for one or two prosumers. Welfare is a concave quadratic
/// in the free inputs; the state box and the existence of trades are
/// linear conditions on them once the trade of the second prosumer is
/// written as minus the first and eliminated by pairing its upper and
/// lower bounds. The maximum then sits at the stationary point of some
/// face, so trying every set of at most `dims` constraints as equalities
/// finds it. `None` when the welfare is not quadratic or there are too many
/// sets; `Some(None)` when no feasible point exists.
fn enumerate_active_sets(
    fleet: &ProsumerFleet,
    map: &AffineConstraintMap,
    shares: Option<&[Vec<Vec<f64>>]>,
    dims: &[Dim],
    template: &[Vec<f64>],
) -> Option<Option<Vec<f64>>> {
    let d = dims.len();
    let (n, horizon) = (fleet.len(), fleet.horizon);
    let inputs = |coords: &[f64]| {
        let mut u = template.to_vec();
        for (dm, &c) in dims.iter().zip(coords) {
            u[dm.i][dm.idx] = c;
        }
        u
    };
    let unit = |k: usize| {
        (0..d)
            .map(|j| if j == k { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>()
    };
    let affine = |f: &dyn Fn(&[Vec<f64>]) -> f64| {
        let c0 = f(&inputs(&vec![0.0; d]));
        Affine {
            c0,
            g: (0..d).map(|k| f(&inputs(&unit(k))) - c0).collect(),
        }
    };

    // quadratic model of the welfare, checked at an off-grid point
    let welfare = |coords: &[f64]| -> Option<f64> {
        fleet
            .prosumers
            .iter()
            .zip(&inputs(coords))
            .map(|(pr, u)| pr.utility(u).ok())
            .sum()
    };
    let w0 = welfare(&vec![0.0; d])?;
    let mut plus = Vec::with_capacity(d);
    let mut grad = DVector::zeros(d);
    for k in 0..d {
        let mut e = unit(k);
        let wp = welfare(&e)?;
        e[k] = -1.0;
        grad[k] = (wp - welfare(&e)?) / 2.0;
        plus.push(wp);
    }
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut e = unit(i);
            e[j] += 1.0;
            let h = welfare(&e)? - plus[i] - plus[j] + w0;
            hess[(i, j)] = h;
            hess[(j, i)] = h;
        }
    }
    let model = |c: &DVector<f64>| w0 + grad.dot(c) + 0.5 * c.dot(&(&hess * c));
    let probe = DVector::from_fn(d, |k, _| 0.3 + 0.17 * k as f64);
    let exact = welfare(probe.as_slice())?;
    if (model(&probe) - exact).abs() > 1e-9 * (1.0 + exact.abs()) {
        return None;
    }

    // constraints `a · coords <= b`
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut le = |f: Affine| rows.push((f.g, -f.c0));
    for (k, dm) in dims.iter().enumerate() {
        le(Affine {
            c0: -dm.hi,
            g: unit(k),
        });
        le(Affine {
            c0: dm.lo,
            g: unit(k).iter().map(|v| -v).collect(),
        });
    }
    for (i, pr) in fleet.prosumers.iter().enumerate() {
        for t in 0..horizon {
            for j in 0..pr.states() {
                let x = affine(&|u: &[Vec<f64>]| {
                    pr.expand_trajectory(&u[i]).map_or(f64::NAN, |xs| xs[t][j])
                });
                le(x.minus(&Affine::constant(pr.x_upper[j], d)));
                le(Affine::constant(pr.x_lower[j], d).minus(&x));
            }
        }
    }
    let mut infeasible = false;
    for t in 0..horizon {
        let caps: Vec<Affine> = fleet
            .prosumers
            .iter()
            .enumerate()
            .map(|(i, pr)| {
                let m = pr.inputs();
                affine(&|u: &[Vec<f64>]| pr.trade_cap(t, &u[i][t * m..(t + 1) * m]))
            })
            .collect();
        // bounds `α p <= β` on the trade p of the first prosumer
        let mut bounds: Vec<(f64, Affine)> = vec![(1.0, caps[0].clone())];
        if n == 2 {
            bounds.push((-1.0, caps[1].clone()));
        }
        let sign = [1.0, -1.0];
        for r in 0..map.m() {
            match shares {
                None => {
                    let alpha: f64 = (0..n).map(|i| sign[i] * map.coeffs[i][r]).sum();
                    bounds.push((alpha, Affine::constant(map.bound[t][r], d)));
                }
                Some(w) => {
                    for i in 0..n {
                        bounds.push((sign[i] * map.coeffs[i][r], Affine::constant(w[t][i][r], d)));
                    }
                }
            }
        }
        if n == 1 {
            // p = 0
            for (_, beta) in &bounds {
                le(Affine::constant(0.0, d).minus(beta));
            }
            continue;
        }
        for (au, bu) in bounds.iter().filter(|b| b.0 > 0.0) {
            for (al, bl) in bounds.iter().filter(|b| b.0 < 0.0) {
                le(bl.scaled(1.0 / al).minus(&bu.scaled(1.0 / au)));
            }
        }
        for (_, beta) in bounds.iter().filter(|b| b.0 == 0.0) {
            le(Affine::constant(0.0, d).minus(beta));
        }
    }
    // rows without inputs are either always or never satisfied
    rows.retain(|(a, b)| {
        if a.iter().all(|v| *v == 0.0) {
            infeasible |= *b < -VERTEX_TOL;
            false
        } else {
            true
        }
    });
    if infeasible {
        return Some(None);
    }

    let k_max = d.min(rows.len());
    let mut count = 0usize;
    let mut binom = 1usize;
    for k in 0..=k_max {
        count = count.saturating_add(binom);
        binom = binom.saturating_mul(rows.len() - k) / (k + 1);
    }
    if count > MAX_SUBSETS {
        return None;
    }
    let feasible = |c: &DVector<f64>| {
        rows.iter().all(|(a, b)| {
            a.iter().zip(c.iter()).map(|(x, y)| x * y).sum::<f64>()
                <= b + VERTEX_TOL * (1.0 + b.abs())
        })
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for k in 0..=k_max {
        let mut pick: Vec<usize> = (0..k).collect();
        loop {
            // [H −Aᵀ; A 0] [c; λ] = [−g; b]
            let mut kkt = DMatrix::zeros(d + k, d + k);
            let mut rhs = DVector::zeros(d + k);
            kkt.view_mut((0, 0), (d, d)).copy_from(&hess);
            rhs.rows_mut(0, d).copy_from(&(-&grad));
            for (r, &j) in pick.iter().enumerate() {
                for c in 0..d {
                    kkt[(d + r, c)] = rows[j].0[c];
                    kkt[(c, d + r)] = -rows[j].0[c];
                }
                rhs[d + r] = rows[j].1;
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let c = sol.rows(0, d).into_owned();
                if c.iter().all(|v| v.is_finite()) && feasible(&c) {
                    let w = model(&c);
                    if best.as_ref().is_none_or(|b| w > b.0) {
                        best = Some((w, c));
                    }
                }
            }
            // next k-subset
            let mut pos = k;
            while pos > 0 && pick[pos - 1] == rows.len() - k + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            pick[pos - 1] += 1;
            for q in pos..k {
                pick[q] = pick[q - 1] + 1;
            }
        }
    }
    Some(best.map(|(_, c)| c.iter().copied().collect()))
}
