use super::{CheckRecord, SlaterMargin, VerifyContext};
use crate::envelope::EnvelopeAllocation;
use crate::market::{
    best_response, construct_limit_trades, settle, ClearingResult, IndividualPrices, Market,
    Mechanism,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Effective trade prices down to `−1e-7·(1 + max|λ|)` are taken as zero
/// when deciding whether a best response is unbounded.
const UNBOUNDED_PRICE_TOL: f64 = 1e-7;

fn max_or_zero(it: impl Iterator<Item = f64>) -> f64 {
    // NaN propagates so a broken quantity can never pass
    it.fold(0.0, |a, b| {
        if a.is_nan() || b.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    })
}

/// Certifies that a cleared market is a competitive equilibrium: every
/// prosumer best-responds to the prices, trades balance, the grid is safe,
/// prices satisfy their defining identity and multipliers are consistent
/// with the constraints they price.
pub fn certify_equilibrium(ctx: &VerifyContext<'_>, res: &ClearingResult) -> Vec<CheckRecord> {
    let mech = Some(res.mechanism);
    let tol = &ctx.tolerances;
    let (n, horizon) = (res.prosumers(), res.horizon());
    let mut out = Vec::new();

    out.push(CheckRecord::new(
        "best_response_gap",
        mech,
        "no prosumer can raise its payoff by deviating at the clearing prices",
        best_response_gap(ctx, res),
        tol.best_response,
    ));

    let balance =
        max_or_zero((0..horizon).map(|t| res.injections.iter().map(|p| p[t]).sum::<f64>().abs()));
    out.push(CheckRecord::new(
        "power_balance",
        mech,
        "traded power sums to zero at every step",
        balance,
        tol.balance,
    ));

    if let Some(l) = &res.limits {
        let m = ctx.map.m();
        let r = max_or_zero(
            (0..horizon)
                .flat_map(|t| (0..m).map(move |r| (0..n).map(|i| l[i][t][r]).sum::<f64>().abs())),
        );
        out.push(CheckRecord::new(
            "limit_balance",
            mech,
            "traded limits sum to zero at every step",
            r,
            tol.balance,
        ));
    }

    let voltages = voltage_profile(ctx, res);
    let overshoot = max_or_zero(voltages.iter().flat_map(|vt| {
        vt.iter().enumerate().map(|(k, &v)| {
            let (lo, hi, v) = (
                ctx.feeder.v_lower[k].sqrt(),
                ctx.feeder.v_upper[k].sqrt(),
                v.max(0.0).sqrt(),
            );
            (lo - v).max(v - hi).max(0.0)
        })
    }));
    out.push(CheckRecord::new(
        "voltage_band",
        mech,
        "cleared injections keep every node within its voltage band",
        overshoot,
        tol.voltage,
    ));

    if let (Some(w), true) = (&res.envelopes, res.mechanism.uses_envelopes()) {
        let r = max_or_zero((0..horizon).flat_map(|t| {
            (0..n).flat_map(move |i| {
                (0..ctx.map.m()).map(move |r| {
                    let l = res.limits.as_ref().map_or(0.0, |l| l[i][t][r]);
                    (l + ctx.map.coeffs[i][r] * res.injections[i][t] - w[t][i][r]).max(0.0)
                })
            })
        }));
        out.push(CheckRecord::new(
            "envelope_containment",
            mech,
            "each prosumer's injection (plus traded limit) stays inside its envelope",
            r,
            tol.envelope,
        ));
    }

    if res.mechanism == Mechanism::Locational {
        out.push(CheckRecord::new(
            "locational_price_identity",
            mech,
            "locational prices equal the uniform part plus voltage prices weighted by sensitivities",
            locational_identity(ctx, res),
            tol.price_formula,
        ));
    }

    out.push(CheckRecord::new(
        "complementary_slackness",
        mech,
        "only binding constraints carry a nonzero price",
        complementarity(ctx, res, &voltages),
        tol.complementarity,
    ));
    out.push(CheckRecord::new(
        "dual_sign",
        mech,
        "prices of inequality constraints are nonnegative",
        dual_sign(res),
        tol.dual_sign,
    ));

    let s = settle(res);
    match res.mechanism {
        Mechanism::Locational => {
            out.push(CheckRecord::new(
                "budget_balance_weak",
                mech,
                "the coordinator never pays out under locational prices",
                (-s.budget_total).max(0.0) / s.scale,
                tol.budget,
            ));
        }
        _ => {
            let e = max_or_zero(s.budget.iter().map(|b| b.energy.abs())) / s.scale;
            out.push(CheckRecord::new(
                "budget_balance_energy",
                mech,
                "energy payments net to zero at every step",
                e,
                tol.budget,
            ));
            if res.mechanism == Mechanism::UniformLimit {
                let l = max_or_zero(s.budget.iter().map(|b| b.limits.abs())) / s.scale;
                out.push(CheckRecord::new(
                    "budget_balance_limits",
                    mech,
                    "limit payments net to zero at every step",
                    l,
                    tol.budget,
                ));
            }
        }
    }
    out
}

/// Largest relative payoff improvement any prosumer finds against the
/// clearing prices; `∞` when some response is unbounded or fails.
fn best_response_gap(ctx: &VerifyContext<'_>, res: &ClearingResult) -> f64 {
    let horizon = res.horizon();
    let gaps: Vec<f64> = ctx
        .fleet
        .prosumers
        .par_iter()
        .enumerate()
        .map(|(i, pr)| {
            let prices = IndividualPrices {
                energy: (0..horizon).map(|t| res.prices.price_for(i, t)).collect(),
                limits: res.prices.limits.clone(),
            };
            let shares: Option<Vec<Vec<f64>>> = res
                .envelopes
                .as_ref()
                .map(|w| w.iter().map(|wt| wt[i].clone()).collect());
            let br = match best_response(
                pr,
                &ctx.map.coeffs[i],
                res.mechanism,
                &prices,
                shares.as_deref(),
                &ctx.settings,
                UNBOUNDED_PRICE_TOL,
            ) {
                Ok(br) if !br.unbounded => br,
                _ => return f64::INFINITY,
            };
            let limits = match (&prices.limits, res.limits_of(i)) {
                (Some(b), Some(l)) => Some((b.as_slice(), l)),
                _ => None,
            };
            match pr.payoff(&res.controls[i], &res.injections[i], &prices.energy, limits) {
                Ok(at) => (br.payoff - at).max(0.0) / (1.0 + br.payoff.abs()),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    max_or_zero(gaps.into_iter())
}

/// Squared voltages `[t][k−1]` produced by the cleared injections.
fn voltage_profile(ctx: &VerifyContext<'_>, res: &ClearingResult) -> Vec<Vec<f64>> {
    let nodes = ctx.fleet.nodes();
    let q = vec![0.0; ctx.feeder.node_count()];
    (0..res.horizon())
        .map(|t| {
            let p = ctx.feeder.nodal_injections(&nodes, &res.injections_at(t));
            ctx.feeder.voltages(&p, &q).expect("node count matches")
        })
        .collect()
}

fn locational_identity(ctx: &VerifyContext<'_>, res: &ClearingResult) -> f64 {
    let (Some(pros), Some(xu), Some(xl)) = (
        &res.prices.prosumer,
        &res.prices.xi_upper,
        &res.prices.xi_lower,
    ) else {
        return f64::INFINITY;
    };
    let nn = ctx.feeder.node_count();
    let scale = 1.0 + max_or_zero(pros.iter().flatten().map(|v| v.abs()));
    let worst = max_or_zero((0..res.horizon()).flat_map(|t| {
        ctx.fleet.prosumers.iter().enumerate().map(move |(i, pr)| {
            let j = pr.node - 1;
            let formula = res.prices.energy[t]
                + (0..nn)
                    .map(|k| (xl[t][k] - xu[t][k]) * ctx.feeder.r[(k, j)])
                    .sum::<f64>();
            (pros[t][i] - formula).abs()
        })
    }));
    worst / scale
}

/// `max |multiplier · slack|` over the coupling rows and trade caps, with
/// slacks recomputed from the primal solution.
fn complementarity(ctx: &VerifyContext<'_>, res: &ClearingResult, voltages: &[Vec<f64>]) -> f64 {
    let (n, horizon, m) = (res.prosumers(), res.horizon(), ctx.map.m());
    let f = ctx.feeder;
    let mut worst = 0.0f64;
    let mut take = |v: f64| {
        worst = if v.is_nan() {
            f64::NAN
        } else {
            worst.max(v.abs())
        }
    };
    for (i, pr) in ctx.fleet.prosumers.iter().enumerate() {
        let mi = pr.inputs();
        for t in 0..horizon {
            let cap = pr.trade_cap(t, &res.controls[i][t * mi..(t + 1) * mi]);
            take(res.cap_duals[i][t] * (cap - res.injections[i][t]));
        }
    }
    match res.mechanism {
        Mechanism::Locational => {
            let (Some(xu), Some(xl)) = (&res.prices.xi_upper, &res.prices.xi_lower) else {
                return f64::INFINITY;
            };
            for (t, vt) in voltages.iter().enumerate() {
                for (k, &v) in vt.iter().enumerate() {
                    take(xu[t][k] * (f.v_upper[k] - v));
                    take(xl[t][k] * (v - f.v_lower[k]));
                }
            }
        }
        _ => {
            let (Some(w), Some(d)) = (&res.envelopes, &res.envelope_duals) else {
                return f64::INFINITY;
            };
            for t in 0..horizon {
                for i in 0..n {
                    for r in 0..m {
                        let l = res.limits.as_ref().map_or(0.0, |l| l[i][t][r]);
                        let slack = w[t][i][r] - ctx.map.coeffs[i][r] * res.injections[i][t] - l;
                        take(d[t][i][r] * slack);
                    }
                }
            }
        }
    }
    worst
}

fn dual_sign(res: &ClearingResult) -> f64 {
    let p = &res.prices;
    let groups = [&p.xi_upper, &p.xi_lower, &p.limits];
    let mut lowest = groups
        .iter()
        .filter_map(|g| g.as_ref())
        .flatten()
        .flatten()
        .copied()
        .fold(0.0, f64::min);
    if let Some(d) = &res.envelope_duals {
        lowest = lowest.min(d.iter().flatten().flatten().copied().fold(0.0, f64::min));
    }
    lowest = lowest.min(res.cap_duals.iter().flatten().copied().fold(0.0, f64::min));
    -lowest
}

/// Compares locational clearing with limit trading on the same scenario:
/// equal welfare, equal uniform prices, and limit trades built from the
/// locational dispatch that are feasible for limit trading.
pub fn check_equivalence(
    ctx: &VerifyContext<'_>,
    loc: &ClearingResult,
    lim: &ClearingResult,
    alloc: &EnvelopeAllocation,
) -> Vec<CheckRecord> {
    let tol = &ctx.tolerances;
    let welfare = (loc.welfare - lim.welfare).abs() / (1.0 + loc.welfare.abs());
    let u = &ctx.units;
    let price = max_or_zero(
        loc.prices
            .energy
            .iter()
            .zip(&lim.prices.energy)
            .map(|(a, l)| (u.price_to_cents_per_kwh(*a) - u.price_to_cents_per_kwh(*l)).abs()),
    );

    let (n, horizon, m) = (loc.prosumers(), loc.horizon(), ctx.map.m());
    let l = construct_limit_trades(ctx.map, &alloc.w, &loc.injections);
    let mut worst = 0.0f64;
    for t in 0..horizon {
        for r in 0..m {
            worst = worst.max((0..n).map(|i| l[i][t][r]).sum::<f64>().abs());
            for i in 0..n {
                worst = worst.max(
                    l[i][t][r] + ctx.map.coeffs[i][r] * loc.injections[i][t] - alloc.w[t][i][r],
                );
            }
        }
    }

    vec![
        CheckRecord::new(
            "welfare_equivalence",
            None,
            "locational pricing and limit trading reach the same social welfare",
            welfare,
            tol.welfare,
        ),
        CheckRecord::new(
            "uniform_price_identity",
            None,
            "the uniform energy price under limit trading equals the uniform part of locational prices",
            price,
            tol.price,
        ),
        CheckRecord::new(
            "constructed_limit_trades",
            None,
            "limit trades built from the locational dispatch balance and respect every envelope",
            worst,
            tol.construction,
        ),
    ]
}

/// Clears limit trading with equal envelope shares and checks that every
/// prosumer's income exceeds its locational income by the same amount, the
/// locational surplus divided by the number of prosumers.
pub fn check_redistribution(ctx: &VerifyContext<'_>, loc: &ClearingResult) -> Vec<CheckRecord> {
    let name = "surplus_redistribution";
    let prop = "with equal shares each prosumer gains exactly its share of the locational surplus";
    let tol = ctx.tolerances.redistribution;
    let lim = Market::new(ctx.feeder, ctx.fleet, ctx.map)
        .and_then(|m| m.clear_uniform_limit(&EnvelopeAllocation::equal(ctx.map), &ctx.settings));
    let Ok(lim) = lim else {
        return vec![CheckRecord::new(name, None, prop, f64::INFINITY, tol)];
    };
    let before = settle(loc);
    let after = settle(&lim);
    let n = before.incomes.len() as f64;
    let share = before.budget_total / n;
    let scale = 1.0 + max_or_zero(before.incomes.iter().map(|i| i.total.abs()));
    let worst = max_or_zero(
        before
            .incomes
            .iter()
            .zip(&after.incomes)
            .map(|(b, a)| (a.total - b.total - share).abs()),
    );
    vec![CheckRecord::new(name, None, prop, worst / scale, tol)]
}

/// Checks that the shares add up to the grid's headroom and that random
/// injection profiles inside every envelope keep the feeder safe.
pub fn check_envelopes(
    ctx: &VerifyContext<'_>,
    alloc: &EnvelopeAllocation,
    samples: usize,
    seed: u64,
) -> Vec<CheckRecord> {
    let tol = &ctx.tolerances;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = ctx.fleet.nodes();
    let q = vec![0.0; ctx.feeder.node_count()];
    let mut worst = 0.0f64;
    let mut drawn = 0usize;
    for _ in 0..samples {
        for t in 0..alloc.horizon() {
            let mut p = Vec::with_capacity(nodes.len());
            for i in 0..nodes.len() {
                let (lo, hi) = alloc.interval(ctx.map, t, i);
                if lo > hi || !lo.is_finite() || !hi.is_finite() {
                    break;
                }
                p.push(if hi > lo { rng.gen_range(lo..=hi) } else { lo });
            }
            if p.len() < nodes.len() {
                continue;
            }
            drawn += 1;
            let v = ctx
                .feeder
                .voltages(&ctx.feeder.nodal_injections(&nodes, &p), &q)
                .expect("node count matches");
            for (k, &vk) in v.iter().enumerate() {
                let (lo, hi, vk) = (
                    ctx.feeder.v_lower[k].sqrt(),
                    ctx.feeder.v_upper[k].sqrt(),
                    vk.max(0.0).sqrt(),
                );
                worst = worst.max(vk - hi).max(lo - vk);
            }
        }
    }
    let safety = if drawn == 0 && samples > 0 {
        0.0
    } else {
        worst.max(0.0)
    };
    vec![
        CheckRecord::new(
            "envelope_decomposition",
            None,
            "envelope shares add up to the grid's headroom at every step",
            alloc.decomposition_residual(ctx.map),
            tol.decomposition,
        ),
        CheckRecord::new(
            "envelope_safety",
            None,
            "any injections inside the envelopes keep every voltage within its band",
            safety,
            tol.voltage,
        ),
    ]
}

/// Slater margins of the clearing programs. Mechanisms needing shares are
/// skipped without an allocation.
pub fn slater_margins(
    ctx: &VerifyContext<'_>,
    mechanisms: &[Mechanism],
    alloc: Option<&EnvelopeAllocation>,
) -> Vec<SlaterMargin> {
    let Ok(market) = Market::new(ctx.feeder, ctx.fleet, ctx.map) else {
        return Vec::new();
    };
    mechanisms
        .iter()
        .filter(|m| !m.uses_envelopes() || alloc.is_some())
        .map(|&mechanism| match market.slater_margin(mechanism, alloc) {
            Ok(r) => SlaterMargin {
                mechanism,
                margin: r.margin,
                holds: r.holds,
            },
            Err(_) => SlaterMargin {
                mechanism,
                margin: f64::NAN,
                holds: false,
            },
        })
        .collect()
}
