//! Prosumer (aggregator) dynamics, constraints and quadratic utilities.
//!
//! Inputs are stacked step-major: `u[t * m + k]` is input k at step t.
//! All quantities are per-unit: power in p.u., stored energy in p.u.·h,
//! utility coefficients in ¢ per p.u.².

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProsumerError {
    #[error("prosumer {id}: {what} has length {got}, expected {expected}")]
    Dimension {
        id: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("prosumer {id}: initial state component {k} lies outside its bounds")]
    InitialState { id: usize, k: usize },
    #[error("prosumer {id}: negative utility coefficient ({what})")]
    NegativeCoefficient { id: usize, what: &'static str },
    #[error("prosumer {id}: bounds on {what} component {k} are inverted")]
    InvertedBounds {
        id: usize,
        what: &'static str,
        k: usize,
    },
    #[error(
        "prosumer {id}: availability window ({arrival}, {departure}) exceeds the horizon {horizon}"
    )]
    Window {
        id: usize,
        arrival: usize,
        departure: usize,
        horizon: usize,
    },
}

/// When an input may be nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Availability {
    Always,
    /// Available for `arrival <= t < departure`; wraps past the horizon end
    /// when `arrival > departure` (an overnight plug-in).
    Window {
        arrival: usize,
        departure: usize,
    },
}

impl Availability {
    pub fn available(&self, t: usize) -> bool {
        match *self {
            Availability::Always => true,
            Availability::Window { arrival, departure } if arrival <= departure => {
                arrival <= t && t < departure
            }
            Availability::Window { arrival, departure } => t >= arrival || t < departure,
        }
    }
}

/// Affine energy map `h(u) = coef · u + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMap {
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl EnergyMap {
    pub fn sum(m: usize) -> Self {
        Self {
            coef: vec![1.0; m],
            offset: 0.0,
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.offset + self.coef.iter().zip(u).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// `f(x, u) = −ϑ₁‖u(t)‖² − Σ_j ϑ_{j,t} (x_j(t) − target_j)²` for
/// t = 0..T−1 and `φ(x(T)) = −ϑ₄ ‖x(T) − target‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticUtility {
    pub theta_input: f64,
    /// `theta_state[t][j]` for t = 0..T−1.
    pub theta_state: Vec<Vec<f64>>,
    pub theta_terminal: f64,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerParams {
    pub id: usize,
    pub node: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x0: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Net supply `a_i(t)`, generation minus uncontrollable load.
    pub net_supply: Vec<f64>,
    pub energy_map: EnergyMap,
    pub utility: QuadraticUtility,
    pub capacity: Vec<f64>,
    pub availability: Vec<Availability>,
}

/// Storage aggregator in the usual form: `A = I`, `B = ηΔ·I`, state box
/// `[0.2 C, 0.85 C]`, symmetric rate limits and `h(u) = Σ u`.
#[derive(Debug, Clone)]
pub struct StorageSpec {
    pub id: usize,
    pub node: usize,
    pub capacity: Vec<f64>,
    pub x0: Vec<f64>,
    pub rate: f64,
    pub efficiency: f64,
    pub delta_hours: f64,
    pub net_supply: Vec<f64>,
    pub theta_input: f64,
    pub theta_state: Vec<f64>,
    pub theta_terminal: f64,
    pub availability: Vec<Availability>,
}

pub const SOC_MIN: f64 = 0.2;
pub const SOC_MAX: f64 = 0.85;

impl StorageSpec {
    pub fn build(self) -> ProsumerParams {
        let n = self.capacity.len();
        let t = self.net_supply.len();
        let target: Vec<f64> = self.capacity.iter().map(|c| SOC_MAX * c).collect();
        ProsumerParams {
            id: self.id,
            node: self.node,
            a: DMatrix::identity(n, n),
            b: DMatrix::identity(n, n) * (self.efficiency * self.delta_hours),
            x0: self.x0,
            x_lower: self.capacity.iter().map(|c| SOC_MIN * c).collect(),
            x_upper: target.clone(),
            u_lower: vec![-self.rate; n],
            u_upper: vec![self.rate; n],
            net_supply: self.net_supply,
            energy_map: EnergyMap::sum(n),
            utility: QuadraticUtility {
                theta_input: self.theta_input,
                theta_state: vec![self.theta_state; t],
                theta_terminal: self.theta_terminal,
                target,
            },
            capacity: self.capacity,
            availability: self.availability,
        }
    }
}

/// Kind of constraint reported by [`ProsumerParams::feasibility_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    StateLower,
    StateUpper,
    InputLower,
    InputUpper,
    TradeCap,
    Availability,
}

/// A violated constraint; `slack` is negative by the amount of violation.
/// For state bounds `t` is the index of `x(t)` (1..=T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub t: usize,
    pub component: usize,
    pub slack: f64,
}

impl ProsumerParams {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.net_supply.len()
    }

    pub fn available(&self, k: usize, t: usize) -> bool {
        self.availability[k].available(t)
    }

    pub fn validate(&self) -> Result<(), ProsumerError> {
        let (n, m, t) = (self.states(), self.inputs(), self.horizon());
        let id = self.id;
        let dims: [(&'static str, usize, usize); 11] = [
            ("A columns", n, self.a.ncols()),
            ("B rows", n, self.b.nrows()),
            ("x0", n, self.x0.len()),
            ("x_lower", n, self.x_lower.len()),
            ("x_upper", n, self.x_upper.len()),
            ("u_lower", m, self.u_lower.len()),
            ("u_upper", m, self.u_upper.len()),
            ("energy map", m, self.energy_map.coef.len()),
            ("availability", m, self.availability.len()),
            ("state weights", t, self.utility.theta_state.len()),
            ("target", n, self.utility.target.len()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(ProsumerError::Dimension {
                    id,
                    what,
                    expected,
                    got,
                });
            }
        }
        for th in &self.utility.theta_state {
            if th.len() != n {
                return Err(ProsumerError::Dimension {
                    id,
                    what: "state weight row",
                    expected: n,
                    got: th.len(),
                });
            }
            if th.iter().any(|v| *v < 0.0) {
                return Err(ProsumerError::NegativeCoefficient { id, what: "state" });
            }
        }
        if self.utility.theta_input < 0.0 {
            return Err(ProsumerError::NegativeCoefficient { id, what: "input" });
        }
        if self.utility.theta_terminal < 0.0 {
            return Err(ProsumerError::NegativeCoefficient {
                id,
                what: "terminal",
            });
        }
        for k in 0..n {
            if self.x_lower[k] > self.x_upper[k] {
                return Err(ProsumerError::InvertedBounds {
                    id,
                    what: "state",
                    k,
                });
            }
            if self.x0[k] < self.x_lower[k] || self.x0[k] > self.x_upper[k] {
                return Err(ProsumerError::InitialState { id, k });
            }
        }
        for k in 0..m {
            if self.u_lower[k] > self.u_upper[k] {
                return Err(ProsumerError::InvertedBounds {
                    id,
                    what: "input",
                    k,
                });
            }
            if let Availability::Window { arrival, departure } = self.availability[k] {
                if arrival > t || departure > t {
                    return Err(ProsumerError::Window {
                        id,
                        arrival,
                        departure,
                        horizon: t,
                    });
                }
            }
        }
        Ok(())
    }

    /// States `x(1..=T)` from `x0` under inputs `u`.
    pub fn expand_trajectory(&self, u: &[f64]) -> Result<Vec<Vec<f64>>, ProsumerError> {
        self.expand_from(&self.x0, u)
    }

    /// `x(t+1) = A x(t) + B u(t)` from an arbitrary initial state.
    pub fn expand_from(&self, x0: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>, ProsumerError> {
        let (m, t) = (self.inputs(), self.horizon());
        if u.len() != m * t {
            return Err(ProsumerError::Dimension {
                id: self.id,
                what: "inputs",
                expected: m * t,
                got: u.len(),
            });
        }
        if x0.len() != self.states() {
            return Err(ProsumerError::Dimension {
                id: self.id,
                what: "x0",
                expected: self.states(),
                got: x0.len(),
            });
        }
        let mut x = DVector::from_column_slice(x0);
        let mut out = Vec::with_capacity(t);
        for s in 0..t {
            let us = DVector::from_column_slice(&u[s * m..(s + 1) * m]);
            x = &self.a * x + &self.b * us;
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }

    /// `Σ_t f(x(t), u(t)) + φ(x(T))`, including the constant `x(0)` term.
    pub fn utility(&self, u: &[f64]) -> Result<f64, ProsumerError> {
        let xs = self.expand_trajectory(u)?;
        let m = self.inputs();
        let ut = &self.utility;
        let dev = |x: &[f64], j: usize| x[j] - ut.target[j];
        let mut total = 0.0;
        for t in 0..self.horizon() {
            let ui = &u[t * m..(t + 1) * m];
            total -= ut.theta_input * ui.iter().map(|v| v * v).sum::<f64>();
            let x = if t == 0 { &self.x0 } else { &xs[t - 1] };
            for (j, th) in ut.theta_state[t].iter().enumerate() {
                total -= th * dev(x, j).powi(2);
            }
        }
        let xt = xs.last().map(|v| v.as_slice()).unwrap_or(&self.x0);
        total -= ut.theta_terminal * (0..self.states()).map(|j| dev(xt, j).powi(2)).sum::<f64>();
        Ok(total)
    }

    /// Utility plus trade income `Σ λ(t) p(t)` and, under limit trading,
    /// `Σ β(t)·l(t)`.
    pub fn payoff(
        &self,
        u: &[f64],
        p: &[f64],
        lambda: &[f64],
        limits: Option<(&[Vec<f64>], &[Vec<f64>])>,
    ) -> Result<f64, ProsumerError> {
        Ok(self.utility(u)? + trade_income(p, lambda, limits))
    }

    /// Upper bound on the trade at step t given inputs: `a(t) − h(u(t))`.
    pub fn trade_cap(&self, t: usize, u_t: &[f64]) -> f64 {
        self.net_supply[t] - self.energy_map.eval(u_t)
    }

    /// Lists every violated constraint by more than `tol`.
    pub fn feasibility_check(
        &self,
        u: &[f64],
        p: &[f64],
        tol: f64,
    ) -> Result<Vec<Violation>, ProsumerError> {
        let (n, m, t_len) = (self.states(), self.inputs(), self.horizon());
        if p.len() != t_len {
            return Err(ProsumerError::Dimension {
                id: self.id,
                what: "trades",
                expected: t_len,
                got: p.len(),
            });
        }
        let xs = self.expand_trajectory(u)?;
        let mut out = Vec::new();
        let mut push = |kind, t, component, slack: f64| {
            if slack < -tol {
                out.push(Violation {
                    kind,
                    t,
                    component,
                    slack,
                });
            }
        };
        for t in 0..t_len {
            let ut = &u[t * m..(t + 1) * m];
            for k in 0..m {
                if self.available(k, t) {
                    push(ViolationKind::InputUpper, t, k, self.u_upper[k] - ut[k]);
                    push(ViolationKind::InputLower, t, k, ut[k] - self.u_lower[k]);
                } else {
                    push(ViolationKind::Availability, t, k, -ut[k].abs());
                }
            }
            push(ViolationKind::TradeCap, t, 0, self.trade_cap(t, ut) - p[t]);
            for j in 0..n {
                push(
                    ViolationKind::StateUpper,
                    t + 1,
                    j,
                    self.x_upper[j] - xs[t][j],
                );
                push(
                    ViolationKind::StateLower,
                    t + 1,
                    j,
                    xs[t][j] - self.x_lower[j],
                );
            }
        }
        Ok(out)
    }
}

/// `Σ λ(t) p(t) + Σ β(t)·l(t)`.
pub fn trade_income(p: &[f64], lambda: &[f64], limits: Option<(&[Vec<f64>], &[Vec<f64>])>) -> f64 {
    let mut inc: f64 = p.iter().zip(lambda).map(|(p, l)| p * l).sum();
    if let Some((beta, l)) = limits {
        for (bt, lt) in beta.iter().zip(l) {
            inc += bt.iter().zip(lt).map(|(b, v)| b * v).sum::<f64>();
        }
    }
    inc
}

/// Prosumers with their nodes, a shared horizon and interval length.
#[derive(Debug, Clone)]
pub struct ProsumerFleet {
    pub prosumers: Vec<ProsumerParams>,
    pub horizon: usize,
    pub delta_hours: f64,
}

impl ProsumerFleet {
    pub fn new(
        prosumers: Vec<ProsumerParams>,
        horizon: usize,
        delta_hours: f64,
    ) -> Result<Self, ProsumerError> {
        for p in &prosumers {
            if p.horizon() != horizon {
                return Err(ProsumerError::Dimension {
                    id: p.id,
                    what: "net supply",
                    expected: horizon,
                    got: p.horizon(),
                });
            }
            p.validate()?;
        }
        Ok(Self {
            prosumers,
            horizon,
            delta_hours,
        })
    }

    pub fn len(&self) -> usize {
        self.prosumers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prosumers.is_empty()
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.prosumers.iter().map(|p| p.node).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn spec(capacity: Vec<f64>, x0: Vec<f64>, t: usize) -> StorageSpec {
        let n = capacity.len();
        StorageSpec {
            id: 0,
            node: 1,
            capacity,
            x0,
            rate: 6.6,
            efficiency: 0.9,
            delta_hours: 0.5,
            net_supply: vec![0.0; t],
            theta_input: 0.0,
            theta_state: vec![0.0; n],
            theta_terminal: 0.0,
            availability: vec![Availability::Always; n],
        }
    }

    #[test]
    fn zero_input_keeps_state() {
        let p = spec(vec![40.0], vec![10.0], 4).build();
        let xs = p.expand_trajectory(&[0.0; 4]).unwrap();
        assert!(xs.iter().all(|x| x[0] == 10.0));
    }

    #[test]
    fn constant_charge_recursion() {
        let p = spec(vec![40.0], vec![10.0], 5).build();
        let xs = p.expand_trajectory(&[2.0; 5]).unwrap();
        for (t, x) in xs.iter().enumerate() {
            assert!((x[0] - (10.0 + 0.9 * (t + 1) as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_full_rate_step() {
        let p = spec(vec![40.0, 40.0], vec![20.0, 20.0], 1).build();
        let xs = p.expand_trajectory(&[6.6, -6.6]).unwrap();
        assert!((xs[0][0] - 22.97).abs() < 1e-12);
        assert!((xs[0][1] - 17.03).abs() < 1e-12);
    }

    #[test]
    fn payoff_examples() {
        let p = spec(vec![40.0], vec![10.0], 6).build();
        assert_eq!(
            p.payoff(&[0.0; 6], &[0.0; 6], &[0.0; 6], None).unwrap(),
            0.0
        );
        assert_eq!(
            p.payoff(&[0.0; 6], &[1.0; 6], &[1.0; 6], None).unwrap(),
            6.0
        );
        let mut s = spec(vec![40.0], vec![34.0], 6);
        s.theta_input = 0.3;
        s.theta_state = vec![0.7];
        s.theta_terminal = 2.0;
        let p = s.build();
        assert_eq!(p.utility(&[0.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn feasibility_reports() {
        let p = spec(vec![40.0], vec![20.0], 8).build();
        let mut u = vec![0.0; 8];
        u[2] = 7.6;
        let v = p.feasibility_check(&u, &[-7.6; 8], 1e-12).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::InputUpper);
        assert!((v[0].slack + 1.0).abs() < 1e-12);

        // trading exactly at the cap is allowed
        let u = vec![1.0; 8];
        let cap: Vec<f64> = (0..8).map(|t| p.trade_cap(t, &u[t..t + 1])).collect();
        assert!(p.feasibility_check(&u, &cap, 0.0).unwrap().is_empty());

        // discharge from 20 kWh: 4 steps at −6 kW take x(4) = 9.2, then x(5) = 6.5 < 8
        let mut u = vec![0.0; 8];
        u[..5].iter_mut().for_each(|v| *v = -6.0);
        let v = p.feasibility_check(&u, &[0.0; 8], 1e-12).unwrap();
        assert!(v.iter().all(|v| v.kind == ViolationKind::StateLower));
        assert_eq!(v[0].t, 5);
    }

    #[test]
    fn windows_mask_inputs() {
        let w = Availability::Window {
            arrival: 2,
            departure: 5,
        };
        assert_eq!(
            (0..7).map(|t| w.available(t)).collect::<Vec<_>>(),
            [false, false, true, true, true, false, false]
        );
        let overnight = Availability::Window {
            arrival: 5,
            departure: 2,
        };
        assert_eq!(
            (0..7).map(|t| overnight.available(t)).collect::<Vec<_>>(),
            [true, true, false, false, false, true, true]
        );
        let mut s = spec(vec![40.0], vec![20.0], 6);
        s.availability = vec![w];
        let p = s.build();
        let v = p.feasibility_check(&[1.0; 6], &[-1.0; 6], 1e-12).unwrap();
        assert_eq!(
            v.iter()
                .filter(|v| v.kind == ViolationKind::Availability)
                .count(),
            3
        );
    }

    #[test]
    fn validation_rejects_bad_initial_state() {
        let p = spec(vec![40.0], vec![39.0], 2).build();
        assert_eq!(
            p.validate(),
            Err(ProsumerError::InitialState { id: 0, k: 0 })
        );
    }

    fn random_prosumer() -> impl Strategy<Value = ProsumerParams> {
        (
            1usize..=6,
            0.0f64..1.0,
            prop::collection::vec(0.0f64..1.0, 2),
            0.0f64..3.0,
            5.0f64..60.0,
        )
            .prop_map(|(t, th1, th, th4, cap)| {
                let mut s = spec(vec![cap, cap / 2.0], vec![0.3 * cap, 0.15 * cap], t);
                s.theta_input = th1;
                s.theta_state = th;
                s.theta_terminal = th4;
                let mut p = s.build();
                // a non-identity, non-symmetric A to exercise the general recursion
                p.a[(0, 1)] = 0.1;
                p
            })
    }

    proptest! {
        #[test]
        fn utility_is_concave(p in random_prosumer()) {
            // exact second differences of a quadratic give its Hessian
            let d = p.inputs() * p.horizon();
            let h = 0.5;
            let f = |u: &[f64]| p.utility(u).unwrap();
            let base = vec![0.0; d];
            let mut hess = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    let mut pp = base.clone();
                    pp[i] += h;
                    pp[j] += h;
                    let mut pm = base.clone();
                    pm[i] += h;
                    pm[j] -= h;
                    let mut mp = base.clone();
                    mp[i] -= h;
                    mp[j] += h;
                    let mut mm = base.clone();
                    mm[i] -= h;
                    mm[j] -= h;
                    hess[(i, j)] = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
                }
            }
            let scale = 1.0 + hess.amax();
            let eig = SymmetricEigen::new(hess);
            prop_assert!(eig.eigenvalues.iter().all(|&e| e <= 1e-9 * scale));
        }

        #[test]
        fn trajectory_superposition(p in random_prosumer(), seed in prop::collection::vec(-6.6f64..6.6, 24)) {
            let d = p.inputs() * p.horizon();
            let u1 = &seed[..d];
            let u2: Vec<f64> = seed[..d].iter().rev().map(|v| 0.5 * v).collect();
            let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
            let a = p.expand_trajectory(&sum).unwrap();
            let b = p.expand_trajectory(&u2).unwrap();
            let c = p.expand_from(&vec![0.0; p.states()], u1).unwrap();
            for t in 0..p.horizon() {
                for j in 0..p.states() {
                    prop_assert!((a[t][j] - b[t][j] - c[t][j]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn payoff_separates(p in random_prosumer(), seed in prop::collection::vec(-1.0f64..1.0, 24)) {
            let t = p.horizon();
            let u: Vec<f64> = seed[..p.inputs() * t].to_vec();
            let tr: Vec<f64> = seed[12..12 + t].to_vec();
            let lam: Vec<f64> = seed[6..6 + t].iter().map(|v| 3.0 * v).collect();
            let beta: Vec<Vec<f64>> = (0..t).map(|s| vec![seed[s].abs(), seed[s + 1].abs()]).collect();
            let lim: Vec<Vec<f64>> = (0..t).map(|s| vec![seed[s + 2], -seed[s + 3]]).collect();
            let zero = p.payoff(&u, &tr, &vec![0.0; t], None).unwrap();
            let with = p.payoff(&u, &tr, &lam, Some((&beta, &lim))).unwrap();
            let direct: f64 = (0..t).map(|s| lam[s] * tr[s] + beta[s][0] * lim[s][0] + beta[s][1] * lim[s][1]).sum();
            prop_assert!((with - zero - direct).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }
}
