//! Homogeneous self-dual embedding interior-point method with
//! Mehrotra predictor-corrector steps and Nesterov–Todd scaling.

use crate::cones::ConeSet;
use crate::equilibrate::{equilibrate, Equilibration};
use crate::kkt::{Kkt, ScalingMode};
use crate::ldl::{DynamicRegularization, LdlError};
use crate::polish::{polish, Scaled};
use crate::program::{Cone, ConvexProgram};
use crate::sparse::{dot, norm_inf};
use std::time::{Duration, Instant};
use thiserror::Error;

/// Once `tol_optimal` is met, iterations continue until the score falls
/// by this further factor or stops improving.
const EXTRA_ACCURACY: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Settings {
    /// Target accuracy for relative residuals and gap.
    pub tol_optimal: f64,
    /// Accuracy accepted when progress stalls.
    pub tol_acceptable: f64,
    /// Threshold for infeasibility certificates.
    pub tol_infeasible: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
    pub static_reg: f64,
    pub dyn_reg_eps: f64,
    pub dyn_reg_delta: f64,
    pub equilibrate_iters: usize,
    pub refine_iters: usize,
    pub verbose: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol_optimal: 1e-8,
            tol_acceptable: 1e-6,
            tol_infeasible: 1e-8,
            max_iter: 200,
            step_fraction: 0.99,
            static_reg: 1e-8,
            dyn_reg_eps: 1e-13,
            dyn_reg_delta: 2e-7,
            equilibrate_iters: 10,
            refine_iters: 10,
            verbose: false,
        }
    }
}

impl Settings {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            tol_optimal: tol,
            tol_acceptable: tol.max(1e-6),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Converged to the acceptable tolerance only.
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalTrouble,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::AlmostOptimal => "almost optimal",
            SolveStatus::PrimalInfeasible => "infeasible",
            SolveStatus::DualInfeasible => "unbounded",
            SolveStatus::MaxIterations => "iteration limit",
            SolveStatus::NumericalTrouble => "numerical trouble",
        };
        f.write_str(s)
    }
}

/// KKT residuals as infinity norms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    /// `‖P x + q + Aᵀ z‖`
    pub stationarity: f64,
    /// Largest violation of the original constraints.
    pub primal_feasibility: f64,
    /// Largest violation of `z ∈ K*`.
    pub dual_feasibility: f64,
    /// Largest `|z_i · slack_i|` (per cone for second-order blocks).
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Raw multipliers with `P x + q + Aᵀ z = 0`.
    pub z: Vec<f64>,
    /// Cone slacks `s = b − A x`.
    pub s: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Residuals normalized by the magnitude of the terms they balance.
    pub kkt: KktResiduals,
    /// Unnormalized residuals.
    pub kkt_abs: KktResiduals,
    pub iterations: usize,
    pub solve_time: Duration,
    /// Farkas certificate `z ∈ K*` with `Aᵀz = 0`, `bᵀz = −1` when
    /// primal infeasible; recession direction `x` when dual infeasible.
    pub certificate: Option<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("factorization failed: {0}")]
    Factorization(#[from] LdlError),
}

/// Failure of a solve that was required to be optimal.
#[derive(Debug, Error, Clone)]
pub enum SolveFailure {
    #[error("program is infeasible")]
    Infeasible { certificate: Option<Vec<f64>> },
    #[error("program is unbounded")]
    Unbounded,
    #[error("solver stopped with status `{status}` (max KKT residual {residual:.3e})")]
    NumericalTrouble { status: SolveStatus, residual: f64 },
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        matches!(
            self.status,
            SolveStatus::Optimal | SolveStatus::AlmostOptimal
        )
    }

    pub fn require_optimal(&self) -> Result<&Self, SolveFailure> {
        match self.status {
            SolveStatus::Optimal | SolveStatus::AlmostOptimal => Ok(self),
            SolveStatus::PrimalInfeasible => Err(SolveFailure::Infeasible {
                certificate: self.certificate.clone(),
            }),
            SolveStatus::DualInfeasible => Err(SolveFailure::Unbounded),
            status => Err(SolveFailure::NumericalTrouble {
                status,
                residual: self.kkt.max(),
            }),
        }
    }

    /// Primal values of a named variable block.
    pub fn primal<'a>(&'a self, prog: &ConvexProgram, name: &str) -> Option<&'a [f64]> {
        prog.var_block(name)
            .map(|b| &self.x[b.start..b.start + b.len])
    }

    /// Raw multipliers of a named constraint block.
    pub fn raw_dual<'a>(&'a self, prog: &ConvexProgram, name: &str) -> Option<&'a [f64]> {
        prog.con_block(name)
            .map(|b| &self.z[b.start..b.start + b.len])
    }

    /// Multipliers of a named block with the block's [`DualSign`] applied.
    pub fn dual(&self, prog: &ConvexProgram, name: &str) -> Option<Vec<f64>> {
        prog.con_block(name).map(|b| {
            self.z[b.start..b.start + b.len]
                .iter()
                .map(|&v| b.sign.apply(v))
                .collect()
        })
    }

    /// Raw multipliers of the rows of a Farkas certificate in a named block.
    pub fn certificate_weight(&self, prog: &ConvexProgram, name: &str) -> Option<f64> {
        let c = self.certificate.as_ref()?;
        let b = prog.con_block(name)?;
        if c.len() != prog.num_rows() {
            return None;
        }
        Some(c[b.start..b.start + b.len].iter().map(|v| v.abs()).sum())
    }

    /// Multipliers of equality rows, in row order.
    pub fn equality_duals(&self, prog: &ConvexProgram) -> Vec<f64> {
        rows_of(prog, true).map(|i| self.z[i]).collect()
    }

    /// Multipliers of inequality and cone rows, in row order.
    pub fn inequality_duals(&self, prog: &ConvexProgram) -> Vec<f64> {
        rows_of(prog, false).map(|i| self.z[i]).collect()
    }
}

fn rows_of(prog: &ConvexProgram, zero: bool) -> impl Iterator<Item = usize> + '_ {
    let mut start = 0;
    let mut ranges = Vec::new();
    for c in &prog.cones {
        let is_zero = matches!(c, Cone::Zero(_));
        if is_zero == zero {
            ranges.push(start..start + c.dim());
        }
        start += c.dim();
    }
    ranges.into_iter().flatten()
}

/// Evaluates the KKT residuals of `(x, z)` for `prog` in original units.
pub fn kkt_residuals(prog: &ConvexProgram, x: &[f64], z: &[f64]) -> (KktResiduals, KktResiduals) {
    let n = prog.num_vars();
    let m = prog.num_rows();
    let mut px = vec![0.0; n];
    prog.p.symv_upper(1.0, x, &mut px);
    let mut atz = vec![0.0; n];
    prog.a.gemv_t(1.0, z, &mut atz);
    let mut ax = vec![0.0; m];
    prog.a.gemv(1.0, x, &mut ax);
    let stat: Vec<f64> = (0..n).map(|j| px[j] + prog.q[j] + atz[j]).collect();
    let slack: Vec<f64> = (0..m).map(|i| prog.b[i] - ax[i]).collect();
    let mut pfeas = 0.0f64;
    let mut dfeas = 0.0f64;
    let mut comp = 0.0f64;
    let mut start = 0;
    for c in &prog.cones {
        let r = start..start + c.dim();
        match c {
            Cone::Zero(_) => {
                for i in r.clone() {
                    pfeas = pfeas.max(slack[i].abs());
                }
            }
            Cone::Nonneg(_) => {
                for i in r.clone() {
                    pfeas = pfeas.max(-slack[i]);
                    dfeas = dfeas.max(-z[i]);
                    comp = comp.max((z[i] * slack[i]).abs());
                }
            }
            Cone::SecondOrder(_) => {
                let sl = &slack[r.clone()];
                let zz = &z[r.clone()];
                let t = |v: &[f64]| v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                pfeas = pfeas.max(t(sl) - sl[0]);
                dfeas = dfeas.max(t(zz) - zz[0]);
                comp = comp.max(dot(sl, zz).abs());
            }
        }
        start = r.end;
    }
    let abs = KktResiduals {
        stationarity: norm_inf(&stat),
        primal_feasibility: pfeas.max(0.0),
        dual_feasibility: dfeas.max(0.0),
        complementarity: comp,
    };
    let xobj = 0.5 * dot(x, &px) + dot(&prog.q, x);
    let rel = KktResiduals {
        stationarity: abs.stationarity
            / 1f64
                .max(norm_inf(&prog.q))
                .max(norm_inf(&px))
                .max(norm_inf(&atz)),
        primal_feasibility: abs.primal_feasibility / 1f64.max(norm_inf(&prog.b)).max(norm_inf(&ax)),
        dual_feasibility: abs.dual_feasibility / 1f64.max(norm_inf(z)),
        complementarity: abs.complementarity / 1f64.max(xobj.abs()),
    };
    (rel, abs)
}

struct Iterate {
    x: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Step {
    x: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

impl Step {
    fn new(n: usize, m: usize) -> Self {
        Self {
            x: vec![0.0; n],
            z: vec![0.0; m],
            s: vec![0.0; m],
            tau: 0.0,
            kappa: 0.0,
        }
    }
}

/// Solves `prog`. Infeasibility and unboundedness are reported through
/// [`Solution::status`]; `Err` is returned only for internal failures.
pub fn solve(prog: &ConvexProgram, settings: &Settings) -> Result<Solution, SolverError> {
    let start_time = Instant::now();
    let n = prog.num_vars();
    let m = prog.num_rows();
    let mut cones = ConeSet::new(&prog.cones);

    // scaled data
    let mut p = prog.p.clone();
    let mut q = prog.q.clone();
    let mut a = prog.a.clone();
    let mut b = prog.b.clone();
    let eq = if settings.equilibrate_iters > 0 {
        equilibrate(
            &mut p,
            &mut q,
            &mut a,
            &mut b,
            &cones,
            settings.equilibrate_iters,
        )
    } else {
        Equilibration::identity(n, m)
    };

    let dyn_reg = DynamicRegularization {
        eps: settings.dyn_reg_eps,
        delta: settings.dyn_reg_delta,
    };
    let mut kkt = Kkt::new(
        &p,
        &a,
        &cones,
        settings.static_reg,
        dyn_reg,
        settings.refine_iters,
    )?;

    // initial point
    kkt.factor(&cones, ScalingMode::Identity)?;
    let mut it = Iterate {
        x: vec![0.0; n],
        z: vec![0.0; m],
        s: vec![0.0; m],
        tau: 1.0,
        kappa: 1.0,
    };
    let neg_q: Vec<f64> = q.iter().map(|v| -v).collect();
    kkt.solve(&neg_q, &b, &mut it.x, &mut it.z);
    it.s = it.z.iter().map(|v| -v).collect();
    cones.shift_to_interior(&mut it.s, true);
    cones.shift_to_interior(&mut it.z, false);

    let degree = cones.degree() as f64;
    let mut lambda = vec![0.0; m];
    let mut x1 = vec![0.0; n];
    let mut z1 = vec![0.0; m];
    let mut px = vec![0.0; n];
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut certificate = None;
    let mut stall = 0usize;
    // iterations since the best score last improved
    let mut since_best = 0usize;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut trouble = false;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        // residuals in scaled space
        px.fill(0.0);
        p.symv_upper(1.0, &it.x, &mut px);
        let mut rx = px.clone();
        a.gemv_t(1.0, &it.z, &mut rx);
        for j in 0..n {
            rx[j] += q[j] * it.tau;
        }
        let mut rz = it.s.clone();
        a.gemv(1.0, &it.x, &mut rz);
        for i in 0..m {
            rz[i] -= b[i] * it.tau;
        }
        let xpx = dot(&it.x, &px);
        let rtau = dot(&q, &it.x) + dot(&b, &it.z) + it.kappa + xpx / it.tau;
        let mu = (dot(&it.s, &it.z) + it.tau * it.kappa) / (degree + 1.0);

        // convergence in original units
        let (xo, zo, so) = unscale(&it, &eq);
        let (rel, _) = kkt_residuals(prog, &xo, &zo);
        let pobj = prog.objective(&xo) - prog.objective_constant;
        let mut pxo = vec![0.0; n];
        prog.p.symv_upper(1.0, &xo, &mut pxo);
        let dobj = -0.5 * dot(&xo, &pxo) - dot(&prog.b, &zo);
        let gap = (pobj - dobj).abs() / 1f64.max(pobj.abs().min(dobj.abs()));
        let res_p = primal_residual(prog, &xo, &so);
        let score = rel
            .stationarity
            .max(res_p)
            .max(gap)
            .max(rel.dual_feasibility);
        if settings.verbose {
            eprintln!(
                "iter {iter:3} pobj {pobj:+.6e} dobj {dobj:+.6e} res_p {res_p:.2e} res_d {:.2e} gap {gap:.2e} tau {:.2e} kappa {:.2e} mu {mu:.2e}",
                rel.stationarity, it.tau, it.kappa
            );
        }
        let improved = best.as_ref().is_none_or(|(s, ..)| score < 0.5 * *s);
        if best.as_ref().is_none_or(|(s, ..)| score < *s) {
            if improved {
                since_best = 0;
            }
            best = Some((score, xo.clone(), zo.clone(), so.clone()));
        } else {
            since_best += 1;
        }
        // past the target keep going while the iterates still sharpen:
        // relative gaps leave sizeable absolute complementarity when the
        // objective is large
        if best
            .as_ref()
            .is_some_and(|(s, ..)| *s <= settings.tol_optimal)
            && (score <= settings.tol_optimal * EXTRA_ACCURACY || !improved)
        {
            status = SolveStatus::Optimal;
            break;
        }
        if let Some(cert) = infeasibility(&it, &p, &q, &a, &b, &eq, settings.tol_infeasible) {
            status = cert.0;
            certificate = Some(cert.1);
            break;
        }
        // once the linear solves lose accuracy the residuals stop falling
        // while mu keeps shrinking; take the best iterate seen
        let stalled = stall >= 5 || since_best >= 8 || !mu.is_finite() || trouble;
        if iter == settings.max_iter || stalled {
            if let Some((s, ..)) = &best {
                if *s <= settings.tol_acceptable {
                    status = SolveStatus::AlmostOptimal;
                    break;
                }
            }
            if let Some(cert) = infeasibility(
                &it,
                &p,
                &q,
                &a,
                &b,
                &eq,
                settings.tol_infeasible.sqrt() * 1e-2,
            ) {
                status = cert.0;
                certificate = Some(cert.1);
                break;
            }
            status = if iter == settings.max_iter {
                SolveStatus::MaxIterations
            } else {
                SolveStatus::NumericalTrouble
            };
            break;
        }

        // scaling and factorization
        if !cones.update_scaling(&it.s, &it.z, &mut lambda) {
            status = SolveStatus::NumericalTrouble;
            break;
        }
        if kkt.factor(&cones, ScalingMode::Current).is_err() {
            trouble = true;
            continue;
        }
        kkt.solve(&neg_q, &b, &mut x1, &mut z1);

        let xi: Vec<f64> = it.x.iter().map(|v| v / it.tau).collect();
        let mut pxi = vec![0.0; n];
        p.symv_upper(1.0, &xi, &mut pxi);
        let qpx: Vec<f64> = (0..n).map(|j| q[j] + 2.0 * pxi[j]).collect();
        let xi_p_xi = dot(&xi, &pxi);
        let denom = dot(&qpx, &x1) + dot(&b, &z1) - xi_p_xi - it.kappa / it.tau;

        // affine step
        let mut ds = vec![0.0; m];
        cones.jordan_prod(&lambda, &lambda, &mut ds);
        let mut aff = Step::new(n, m);
        compute_step(
            &mut kkt,
            &cones,
            &lambda,
            &it,
            &rx,
            &rz,
            rtau,
            &ds,
            it.tau * it.kappa,
            &x1,
            &z1,
            &qpx,
            &b,
            denom,
            &mut aff,
        );
        let alpha_aff = max_step(&cones, &it, &aff, 1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // combined step
        let mut wis = vec![0.0; m];
        cones.mul_winv(&aff.s, &mut wis);
        let mut wz = vec![0.0; m];
        cones.mul_w(&aff.z, &mut wz);
        let mut corr = vec![0.0; m];
        cones.jordan_prod(&wis, &wz, &mut corr);
        for i in 0..m {
            ds[i] += corr[i];
        }
        cones.add_identity(-sigma * mu, &mut ds);
        let dkappa = it.tau * it.kappa + aff.tau * aff.kappa - sigma * mu;
        let f = 1.0 - sigma;
        let rx2: Vec<f64> = rx.iter().map(|v| f * v).collect();
        let rz2: Vec<f64> = rz.iter().map(|v| f * v).collect();
        let mut step = Step::new(n, m);
        compute_step(
            &mut kkt,
            &cones,
            &lambda,
            &it,
            &rx2,
            &rz2,
            f * rtau,
            &ds,
            dkappa,
            &x1,
            &z1,
            &qpx,
            &b,
            denom,
            &mut step,
        );
        let alpha = (settings.step_fraction * max_step(&cones, &it, &step, f64::INFINITY)).min(1.0);
        if !alpha.is_finite() || step.x.iter().any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalTrouble;
            break;
        }
        if alpha < 1e-8 {
            stall += 1;
        } else {
            stall = 0;
        }
        for j in 0..n {
            it.x[j] += alpha * step.x[j];
        }
        for i in 0..m {
            it.z[i] += alpha * step.z[i];
            it.s[i] += alpha * step.s[i];
        }
        it.tau += alpha * step.tau;
        it.kappa += alpha * step.kappa;
    }

    let (mut x, mut z, mut s) = match status {
        SolveStatus::Optimal
        | SolveStatus::AlmostOptimal
        | SolveStatus::NumericalTrouble
        | SolveStatus::MaxIterations
            if best.is_some() =>
        {
            let (_, x, z, s) = best.unwrap();
            (x, z, s)
        }
        _ => unscale(&it, &eq),
    };
    if !matches!(
        status,
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible
    ) {
        let mut score = full_score(prog, &x, &z, &s);
        let data = Scaled {
            p: &p,
            q: &q,
            a: &a,
            b: &b,
            eq: &eq,
        };
        for (xp, zp, sp) in polish(prog, &data, &x, &z, &s) {
            let sc = full_score(prog, &xp, &zp, &sp);
            if sc < score {
                (x, z, s, score) = (xp, zp, sp, sc);
                if settings.verbose {
                    eprintln!("polished: score {sc:.2e}");
                }
            }
        }
        if score <= settings.tol_optimal {
            status = SolveStatus::Optimal;
        } else if score <= settings.tol_acceptable {
            status = SolveStatus::AlmostOptimal;
        } else if status == SolveStatus::Optimal || status == SolveStatus::AlmostOptimal {
            status = SolveStatus::NumericalTrouble;
        }
    }
    let (kkt_rel, kkt_abs) = kkt_residuals(prog, &x, &z);
    let objective = prog.objective(&x);
    let mut px = vec![0.0; n];
    prog.p.symv_upper(1.0, &x, &mut px);
    let dual_objective = -0.5 * dot(&x, &px) - dot(&prog.b, &z) + prog.objective_constant;
    Ok(Solution {
        status,
        x,
        z,
        s,
        objective,
        dual_objective,
        kkt: kkt_rel,
        kkt_abs,
        iterations,
        solve_time: start_time.elapsed(),
        certificate,
    })
}

/// Worst of the normalized KKT residuals and the duality gap.
fn full_score(prog: &ConvexProgram, x: &[f64], z: &[f64], s: &[f64]) -> f64 {
    let (rel, _) = kkt_residuals(prog, x, z);
    let pobj = prog.objective(x) - prog.objective_constant;
    let mut px = vec![0.0; x.len()];
    prog.p.symv_upper(1.0, x, &mut px);
    let dobj = -0.5 * dot(x, &px) - dot(&prog.b, z);
    let gap = (pobj - dobj).abs() / 1f64.max(pobj.abs().min(dobj.abs()));
    rel.max().max(gap).max(primal_residual(prog, x, s))
}

fn unscale(it: &Iterate, eq: &Equilibration) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x =
        it.x.iter()
            .zip(&eq.d)
            .map(|(v, d)| v * d / it.tau)
            .collect();
    let z =
        it.z.iter()
            .zip(&eq.e)
            .map(|(v, e)| v * e / (it.tau * eq.c))
            .collect();
    let s =
        it.s.iter()
            .zip(&eq.e)
            .map(|(v, e)| v / (e * it.tau))
            .collect();
    (x, z, s)
}

fn primal_residual(prog: &ConvexProgram, x: &[f64], s: &[f64]) -> f64 {
    let mut r = s.to_vec();
    prog.a.gemv(1.0, x, &mut r);
    let mut ax = vec![0.0; s.len()];
    prog.a.gemv(1.0, x, &mut ax);
    for (ri, bi) in r.iter_mut().zip(&prog.b) {
        *ri -= bi;
    }
    norm_inf(&r)
        / 1f64
            .max(norm_inf(&prog.b))
            .max(norm_inf(&ax))
            .max(norm_inf(s))
}

/// Checks for certificates of primal or dual infeasibility.
fn infeasibility(
    it: &Iterate,
    p: &crate::sparse::CscMatrix,
    q: &[f64],
    a: &crate::sparse::CscMatrix,
    b: &[f64],
    eq: &Equilibration,
    tol: f64,
) -> Option<(SolveStatus, Vec<f64>)> {
    let n = q.len();
    let m = b.len();
    let bz = dot(b, &it.z);
    if bz < 0.0 {
        let zn = norm_inf(&it.z).max(1e-300);
        let mut atz = vec![0.0; n];
        a.gemv_t(1.0, &it.z, &mut atz);
        if -bz / zn > tol && norm_inf(&atz) <= -tol * bz {
            let cert: Vec<f64> = (0..m).map(|i| it.z[i] * eq.e[i] / -bz).collect();
            return Some((SolveStatus::PrimalInfeasible, cert));
        }
    }
    let qx = dot(q, &it.x);
    if qx < 0.0 {
        let xn = norm_inf(&it.x).max(1e-300);
        let mut px = vec![0.0; n];
        p.symv_upper(1.0, &it.x, &mut px);
        let mut axs = it.s.clone();
        a.gemv(1.0, &it.x, &mut axs);
        if -qx / xn > tol && norm_inf(&px) <= -tol * qx && norm_inf(&axs) <= -tol * qx {
            let cert: Vec<f64> = (0..n).map(|j| it.x[j] * eq.d[j] / -qx).collect();
            return Some((SolveStatus::DualInfeasible, cert));
        }
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn compute_step(
    kkt: &mut Kkt,
    cones: &ConeSet,
    lambda: &[f64],
    it: &Iterate,
    dx: &[f64],
    dz: &[f64],
    dtau: f64,
    ds: &[f64],
    dkappa: f64,
    x1: &[f64],
    z1: &[f64],
    qpx: &[f64],
    b: &[f64],
    denom: f64,
    out: &mut Step,
) {
    let m = lambda.len();
    let mut tmp = vec![0.0; m];
    cones.jordan_div(lambda, ds, &mut tmp);
    let mut dsp = vec![0.0; m];
    cones.mul_w(&tmp, &mut dsp);
    let r1: Vec<f64> = dx.iter().map(|v| -v).collect();
    let r2: Vec<f64> = (0..m).map(|i| -dz[i] + dsp[i]).collect();
    kkt.solve(&r1, &r2, &mut out.x, &mut out.z);
    let num = -dtau + dkappa / it.tau - dot(qpx, &out.x) - dot(b, &out.z);
    let dt = num / denom;
    for (xv, v) in out.x.iter_mut().zip(x1) {
        *xv += dt * v;
    }
    for (zv, v) in out.z.iter_mut().zip(z1) {
        *zv += dt * v;
    }
    cones.mul_w2(&out.z, &mut out.s);
    for i in 0..m {
        out.s[i] = -dsp[i] - out.s[i];
    }
    out.tau = dt;
    out.kappa = -(dkappa + it.kappa * dt) / it.tau;
}

fn max_step(cones: &ConeSet, it: &Iterate, st: &Step, cap: f64) -> f64 {
    let mut alpha = cones.step_length(&it.s, &st.s, cap);
    alpha = cones.step_length(&it.z, &st.z, alpha);
    if st.tau < 0.0 {
        alpha = alpha.min(-it.tau / st.tau);
    }
    if st.kappa < 0.0 {
        alpha = alpha.min(-it.kappa / st.kappa);
    }
    alpha
}
