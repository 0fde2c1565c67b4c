//! Strict-feasibility diagnostics.
//!
//! Solves the phase-one problem
//!
//! ```text
//! max t  s.t.  equalities hold,  a_i x + t ≤ b_i,  (b − A x) − t e ∈ SOC,  t ≤ cap
//! ```
//!
//! whose optimal `t` is the largest uniform slack achievable on all
//! inequality rows.

use crate::ipm::{solve, Settings, SolveStatus, SolverError};
use crate::program::{Cone, ConvexProgram};
use crate::sparse::CscMatrix;

/// Result of [`check_slater`].
#[derive(Debug, Clone)]
pub struct SlaterReport {
    /// Largest uniform inequality slack found (`−∞` if the equalities are
    /// inconsistent or no feasible point exists).
    pub margin: f64,
    /// True when the margin reached the cap, i.e. the slack is unbounded
    /// or at least `cap`.
    pub capped: bool,
    pub holds: bool,
    /// Point attaining the margin, when one exists.
    pub point: Option<Vec<f64>>,
    pub status: SolveStatus,
}

/// Margins at or below this value count as "no strictly feasible point".
pub const SLATER_TOL: f64 = 1e-7;

pub fn check_slater(prog: &ConvexProgram, cap: f64) -> Result<SlaterReport, SolverError> {
    let n = prog.num_vars();
    let m = prog.num_rows();
    let has_ineq = prog.cones.iter().any(|c| !matches!(c, Cone::Zero(_)));
    // extra variable t at index n, extra nonneg row t ≤ cap at the end
    let mut trip: Vec<(usize, usize, f64)> = prog.a.triplets().collect();
    let mut start = 0;
    for c in &prog.cones {
        match c {
            Cone::Zero(_) => {}
            Cone::Nonneg(d) => {
                for i in start..start + d {
                    trip.push((i, n, 1.0));
                }
            }
            Cone::SecondOrder(_) => trip.push((start, n, 1.0)),
        }
        start += c.dim();
    }
    trip.push((m, n, 1.0));
    let a = CscMatrix::from_triplets(m + 1, n + 1, &trip);
    let mut b = prog.b.clone();
    b.push(cap);
    let mut cones = prog.cones.clone();
    match cones.last_mut() {
        Some(Cone::Nonneg(d)) => *d += 1,
        _ => cones.push(Cone::Nonneg(1)),
    }
    let mut q = vec![0.0; n + 1];
    q[n] = -1.0;
    let phase1 = ConvexProgram::from_parts(CscMatrix::zeros(n + 1, n + 1), q, a, b, cones)
        .expect("phase-one program is well formed");
    let settings = Settings {
        verbose: std::env::var_os("GRIDMARKET_SOLVER_TRACE").is_some(),
        ..Settings::default()
    };
    let sol = solve(&phase1, &settings)?;
    if !sol.is_optimal() {
        return Ok(SlaterReport {
            margin: f64::NEG_INFINITY,
            capped: false,
            holds: false,
            point: None,
            status: sol.status,
        });
    }
    let margin = if has_ineq { sol.x[n] } else { cap };
    let capped = margin >= cap * (1.0 - 1e-6);
    Ok(SlaterReport {
        margin,
        capped,
        holds: margin > SLATER_TOL,
        point: Some(sol.x[..n].to_vec()),
        status: sol.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{ConeKind, DualSign, ProgramBuilder};

    fn bounds(lo: f64, hi: f64) -> ConvexProgram {
        let mut b = ProgramBuilder::new();
        let x = b.add_variables("x", 1);
        b.begin_block("box", ConeKind::Nonneg, DualSign::Direct)
            .unwrap();
        b.push_row(&[(x.at(0), 1.0)], hi);
        b.push_row(&[(x.at(0), -1.0)], -lo);
        b.end_block().unwrap();
        b.build().unwrap()
    }

    #[test]
    fn unit_box_has_margin_one() {
        let r = check_slater(&bounds(-1.0, 1.0), 100.0).unwrap();
        assert!((r.margin - 1.0).abs() < 1e-7);
        assert!(r.point.unwrap()[0].abs() < 1e-6);
        assert!(r.holds);
    }

    #[test]
    fn degenerate_box_fails() {
        let r = check_slater(&bounds(0.0, 0.0), 100.0).unwrap();
        assert!(r.margin.abs() < 1e-7);
        assert!(!r.holds);
    }

    #[test]
    fn one_sided_bound_is_capped() {
        let mut b = ProgramBuilder::new();
        let x = b.add_variables("x", 1);
        b.begin_block("ub", ConeKind::Nonneg, DualSign::Direct)
            .unwrap();
        b.push_row(&[(x.at(0), 1.0)], 1.0);
        b.end_block().unwrap();
        let r = check_slater(&b.build().unwrap(), 10.0).unwrap();
        assert!(r.capped && r.holds);
    }
}
