//! Plain-text dump of a program in coordinate form, for cross-checking
//! against external solvers.
//!
//! ```text
//! # standard form: min ½xᵀPx + qᵀx + c  s.t.  Ax + s = b, s ∈ K
//! dims <n> <m>
//! constant <c>
//! P <row> <col> <value>      (upper triangle, 0-based)
//! q <index> <value>
//! A <row> <col> <value>
//! b <index> <value>
//! cone zero|nonneg|soc <dim>
//! ```

use crate::program::{Cone, ConvexProgram};
use crate::sparse::CscMatrix;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

pub fn dump_string(prog: &ConvexProgram) -> String {
    let mut out = String::new();
    out.push_str("# standard form: min 1/2 x'Px + q'x + c  s.t.  Ax + s = b, s in K\n");
    let _ = writeln!(out, "dims {} {}", prog.num_vars(), prog.num_rows());
    let _ = writeln!(out, "constant {:e}", prog.objective_constant);
    for (r, c, v) in prog.p.triplets() {
        let _ = writeln!(out, "P {r} {c} {v:e}");
    }
    for (i, v) in prog.q.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "q {i} {v:e}");
        }
    }
    for (r, c, v) in prog.a.triplets() {
        let _ = writeln!(out, "A {r} {c} {v:e}");
    }
    for (i, v) in prog.b.iter().enumerate() {
        if *v != 0.0 {
            let _ = writeln!(out, "b {i} {v:e}");
        }
    }
    for c in &prog.cones {
        let (k, d) = match c {
            Cone::Zero(d) => ("zero", d),
            Cone::Nonneg(d) => ("nonneg", d),
            Cone::SecondOrder(d) => ("soc", d),
        };
        let _ = writeln!(out, "cone {k} {d}");
    }
    out
}

pub fn dump_program(prog: &ConvexProgram, path: &Path) -> io::Result<()> {
    std::fs::write(path, dump_string(prog))
}

/// Parses the dump format back into a program (block names are not kept).
pub fn parse_dump(text: &str) -> Result<ConvexProgram, String> {
    let (mut n, mut m) = (0usize, 0usize);
    let mut constant = 0.0;
    let (mut pt, mut at) = (Vec::new(), Vec::new());
    let (mut q, mut b) = (Vec::new(), Vec::new());
    let mut cones = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let err = || format!("line {}: cannot parse `{line}`", ln + 1);
        let us = |s: &str| s.parse::<usize>().map_err(|_| err());
        let fl = |s: &str| s.parse::<f64>().map_err(|_| err());
        match (f[0], f.len()) {
            ("dims", 3) => {
                n = us(f[1])?;
                m = us(f[2])?;
                q = vec![0.0; n];
                b = vec![0.0; m];
            }
            ("constant", 2) => constant = fl(f[1])?,
            ("P", 4) => pt.push((us(f[1])?, us(f[2])?, fl(f[3])?)),
            ("A", 4) => at.push((us(f[1])?, us(f[2])?, fl(f[3])?)),
            ("q", 3) => *q.get_mut(us(f[1])?).ok_or_else(err)? = fl(f[2])?,
            ("b", 3) => *b.get_mut(us(f[1])?).ok_or_else(err)? = fl(f[2])?,
            ("cone", 3) => {
                let d = us(f[2])?;
                cones.push(match f[1] {
                    "zero" => Cone::Zero(d),
                    "nonneg" => Cone::Nonneg(d),
                    "soc" => Cone::SecondOrder(d),
                    _ => return Err(err()),
                });
            }
            _ => return Err(err()),
        }
    }
    let mut prog = ConvexProgram::from_parts(
        CscMatrix::from_triplets(n, n, &pt),
        q,
        CscMatrix::from_triplets(m, n, &at),
        b,
        cones,
    )
    .map_err(|e| e.to_string())?;
    prog.objective_constant = constant;
    Ok(prog)
}
