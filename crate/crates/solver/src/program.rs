//! Program representation and construction.
//!
//! Every program is a minimization in the standard form
//!
//! ```text
//! min  ½ xᵀ P x + qᵀ x + c0
//! s.t. A x + s = b,   s ∈ K
//! ```
//!
//! where `K` is a product of zero cones (equalities), nonnegative orthants
//! (`a x ≤ b`) and second-order cones (`b − A x ∈ SOC`). Rows are grouped
//! into named blocks, and each block carries a [`DualSign`] so that raw
//! multipliers can be read out in the sign convention of the model that
//! produced them.

use crate::sparse::CscMatrix;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    Zero,
    Nonneg,
    SecondOrder,
}

/// A cone in the product `K`, with its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonneg(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// How a raw multiplier maps to the reported dual.
///
/// Raw multipliers satisfy `P x + q + Aᵀ z = 0`. For an equality written as
/// `Σ p = 0` inside a negated-welfare minimization, the market price is
/// `−z`, hence [`DualSign::Negated`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualSign {
    #[default]
    Direct,
    Negated,
}

impl DualSign {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            DualSign::Direct => v,
            DualSign::Negated => -v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub kind: ConeKind,
    pub sign: DualSign,
}

impl VarBlock {
    pub fn at(&self, i: usize) -> usize {
        debug_assert!(i < self.len, "{}[{i}] out of range", self.name);
        self.start + i
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("duplicate block name `{0}`")]
    DuplicateName(String),
    #[error("block `{0}` is still open")]
    OpenBlock(String),
    #[error("no block is open")]
    NoOpenBlock,
    #[error("variable index {0} out of range ({1} variables)")]
    VariableOutOfRange(usize, usize),
    #[error("second-order cone block `{0}` needs at least one row")]
    EmptyCone(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(
        "objective matrix is not positive semidefinite (pivot {pivot:.3e} at column {column})"
    )]
    NotPsd { column: usize, pivot: f64 },
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
}

/// A convex program in standard conic form with named blocks.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    /// Upper triangle of `P`.
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
    pub objective_constant: f64,
    pub var_blocks: Vec<VarBlock>,
    pub con_blocks: Vec<ConstraintBlock>,
    var_index: HashMap<String, usize>,
    con_index: HashMap<String, usize>,
}

impl ConvexProgram {
    /// Assembles a program directly from matrices. `p` may hold the full
    /// symmetric matrix or only its upper triangle.
    pub fn from_parts(
        p: CscMatrix,
        q: Vec<f64>,
        a: CscMatrix,
        b: Vec<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ProgramError> {
        let n = q.len();
        let m = b.len();
        if p.nrows != n || p.ncols != n {
            return Err(ProgramError::Dimension(format!(
                "P is {}x{}, q has {n}",
                p.nrows, p.ncols
            )));
        }
        if a.nrows != m || a.ncols != n {
            return Err(ProgramError::Dimension(format!(
                "A is {}x{}, expected {m}x{n}",
                a.nrows, a.ncols
            )));
        }
        let cone_rows: usize = cones.iter().map(Cone::dim).sum();
        if cone_rows != m {
            return Err(ProgramError::Dimension(format!(
                "cones cover {cone_rows} rows, b has {m}"
            )));
        }
        let mut con_blocks = Vec::new();
        let mut start = 0;
        for (k, c) in cones.iter().enumerate() {
            let kind = match c {
                Cone::Zero(_) => ConeKind::Zero,
                Cone::Nonneg(_) => ConeKind::Nonneg,
                Cone::SecondOrder(_) => ConeKind::SecondOrder,
            };
            con_blocks.push(ConstraintBlock {
                name: format!("cone{k}"),
                start,
                len: c.dim(),
                kind,
                sign: DualSign::Direct,
            });
            start += c.dim();
        }
        let var_blocks = vec![VarBlock {
            name: "x".into(),
            start: 0,
            len: n,
        }];
        let prog = Self {
            p: p.upper_triangle(),
            q,
            a,
            b,
            cones,
            objective_constant: 0.0,
            var_index: index_of(&var_blocks, |v| &v.name),
            con_index: index_of(&con_blocks, |c| &c.name),
            var_blocks,
            con_blocks,
        };
        prog.validate()?;
        Ok(prog)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn var_block(&self, name: &str) -> Option<&VarBlock> {
        self.var_index.get(name).map(|&i| &self.var_blocks[i])
    }

    pub fn con_block(&self, name: &str) -> Option<&ConstraintBlock> {
        self.con_index.get(name).map(|&i| &self.con_blocks[i])
    }

    /// Objective value at `x`, including the constant term.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.symv_upper(1.0, x, &mut px);
        0.5 * crate::sparse::dot(x, &px) + crate::sparse::dot(&self.q, x) + self.objective_constant
    }

    /// Checks dimensions, finiteness and positive semidefiniteness of `P`.
    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.num_vars();
        if self.q.iter().any(|v| !v.is_finite()) || self.p.nzval.iter().any(|v| !v.is_finite()) {
            return Err(ProgramError::NonFinite("objective"));
        }
        if self.b.iter().any(|v| !v.is_finite()) || self.a.nzval.iter().any(|v| !v.is_finite()) {
            return Err(ProgramError::NonFinite("constraints"));
        }
        if self.a.ncols != n || self.p.ncols != n {
            return Err(ProgramError::Dimension("column counts differ".into()));
        }
        check_psd(&self.p)
    }
}

fn index_of<T>(items: &[T], name: impl Fn(&T) -> &String) -> HashMap<String, usize> {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| (name(t).clone(), i))
        .collect()
}

/// PSD test by factorizing `P + εI` with all pivots expected positive.
fn check_psd(p_upper: &CscMatrix) -> Result<(), ProgramError> {
    let n = p_upper.ncols;
    if p_upper.nnz() == 0 {
        return Ok(());
    }
    let scale = p_upper
        .nzval
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    // diagonal-only fast path
    if p_upper.triplets().all(|(r, c, _)| r == c) {
        for (r, _, v) in p_upper.triplets() {
            if v < -1e-12 * scale {
                return Err(ProgramError::NotPsd {
                    column: r,
                    pivot: v,
                });
            }
        }
        return Ok(());
    }
    let eps = 1e-10 * scale;
    let mut t: Vec<_> = p_upper.triplets().collect();
    t.extend((0..n).map(|i| (i, i, eps)));
    let m = CscMatrix::from_triplets(n, n, &t);
    let mut f = crate::ldl::LdlFactor::new(&m, &vec![1; n])
        .map_err(|e| ProgramError::Dimension(e.to_string()))?;
    f.set_values(&m.nzval);
    match f.factor(None) {
        Ok(_) => {}
        Err(crate::ldl::LdlError::ZeroPivot(c)) => {
            return Err(ProgramError::NotPsd {
                column: c,
                pivot: 0.0,
            })
        }
        Err(e) => return Err(ProgramError::Dimension(e.to_string())),
    }
    if let Some((k, &d)) = f
        .diag()
        .iter()
        .enumerate()
        .find(|(_, &d)| d < -1e-8 * scale)
    {
        return Err(ProgramError::NotPsd {
            column: k,
            pivot: d,
        });
    }
    Ok(())
}

/// Incremental builder for [`ConvexProgram`].
///
/// ```
/// use gridmarket_solver::{ProgramBuilder, ConeKind, DualSign, solve, Settings};
/// let mut b = ProgramBuilder::new();
/// let x = b.add_variables("x", 1);
/// b.add_quadratic(x.at(0), x.at(0), 1.0); // x²
/// b.begin_block("fix", ConeKind::Zero, DualSign::Negated).unwrap();
/// b.push_row(&[(x.at(0), 1.0)], 1.0);
/// b.end_block().unwrap();
/// let prog = b.build().unwrap();
/// let sol = solve(&prog, &Settings::default()).unwrap();
/// assert!((sol.dual(&prog, "fix").unwrap()[0] - 2.0).abs() < 1e-7);
/// ```
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    n: usize,
    p_trip: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    constant: f64,
    var_blocks: Vec<VarBlock>,
    // rows are kept per block and concatenated on build
    blocks: Vec<(ConstraintBlock, Vec<(usize, usize, f64)>, Vec<f64>)>,
    open: Option<(ConstraintBlock, Vec<(usize, usize, f64)>, Vec<f64>)>,
    names: std::collections::HashSet<String>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a named block of `len` variables.
    pub fn add_variables(&mut self, name: impl Into<String>, len: usize) -> VarBlock {
        let name = name.into();
        assert!(
            self.names.insert(format!("var:{name}")),
            "duplicate variable block {name}"
        );
        let blk = VarBlock {
            name,
            start: self.n,
            len,
        };
        self.n += len;
        self.q.resize(self.n, 0.0);
        self.var_blocks.push(blk.clone());
        blk
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Adds `coef · x_i · x_j` to the objective (`coef · x_i²` when `i == j`).
    pub fn add_quadratic(&mut self, i: usize, j: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let (r, c) = (i.min(j), i.max(j));
        if r == c {
            self.p_trip.push((r, c, 2.0 * coef));
        } else {
            self.p_trip.push((r, c, coef));
        }
    }

    pub fn add_linear(&mut self, i: usize, coef: f64) {
        self.q[i] += coef;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Opens a constraint block. A second-order-cone block forms one cone
    /// spanning all of its rows.
    pub fn begin_block(
        &mut self,
        name: impl Into<String>,
        kind: ConeKind,
        sign: DualSign,
    ) -> Result<(), ProgramError> {
        let name = name.into();
        if let Some((b, _, _)) = &self.open {
            return Err(ProgramError::OpenBlock(b.name.clone()));
        }
        if !self.names.insert(format!("con:{name}")) {
            return Err(ProgramError::DuplicateName(name));
        }
        self.open = Some((
            ConstraintBlock {
                name,
                start: 0,
                len: 0,
                kind,
                sign,
            },
            Vec::new(),
            Vec::new(),
        ));
        Ok(())
    }

    /// Appends the row `Σ coef·x + s = rhs` to the open block.
    pub fn push_row(&mut self, coefs: &[(usize, f64)], rhs: f64) {
        let (blk, trip, b) = self.open.as_mut().expect("push_row without an open block");
        let r = b.len();
        for &(j, v) in coefs {
            if v != 0.0 {
                trip.push((r, j, v));
            }
        }
        b.push(rhs);
        blk.len += 1;
    }

    pub fn end_block(&mut self) -> Result<(), ProgramError> {
        let open = self.open.take().ok_or(ProgramError::NoOpenBlock)?;
        if open.0.kind == ConeKind::SecondOrder && open.0.len == 0 {
            return Err(ProgramError::EmptyCone(open.0.name));
        }
        self.blocks.push(open);
        Ok(())
    }

    pub fn build(self) -> Result<ConvexProgram, ProgramError> {
        if let Some((b, _, _)) = self.open {
            return Err(ProgramError::OpenBlock(b.name));
        }
        let n = self.n;
        let mut a_trip = Vec::new();
        let mut bvec = Vec::new();
        let mut cones: Vec<Cone> = Vec::new();
        let mut con_blocks = Vec::new();
        for (mut blk, trip, b) in self.blocks {
            let start = bvec.len();
            for &(r, j, v) in &trip {
                if j >= n {
                    return Err(ProgramError::VariableOutOfRange(j, n));
                }
                a_trip.push((start + r, j, v));
            }
            bvec.extend_from_slice(&b);
            blk.start = start;
            if blk.len > 0 {
                match (blk.kind, cones.last_mut()) {
                    (ConeKind::Zero, Some(Cone::Zero(d))) => *d += blk.len,
                    (ConeKind::Nonneg, Some(Cone::Nonneg(d))) => *d += blk.len,
                    (ConeKind::Zero, _) => cones.push(Cone::Zero(blk.len)),
                    (ConeKind::Nonneg, _) => cones.push(Cone::Nonneg(blk.len)),
                    (ConeKind::SecondOrder, _) => cones.push(Cone::SecondOrder(blk.len)),
                }
            }
            con_blocks.push(blk);
        }
        for &(r, c, _) in &self.p_trip {
            if c >= n {
                return Err(ProgramError::VariableOutOfRange(r.max(c), n));
            }
        }
        let prog = ConvexProgram {
            p: CscMatrix::from_triplets(n, n, &self.p_trip),
            q: self.q,
            a: CscMatrix::from_triplets(bvec.len(), n, &a_trip),
            b: bvec,
            cones,
            objective_constant: self.constant,
            var_index: index_of(&self.var_blocks, |v| &v.name),
            con_index: index_of(&con_blocks, |c| &c.name),
            var_blocks: self.var_blocks,
            con_blocks,
        };
        prog.validate()?;
        Ok(prog)
    }
}
