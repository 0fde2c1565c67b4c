//! Radial feeder model under LinDistFlow.
//!
//! Node 0 is the feeder head; prosumer nodes are `1..=N`. Matrices indexed by
//! node use `node - 1`. Voltages are squared magnitudes in (p.u.)².

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, resistance: f64, reactance: f64) -> Self {
        Self {
            from,
            to,
            resistance,
            reactance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeederError {
    #[error("line ({0}, {1}) closes a cycle")]
    CycleDetected(usize, usize),
    #[error("node {0} is not connected to the feeder head")]
    DisconnectedNode(usize),
    #[error("duplicate line between nodes {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("line ({0}, {1}) references a node outside 0..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("line ({0}, {1}) is a self loop")]
    SelfLoop(usize, usize),
    #[error("line ({0}, {1}) has a negative or non-finite impedance")]
    InvalidImpedance(usize, usize),
    #[error(
        "voltage bounds at node {node} do not bracket v0 (lower {lower}, v0 {v0}, upper {upper})"
    )]
    InvalidBounds {
        node: usize,
        lower: f64,
        v0: f64,
        upper: f64,
    },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("injections are not balanced: sum {sum:.3e} exceeds tolerance {tol:.1e}")]
    BalanceViolated { sum: f64, tol: f64 },
}

/// Validated radial topology rooted at node 0.
#[derive(Debug, Clone)]
pub struct Topology {
    pub node_count: usize,
    pub lines: Vec<Line>,
    /// `parent[k]` for k in 0..=N; `None` at the root.
    pub parent: Vec<Option<usize>>,
    /// Line index connecting each node to its parent.
    pub parent_line: Vec<Option<usize>>,
    /// Line indices on the path from the root to each node (index 0 is empty).
    pub paths: Vec<Vec<usize>>,
    /// Breadth-first order starting at the root.
    pub order: Vec<usize>,
}

impl Topology {
    pub fn path(&self, node: usize) -> &[usize] {
        &self.paths[node]
    }

    /// Nodes of the subtree hanging below `node`, including itself.
    pub fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            let k = out[i];
            out.extend((1..=self.node_count).filter(|&c| self.parent[c] == Some(k)));
            i += 1;
        }
        out
    }
}

pub fn validate_radial(lines: &[Line], node_count: usize) -> Result<Topology, FeederError> {
    let mut seen = HashSet::new();
    let mut adj = vec![Vec::new(); node_count + 1];
    for (idx, l) in lines.iter().enumerate() {
        if l.from > node_count || l.to > node_count {
            return Err(FeederError::NodeOutOfRange(l.from, l.to, node_count));
        }
        if l.from == l.to {
            return Err(FeederError::SelfLoop(l.from, l.to));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(l.resistance) || !ok(l.reactance) {
            return Err(FeederError::InvalidImpedance(l.from, l.to));
        }
        if !seen.insert((l.from.min(l.to), l.from.max(l.to))) {
            return Err(FeederError::DuplicateEdge(l.from, l.to));
        }
        adj[l.from].push((l.to, idx));
        adj[l.to].push((l.from, idx));
    }
    let mut parent = vec![None; node_count + 1];
    let mut parent_line = vec![None; node_count + 1];
    let mut visited = vec![false; node_count + 1];
    let mut order = Vec::with_capacity(node_count + 1);
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(k) = queue.pop_front() {
        order.push(k);
        for &(nb, idx) in &adj[k] {
            if parent_line[k] == Some(idx) {
                continue;
            }
            if visited[nb] {
                return Err(FeederError::CycleDetected(lines[idx].from, lines[idx].to));
            }
            visited[nb] = true;
            parent[nb] = Some(k);
            parent_line[nb] = Some(idx);
            queue.push_back(nb);
        }
    }
    if let Some(k) = visited.iter().position(|v| !v) {
        return Err(FeederError::DisconnectedNode(k));
    }
    let mut paths = vec![Vec::new(); node_count + 1];
    for &k in order.iter().skip(1) {
        let p = parent[k].unwrap();
        let mut path = paths[p].clone();
        path.push(parent_line[k].unwrap());
        paths[k] = path;
    }
    Ok(Topology {
        node_count,
        lines: lines.to_vec(),
        parent,
        parent_line,
        paths,
        order,
    })
}

/// `R_ik = 2 Σ r` and `X_ik = 2 Σ χ` over the lines shared by the root paths
/// of nodes i and k. Shared lines form a common prefix of both paths.
pub fn build_sensitivities(topo: &Topology) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = topo.node_count;
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 1..=n {
        for k in i..=n {
            let (pi, pk) = (&topo.paths[i], &topo.paths[k]);
            let (mut sr, mut sx) = (0.0, 0.0);
            for (a, b) in pi.iter().zip(pk) {
                if a != b {
                    break;
                }
                sr += topo.lines[*a].resistance;
                sx += topo.lines[*a].reactance;
            }
            r[(i - 1, k - 1)] = 2.0 * sr;
            r[(k - 1, i - 1)] = 2.0 * sr;
            x[(i - 1, k - 1)] = 2.0 * sx;
            x[(k - 1, i - 1)] = 2.0 * sx;
        }
    }
    (r, x)
}

/// Whether a constraint component bounds the voltage from above or below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Upper,
    Lower,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Upper => "upper",
            BoundKind::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub node: usize,
    pub kind: BoundKind,
}

/// Separable grid constraints `Σ_i c_i p_i(t) ≤ ν(t)`, one coefficient
/// vector per prosumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraintMap {
    pub coeffs: Vec<Vec<f64>>,
    pub bound: Vec<Vec<f64>>,
    pub components: Vec<Component>,
}

impl AffineConstraintMap {
    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn prosumers(&self) -> usize {
        self.coeffs.len()
    }

    pub fn horizon(&self) -> usize {
        self.bound.len()
    }

    /// `g_it(p) = c_i p`.
    pub fn g(&self, i: usize, p: f64) -> Vec<f64> {
        self.coeffs[i].iter().map(|c| c * p).collect()
    }

    /// `Σ_i c_i p_i`, summed in prosumer order.
    pub fn total(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        for (c, &pi) in self.coeffs.iter().zip(p) {
            for (o, cr) in out.iter_mut().zip(c) {
                *o += cr * pi;
            }
        }
        out
    }

    /// Largest violation `max_r (Σ c p − ν)_r` at step t; nonpositive when
    /// the constraints hold.
    pub fn violation(&self, t: usize, p: &[f64]) -> f64 {
        self.total(p)
            .iter()
            .zip(&self.bound[t])
            .map(|(g, nu)| g - nu)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn satisfied(&self, t: usize, p: &[f64]) -> bool {
        self.total(p)
            .iter()
            .zip(&self.bound[t])
            .all(|(g, nu)| g <= nu)
    }
}

#[derive(Debug, Clone)]
pub struct FeederModel {
    pub topology: Topology,
    pub v0: f64,
    pub v_lower: Vec<f64>,
    pub v_upper: Vec<f64>,
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl FeederModel {
    /// Bounds are squared magnitudes, one per prosumer node.
    pub fn new(
        lines: &[Line],
        node_count: usize,
        v0: f64,
        v_lower: Vec<f64>,
        v_upper: Vec<f64>,
    ) -> Result<Self, FeederError> {
        let topology = validate_radial(lines, node_count)?;
        for v in [&v_lower, &v_upper] {
            if v.len() != node_count {
                return Err(FeederError::DimensionMismatch {
                    expected: node_count,
                    got: v.len(),
                });
            }
        }
        for k in 0..node_count {
            if !(v_lower[k] < v0 && v0 < v_upper[k]) {
                return Err(FeederError::InvalidBounds {
                    node: k + 1,
                    lower: v_lower[k],
                    v0,
                    upper: v_upper[k],
                });
            }
        }
        let (r, x) = build_sensitivities(&topology);
        Ok(Self {
            topology,
            v0,
            v_lower,
            v_upper,
            r,
            x,
        })
    }

    /// Same squared bounds at every node.
    pub fn with_uniform_bounds(
        lines: &[Line],
        node_count: usize,
        v0: f64,
        lower: f64,
        upper: f64,
    ) -> Result<Self, FeederError> {
        Self::new(
            lines,
            node_count,
            v0,
            vec![lower; node_count],
            vec![upper; node_count],
        )
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count
    }

    fn check_len(&self, v: &[f64]) -> Result<(), FeederError> {
        if v.len() != self.node_count() {
            return Err(FeederError::DimensionMismatch {
                expected: self.node_count(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `Σ_k R_ik p_k` summed in node order; the arithmetic shared with
    /// [`AffineConstraintMap::total`] for nodal maps.
    pub fn deviation(&self, p: &[f64]) -> Result<Vec<f64>, FeederError> {
        self.check_len(p)?;
        let mut out = vec![0.0; self.node_count()];
        for (k, &pk) in p.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.r[(i, k)] * pk;
            }
        }
        Ok(out)
    }

    /// Squared voltages `v = v0 + R p + X q`.
    pub fn voltages(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>, FeederError> {
        self.check_len(p)?;
        self.check_len(q)?;
        let n = self.node_count();
        Ok((0..n)
            .map(|i| {
                let mut v = self.v0;
                for k in 0..n {
                    v += self.r[(i, k)] * p[k] + self.x[(i, k)] * q[k];
                }
                v
            })
            .collect())
    }

    /// Voltage band check phrased on `R p` so it agrees bit for bit with the
    /// nodal constraint map.
    pub fn within_bounds(&self, p: &[f64]) -> Result<bool, FeederError> {
        let d = self.deviation(p)?;
        Ok(d.iter()
            .enumerate()
            .all(|(i, &di)| di <= self.v_upper[i] - self.v0 && -di <= self.v0 - self.v_lower[i]))
    }

    /// Active and reactive flow on every line, in input order, oriented
    /// parent to child. Requires an islanded (balanced) injection profile.
    pub fn line_flows(
        &self,
        p: &[f64],
        q: &[f64],
        tol: f64,
    ) -> Result<Vec<(f64, f64)>, FeederError> {
        self.check_len(p)?;
        self.check_len(q)?;
        let sum: f64 = p.iter().sum();
        if sum.abs() > tol {
            return Err(FeederError::BalanceViolated { sum, tol });
        }
        let topo = &self.topology;
        let mut acc = vec![(0.0, 0.0); self.node_count() + 1];
        let mut flows = vec![(0.0, 0.0); topo.lines.len()];
        for &k in topo.order.iter().rev().filter(|&&k| k != 0) {
            // P_ij = −p_j + Σ downstream P_jk
            let (pd, qd) = acc[k];
            let f = (pd - p[k - 1], qd - q[k - 1]);
            flows[topo.parent_line[k].unwrap()] = f;
            let par = topo.parent[k].unwrap();
            acc[par].0 += f.0;
            acc[par].1 += f.1;
        }
        Ok(flows)
    }

    /// Constraint components: upper bound at nodes 1..N, then lower bounds.
    pub fn components(&self) -> Vec<Component> {
        let n = self.node_count();
        (1..=n)
            .map(|node| Component {
                node,
                kind: BoundKind::Upper,
            })
            .chain((1..=n).map(|node| Component {
                node,
                kind: BoundKind::Lower,
            }))
            .collect()
    }

    /// Coefficient vector `(R_{1k}, …, R_{Nk}, −R_{1k}, …, −R_{Nk})` for a
    /// prosumer at node k.
    pub fn node_coefficients(&self, node: usize) -> Vec<f64> {
        let n = self.node_count();
        let col = self.r.column(node - 1);
        col.iter()
            .copied()
            .chain(col.iter().map(|v| -v))
            .take(2 * n)
            .collect()
    }

    /// `ν = (v̄ − v0, v0 − v̲)`.
    pub fn constraint_bound(&self) -> Vec<f64> {
        self.v_upper
            .iter()
            .map(|vu| vu - self.v0)
            .chain(self.v_lower.iter().map(|vl| self.v0 - vl))
            .collect()
    }

    /// Voltage band as separable affine constraints for prosumers placed at
    /// `prosumer_nodes`, constant over the horizon.
    pub fn voltage_constraint_map(
        &self,
        prosumer_nodes: &[usize],
        horizon: usize,
    ) -> AffineConstraintMap {
        AffineConstraintMap {
            coeffs: prosumer_nodes
                .iter()
                .map(|&k| self.node_coefficients(k))
                .collect(),
            bound: vec![self.constraint_bound(); horizon],
            components: self.components(),
        }
    }

    /// Per-node injections from per-prosumer injections.
    pub fn nodal_injections(&self, prosumer_nodes: &[usize], p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        for (&k, &pi) in prosumer_nodes.iter().zip(p) {
            out[k - 1] += pi;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain() -> FeederModel {
        let lines = [Line::new(0, 1, 0.1, 0.05), Line::new(1, 2, 0.1, 0.05)];
        FeederModel::with_uniform_bounds(&lines, 2, 1.0, 0.95f64.powi(2), 1.05f64.powi(2)).unwrap()
    }

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn chain_paths() {
        let f = chain();
        assert_eq!(f.topology.path(1), &[0]);
        assert_eq!(f.topology.path(2), &[0, 1]);
    }

    #[test]
    fn chain_sensitivities() {
        let f = chain();
        let want = [[0.2, 0.2], [0.2, 0.4]];
        for i in 0..2 {
            for k in 0..2 {
                assert_close(f.r[(i, k)], want[i][k]);
            }
        }
    }

    #[test]
    fn star_sensitivities_are_diagonal() {
        let lines = [Line::new(0, 1, 0.1, 0.0), Line::new(0, 2, 0.1, 0.0)];
        let (r, _) = build_sensitivities(&validate_radial(&lines, 2).unwrap());
        assert_close(r[(0, 0)], 0.2);
        assert_close(r[(1, 1)], 0.2);
        assert_eq!(r[(0, 1)], 0.0);
    }

    #[test]
    fn zero_impedance_gives_zero_matrix() {
        let lines = [
            Line::new(0, 1, 0.0, 0.0),
            Line::new(1, 2, 0.0, 0.0),
            Line::new(1, 3, 0.0, 0.0),
        ];
        let (r, x) = build_sensitivities(&validate_radial(&lines, 3).unwrap());
        assert!(r.iter().chain(x.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn cycle_is_rejected() {
        let lines = [
            Line::new(0, 1, 0.1, 0.0),
            Line::new(1, 2, 0.1, 0.0),
            Line::new(2, 0, 0.1, 0.0),
        ];
        assert!(matches!(
            validate_radial(&lines, 2),
            Err(FeederError::CycleDetected(..))
        ));
    }

    #[test]
    fn disconnected_and_duplicate_are_rejected() {
        let lines = [Line::new(0, 1, 0.1, 0.0)];
        assert_eq!(
            validate_radial(&lines, 2).unwrap_err(),
            FeederError::DisconnectedNode(2)
        );
        let lines = [Line::new(0, 1, 0.1, 0.0), Line::new(1, 0, 0.2, 0.0)];
        assert!(matches!(
            validate_radial(&lines, 1),
            Err(FeederError::DuplicateEdge(1, 0))
        ));
    }

    #[test]
    fn voltages_from_injections() {
        let f = chain();
        let v = f.voltages(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(v, vec![1.0, 1.0]);
        let v = f.voltages(&[0.1, -0.1], &[0.0, 0.0]).unwrap();
        assert_close(v[0], 1.0);
        assert_close(v[1], 0.98);
        assert!(f.voltages(&[0.1], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn chain_flows() {
        let f = chain();
        let fl = f.line_flows(&[-0.5, 0.5], &[0.0, 0.0], 1e-9).unwrap();
        assert_close(fl[1].0, -0.5);
        assert_close(fl[0].0, 0.0);
        assert!(f
            .line_flows(&[0.0, 0.0], &[0.0, 0.0], 1e-9)
            .unwrap()
            .iter()
            .all(|&(p, q)| p == 0.0 && q == 0.0));
    }

    #[test]
    fn unbalanced_flows_are_rejected() {
        let lines = [Line::new(0, 1, 0.1, 0.0), Line::new(0, 2, 0.1, 0.0)];
        let f = FeederModel::with_uniform_bounds(&lines, 2, 1.0, 0.9, 1.1).unwrap();
        assert!(matches!(
            f.line_flows(&[0.2, -0.1], &[0.0, 0.0], 1e-9),
            Err(FeederError::BalanceViolated { .. })
        ));
    }

    #[test]
    fn chain_constraint_map() {
        let f = chain();
        let map = f.voltage_constraint_map(&[1, 2], 1);
        let want = [0.1025, 0.1025, 0.0975, 0.0975];
        for (a, b) in map.bound[0].iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(map.satisfied(0, &[0.0, 0.0]));
        assert_eq!(map.coeffs[1], vec![0.2, 0.4, -0.2, -0.4]);
    }

    #[test]
    fn single_node_coefficients() {
        let f = FeederModel::with_uniform_bounds(&[Line::new(0, 1, 0.1, 0.0)], 1, 1.0, 0.9, 1.1)
            .unwrap();
        let c = f.node_coefficients(1);
        assert_close(c[0], 0.2);
        assert_close(c[1], -0.2);
    }

    #[test]
    fn bounds_must_bracket_v0() {
        let r = FeederModel::with_uniform_bounds(&[Line::new(0, 1, 0.1, 0.0)], 1, 1.0, 1.0, 1.1);
        assert!(matches!(r, Err(FeederError::InvalidBounds { node: 1, .. })));
    }

    /// Random tree on `n + 1` nodes: each node attaches to an earlier one.
    fn random_tree() -> impl Strategy<Value = (usize, Vec<Line>)> {
        (1usize..=10)
            .prop_flat_map(|n| {
                let parents: Vec<_> = (1..=n).map(|k| (0..k, 0.0f64..0.3, 0.0f64..0.3)).collect();
                (Just(n), parents, any::<bool>())
            })
            .prop_map(|(n, ps, flip)| {
                let lines = ps
                    .into_iter()
                    .enumerate()
                    .map(|(i, (p, r, x))| {
                        if flip && i % 2 == 0 {
                            Line::new(i + 1, p, r, x)
                        } else {
                            Line::new(p, i + 1, r, x)
                        }
                    })
                    .collect();
                (n, lines)
            })
    }

    /// Root path by walking parent pointers recovered from the raw edge list.
    fn brute_path(lines: &[Line], node: usize) -> HashSet<usize> {
        let mut out = HashSet::new();
        let mut k = node;
        while k != 0 {
            let (idx, l) = lines
                .iter()
                .enumerate()
                .find(|(_, l)| (l.to == k && l.from < k) || (l.from == k && l.to < k))
                .unwrap();
            out.insert(idx);
            k = if l.to == k { l.from } else { l.to };
        }
        out
    }

    proptest! {
        #[test]
        fn path_intersection_identity((n, lines) in random_tree()) {
            let topo = validate_radial(&lines, n).unwrap();
            let (r, x) = build_sensitivities(&topo);
            for i in 1..=n {
                for k in 1..=n {
                    let shared: Vec<usize> = brute_path(&lines, i).intersection(&brute_path(&lines, k)).copied().collect();
                    let rs: f64 = 2.0 * shared.iter().map(|&e| lines[e].resistance).sum::<f64>();
                    let xs: f64 = 2.0 * shared.iter().map(|&e| lines[e].reactance).sum::<f64>();
                    prop_assert!((r[(i - 1, k - 1)] - rs).abs() < 1e-12);
                    prop_assert!((x[(i - 1, k - 1)] - xs).abs() < 1e-12);
                    prop_assert_eq!(r[(i - 1, k - 1)], r[(k - 1, i - 1)]);
                    prop_assert!(r[(i - 1, k - 1)] >= 0.0);
                }
            }
        }

        #[test]
        fn band_check_matches_constraint_map(
            (n, lines) in random_tree(),
            seed in proptest::collection::vec(-1.0f64..1.0, 10),
            scale in 0.01f64..2.0,
        ) {
            let f = FeederModel::with_uniform_bounds(&lines, n, 1.0, 0.95f64.powi(2), 1.05f64.powi(2)).unwrap();
            let nodes: Vec<usize> = (1..=n).collect();
            let map = f.voltage_constraint_map(&nodes, 1);
            let p: Vec<f64> = seed[..n].iter().map(|v| v * scale).collect();
            prop_assert_eq!(f.within_bounds(&p).unwrap(), map.satisfied(0, &p));
        }

        #[test]
        fn root_flow_matches_subtree_injection(
            (n, lines) in random_tree(),
            seed in proptest::collection::vec(-1.0f64..1.0, 10),
        ) {
            let f = FeederModel::with_uniform_bounds(&lines, n, 1.0, 0.9, 1.1).unwrap();
            let mut p: Vec<f64> = seed[..n].to_vec();
            let mean = p.iter().sum::<f64>() / n as f64;
            p.iter_mut().for_each(|v| *v -= mean);
            let q = vec![0.0; n];
            let flows = f.line_flows(&p, &q, 1e-9).unwrap();
            let mut inflow = 0.0;
            for (idx, l) in lines.iter().enumerate() {
                let child = if f.topology.parent[l.to] == Some(l.from) { l.to } else { l.from };
                let sub: f64 = f.topology.subtree(child).iter().map(|&k| p[k - 1]).sum();
                prop_assert!((flows[idx].0 + sub).abs() < 1e-12);
                if l.from == 0 || l.to == 0 {
                    inflow += flows[idx].0;
                }
            }
            prop_assert!(inflow.abs() < 1e-12);
        }
    }
}
