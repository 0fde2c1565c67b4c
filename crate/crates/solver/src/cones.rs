//! Cone operations for the interior-point method: Nesterov–Todd scaling,
//! Jordan products and step lengths on products of zero, nonnegative and
//! second-order cones.

use crate::program::Cone;

/// Second-order cones up to this dimension get a dense scaling block in
/// the KKT matrix; larger ones use a sparse rank-2 expansion.
pub(crate) const SOC_DENSE_MAX: usize = 16;

#[derive(Debug, Clone)]
pub(crate) struct ConeSet {
    pub cones: Vec<Cone>,
    pub offsets: Vec<usize>,
    pub m: usize,
    /// Nonneg: `w_i = sqrt(s_i/z_i)`. SOC: normalized `w̄`.
    pub w: Vec<f64>,
    /// SOC scale factor `η`, one per cone (unused for other cones).
    pub eta: Vec<f64>,
}

fn soc_jnorm(v: &[f64]) -> f64 {
    let r = v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>();
    r.max(0.0).sqrt()
}

fn soc_residual(v: &[f64]) -> f64 {
    v[0] - v[1..].iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ConeSet {
    pub fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut m = 0;
        for c in cones {
            offsets.push(m);
            m += c.dim();
        }
        Self {
            cones: cones.to_vec(),
            offsets,
            m,
            w: vec![1.0; m],
            eta: vec![1.0; cones.len()],
        }
    }

    /// Barrier degree: one per orthant coordinate, one per second-order cone.
    pub fn degree(&self) -> usize {
        self.cones
            .iter()
            .map(|c| match c {
                Cone::Zero(_) => 0,
                Cone::Nonneg(d) => *d,
                Cone::SecondOrder(_) => 1,
            })
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Cone, std::ops::Range<usize>)> + '_ {
        self.cones
            .iter()
            .enumerate()
            .map(move |(k, c)| (k, *c, self.offsets[k]..self.offsets[k] + c.dim()))
    }

    /// Moves `v` into the interior; zero-cone entries are set to zero when
    /// `primal` is true and left untouched otherwise.
    pub fn shift_to_interior(&self, v: &mut [f64], primal: bool) {
        for (_, c, r) in self.iter() {
            let v = &mut v[r];
            match c {
                Cone::Zero(_) => {
                    if primal {
                        v.fill(0.0);
                    }
                }
                Cone::Nonneg(_) => {
                    let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    if mn < 1e-8 {
                        let shift = 1.0 - mn.min(0.0);
                        v.iter_mut().for_each(|x| *x += shift);
                    }
                }
                Cone::SecondOrder(_) => {
                    let res = soc_residual(v);
                    if res < 1e-8 {
                        v[0] += 1.0 - res.min(0.0);
                    }
                }
            }
        }
    }

    /// Updates the scaling from interior `s`, `z` and writes `λ = W z`.
    pub fn update_scaling(&mut self, s: &[f64], z: &[f64], lambda: &mut [f64]) -> bool {
        for k in 0..self.cones.len() {
            let c = self.cones[k];
            let r = self.offsets[k]..self.offsets[k] + c.dim();
            match c {
                Cone::Zero(_) => lambda[r].fill(0.0),
                Cone::Nonneg(_) => {
                    for i in r {
                        if s[i] <= 0.0 || z[i] <= 0.0 {
                            return false;
                        }
                        self.w[i] = (s[i] / z[i]).sqrt();
                        lambda[i] = (s[i] * z[i]).sqrt();
                    }
                }
                Cone::SecondOrder(_) => {
                    let (sk, zk) = (&s[r.clone()], &z[r.clone()]);
                    let sn = soc_jnorm(sk);
                    let zn = soc_jnorm(zk);
                    if sn <= 0.0 || zn <= 0.0 || sk[0] <= 0.0 || zk[0] <= 0.0 {
                        return false;
                    }
                    let sb: Vec<f64> = sk.iter().map(|x| x / sn).collect();
                    let zb: Vec<f64> = zk.iter().map(|x| x / zn).collect();
                    let dot: f64 = sb.iter().zip(&zb).map(|(a, b)| a * b).sum();
                    let gamma = ((1.0 + dot) / 2.0).sqrt();
                    let w = &mut self.w[r.clone()];
                    w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
                    for i in 1..w.len() {
                        w[i] = (sb[i] - zb[i]) / (2.0 * gamma);
                    }
                    // renormalize against rounding so that w̄ᵀJw̄ = 1
                    let tail: f64 = w[1..].iter().map(|x| x * x).sum();
                    w[0] = (1.0 + tail).sqrt();
                    self.eta[k] = (sn / zn).sqrt();
                    let mut lam = vec![0.0; w.len()];
                    self.mul_w_block(k, zk, &mut lam);
                    lambda[r].copy_from_slice(&lam);
                }
            }
        }
        true
    }

    fn w_block(&self, k: usize) -> &[f64] {
        let r = self.offsets[k]..self.offsets[k] + self.cones[k].dim();
        &self.w[r]
    }

    /// `out = W x` on SOC block `k` (both slices are block-local).
    fn mul_w_block(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let w = self.w_block(k);
        let eta = self.eta[k];
        let w1x1: f64 = w[1..].iter().zip(&x[1..]).map(|(a, b)| a * b).sum();
        out[0] = eta * (w[0] * x[0] + w1x1);
        let c = x[0] + w1x1 / (1.0 + w[0]);
        for i in 1..w.len() {
            out[i] = eta * (x[i] + c * w[i]);
        }
    }

    /// `out = W⁻¹ x` on SOC block `k`.
    fn mul_winv_block(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let w = self.w_block(k);
        let eta = self.eta[k];
        let w1x1: f64 = w[1..].iter().zip(&x[1..]).map(|(a, b)| a * b).sum();
        out[0] = (w[0] * x[0] - w1x1) / eta;
        let c = -x[0] + w1x1 / (1.0 + w[0]);
        for i in 1..w.len() {
            out[i] = (x[i] + c * w[i]) / eta;
        }
    }

    /// `out = W x`; zero-cone rows are zeroed.
    pub fn mul_w(&self, x: &[f64], out: &mut [f64]) {
        for (k, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => out[r].fill(0.0),
                Cone::Nonneg(_) => {
                    for i in r {
                        out[i] = self.w[i] * x[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let mut tmp = vec![0.0; r.len()];
                    self.mul_w_block(k, &x[r.clone()], &mut tmp);
                    out[r].copy_from_slice(&tmp);
                }
            }
        }
    }

    /// `out = W⁻¹ x` (`W` is symmetric, so this is also `W⁻ᵀ x`).
    pub fn mul_winv(&self, x: &[f64], out: &mut [f64]) {
        for (k, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => out[r].fill(0.0),
                Cone::Nonneg(_) => {
                    for i in r {
                        out[i] = x[i] / self.w[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let mut tmp = vec![0.0; r.len()];
                    self.mul_winv_block(k, &x[r.clone()], &mut tmp);
                    out[r].copy_from_slice(&tmp);
                }
            }
        }
    }

    /// `out = W² x`
    pub fn mul_w2(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.m];
        self.mul_w(x, &mut tmp);
        self.mul_w(&tmp, out);
    }

    /// Jordan product `out = a ∘ b`.
    pub fn jordan_prod(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for (_, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => out[r].fill(0.0),
                Cone::Nonneg(_) => {
                    for i in r {
                        out[i] = a[i] * b[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let (a, b) = (&a[r.clone()], &b[r.clone()]);
                    let o = &mut out[r];
                    o[0] = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    for i in 1..o.len() {
                        o[i] = a[0] * b[i] + b[0] * a[i];
                    }
                }
            }
        }
    }

    /// Solves `λ ∘ x = d` for `x`.
    pub fn jordan_div(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for (_, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => out[r].fill(0.0),
                Cone::Nonneg(_) => {
                    for i in r {
                        out[i] = d[i] / lambda[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let (l, d) = (&lambda[r.clone()], &d[r.clone()]);
                    let l1d1: f64 = l[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
                    let l1sq: f64 = l[1..].iter().map(|a| a * a).sum();
                    let x0 = (l[0] * d[0] - l1d1) / (l[0] * l[0] - l1sq);
                    let o = &mut out[r];
                    o[0] = x0;
                    for i in 1..o.len() {
                        o[i] = (d[i] - x0 * l[i]) / l[0];
                    }
                }
            }
        }
    }

    /// Adds `alpha · e` (the cone identity) to `v`.
    pub fn add_identity(&self, alpha: f64, v: &mut [f64]) {
        for (_, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => v[r].iter_mut().for_each(|x| *x += alpha),
                Cone::SecondOrder(_) => v[r.start] += alpha,
            }
        }
    }

    /// Largest `α ≤ cap` with `v + α dv` in the cone (zero cones ignored).
    pub fn step_length(&self, v: &[f64], dv: &[f64], cap: f64) -> f64 {
        let mut alpha = cap;
        for (_, c, r) in self.iter() {
            match c {
                Cone::Zero(_) => {}
                Cone::Nonneg(_) => {
                    for i in r {
                        if dv[i] < 0.0 {
                            alpha = alpha.min(-v[i] / dv[i]);
                        }
                    }
                }
                Cone::SecondOrder(_) => {
                    alpha = alpha.min(soc_step(&v[r.clone()], &dv[r]));
                }
            }
        }
        alpha.max(0.0)
    }

    /// Dense `W²` for SOC block `k` (row-major, `d × d`).
    pub fn soc_w2_dense(&self, k: usize) -> Vec<f64> {
        let w = self.w_block(k);
        let d = w.len();
        let e2 = self.eta[k] * self.eta[k];
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut v = 2.0 * w[i] * w[j];
                if i == j {
                    v += if i == 0 { -1.0 } else { 1.0 };
                }
                h[i * d + j] = e2 * v;
            }
        }
        h
    }

    /// Rank-2 expansion data for a large SOC block: `W² = η²(I + uuᵀ − vvᵀ)`
    /// with `u = √2 w̄` and `v = √2 e₀`. Returns `(η, u)`.
    pub fn soc_expansion(&self, k: usize) -> (f64, Vec<f64>) {
        let w = self.w_block(k);
        (
            self.eta[k],
            w.iter().map(|x| std::f64::consts::SQRT_2 * x).collect(),
        )
    }
}

/// Largest `α` keeping `v + α d` in the second-order cone, for interior `v`.
fn soc_step(v: &[f64], d: &[f64]) -> f64 {
    let v1sq: f64 = v[1..].iter().map(|x| x * x).sum();
    let d1sq: f64 = d[1..].iter().map(|x| x * x).sum();
    let vd: f64 = v[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
    let a = d[0] * d[0] - d1sq;
    let b = 2.0 * (v[0] * d[0] - vd);
    let c = (v[0] * v[0] - v1sq).max(0.0);
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = alpha.min(-v[0] / d[0]);
    }
    // roots of a α² + b α + c = 0
    let disc = b * b - 4.0 * a * c;
    if a.abs() < 1e-300 {
        if b < 0.0 {
            alpha = alpha.min(-c / b);
        }
    } else if disc >= 0.0 {
        let sq = disc.sqrt();
        let t = -0.5 * (b + b.signum() * sq);
        let r1 = if t != 0.0 { c / t } else { f64::INFINITY };
        let r2 = t / a;
        for r in [r1, r2] {
            if r > 0.0 {
                alpha = alpha.min(r);
            }
        }
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soc_set() -> ConeSet {
        ConeSet::new(&[Cone::Nonneg(2), Cone::SecondOrder(3)])
    }

    #[test]
    fn nt_scaling_maps_z_to_s() {
        let mut k = soc_set();
        let s = [1.0, 2.0, 3.0, 0.5, -1.0];
        let z = [0.5, 1.5, 2.0, 1.0, 0.3];
        let mut lam = vec![0.0; 5];
        assert!(k.update_scaling(&s, &z, &mut lam));
        // W z = W⁻¹ s = λ
        let mut a = vec![0.0; 5];
        k.mul_winv(&s, &mut a);
        for i in 0..5 {
            assert!((a[i] - lam[i]).abs() < 1e-12, "{a:?} {lam:?}");
        }
        // W² z = s
        let mut b = vec![0.0; 5];
        k.mul_w2(&z, &mut b);
        for i in 0..5 {
            assert!((b[i] - s[i]).abs() < 1e-12);
        }
        // dense W² agrees
        let h = k.soc_w2_dense(1);
        for i in 0..3 {
            let v: f64 = (0..3).map(|j| h[i * 3 + j] * z[2 + j]).sum();
            assert!((v - s[2 + i]).abs() < 1e-12);
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let k = soc_set();
        let l = [1.0, 2.0, 3.0, 0.5, -1.0];
        let d = [0.3, -0.2, 1.0, 2.0, 0.7];
        let mut x = vec![0.0; 5];
        k.jordan_div(&l, &d, &mut x);
        let mut y = vec![0.0; 5];
        k.jordan_prod(&l, &x, &mut y);
        for i in 0..5 {
            assert!((y[i] - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let v = [2.0, 0.0, 0.0];
        let d = [-1.0, 1.0, 0.0];
        // (2-α)² = α² → α = 1
        assert!((soc_step(&v, &d) - 1.0).abs() < 1e-12);
        assert!(soc_step(&v, &[1.0, 0.0, 0.0]).is_infinite());
    }
}
