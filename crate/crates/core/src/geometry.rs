//! Coordinates on S^d(k) minus the unit geodesic ball: metric factors, radial
//! spectral-element grids, spherical-harmonic data and symmetry-group filters.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::band::BandMatrix;
use crate::error::{OdpError, Result};
use crate::sem::GllRule;

/// Polynomial degree of every radial element.
pub const ELEMENT_DEGREE: usize = 8;

/// Default truncation degree of symmetry-group mode lists.
pub const DEFAULT_MAX_DEGREE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub d: usize,
    pub p: f64,
    pub k: f64,
    pub lambda: f64,
}

impl ProblemParams {
    pub fn new(d: usize, p: f64, k: f64, lambda: f64) -> Result<Self> {
        let params = ProblemParams { d, p, k, lambda };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(OdpError::InvalidParams(format!("d = {} must be at least 2", self.d)));
        }
        if !(self.p > 1.0) {
            return Err(OdpError::InvalidParams(format!("p = {} must exceed 1", self.p)));
        }
        if self.d >= 3 {
            let crit = (self.d as f64 + 2.0) / (self.d as f64 - 2.0);
            if self.p >= crit {
                return Err(OdpError::InvalidParams(format!(
                    "p = {} is not subcritical: need p < (d+2)/(d-2) = {crit}",
                    self.p
                )));
            }
        }
        if !(self.k >= 0.0) || self.k >= PI {
            return Err(OdpError::InvalidParams(format!(
                "k = {} must satisfy 0 < k < pi so the unit ball fits",
                self.k
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(OdpError::InvalidParams(format!("lambda = {} must be positive", self.lambda)));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        ProblemParams { lambda, ..*self }
    }

    pub fn with_k(&self, k: f64) -> Self {
        ProblemParams { k, ..*self }
    }
}

/// `(S_k(r), C_k(r))`; `k = 0` is the Euclidean limit `(r, 1)`.
pub fn metric_factors(k: f64, r: f64) -> (f64, f64) {
    if k == 0.0 {
        return (r, 1.0);
    }
    if k * r >= PI {
        return (0.0, 0.0);
    }
    ((k * r).sin() / k, (k * r).cos())
}

/// `S_k(r)^power`, zero past the pole.
pub fn s_pow(k: f64, r: f64, power: i32) -> f64 {
    metric_factors(k, r).0.powi(power)
}

/// Mean curvature `(d-1) k / tan(k)` of the unit geodesic sphere.
pub fn mean_curvature(k: f64, d: usize) -> Result<f64> {
    if !(k >= 0.0) || k >= PI {
        return Err(OdpError::InvalidParams(format!("mean curvature needs 0 < k < pi, got {k}")));
    }
    let cot = if k < 1e-4 { 1.0 - k * k / 3.0 } else { k / k.tan() };
    Ok((d as f64 - 1.0) * cot)
}

/// Laplace-Beltrami eigenvalue of degree `i` on S^{d-1} and the dimension of its eigenspace.
pub fn sphere_eigen(i: usize, d: usize) -> (f64, usize) {
    let mu = (i * (i + d - 2)) as f64;
    if i == 0 {
        return (0.0, 1);
    }
    if d == 2 {
        return (mu, 2);
    }
    let mult = binomial(i + d - 1, d - 1) - if i >= 2 { binomial(i + d - 3, d - 1) } else { 0 };
    (mu, mult)
}

fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1usize, |acc, j| acc * (n - j) / (j + 1))
}

/// Measure of the unit sphere S^{d-1}.
pub fn unit_sphere_measure(d: usize) -> f64 {
    // Gamma(d/2) by recurrence from Gamma(1) or Gamma(1/2)
    let (mut g, mut x) = if d % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let half = d as f64 / 2.0;
    while x < half - 1e-12 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(half) / g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub degree: usize,
    pub mult: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryGroup {
    pub name: String,
    pub allowed_modes: Vec<Mode>,
}

impl SymmetryGroup {
    /// The dihedral group D_n acting on S^1: invariant modes are cos(j n theta).
    pub fn dihedral(n: usize, d: usize, max_degree: usize) -> Result<Self> {
        if d != 2 {
            return Err(OdpError::InvalidGroup(format!("dihedral groups need d = 2, got d = {d}")));
        }
        if n < 2 {
            return Err(OdpError::InvalidGroup(format!(
                "dihedral order n = {n} gives first degree {n} < 2"
            )));
        }
        let allowed_modes = (1..)
            .map(|j| j * n)
            .take_while(|&i| i <= max_degree.max(n))
            .map(|degree| Mode { degree, mult: 1 })
            .collect();
        let group = SymmetryGroup { name: format!("dihedral:{n}"), allowed_modes };
        group.validate()?;
        Ok(group)
    }

    pub fn explicit(name: &str, allowed_modes: Vec<Mode>) -> Result<Self> {
        let group = SymmetryGroup { name: name.to_string(), allowed_modes };
        group.validate()?;
        Ok(group)
    }

    /// Parses `dihedral:N` or `explicit:deg/mult,deg/mult,...`.
    pub fn parse(spec: &str, d: usize, max_degree: usize) -> Result<Self> {
        if let Some(n) = spec.strip_prefix("dihedral:") {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| OdpError::InvalidGroup(format!("bad dihedral order in '{spec}'")))?;
            return Self::dihedral(n, d, max_degree);
        }
        if let Some(list) = spec.strip_prefix("explicit:") {
            let mut modes = Vec::new();
            for item in list.split(',') {
                let (deg, mult) = item
                    .split_once('/')
                    .ok_or_else(|| OdpError::InvalidGroup(format!("mode '{item}' is not deg/mult")))?;
                let degree = deg.trim().parse().map_err(|_| OdpError::InvalidGroup(format!("bad degree '{deg}'")))?;
                let mult = mult.trim().parse().map_err(|_| OdpError::InvalidGroup(format!("bad multiplicity '{mult}'")))?;
                modes.push(Mode { degree, mult });
            }
            return Self::explicit(spec, modes);
        }
        Err(OdpError::InvalidGroup(format!("unknown group spec '{spec}'")))
    }

    /// Admissible: first degree at least 2 with odd multiplicity, degrees increasing.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .allowed_modes
            .first()
            .ok_or_else(|| OdpError::InvalidGroup("no allowed modes".into()))?;
        if first.degree < 2 {
            return Err(OdpError::InvalidGroup(format!("first degree {} < 2", first.degree)));
        }
        if first.mult % 2 == 0 {
            return Err(OdpError::InvalidGroup(format!("first multiplicity {} is even", first.mult)));
        }
        if self.allowed_modes.iter().any(|m| m.mult == 0) {
            return Err(OdpError::InvalidGroup("zero multiplicity".into()));
        }
        if self.allowed_modes.windows(2).any(|w| w[0].degree >= w[1].degree) {
            return Err(OdpError::InvalidGroup("degrees must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn first(&self) -> Mode {
        self.allowed_modes[0]
    }
}

/// Radial spectral-element grid on `[r0, r_end]`.
///
/// Element breaks sit at `r0`, `1.25 r0`, `1.5 r0` and are uniform beyond, so
/// the cutoff band of the domain perturbation is resolved exactly.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    /// Weights for `int f S_k^{d-1} dr`.
    pub quad_weights: Vec<f64>,
    pub pole_flag: bool,
    k: f64,
    d: usize,
    breaks: Vec<f64>,
    rule: GllRule,
}

impl RadialGrid {
    /// Grid on `[r0, r_end]` with about `intervals` node gaps.
    pub fn new(r0: f64, r_end: f64, k: f64, d: usize, intervals: usize, pole_flag: bool) -> Result<Self> {
        if !(r_end > 1.5 * r0) || !(r0 > 0.0) {
            return Err(OdpError::InvalidParams(format!("radial interval [{r0}, {r_end}] too short")));
        }
        let p = ELEMENT_DEGREE;
        let elements = intervals.div_ceil(p).max(3);
        let mut breaks = vec![r0, 1.25 * r0, 1.5 * r0];
        let tail = elements - 2;
        let start = 1.5 * r0;
        for e in 1..=tail {
            breaks.push(start + (r_end - start) * e as f64 / tail as f64);
        }
        *breaks.last_mut().unwrap() = r_end;
        let rule = GllRule::new(p);
        let mut nodes = Vec::with_capacity(elements * p + 1);
        nodes.push(r0);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            for q in 1..=p {
                nodes.push(0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[q]);
            }
        }
        *nodes.last_mut().unwrap() = r_end;
        let mut grid = RadialGrid { nodes, quad_weights: Vec::new(), pole_flag, k, d, breaks, rule };
        grid.quad_weights = grid.weights_pow(d as i32 - 1);
        Ok(grid)
    }

    /// Grid on `[1, pi/k]` ending at the pole.
    pub fn sphere(k: f64, d: usize, intervals: usize) -> Result<Self> {
        if !(k > 0.0) || k >= PI / 1.5 {
            return Err(OdpError::InvalidParams(format!("sphere grid needs 0 < k < 2pi/3, got {k}")));
        }
        Self::new(1.0, PI / k, k, d, intervals, true)
    }

    /// Euclidean grid on `[1, r_max]`.
    pub fn exterior(d: usize, r_max: f64, intervals: usize) -> Result<Self> {
        Self::new(1.0, r_max, 0.0, d, intervals, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> usize {
        self.rule.degree
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn rule(&self) -> &GllRule {
        &self.rule
    }

    pub fn element_count(&self) -> usize {
        self.breaks.len() - 1
    }

    /// First global node index of element `e`.
    pub fn element_offset(&self, e: usize) -> usize {
        e * self.rule.degree
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        (self.breaks[e], self.breaks[e + 1])
    }

    pub fn r_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// `S_k(r)^power` at node `i`; zero at the pole node for any power.
    pub fn s_pow_at(&self, i: usize, power: i32) -> f64 {
        let s = metric_factors(self.k, self.nodes[i]).0;
        if s <= 0.0 || (self.pole_flag && i + 1 == self.len()) {
            0.0
        } else {
            s.powi(power)
        }
    }

    /// Assembled GLL weights for `int f S_k^power dr` (zero at the pole).
    pub fn weights_pow(&self, power: i32) -> Vec<f64> {
        let p = self.rule.degree;
        let mut w = vec![0.0; self.len()];
        for e in 0..self.element_count() {
            let (a, b) = self.element_bounds(e);
            let jac = 0.5 * (b - a);
            for q in 0..=p {
                let i = e * p + q;
                w[i] += jac * self.rule.weights[q] * self.s_pow_at(i, power);
            }
        }
        w
    }

    /// Stiffness matrix of `int weight(r) u' v' dr`, bandwidth equal to the element degree.
    pub fn stiffness(&self, weight: impl Fn(f64) -> f64) -> BandMatrix {
        let p = self.rule.degree;
        let n = self.len();
        let mut m = BandMatrix::zeros(n, p, p);
        let dm = &self.rule.diff;
        for e in 0..self.element_count() {
            let (a, b) = self.element_bounds(e);
            let scale = 2.0 / (b - a);
            let off = e * p;
            let wq: Vec<f64> = (0..=p)
                .map(|q| scale * self.rule.weights[q] * weight(self.nodes[off + q]))
                .collect();
            for i in 0..=p {
                for j in i..=p {
                    let v: f64 = (0..=p).map(|q| wq[q] * dm[q][i] * dm[q][j]).sum();
                    m.add(off + i, off + j, v);
                    if i != j {
                        m.add(off + j, off + i, v);
                    }
                }
            }
        }
        m
    }

    /// Derivative of `values` at the quadrature nodes of element `e`.
    pub fn element_derivative(&self, values: &[f64], e: usize) -> Vec<f64> {
        let p = self.rule.degree;
        let (a, b) = self.element_bounds(e);
        let scale = 2.0 / (b - a);
        let off = e * p;
        (0..=p)
            .map(|q| scale * (0..=p).map(|j| self.rule.diff[q][j] * values[off + j]).sum::<f64>())
            .collect()
    }

    /// Nodal derivative; element-interface values are averaged.
    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let p = self.rule.degree;
        let mut out = vec![0.0; self.len()];
        let mut count = vec![0u8; self.len()];
        for e in 0..self.element_count() {
            for (q, v) in self.element_derivative(values, e).into_iter().enumerate() {
                out[e * p + q] += v;
                count[e * p + q] += 1;
            }
        }
        out.iter().zip(&count).map(|(v, &c)| v / c as f64).collect()
    }

    /// One-sided derivative at the inner boundary.
    pub fn derivative_at_start(&self, values: &[f64]) -> f64 {
        self.element_derivative(values, 0)[0]
    }

    /// `int f S_k^{d-1} dr` for nodal `f`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.quad_weights).map(|(f, w)| f * w).sum()
    }

    /// Weighted H^1 quantity `int (u'^2 + u^2) S_k^{d-1} dr` with element-local derivatives.
    pub fn h1_squared(&self, values: &[f64]) -> f64 {
        let p = self.rule.degree;
        let mut total = 0.0;
        for e in 0..self.element_count() {
            let (a, b) = self.element_bounds(e);
            let jac = 0.5 * (b - a);
            let du = self.element_derivative(values, e);
            for q in 0..=p {
                let i = e * p + q;
                let s = metric_factors(self.k, self.nodes[i]).0.max(0.0).powi(self.d as i32 - 1);
                total += jac * self.rule.weights[q] * s * du[q] * du[q];
            }
        }
        total + self.integrate(&values.iter().map(|v| v * v).collect::<Vec<_>>())
    }

    /// Interpolates nodal `values` at `r`; zero outside the grid.
    pub fn interpolate(&self, values: &[f64], r: f64) -> f64 {
        let (lo, hi) = (self.nodes[0], self.r_end());
        if r < lo || r > hi {
            return 0.0;
        }
        let e = match self.breaks.partition_point(|&b| b <= r) {
            0 => 0,
            j => (j - 1).min(self.element_count() - 1),
        };
        let (a, b) = self.element_bounds(e);
        let x = (2.0 * r - a - b) / (b - a);
        let p = self.rule.degree;
        let xs = &self.rule.nodes;
        let off = e * p;
        for q in 0..=p {
            if (x - xs[q]).abs() < 1e-15 {
                return values[off + q];
            }
        }
        // barycentric Lagrange interpolation
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..=p {
            let mut wj = 1.0;
            for m in 0..=p {
                if m != j {
                    wj /= xs[j] - xs[m];
                }
            }
            let t = wj / (x - xs[j]);
            num += t * values[off + j];
            den += t;
        }
        num / den
    }

    /// Samples `f` at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }
}

/// `||u||_k`: square root of `int (u'^2 + u^2) S_k^{d-1} dr`.
pub fn k_norm(u: &[f64], grid: &RadialGrid) -> Result<f64> {
    if u.len() != grid.len() {
        return Err(OdpError::GridMismatch { expected: grid.len(), got: u.len() });
    }
    Ok(grid.h1_squared(u).max(0.0).sqrt())
}

/// Quintic smoothstep: 0 for `t <= 0`, 1 for `t >= 1`, C^2 in between.
pub fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let dv = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        (v, dv)
    }
}

/// Cutoff of the domain deformation: 1 on `r <= 5/4`, 0 on `r >= 3/2`, quintic between.
pub fn annulus_cutoff(r: f64) -> (f64, f64) {
    let (s, ds) = smoothstep((r - 1.25) / 0.25);
    (1.0 - s, -ds / 0.25)
}

/// `max |chi'|` of [`annulus_cutoff`]: the smoothstep slope peak 15/8 over a band of width 1/4.
pub const ANNULUS_CUTOFF_MAX_SLOPE: f64 = 7.5;

/// Quadrature on S^{d-1} for zonal functions of the polar angle, with the
/// zonal harmonics used to build multi-mode fields.
#[derive(Debug, Clone)]
pub struct AngularRule {
    pub d: usize,
    pub angles: Vec<f64>,
    /// Weights include the measure of the orthogonal sphere, so they sum to `|S^{d-1}|`.
    pub weights: Vec<f64>,
}

impl AngularRule {
    /// Uniform rule on the circle for `d = 2`; Gauss-Legendre in the polar angle otherwise.
    pub fn new(d: usize, points: usize) -> Self {
        if d == 2 {
            let h = 2.0 * PI / points as f64;
            return AngularRule { d, angles: (0..points).map(|j| j as f64 * h).collect(), weights: vec![h; points] };
        }
        let (x, w) = crate::sem::gauss_legendre(points);
        let side = unit_sphere_measure(d - 1);
        let angles: Vec<f64> = x.iter().map(|x| 0.5 * PI * (x + 1.0)).collect();
        let weights = angles.iter().zip(&w).map(|(t, w)| 0.5 * PI * w * t.sin().powi(d as i32 - 2) * side).collect();
        AngularRule { d, angles, weights }
    }

    /// Zonal harmonic of degree `l`: `cos(l theta)` on the circle, a Gegenbauer
    /// polynomial of `cos theta` in higher dimension.
    pub fn harmonic(&self, l: usize, theta: f64) -> f64 {
        if self.d == 2 {
            return (l as f64 * theta).cos();
        }
        let alpha = 0.5 * (self.d as f64 - 2.0);
        let x = theta.cos();
        let (mut c0, mut c1) = (1.0, 2.0 * alpha * x);
        if l == 0 {
            return c0;
        }
        for n in 2..=l {
            let nf = n as f64;
            let c2 = (2.0 * x * (nf + alpha - 1.0) * c1 - (nf + 2.0 * alpha - 2.0) * c0) / nf;
            c0 = c1;
            c1 = c2;
        }
        c1
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.angles.iter().zip(&self.weights).map(|(&t, w)| w * f(t)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::gauss_legendre;
    use proptest::prelude::*;

    /// Composite Gauss-Legendre oracle for `int_a^b f`.
    fn gl_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let (x, w) = gauss_legendre(20);
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|j| {
                let c = a + (j as f64 + 0.5) * h;
                x.iter().zip(&w).map(|(x, w)| 0.5 * h * w * f(c + 0.5 * h * x)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn metric_factor_values() {
        let (s, c) = metric_factors(1.0, PI / 2.0);
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = metric_factors(1e-6, 2.3);
        assert!((s - 2.3).abs() < 1e-10 && (c - 1.0).abs() < 1e-10);
        assert_eq!(metric_factors(0.5, 2.0 * PI), (0.0, 0.0));
    }

    #[test]
    fn mean_curvature_values() {
        assert!((mean_curvature(1e-7, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((mean_curvature(PI / 4.0, 3).unwrap() - PI / 2.0).abs() < 1e-12);
        assert!(mean_curvature(PI, 2).is_err());
        let ks: Vec<f64> = (1..=50).map(|j| j as f64 * PI / 100.0).collect();
        for w in ks.windows(2) {
            assert!(mean_curvature(w[1], 2).unwrap() < mean_curvature(w[0], 2).unwrap());
        }
    }

    /// Dimension of harmonic polynomials of degree i in d variables by brute force:
    /// monomials of degree i minus monomials of degree i-2.
    fn harmonic_dim_bruteforce(i: usize, d: usize) -> usize {
        fn monomials(deg: usize, vars: usize) -> usize {
            if vars == 1 {
                return 1;
            }
            (0..=deg).map(|j| monomials(deg - j, vars - 1)).sum()
        }
        monomials(i, d) - if i >= 2 { monomials(i - 2, d) } else { 0 }
    }

    #[test]
    fn sphere_eigen_values() {
        assert_eq!(sphere_eigen(0, 5), (0.0, 1));
        assert_eq!(sphere_eigen(2, 2), (4.0, 2));
        assert_eq!(sphere_eigen(1, 3), (2.0, 3));
        for d in 2..6 {
            for i in 1..8 {
                assert_eq!(sphere_eigen(i, d).1, harmonic_dim_bruteforce(i, d), "i={i} d={d}");
                assert!(sphere_eigen(i, d).0 > sphere_eigen(i - 1, d).0);
            }
        }
    }

    #[test]
    fn unit_sphere_measures() {
        assert!((unit_sphere_measure(2) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_measure(3) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_sphere_measure(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn dihedral_presets() {
        let g = SymmetryGroup::dihedral(2, 2, 16).unwrap();
        assert_eq!(g.first(), Mode { degree: 2, mult: 1 });
        assert_eq!(g.allowed_modes.len(), 8);
        assert_eq!(SymmetryGroup::dihedral(3, 2, 16).unwrap().first().degree, 3);
        assert!(SymmetryGroup::dihedral(1, 2, 16).is_err());
        assert!(SymmetryGroup::dihedral(2, 3, 16).is_err());
        assert!(SymmetryGroup::parse("explicit:2/2,4/1", 3, 16).is_err());
        assert!(SymmetryGroup::parse("explicit:2/3,4/1", 3, 16).is_ok());
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(3, 5.0, 0.1, 1.0).is_err());
        assert!(ProblemParams::new(3, 4.9, 0.1, 1.0).is_ok());
        assert!(ProblemParams::new(2, 9.0, 0.1, 1.0).is_ok());
        assert!(ProblemParams::new(2, 1.0, 0.1, 1.0).is_err());
        assert!(ProblemParams::new(2, 3.0, 3.2, 1.0).is_err());
        assert!(ProblemParams::new(2, 3.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn volume_weights_match_closed_form() {
        for (k, d) in [(0.05, 2), (0.1, 3), (0.3, 4)] {
            let grid = RadialGrid::sphere(k, d, 2000).unwrap();
            let exact = gl_integral(|r| s_pow(k, r, d as i32 - 1), 1.0, PI / k, 400);
            let approx = grid.integrate(&vec![1.0; grid.len()]);
            assert!(((approx - exact) / exact).abs() < 1e-10, "k={k} d={d}");
            if d == 2 {
                let closed = (1.0 + k.cos()) / (k * k);
                assert!(((approx - closed) / closed).abs() < 1e-10);
            }
            for deg in 1..=2 {
                let f = grid.sample(|r| r.powi(deg));
                let exact = gl_integral(|r| r.powi(deg) * s_pow(k, r, d as i32 - 1), 1.0, PI / k, 400);
                assert!(((grid.integrate(&f) - exact) / exact).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn k_norm_examples() {
        let grid = RadialGrid::exterior(2, 2.0, 64).unwrap();
        assert_eq!(k_norm(&vec![0.0; grid.len()], &grid).unwrap(), 0.0);
        let one = k_norm(&vec![1.0; grid.len()], &grid).unwrap();
        assert!((one - 1.5f64.sqrt()).abs() < 1e-12);
        assert!(k_norm(&[1.0], &grid).is_err());
        let f = |r: f64| (r - 1.0) * (-(r - 1.0)).exp();
        let coarse = RadialGrid::sphere(0.1, 2, 800).unwrap();
        let fine = RadialGrid::sphere(0.1, 2, 1600).unwrap();
        let a = k_norm(&coarse.sample(f), &coarse).unwrap();
        let b = k_norm(&fine.sample(f), &fine).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn stiffness_reproduces_weighted_dirichlet_energy() {
        let grid = RadialGrid::sphere(0.2, 2, 400).unwrap();
        let f = |r: f64| (0.7 * r).sin();
        let u = grid.sample(f);
        let k = grid.stiffness(|r| s_pow(0.2, r, 1));
        let ku = k.matvec(&u);
        let energy: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let exact = gl_integral(|r| (0.7 * (0.7 * r).cos()).powi(2) * s_pow(0.2, r, 1), 1.0, PI / 0.2, 200);
        assert!(((energy - exact) / exact).abs() < 1e-10);
        assert!(k.asymmetry() < 1e-12);
    }

    #[test]
    fn interpolation_is_spectral() {
        let grid = RadialGrid::exterior(2, 10.0, 200).unwrap();
        let u = grid.sample(|r| (-(r - 1.0)).exp() * (r - 1.0));
        for r in [1.0, 1.1, 1.3, 2.71, 9.99] {
            let exact = (-(r - 1.0f64)).exp() * (r - 1.0);
            assert!((grid.interpolate(&u, r) - exact).abs() < 1e-10);
        }
        assert_eq!(grid.interpolate(&u, 11.0), 0.0);
    }

    proptest! {
        #[test]
        fn sphere_eigen_monotone(d in 2usize..7, i in 0usize..30) {
            let (a, ma) = sphere_eigen(i, d);
            let (b, mb) = sphere_eigen(i + 1, d);
            prop_assert!(b > a);
            prop_assert!(ma > 0 && mb > 0);
        }

        #[test]
        fn dihedral_always_valid(n in 2usize..12, max in 0usize..40) {
            let g = SymmetryGroup::dihedral(n, 2, max).unwrap();
            prop_assert!(g.validate().is_ok());
            prop_assert!(g.allowed_modes.iter().all(|m| m.degree % n == 0 && m.mult == 1));
        }

        #[test]
        fn grid_nodes_increasing(k in 0.02f64..1.5, n in 10usize..500) {
            let grid = RadialGrid::sphere(k, 2, n).unwrap();
            prop_assert!(grid.nodes.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(grid.quad_weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn angular_rule_orthogonality() {
        for d in [2, 3, 4] {
            let rule = AngularRule::new(d, 64);
            assert!((rule.weights.iter().sum::<f64>() - unit_sphere_measure(d)).abs() < 1e-12);
            for a in 0..6 {
                for b in 0..a {
                    let g = rule.integrate(|t| rule.harmonic(a, t) * rule.harmonic(b, t));
                    assert!(g.abs() < 1e-12, "d {d}: <{a},{b}> = {g}");
                }
            }
        }
    }

    #[test]
    fn annulus_cutoff_bands() {
        assert_eq!(annulus_cutoff(1.2), (1.0, 0.0));
        assert_eq!(annulus_cutoff(1.5), (0.0, 0.0));
        let peak = (0..=1000).map(|j| annulus_cutoff(1.25 + 0.25 * j as f64 / 1000.0).1.abs()).fold(0.0, f64::max);
        assert!((peak - ANNULUS_CUTOFF_MAX_SLOPE).abs() < 1e-9);
    }
}
