//! Perturbed domains `S^2(k) \ B_{1+v}` pulled back to the fixed annulus, the
//! nonlinear DtN map `F(v, lambda)` and its nontrivial branch.
//!
//! Unknowns are the cosine coefficients of `u(r, theta) = sum_j U_j(r) cos(j n theta)`
//! at the radial spectral-element nodes, stored node-major. Products and metric
//! factors are evaluated on a uniform theta grid over one period.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::band::BandMatrix;
use crate::dtn::dtn_eigenvalue;
use crate::error::{OdpError, Result};
use crate::geometry::{annulus_cutoff, metric_factors, RadialGrid};
use crate::radial::RadialProfile;

pub const DEFAULT_THETA_POINTS: usize = 256;
/// Cosine modes of the solution, the constant mode excluded.
pub const DEFAULT_SOLUTION_MODES: usize = 16;
/// Cosine modes of the boundary perturbation.
pub const DEFAULT_FOURIER_MODES: usize = 8;

/// `v(theta) = sum_{j >= 1} a_j cos(j n theta)`; mean zero, `sup |v| < 1/4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationField {
    pub n: usize,
    /// `a_1, a_2, ...`
    pub fourier: Vec<f64>,
}

impl PerturbationField {
    pub fn new(n: usize, fourier: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(OdpError::InvalidParams("dihedral order must be positive".into()));
        }
        let field = PerturbationField { n, fourier };
        let sup = (0..4096).map(|i| field.eval(2.0 * PI * i as f64 / 4096.0).0.abs()).fold(0.0, f64::max);
        if !(sup < 0.25) {
            return Err(OdpError::InvalidParams(format!("perturbation sup {sup:.3e} must stay below 1/4")));
        }
        Ok(field)
    }

    pub fn zero(n: usize, modes: usize) -> Self {
        PerturbationField { n, fourier: vec![0.0; modes] }
    }

    /// `a_1`, the coefficient of the first allowed harmonic.
    pub fn amplitude(&self) -> f64 {
        self.fourier.first().copied().unwrap_or(0.0)
    }

    /// `(v, v')` at `theta`.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        let n = self.n as f64;
        self.fourier.iter().enumerate().fold((0.0, 0.0), |(v, dv), (j, a)| {
            let w = (j + 1) as f64 * n;
            (v + a * (w * theta).cos(), dv - a * w * (w * theta).sin())
        })
    }
}

/// Radial nodes times a uniform theta grid over one period `2 pi / n`.
#[derive(Debug, Clone)]
pub struct AnnulusGrid {
    pub radial: RadialGrid,
    pub n: usize,
    /// Solution modes `j = 0..modes`.
    pub modes: usize,
    pub theta: Vec<f64>,
    /// Full-circle quadrature weight per theta point.
    pub weight: f64,
    cos: Vec<Vec<f64>>,
    dcos: Vec<Vec<f64>>,
}

impl AnnulusGrid {
    /// `theta_points` counts the full circle and must be a multiple of `4n`.
    pub fn new(radial: RadialGrid, n: usize, theta_points: usize, solution_modes: usize) -> Result<Self> {
        if n == 0 || theta_points == 0 || theta_points % (4 * n) != 0 {
            return Err(OdpError::InvalidParams(format!("theta points {theta_points} must be a multiple of 4n = {}", 4 * n)));
        }
        let m = theta_points / n;
        // Exact discrete orthogonality of the modes needs more than 2 J points.
        if m <= 2 * solution_modes {
            return Err(OdpError::InvalidParams(format!(
                "{m} theta points per period cannot separate {solution_modes} modes"
            )));
        }
        let theta: Vec<f64> = (0..m).map(|i| 2.0 * PI * i as f64 / theta_points as f64).collect();
        let modes = solution_modes + 1;
        let cos = (0..modes).map(|j| theta.iter().map(|t| ((j * n) as f64 * t).cos()).collect()).collect();
        let dcos = (0..modes)
            .map(|j| {
                let w = (j * n) as f64;
                theta.iter().map(|t| -w * (w * t).sin()).collect()
            })
            .collect();
        Ok(AnnulusGrid { radial, n, modes, theta, weight: 2.0 * PI / m as f64, cos, dcos })
    }

    pub fn points(&self) -> usize {
        self.theta.len()
    }

    pub fn unknowns(&self) -> usize {
        self.radial.len() * self.modes
    }

    #[inline]
    pub fn index(&self, node: usize, mode: usize) -> usize {
        node * self.modes + mode
    }

    /// `int cos^2(j n theta)` over the circle.
    pub fn mode_norm(&self, j: usize) -> f64 {
        if j == 0 {
            2.0 * PI
        } else {
            PI
        }
    }

    fn bandwidth(&self) -> usize {
        self.radial.degree() * self.modes + self.modes - 1
    }

    /// Values at one radial node on the theta grid.
    pub fn synthesize(&self, coeffs: &[f64], node: usize) -> Vec<f64> {
        let c = &coeffs[node * self.modes..(node + 1) * self.modes];
        (0..self.points()).map(|m| (0..self.modes).map(|j| c[j] * self.cos[j][m]).sum()).collect()
    }

    fn synthesize_dtheta(&self, coeffs: &[f64], node: usize) -> Vec<f64> {
        let c = &coeffs[node * self.modes..(node + 1) * self.modes];
        (0..self.points()).map(|m| (0..self.modes).map(|j| c[j] * self.dcos[j][m]).sum()).collect()
    }

    /// Cosine coefficients of theta samples up to `modes`.
    pub fn analyze(&self, samples: &[f64], modes: usize) -> Vec<f64> {
        (0..modes)
            .map(|j| {
                let c: Vec<f64> = self.theta.iter().map(|t| ((j * self.n) as f64 * t).cos()).collect();
                samples.iter().zip(&c).map(|(s, c)| s * c).sum::<f64>() * self.weight / self.mode_norm(j)
            })
            .collect()
    }

    /// Radial coefficient profile of mode `j`.
    pub fn mode_profile(&self, coeffs: &[f64], j: usize) -> Vec<f64> {
        (0..self.radial.len()).map(|i| coeffs[self.index(i, j)]).collect()
    }
}

/// Pullback of the round metric under `Xi(r, theta) = ((1 + chi v) r, theta)`,
/// sampled node-major on the annulus grid: `dR = a dr + b dtheta`, so
/// `g = a^2 dr^2 + 2 a b dr dtheta + (b^2 + S^2) dtheta^2` and `sqrt|g| = a S`.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub a: Vec<f64>,
    /// `chi r v'`, zero for `v = 0`.
    pub b: Vec<f64>,
    /// `S_k((1 + chi v) r)`, the angular factor.
    pub s: Vec<f64>,
    pub sqrt_g: Vec<f64>,
    /// `sqrt|g| g^{ij}`; zero at the pole.
    pub c_rr: Vec<f64>,
    pub c_rt: Vec<f64>,
    pub c_tt: Vec<f64>,
    /// `g^{rr}`, the squared length of `grad r`.
    pub g_rr_inv: Vec<f64>,
    /// Arc length density `sqrt(g_thetatheta)` on the inner circle.
    pub ds: Vec<f64>,
}

/// Metric of the perturbed domain; the cutoff acts on `r / r0` with `r0` the inner radius.
pub fn pullback_metric(v: &PerturbationField, grid: &AnnulusGrid) -> Result<MetricField> {
    if v.n != grid.n {
        return Err(OdpError::InvalidParams(format!("perturbation order {} differs from grid order {}", v.n, grid.n)));
    }
    let rg = &grid.radial;
    let (r0, k) = (rg.nodes[0], rg.k());
    let total = rg.len() * grid.points();
    let mut f = MetricField {
        a: vec![0.0; total],
        b: vec![0.0; total],
        s: vec![0.0; total],
        sqrt_g: vec![0.0; total],
        c_rr: vec![0.0; total],
        c_rt: vec![0.0; total],
        c_tt: vec![0.0; total],
        g_rr_inv: vec![0.0; total],
        ds: vec![0.0; grid.points()],
    };
    let vs: Vec<(f64, f64)> = grid.theta.iter().map(|&t| v.eval(t)).collect();
    let pole = rg.pole_flag.then(|| rg.len() - 1);
    for (i, &r) in rg.nodes.iter().enumerate() {
        let (chi, dchi) = annulus_cutoff(r / r0);
        for (m, &(vv, dv)) in vs.iter().enumerate() {
            let idx = i * grid.points() + m;
            let a = 1.0 + chi * vv + dchi * vv * r / r0;
            let b = chi * r * dv;
            let s = if Some(i) == pole { 0.0 } else { metric_factors(k, (1.0 + chi * vv) * r).0 };
            if !(a > 0.0) || (Some(i) != pole && !(s > 0.0)) {
                return Err(OdpError::InvalidParams(format!(
                    "nonpositive volume density at r = {r:.4}, theta = {:.4}",
                    grid.theta[m]
                )));
            }
            let bv = b;
            f.a[idx] = a;
            f.b[idx] = b;
            f.s[idx] = s;
            f.sqrt_g[idx] = a * s;
            if s > 0.0 {
                f.c_rr[idx] = (bv * bv + s * s) / (a * s);
                f.c_rt[idx] = -bv / s;
                f.c_tt[idx] = a / s;
                f.g_rr_inv[idx] = (bv * bv + s * s) / (a * a * s * s);
            }
            if i == 0 {
                f.ds[m] = (bv * bv + s * s).sqrt();
            }
        }
    }
    Ok(f)
}

/// Discrete weak form of `-lambda Delta_g u + u - (u^+)^p` with `u = 0` at `r0`
/// and, for nonconstant modes, at the pole.
#[derive(Debug, Clone)]
pub struct AnnulusProblem<'a> {
    pub grid: &'a AnnulusGrid,
    pub metric: MetricField,
    pub lambda: f64,
    pub p: f64,
}

/// Residual split into its stiffness, mass and nonlinear parts.
struct ResidualParts {
    stiff: Vec<f64>,
    mass: Vec<f64>,
    nonlinear: Vec<f64>,
}

impl<'a> AnnulusProblem<'a> {
    pub fn new(grid: &'a AnnulusGrid, v: &PerturbationField, lambda: f64, p: f64) -> Result<Self> {
        Ok(AnnulusProblem { grid, metric: pullback_metric(v, grid)?, lambda, p })
    }

    fn constrained(&self, node: usize, mode: usize) -> bool {
        node == 0 || (mode > 0 && self.grid.radial.pole_flag && node + 1 == self.grid.radial.len())
    }

    fn parts(&self, coeffs: &[f64]) -> ResidualParts {
        let g = self.grid;
        let rg = &g.radial;
        let (mp, modes, deg) = (g.points(), g.modes, rg.degree());
        let rule = rg.rule();
        let len = g.unknowns();
        let mut out = ResidualParts { stiff: vec![0.0; len], mass: vec![0.0; len], nonlinear: vec![0.0; len] };
        let values: Vec<Vec<f64>> = (0..rg.len()).map(|i| g.synthesize(coeffs, i)).collect();
        let dtheta: Vec<Vec<f64>> = (0..rg.len()).map(|i| g.synthesize_dtheta(coeffs, i)).collect();
        for e in 0..rg.element_count() {
            let (lo, hi) = rg.element_bounds(e);
            let (jac, scale) = (0.5 * (hi - lo), 2.0 / (hi - lo));
            let off = e * deg;
            let mut proj_r = vec![vec![0.0; modes]; deg + 1];
            for q in 0..=deg {
                let i = off + q;
                let w = jac * rule.weights[q] * g.weight;
                let mut qr = vec![0.0; mp];
                let mut qt = vec![0.0; mp];
                let mut ms = vec![0.0; mp];
                let mut nl = vec![0.0; mp];
                for m in 0..mp {
                    let ur = scale * (0..=deg).map(|b| rule.diff[q][b] * values[off + b][m]).sum::<f64>();
                    let (u, ut) = (values[i][m], dtheta[i][m]);
                    let idx = i * mp + m;
                    let mt = &self.metric;
                    qr[m] = self.lambda * w * (mt.c_rr[idx] * ur + mt.c_rt[idx] * ut);
                    qt[m] = self.lambda * w * (mt.c_rt[idx] * ur + mt.c_tt[idx] * ut);
                    ms[m] = w * mt.sqrt_g[idx] * u;
                    nl[m] = w * mt.sqrt_g[idx] * u.max(0.0).powf(self.p);
                }
                for j in 0..modes {
                    let (c, dc) = (&g.cos[j], &g.dcos[j]);
                    proj_r[q][j] = (0..mp).map(|m| qr[m] * c[m]).sum();
                    let at = g.index(i, j);
                    out.stiff[at] += (0..mp).map(|m| qt[m] * dc[m]).sum::<f64>();
                    out.mass[at] += (0..mp).map(|m| ms[m] * c[m]).sum::<f64>();
                    out.nonlinear[at] += (0..mp).map(|m| nl[m] * c[m]).sum::<f64>();
                }
            }
            for a in 0..=deg {
                for j in 0..modes {
                    out.stiff[g.index(off + a, j)] += scale * (0..=deg).map(|q| rule.diff[q][a] * proj_r[q][j]).sum::<f64>();
                }
            }
        }
        out
    }

    /// Residual with constrained rows replaced by the coefficient itself, and its
    /// relative size `|R|_inf / | |K u| + |M u| + |N(u)| |_inf`.
    pub fn residual(&self, coeffs: &[f64]) -> (Vec<f64>, f64) {
        let parts = self.parts(coeffs);
        let g = self.grid;
        let mut res = vec![0.0; g.unknowns()];
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..g.radial.len() {
            for j in 0..g.modes {
                let at = g.index(i, j);
                if self.constrained(i, j) {
                    res[at] = coeffs[at];
                    worst = worst.max(coeffs[at].abs());
                } else {
                    res[at] = parts.stiff[at] + parts.mass[at] - parts.nonlinear[at];
                    scale = scale.max(parts.stiff[at].abs() + parts.mass[at].abs() + parts.nonlinear[at].abs());
                    worst = worst.max(res[at].abs());
                }
            }
        }
        (res, worst / scale.max(f64::MIN_POSITIVE))
    }

    /// Derivative of the residual in `lambda` (the stiffness part over `lambda`).
    pub fn residual_lambda_derivative(&self, coeffs: &[f64]) -> Vec<f64> {
        let parts = self.parts(coeffs);
        let g = self.grid;
        let mut out: Vec<f64> = parts.stiff.iter().map(|s| s / self.lambda).collect();
        for i in 0..g.radial.len() {
            for j in 0..g.modes {
                if self.constrained(i, j) {
                    out[g.index(i, j)] = 0.0;
                }
            }
        }
        out
    }

    /// Linearization at `coeffs`, without the constraint rows when `raw`.
    pub fn jacobian_matrix(&self, coeffs: &[f64], raw: bool) -> BandMatrix {
        let g = self.grid;
        let rg = &g.radial;
        let (mp, modes, deg) = (g.points(), g.modes, rg.degree());
        let rule = rg.rule();
        let bw = g.bandwidth();
        let mut mat = BandMatrix::zeros(g.unknowns(), bw, bw);
        let mt = &self.metric;
        for e in 0..rg.element_count() {
            let (lo, hi) = rg.element_bounds(e);
            let (jac, scale) = (0.5 * (hi - lo), 2.0 / (hi - lo));
            let off = e * deg;
            for q in 0..=deg {
                let i = off + q;
                let w = jac * rule.weights[q] * g.weight;
                let u = g.synthesize(coeffs, i);
                let mut t_rr = vec![vec![0.0; modes]; modes];
                let mut t_rt = vec![vec![0.0; modes]; modes];
                let mut t_tt = vec![vec![0.0; modes]; modes];
                let mut t_0 = vec![vec![0.0; modes]; modes];
                for m in 0..mp {
                    let idx = i * mp + m;
                    let arr = self.lambda * w * mt.c_rr[idx];
                    let art = self.lambda * w * mt.c_rt[idx];
                    let att = self.lambda * w * mt.c_tt[idx];
                    let a0 = w * mt.sqrt_g[idx] * (1.0 - self.p * u[m].max(0.0).powf(self.p - 1.0));
                    for j in 0..modes {
                        let (cj, dj) = (g.cos[j][m], g.dcos[j][m]);
                        for jj in 0..modes {
                            let (ck, dk) = (g.cos[jj][m], g.dcos[jj][m]);
                            t_rr[j][jj] += arr * cj * ck;
                            t_rt[j][jj] += art * cj * dk;
                            t_tt[j][jj] += att * dj * dk;
                            t_0[j][jj] += a0 * cj * ck;
                        }
                    }
                }
                let d: Vec<f64> = (0..=deg).map(|b| scale * rule.diff[q][b]).collect();
                for a in 0..=deg {
                    for b in 0..=deg {
                        let f = d[a] * d[b];
                        for j in 0..modes {
                            let row = g.index(off + a, j);
                            for jj in 0..modes {
                                mat.add(row, g.index(off + b, jj), f * t_rr[j][jj]);
                            }
                        }
                    }
                    for j in 0..modes {
                        for jj in 0..modes {
                            // test radial derivative against trial theta derivative and back
                            mat.add(g.index(off + a, j), g.index(i, jj), d[a] * t_rt[j][jj]);
                            mat.add(g.index(i, j), g.index(off + a, jj), d[a] * t_rt[jj][j]);
                        }
                    }
                }
                for j in 0..modes {
                    for jj in 0..modes {
                        mat.add(g.index(i, j), g.index(i, jj), t_tt[j][jj] + t_0[j][jj]);
                    }
                }
            }
        }
        if !raw {
            for i in 0..rg.len() {
                for j in 0..modes {
                    if self.constrained(i, j) {
                        let row = g.index(i, j);
                        for c in mat.row_range(row) {
                            mat.set(row, c, 0.0);
                        }
                        mat.set(row, row, 1.0);
                    }
                }
            }
        }
        mat
    }

    /// `(grad r / |grad r|) . grad u` on the inner circle: the normal derivative
    /// along the normal pointing into the domain.
    pub fn normal_derivative(&self, coeffs: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let rg = &g.radial;
        let (lo, hi) = rg.element_bounds(0);
        let scale = 2.0 / (hi - lo);
        let cols: Vec<Vec<f64>> = (0..=rg.degree()).map(|b| g.synthesize(coeffs, b)).collect();
        (0..g.points())
            .map(|m| {
                let ur = scale * (0..=rg.degree()).map(|b| rg.rule().diff[0][b] * cols[b][m]).sum::<f64>();
                self.metric.g_rr_inv[m].sqrt() * ur
            })
            .collect()
    }

    /// `F`: normal derivative minus its mean over the perturbed boundary.
    pub fn dtn_field(&self, coeffs: &[f64]) -> DtnField {
        let f = self.normal_derivative(coeffs);
        let ds = &self.metric.ds;
        let length: f64 = ds.iter().sum();
        let mean = f.iter().zip(ds).map(|(a, b)| a * b).sum::<f64>() / length;
        let var = f.iter().zip(ds).map(|(a, b)| (a - mean).powi(2) * b).sum::<f64>() / length;
        DtnField { theta: self.grid.theta.clone(), values: f.iter().map(|x| x - mean).collect(), neumann_constant: mean, neumann_stddev: var.sqrt() }
    }
}

/// `F(v, lambda)` on the theta grid together with the Neumann statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DtnField {
    pub theta: Vec<f64>,
    pub values: Vec<f64>,
    /// Boundary-measure mean of the normal derivative.
    pub neumann_constant: f64,
    pub neumann_stddev: f64,
}

impl DtnField {
    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct AnnulusSolution {
    pub field: PerturbationField,
    pub lambda: f64,
    pub coeffs: Vec<f64>,
    pub residual_norm: f64,
    /// Normal derivative on the inner circle, theta grid.
    pub boundary_trace: Vec<f64>,
    pub iterations: usize,
}

/// Relative residual targeted by the annulus Newton solves.
pub const ANNULUS_TOLERANCE: f64 = 1e-12;

fn newton(problem: &AnnulusProblem, guess: Vec<f64>) -> Result<(Vec<f64>, f64, usize)> {
    let mut u = guess;
    let (mut res, mut norm) = problem.residual(&u);
    for it in 0..30 {
        if norm < ANNULUS_TOLERANCE {
            return Ok((u, norm, it));
        }
        let step = problem.jacobian_matrix(&u, false).lu()?.solve(&res);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a - t * b).collect();
            let (r, n) = problem.residual(&trial);
            if n < norm || t < 1e-3 {
                u = trial;
                res = r;
                norm = n;
                break;
            }
            t *= 0.5;
        }
    }
    if norm < 1e-9 {
        Ok((u, norm, 30))
    } else {
        Err(OdpError::NewtonDivergence { iterations: 30, residual: norm })
    }
}

/// Coefficients of the radial profile embedded as the constant mode.
pub fn embed_radial(grid: &AnnulusGrid, u0: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; grid.unknowns()];
    for (i, v) in u0.iter().enumerate() {
        c[grid.index(i, 0)] = *v;
    }
    c
}

/// Grid for the perturbed problems around `u0`, on its radial grid.
pub fn annulus_grid_for(u0: &RadialProfile, n: usize, theta_points: usize, solution_modes: usize) -> Result<AnnulusGrid> {
    if u0.params.d != 2 {
        return Err(OdpError::InvalidParams(format!("perturbed domains are implemented for d = 2, got d = {}", u0.params.d)));
    }
    AnnulusGrid::new(u0.grid.clone(), n, theta_points, solution_modes)
}

/// Newton solve of the pulled-back problem from `u0`, on the grid of `u0`.
pub fn solve_perturbed(v: &PerturbationField, grid: &AnnulusGrid, u0: &RadialProfile) -> Result<AnnulusSolution> {
    let problem = AnnulusProblem::new(grid, v, u0.params.lambda, u0.params.p)?;
    solve_on(&problem, embed_radial(grid, &u0.values))
}

/// Smallest sampled value away from the inner circle and the pole.
pub fn interior_min(grid: &AnnulusGrid, coeffs: &[f64]) -> f64 {
    (1..grid.radial.len() - 1).flat_map(|i| grid.synthesize(coeffs, i)).fold(f64::INFINITY, f64::min)
}

fn solve_on(problem: &AnnulusProblem, guess: Vec<f64>) -> Result<AnnulusSolution> {
    let (coeffs, residual_norm, iterations) = newton(problem, guess)?;
    let grid = problem.grid;
    let min = interior_min(grid, &coeffs);
    if !(min > 0.0) {
        return Err(OdpError::Positivity { min_value: min });
    }
    let v = PerturbationField { n: grid.n, fourier: Vec::new() };
    let boundary_trace = problem.normal_derivative(&coeffs);
    Ok(AnnulusSolution { field: v, lambda: problem.lambda, coeffs, residual_norm, boundary_trace, iterations })
}

/// `F(v, lambda)` from a fresh solve around `u0`.
pub fn nonlinear_dtn_f(v: &PerturbationField, grid: &AnnulusGrid, u0: &RadialProfile) -> Result<(AnnulusSolution, DtnField)> {
    let problem = AnnulusProblem::new(grid, v, u0.params.lambda, u0.params.p)?;
    let mut sol = solve_on(&problem, embed_radial(grid, &u0.values))?;
    sol.field = v.clone();
    let f = problem.dtn_field(&sol.coeffs);
    Ok((sol, f))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianRow {
    pub eps: f64,
    /// `sup |FD - du(1) h_j cos| / sup |du(1) h_j cos|`.
    pub error: f64,
    /// Error ratio against the previous row.
    pub ratio: Option<f64>,
    /// Projected FD coefficient over `h_j`; equals `du(1)` in the limit.
    pub factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianCheck {
    pub lambda: f64,
    pub mode: usize,
    pub degree: usize,
    pub h: f64,
    pub du_at_1: f64,
    pub rows: Vec<JacobianRow>,
    /// `log2` of the last error ratio, scaled to halvings of `eps`.
    pub observed_order: f64,
}

/// Central differences of `F` along `cos(j n theta)` against `du(1) h_{jn} cos(j n theta)`.
pub fn jacobian_check(grid: &AnnulusGrid, u0: &RadialProfile, mode: usize, eps_list: &[f64]) -> Result<JacobianCheck> {
    if mode == 0 || eps_list.is_empty() {
        return Err(OdpError::InvalidParams("need a nonconstant mode and at least one eps".into()));
    }
    let degree = mode * grid.n;
    let h = dtn_eigenvalue(u0, degree)?;
    let expected: Vec<f64> = grid.theta.iter().map(|t| u0.du_at_1 * h * (degree as f64 * t).cos()).collect();
    let scale = expected.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(u0.du_at_1.abs() * 1e-12);
    let mut rows: Vec<JacobianRow> = Vec::new();
    for &eps in eps_list {
        let mut coeff = vec![0.0; mode];
        coeff[mode - 1] = eps;
        let plus = nonlinear_dtn_f(&PerturbationField::new(grid.n, coeff.clone())?, grid, u0)?.1;
        coeff[mode - 1] = -eps;
        let minus = nonlinear_dtn_f(&PerturbationField::new(grid.n, coeff)?, grid, u0)?.1;
        let fd: Vec<f64> = plus.values.iter().zip(&minus.values).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let error = fd.iter().zip(&expected).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        let projected = grid.analyze(&fd, mode + 1)[mode];
        let ratio = rows.last().map(|r: &JacobianRow| r.error / error);
        rows.push(JacobianRow { eps, error, ratio, factor: projected / h });
    }
    let observed_order = match rows.len() {
        0 | 1 => f64::NAN,
        n => {
            let (a, b) = (&rows[n - 2], &rows[n - 1]);
            (a.error / b.error).ln() / (a.eps / b.eps).ln()
        }
    };
    Ok(JacobianCheck { lambda: u0.params.lambda, mode, degree, h, du_at_1: u0.du_at_1, rows, observed_order })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchPoint {
    pub amplitude: f64,
    pub lambda: f64,
    pub field: PerturbationField,
    /// `sup |F(v, lambda)|`.
    pub f_residual: f64,
    pub neumann_constant: f64,
    pub neumann_stddev: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub coeffs: Vec<f64>,
}

/// Options of the branch solve.
#[derive(Debug, Clone, Copy)]
pub struct BranchOptions {
    pub fourier_modes: usize,
    pub max_iterations: usize,
    /// Target for `sup |F|`.
    pub f_tolerance: f64,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions { fourier_modes: DEFAULT_FOURIER_MODES, max_iterations: 30, f_tolerance: 1e-10 }
    }
}

/// Cosine coefficients `j = 1..modes` of `F`.
fn f_coefficients(problem: &AnnulusProblem, coeffs: &[f64], modes: usize) -> Vec<f64> {
    let f = problem.dtn_field(coeffs);
    problem.grid.analyze(&f.values, modes + 1)[1..].to_vec()
}

/// Joint Newton on `(u, a_2..a_J, lambda)` with `a_1 = amplitude` fixed, from `guess`.
fn branch_newton(
    grid: &AnnulusGrid,
    p: f64,
    amplitude: f64,
    guess: (Vec<f64>, Vec<f64>, f64),
    opts: &BranchOptions,
) -> Result<BranchPoint> {
    let jm = opts.fourier_modes;
    let (mut u, mut tail, mut lambda) = guess;
    let field = |tail: &[f64]| {
        let mut c = vec![amplitude];
        c.extend_from_slice(tail);
        PerturbationField::new(grid.n, c)
    };
    let fail = |reason: String| OdpError::Continuation { amplitude, reason };
    for it in 0..opts.max_iterations {
        let v = field(&tail)?;
        let problem = AnnulusProblem::new(grid, &v, lambda, p)?;
        let (res, norm) = problem.residual(&u);
        let gvec = f_coefficients(&problem, &u, jm);
        let fsup = problem.dtn_field(&u).sup();
        let gmax = gvec.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm < ANNULUS_TOLERANCE && gmax < opts.f_tolerance * 1e-2 {
            let min = interior_min(grid, &u);
            if !(min > 0.0) {
                return Err(fail(format!("solution lost positivity (min {min:.3e})")));
            }
            let dtn = problem.dtn_field(&u);
            return Ok(BranchPoint {
                amplitude,
                lambda,
                field: v,
                f_residual: fsup,
                neumann_constant: dtn.neumann_constant,
                neumann_stddev: dtn.neumann_stddev,
                residual_norm: norm,
                iterations: it,
                coeffs: u,
            });
        }
        let lu = problem.jacobian_matrix(&u, false).lu()?;
        // Bordering columns: d R / d a_j for j = 2..J and d R / d lambda.
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(jm);
        let mut dg: Vec<Vec<f64>> = Vec::with_capacity(jm);
        for j in 0..jm - 1 {
            let hstep = 1e-6;
            let mut tp = tail.clone();
            tp[j] += hstep;
            let pp = AnnulusProblem::new(grid, &field(&tp)?, lambda, p)?;
            let mut tm = tail.clone();
            tm[j] -= hstep;
            let pm = AnnulusProblem::new(grid, &field(&tm)?, lambda, p)?;
            let (rp, _) = pp.residual(&u);
            let (rm, _) = pm.residual(&u);
            cols.push(rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * hstep)).collect());
            let gp = f_coefficients(&pp, &u, jm);
            let gm = f_coefficients(&pm, &u, jm);
            dg.push(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * hstep)).collect());
        }
        cols.push(problem.residual_lambda_derivative(&u));
        dg.push(vec![0.0; jm]);
        // G is linear in u: C y = G(y) - G(0) for any y.
        let g0 = f_coefficients(&problem, &vec![0.0; u.len()], jm);
        let c_apply = |y: &[f64]| -> Vec<f64> {
            f_coefficients(&problem, y, jm).iter().zip(&g0).map(|(a, b)| a - b).collect()
        };
        let y = lu.solve(&res);
        let ys: Vec<Vec<f64>> = cols.iter().map(|c| lu.solve(c)).collect();
        let cy = c_apply(&y);
        let mut schur = nalgebra::DMatrix::<f64>::zeros(jm, jm);
        for (col, yc) in ys.iter().enumerate() {
            let cyc = c_apply(yc);
            for row in 0..jm {
                schur[(row, col)] = dg[col][row] - cyc[row];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(jm, (0..jm).map(|r| -gvec[r] + cy[r]));
        let dp = schur.lu().solve(&rhs).ok_or_else(|| fail("singular bordered system".into()))?;
        let du: Vec<f64> = (0..u.len()).map(|i| -y[i] - (0..jm).map(|c| ys[c][i] * dp[c]).sum::<f64>()).collect();
        u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        tail.iter_mut().zip(dp.iter()).for_each(|(a, b)| *a += b);
        lambda += dp[jm - 1];
        if !lambda.is_finite() || tail.iter().any(|x| !x.is_finite()) {
            return Err(fail("iteration diverged".into()));
        }
    }
    Err(fail(format!("no convergence in {} iterations", opts.max_iterations)))
}

/// Branch points `F(v, lambda) = 0` with prescribed first coefficient, traced in
/// increasing amplitude from the crossing `u_star` (the radial solution at `lambda_*`).
pub fn trace_branch(grid: &AnnulusGrid, u_star: &RadialProfile, amplitudes: &[f64], opts: &BranchOptions) -> Result<Vec<BranchPoint>> {
    if opts.fourier_modes < 1 || opts.fourier_modes + 1 > grid.modes {
        return Err(OdpError::InvalidParams("perturbation modes must be fewer than the solution modes".into()));
    }
    let mut order: Vec<f64> = amplitudes.to_vec();
    order.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
    let mut points: Vec<BranchPoint> = Vec::new();
    for &a in &order {
        let guess = match points.last() {
            None => (embed_radial(grid, &u_star.values), vec![0.0; opts.fourier_modes - 1], u_star.params.lambda),
            Some(prev) => {
                let ratio = a / prev.amplitude;
                let mut u = prev.coeffs.clone();
                for i in 0..grid.radial.len() {
                    for j in 1..grid.modes {
                        u[grid.index(i, j)] *= ratio.powi(j as i32);
                    }
                }
                let tail = prev.field.fourier[1..].iter().enumerate().map(|(j, c)| c * ratio.powi(j as i32 + 2)).collect();
                let lam = u_star.params.lambda + (prev.lambda - u_star.params.lambda) * ratio * ratio;
                (u, tail, lam)
            }
        };
        match branch_newton(grid, u_star.params.p, a, guess, opts) {
            Ok(pt) => points.push(pt),
            Err(e) => {
                let last = points.last().map_or("none".to_string(), |p| format!("a = {:.3e}, lambda = {:.10}", p.amplitude, p.lambda));
                return Err(OdpError::Continuation { amplitude: a, reason: format!("{e}; last good point {last}") });
            }
        }
    }
    Ok(points)
}

/// `epsilon = lambda k^2`: the parameter after scaling `S^2(k)` to the unit sphere.
pub fn rescaled_epsilon(lambda: f64, k: f64) -> f64 {
    lambda * k * k
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaleReport {
    pub k: f64,
    pub lambda: f64,
    pub epsilon: f64,
    /// Geodesic radius of the unperturbed ball on the unit sphere.
    pub ball_radius: f64,
    /// Relative residual of the transported solution before and after Newton.
    pub residual_before: f64,
    pub residual_after: f64,
    /// `sup |F|` on the unit sphere, times `k` (the normal derivative scales by `1/k`).
    pub f_residual_scaled: f64,
    /// Largest coefficient change made by the re-solve.
    pub max_change: f64,
}

/// Transports a branch point to the unit sphere, where the domain is the
/// complement of the ball of radius `k (1 + v)` and the equation
/// `-epsilon Delta u + u - u^p = 0`, then re-solves it there.
pub fn rescale_branch_point(grid: &AnnulusGrid, point: &BranchPoint, p: f64) -> Result<RescaleReport> {
    let k = grid.radial.k();
    let intervals = grid.radial.len() - 1;
    let unit = RadialGrid::new(k, PI, 1.0, 2, intervals, true)?;
    if unit.len() != grid.radial.len() {
        return Err(OdpError::GridMismatch { expected: grid.radial.len(), got: unit.len() });
    }
    let ugrid = AnnulusGrid::new(unit, grid.n, grid.points() * grid.n, grid.modes - 1)?;
    let epsilon = rescaled_epsilon(point.lambda, k);
    let problem = AnnulusProblem::new(&ugrid, &point.field, epsilon, p)?;
    let (_, residual_before) = problem.residual(&point.coeffs);
    let (coeffs, residual_after, _) = newton(&problem, point.coeffs.clone())?;
    let f = problem.dtn_field(&coeffs);
    let max_change = coeffs.iter().zip(&point.coeffs).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(RescaleReport {
        k,
        lambda: point.lambda,
        epsilon,
        ball_radius: k,
        residual_before,
        residual_after,
        f_residual_scaled: f.sup() * k,
        max_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProblemParams;
    use crate::radial::solve_radial_from_limit;

    fn base(lambda: f64, intervals: usize) -> RadialProfile {
        solve_radial_from_limit(&ProblemParams::new(2, 3.0, 0.1, lambda).unwrap(), intervals).unwrap().0
    }

    #[test]
    fn unperturbed_metric_is_round() {
        let u = base(1.0, 200);
        let grid = annulus_grid_for(&u, 2, 64, 8).unwrap();
        let m = pullback_metric(&PerturbationField::zero(2, 4), &grid).unwrap();
        for (i, &r) in grid.radial.nodes.iter().enumerate().take(grid.radial.len() - 1) {
            let s = metric_factors(0.1, r).0;
            for q in 0..grid.points() {
                let idx = i * grid.points() + q;
                assert_eq!(m.a[idx], 1.0);
                assert_eq!(m.b[idx], 0.0);
                assert!((m.s[idx] - s).abs() < 1e-14 * s);
                assert!((m.c_rt[idx]).abs() == 0.0);
            }
        }
    }

    #[test]
    fn metric_is_round_beyond_the_band_and_periodic() {
        let u = base(1.0, 200);
        let grid = annulus_grid_for(&u, 3, 96, 8).unwrap();
        let v = PerturbationField::new(3, vec![0.05, -0.02, 0.01]).unwrap();
        let m = pullback_metric(&v, &grid).unwrap();
        for (i, &r) in grid.radial.nodes.iter().enumerate() {
            for q in 0..grid.points() {
                let idx = i * grid.points() + q;
                assert!(m.sqrt_g[idx] > 0.0 || i + 1 == grid.radial.len());
                if r >= 1.5 {
                    assert_eq!(m.a[idx], 1.0);
                    assert_eq!(m.b[idx], 0.0);
                    assert_eq!(m.s[idx], if i + 1 == grid.radial.len() { 0.0 } else { metric_factors(0.1, r).0 });
                }
            }
        }
        // A rotation by the period leaves v, hence the metric, unchanged.
        let period = 2.0 * PI / 3.0;
        for t in [0.1, 0.7, 1.3] {
            let (a, b) = (v.eval(t), v.eval(t + period));
            assert!((a.0 - b.0).abs() < 1e-15 && (a.1 - b.1).abs() < 1e-14);
        }
    }

    #[test]
    fn oversized_perturbation_is_rejected() {
        assert!(PerturbationField::new(2, vec![0.3]).is_err());
        assert!(PerturbationField::new(2, vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn jacobian_is_symmetric_and_matches_residual() {
        let u = base(1.0, 120);
        let grid = annulus_grid_for(&u, 2, 48, 5).unwrap();
        let v = PerturbationField::new(2, vec![0.04, 0.01]).unwrap();
        let prob = AnnulusProblem::new(&grid, &v, 1.0, 3.0).unwrap();
        let mut c = embed_radial(&grid, &u.values);
        for i in 1..grid.radial.len() - 1 {
            c[grid.index(i, 1)] = 0.01 * (grid.radial.nodes[i] - 1.0).min(1.0);
        }
        let raw = prob.jacobian_matrix(&c, true);
        assert!(raw.asymmetry() < 1e-12 * raw.max_abs(), "{}", raw.asymmetry() / raw.max_abs());
        let jm = prob.jacobian_matrix(&c, false);
        let dir: Vec<f64> = (0..c.len()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 1e-3).collect();
        let h = 1e-6;
        let cp: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let cm: Vec<f64> = c.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let (rp, _) = prob.residual(&cp);
        let (rm, _) = prob.residual(&cm);
        let jd = jm.matvec(&dir);
        let worst = rp.iter().zip(&rm).zip(&jd).map(|((a, b), j)| ((a - b) / (2.0 * h) - j).abs()).fold(0.0, f64::max);
        let size = jd.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        assert!(worst < 1e-7 * size, "{worst} vs {size}");
    }

    #[test]
    fn zero_perturbation_returns_the_radial_solution() {
        let u = base(1.0, 200);
        let grid = annulus_grid_for(&u, 2, 64, 8).unwrap();
        let (sol, f) = nonlinear_dtn_f(&PerturbationField::zero(2, 3), &grid, &u).unwrap();
        let diff = (0..grid.radial.len())
            .flat_map(|i| (0..grid.modes).map(move |j| (i, j)))
            .map(|(i, j)| (sol.coeffs[grid.index(i, j)] - if j == 0 { u.values[i] } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
        assert!(f.sup() < 1e-10);
        assert!((f.neumann_constant - u.du_at_1).abs() < 1e-10);
    }

    #[test]
    fn response_is_dihedral_and_mean_free() {
        let u = base(1.0, 200);
        let grid = annulus_grid_for(&u, 2, 64, 8).unwrap();
        let v = PerturbationField::new(2, vec![1e-3]).unwrap();
        let (sol, f) = nonlinear_dtn_f(&v, &grid, &u).unwrap();
        assert!(sol.residual_norm < 1e-12);
        let ds = pullback_metric(&v, &grid).unwrap().ds;
        let mean: f64 = f.values.iter().zip(&ds).map(|(a, b)| a * b).sum::<f64>() / ds.iter().sum::<f64>();
        assert!(mean.abs() < 1e-14);
        // Reflection theta -> -theta: samples m and M - m agree.
        let mp = grid.points();
        for m in 1..mp {
            assert!((f.values[m] - f.values[mp - m]).abs() < 1e-13);
        }
    }
}
