//! The linearized Dirichlet-to-Neumann operator `H_{k,lambda}` per harmonic degree.
//!
//! For boundary datum `v = xi_l` (a degree-`l` harmonic) the interior extension is
//! `psi_l(r) xi_l` with `psi_l(1) = 1`, and `H v = h_l v` with
//! `h_l = -psi_l'(1) - (d-1) k / tan k`. The normal points out of the domain,
//! i.e. along `-d/dr` on the inner sphere; the identity
//! `lambda S_k(1)^{d-1} h_l = Q^l(psi_l)` anchors that orientation.

use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};
use crate::geometry::{mean_curvature, metric_factors, sphere_eigen, AngularRule, RadialGrid, SymmetryGroup, ANNULUS_CUTOFF_MAX_SLOPE};
use crate::modeop::{linearized_potential, ModeOperator, NEAR_SINGULAR_COND};
use crate::radial::RadialProfile;
use crate::spectrum::PrincipalPair;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSpectrumEntry {
    pub l: usize,
    pub mu: f64,
    pub mult: usize,
    pub h: f64,
    /// `psi_l(1) = 1`; zero at the pole for `l >= 1`.
    #[serde(skip)]
    pub psi: Vec<f64>,
    pub cond: f64,
    /// `h` came from the Steklov route because the direct solve was near singular.
    pub steklov: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// Largest relative gap between `lambda S(1)^{d-1} h_l` and `Q^l(psi_l)`.
    pub form_vs_dtn: f64,
    /// Largest relative interior residual of the mode solves.
    pub interior: f64,
    /// Weighted inner product of the multi-mode field against `z`.
    pub orthogonality_z: f64,
    /// Mean of the normal derivative over the inner sphere.
    pub mean_flux: f64,
    /// Boundary Green identity against the radial auxiliary profile.
    pub green: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DtnReport {
    pub k: f64,
    pub lambda: f64,
    pub entries: Vec<ModeSpectrumEntry>,
    pub sigma1: f64,
    pub sigma1_degree: usize,
    /// Sum of multiplicities of the negative DtN values.
    pub index: usize,
    pub identity_residuals: IdentityResiduals,
    /// Radial solution of the linearized equation with unit boundary value.
    #[serde(skip)]
    pub theta: Vec<f64>,
}

/// `(d-1) k / tan k`, the mean curvature of the inner sphere; `d-1` in the flat limit.
pub fn curvature_constant(k: f64, d: usize) -> Result<f64> {
    if k == 0.0 {
        return Ok(d as f64 - 1.0);
    }
    mean_curvature(k, d)
}

fn mode_operator(u: &RadialProfile, l: usize) -> Result<ModeOperator> {
    let pot = linearized_potential(&u.values, u.params.p);
    ModeOperator::assemble(&u.grid, u.params.lambda, &pot, sphere_eigen(l, u.params.d).0, None)
}

/// Solution of a mode boundary-value problem.
#[derive(Debug, Clone)]
pub struct ModeSolve {
    pub psi: Vec<f64>,
    /// `-psi'(1)` from the weak residual at the boundary node.
    pub flux: f64,
    pub cond: f64,
}

/// Mode-`l` linearized equation with `psi(1) = 1`; fails when the Dirichlet block is
/// near singular, in which case [`steklov_dtn_value`] is the fallback.
pub fn solve_mode_bvp(u: &RadialProfile, l: usize) -> Result<ModeSolve> {
    let op = mode_operator(u, l)?;
    let cond = op.condition_estimate()?;
    if cond > NEAR_SINGULAR_COND {
        return Err(OdpError::NearSingular { degree: l, cond });
    }
    let bs = op.boundary_solve()?;
    Ok(ModeSolve { psi: bs.psi, flux: bs.flux, cond })
}

pub fn dtn_eigenvalue(u: &RadialProfile, l: usize) -> Result<f64> {
    Ok(solve_mode_bvp(u, l)?.flux - curvature_constant(u.params.k, u.params.d)?)
}

/// DtN value from the Steklov pencil; insensitive to Dirichlet degeneracy.
pub fn steklov_dtn_value(u: &RadialProfile, l: usize) -> Result<f64> {
    Ok(mode_operator(u, l)?.steklov_flux()? - curvature_constant(u.params.k, u.params.d)?)
}

/// `Q^l(phi)`: the weighted energy of degree `l` minus `lambda c S_k(1)^{d-1} phi(1)^2`,
/// with the angular factor normalized away.
pub fn quadratic_form_q(phi: &[f64], u: &RadialProfile, l: usize) -> Result<f64> {
    if phi.len() != u.grid.len() {
        return Err(OdpError::GridMismatch { expected: u.grid.len(), got: phi.len() });
    }
    let op = mode_operator(u, l)?;
    let c = curvature_constant(u.params.k, u.params.d)?;
    Ok(op.energy(phi) - c * op.boundary_weight * phi[0] * phi[0])
}

/// Largest `|(A psi)_i| / sum_j |a_ij psi_j|` over the rows where the equation holds.
pub fn interior_residual(u: &RadialProfile, l: usize, psi: &[f64]) -> Result<f64> {
    let op = mode_operator(u, l)?;
    let mut worst: f64 = 0.0;
    for i in op.free_range() {
        let row = op.matrix.row_range(i);
        let size: f64 = row.clone().map(|j| (op.matrix.get(i, j) * psi[j]).abs()).sum();
        if size > 0.0 {
            worst = worst.max(op.apply_row(i, psi).abs() / size);
        }
    }
    Ok(worst)
}

/// `|lambda S(1)^{d-1} h - Q(psi)|` relative to the size of the two terms of `Q`
/// (energy and boundary term); a plain relative gap is meaningless when `h = 0`.
pub fn form_gap(u: &RadialProfile, sol: &ModeSolve, h: f64, q: f64) -> f64 {
    let bw = u.params.lambda * u.grid.s_pow_at(0, u.params.d as i32 - 1);
    let c = h - sol.flux;
    (bw * h - q).abs() / (bw * (sol.flux.abs() + c.abs()))
}

/// Radial auxiliary profile: linearized equation with unit boundary value.
pub fn theta_profile(u: &RadialProfile) -> Result<ModeSolve> {
    solve_mode_bvp(u, 0)
}

/// Identity residuals for the multi-mode field `sum_l psi_l xi_l` (unit coefficients).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Orthogonality {
    pub res1: f64,
    pub res2: f64,
    pub green: f64,
}

/// `int psi z`, `int_{dB} d_nu psi` and `int_{dB} (d_nu psi theta - d_nu theta psi)`,
/// each relative to the matching absolute integral, by tensor quadrature.
pub fn orthogonality_check(
    u: &RadialProfile,
    modes: &[(usize, &ModeSolve)],
    z: &PrincipalPair,
    theta: &ModeSolve,
) -> Result<Orthogonality> {
    if modes.iter().any(|(l, _)| *l == 0) {
        return Err(OdpError::InvalidParams("orthogonality needs degrees l >= 1".into()));
    }
    let rule = AngularRule::new(u.params.d, 64);
    let grid = &u.grid;
    let field = |i: usize, t: f64| modes.iter().map(|(l, s)| s.psi[i] * rule.harmonic(*l, t)).sum::<f64>();
    let (mut inner, mut inner_abs) = (0.0, 0.0);
    for (i, w) in grid.quad_weights.iter().enumerate() {
        for (&t, wt) in rule.angles.iter().zip(&rule.weights) {
            let v = w * wt * field(i, t) * z.z[i];
            inner += v;
            inner_abs += v.abs();
        }
    }
    // d_nu = -d/dr, so d_nu psi_l = flux_l on the boundary.
    let normal = |t: f64| modes.iter().map(|(l, s)| s.flux * rule.harmonic(*l, t)).sum::<f64>();
    let flux_mean = rule.integrate(normal);
    let flux_abs = rule.integrate(|t| normal(t).abs());
    let green = rule.integrate(|t| normal(t) * theta.psi[0] - theta.flux * field(0, t));
    let green_abs = rule.integrate(|t| (normal(t) * theta.psi[0]).abs() + (theta.flux * field(0, t)).abs());
    let rel = |a: f64, b: f64| if b > 0.0 { a.abs() / b } else { a.abs() };
    Ok(Orthogonality { res1: rel(inner, inner_abs), res2: rel(flux_mean, flux_abs), green: rel(green, green_abs) })
}

/// Per-mode DtN table over the allowed degrees with identity checks.
pub fn dtn_report(u: &RadialProfile, group: &SymmetryGroup, z: &PrincipalPair) -> Result<DtnReport> {
    group.validate()?;
    let (k, d) = (u.params.k, u.params.d);
    let c = curvature_constant(k, d)?;
    let theta = theta_profile(u)?;
    let mut entries = Vec::new();
    let mut res = IdentityResiduals::default();
    let mut solved = Vec::new();
    for m in &group.allowed_modes {
        let mu = sphere_eigen(m.degree, d).0;
        match solve_mode_bvp(u, m.degree) {
            Ok(sol) => {
                let h = sol.flux - c;
                let q = quadratic_form_q(&sol.psi, u, m.degree)?;
                res.form_vs_dtn = res.form_vs_dtn.max(form_gap(u, &sol, h, q));
                res.interior = res.interior.max(interior_residual(u, m.degree, &sol.psi)?);
                entries.push(ModeSpectrumEntry { l: m.degree, mu, mult: m.mult, h, psi: sol.psi.clone(), cond: sol.cond, steklov: false });
                solved.push((m.degree, sol));
            }
            Err(OdpError::NearSingular { cond, .. }) => {
                let h = steklov_dtn_value(u, m.degree)?;
                entries.push(ModeSpectrumEntry { l: m.degree, mu, mult: m.mult, h, psi: Vec::new(), cond, steklov: true });
            }
            Err(e) => return Err(e),
        }
    }
    let refs: Vec<(usize, &ModeSolve)> = solved.iter().map(|(l, s)| (*l, s)).collect();
    if !refs.is_empty() {
        let o = orthogonality_check(u, &refs, z, &theta)?;
        res.orthogonality_z = o.res1;
        res.mean_flux = o.res2;
        res.green = o.green;
    }
    let (sigma1_degree, sigma1) =
        entries.iter().fold((0, f64::INFINITY), |best, e| if e.h < best.1 { (e.l, e.h) } else { best });
    let index = entries.iter().filter(|e| e.h < 0.0).map(|e| e.mult).sum();
    Ok(DtnReport { k, lambda: u.params.lambda, entries, sigma1, sigma1_degree, index, identity_residuals: res, theta: theta.psi })
}

/// Constant of the trace inequality from the vector field `chi(r) d/dr`:
/// `max |chi'| + (d-1) max_{[1, 3/2]} |C_k / S_k|`.
pub fn trace_constant(k: f64, d: usize) -> f64 {
    let worst = (0..=200)
        .map(|j| {
            let r = 1.0 + 0.5 * j as f64 / 200.0;
            let (s, c) = if k == 0.0 { (r, 1.0) } else { metric_factors(k, r) };
            (c / s).abs()
        })
        .fold(0.0, f64::max);
    ANNULUS_CUTOFF_MAX_SLOPE + (d as f64 - 1.0) * worst
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceCheck {
    /// `||psi||^2_{L^2(dB_1)}` per unit angular norm.
    pub boundary: f64,
    pub grad: f64,
    pub l2: f64,
    pub bound: f64,
}

impl TraceCheck {
    pub fn holds(&self) -> bool {
        self.boundary <= self.bound
    }
}

/// Both sides of `||psi||^2_{dB} <= 2 ||grad psi|| ||psi|| + C ||psi||^2` for the
/// field `psi(r) xi` with `xi` a unit degree-`mu` harmonic.
pub fn trace_check(grid: &RadialGrid, psi: &[f64], mu: f64) -> Result<TraceCheck> {
    if psi.len() != grid.len() {
        return Err(OdpError::GridMismatch { expected: grid.len(), got: psi.len() });
    }
    let d = grid.d() as i32;
    let sq: Vec<f64> = psi.iter().map(|v| v * v).collect();
    let l2 = grid.integrate(&sq);
    let angular: f64 = if mu > 0.0 { grid.weights_pow(d - 3).iter().zip(&sq).map(|(w, v)| w * v).sum() } else { 0.0 };
    let grad = (grid.h1_squared(psi) - l2 + mu * angular).max(0.0).sqrt();
    let l2 = l2.sqrt();
    let boundary = grid.s_pow_at(0, d - 1) * psi[0] * psi[0];
    let bound = 2.0 * grad * l2 + trace_constant(grid.k(), grid.d()) * l2 * l2;
    Ok(TraceCheck { boundary, grad, l2, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProblemParams;
    use crate::radial::solve_radial_from_limit;
    use crate::spectrum::principal_dirichlet_pair;
    use proptest::prelude::*;
    use std::f64::consts::PI as PI_F;

    fn profile() -> RadialProfile {
        let params = ProblemParams::new(2, 3.0, 0.1, 1.0).unwrap();
        solve_radial_from_limit(&params, 1000).unwrap().0
    }

    #[test]
    fn dtn_value_matches_quadratic_form_and_steklov() {
        let u = profile();
        for l in 1..=6 {
            let sol = solve_mode_bvp(&u, l).unwrap();
            let h = dtn_eigenvalue(&u, l).unwrap();
            let q = quadratic_form_q(&sol.psi, &u, l).unwrap();
            assert!(form_gap(&u, &sol, h, q) < 1e-8, "l {l}: {h} vs {q}");
            let st = steklov_dtn_value(&u, l).unwrap();
            assert!((st - h).abs() < 1e-6 * (1.0 + h.abs()), "l {l}: {st} vs {h}");
            assert!(interior_residual(&u, l, &sol.psi).unwrap() < 1e-10);
            assert_eq!(sol.psi[0], 1.0);
            assert_eq!(*sol.psi.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn degree_zero_solve_is_the_auxiliary_profile() {
        let u = profile();
        let theta = theta_profile(&u).unwrap();
        let direct = solve_mode_bvp(&u, 0).unwrap();
        assert_eq!(theta.psi, direct.psi);
        assert_eq!(theta.psi[0], 1.0);
    }

    #[test]
    fn form_of_the_solution_is_the_dirichlet_identity() {
        let u = profile();
        let q = quadratic_form_q(&u.values, &u, 0).unwrap();
        let target = -(u.params.p - 1.0) * u.power_integral();
        assert!(((q - target) / target).abs() < 1e-8);
        assert_eq!(quadratic_form_q(&vec![0.0; u.grid.len()], &u, 3).unwrap(), 0.0);
    }

    #[test]
    fn multi_mode_identities_vanish() {
        let u = profile();
        let z = principal_dirichlet_pair(&u).unwrap();
        let theta = theta_profile(&u).unwrap();
        let sols: Vec<(usize, ModeSolve)> = (1..=6).map(|l| (l, solve_mode_bvp(&u, l).unwrap())).collect();
        let refs: Vec<(usize, &ModeSolve)> = sols.iter().map(|(l, s)| (*l, s)).collect();
        let o = orthogonality_check(&u, &refs, &z, &theta).unwrap();
        assert!(o.res1 < 1e-10 && o.res2 < 1e-10 && o.green < 1e-10, "{o:?}");
    }

    #[test]
    fn additivity_over_distinct_modes() {
        // Full form of psi_a cos(a t) + psi_b cos(b t) by tensor quadrature on the circle.
        let u = profile();
        let (a, b) = (2usize, 5usize);
        let sa = solve_mode_bvp(&u, a).unwrap().psi;
        let sb = solve_mode_bvp(&u, b).unwrap().psi;
        let rule = AngularRule::new(2, 64);
        let op0 = mode_operator(&u, 0).unwrap();
        let ang = u.grid.weights_pow(-1);
        let c = curvature_constant(u.params.k, 2).unwrap();
        let lam = u.params.lambda;
        let mut total = 0.0;
        for (&t, w) in rule.angles.iter().zip(&rule.weights) {
            let (ca, cb) = ((a as f64 * t).cos(), (b as f64 * t).cos());
            let (da, db) = (-(a as f64) * (a as f64 * t).sin(), -(b as f64) * (b as f64 * t).sin());
            let f: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x * ca + y * cb).collect();
            let g: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x * da + y * db).collect();
            let radial = op0.energy(&f);
            let angular: f64 = lam * ang.iter().zip(&g).map(|(m, v)| m * v * v).sum::<f64>();
            total += w * (radial + angular - c * op0.boundary_weight * f[0] * f[0]);
        }
        let qa = quadratic_form_q(&sa, &u, a).unwrap();
        let qb = quadratic_form_q(&sb, &u, b).unwrap();
        let expected = PI_F * (qa + qb);
        assert!((total - expected).abs() < 1e-10 * (PI_F * (qa.abs() + qb.abs())), "{total} vs {expected}");
    }

    #[test]
    fn mode_profiles_decay_toward_the_pole() {
        let u = profile();
        for l in 1..=6 {
            let psi = solve_mode_bvp(&u, l).unwrap().psi;
            let tail = &psi[psi.len() * 3 / 4..];
            assert!(tail.windows(2).all(|w| w[1].abs() <= w[0].abs() + 1e-14));
        }
    }

    #[test]
    fn trace_inequality_for_mode_profiles() {
        let u = profile();
        for l in 1..=6 {
            let psi = solve_mode_bvp(&u, l).unwrap().psi;
            let tc = trace_check(&u.grid, &psi, sphere_eigen(l, 2).0).unwrap();
            assert!(tc.holds(), "l {l}: {tc:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn trace_inequality_for_smooth_profiles(a in 0.2f64..3.0, b in -2.0f64..2.0, w in 0.5f64..6.0, l in 0usize..5) {
            let grid = RadialGrid::sphere(0.1, 2, 400).unwrap();
            let end = grid.r_end();
            let psi = grid.sample(|r| {
                let t = r - 1.0;
                ((-a * t).exp() * (1.0 + b * (w * t).sin())) * (1.0 - (r / end).powi(2))
            });
            let tc = trace_check(&grid, &psi, sphere_eigen(l, 2).0).unwrap();
            prop_assert!(tc.holds());
        }
    }
}
