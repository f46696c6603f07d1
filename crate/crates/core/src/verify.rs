//! Acceptance suite at the reference configuration: `d = 2`, `p = 3`, dihedral
//! symmetry of order 2, `k = 0.01`.
//!
//! Every threshold is a named constant below. Regression constants were frozen
//! from validated runs on the default grids and only guard against drift.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use std::time::Instant;

use crate::annulus2d::{
    annulus_grid_for, jacobian_check, rescale_branch_point, trace_branch, AnnulusGrid, BranchOptions, BranchPoint,
};
use crate::bifurcate::{certify, find_lambda_star, parity_certificate, BifurcationCertificate, ROOT_TOLERANCE};
use crate::dtn::{
    dtn_eigenvalue, form_gap, orthogonality_check, quadratic_form_q, solve_mode_bvp, theta_profile, trace_check,
    ModeSolve,
};
use crate::error::{OdpError, Result};
use crate::exterior::{select_window, Window};
use crate::geometry::{sphere_eigen, ProblemParams, SymmetryGroup, DEFAULT_MAX_DEGREE};
use crate::radial::{convergence_study, solve_radial_any, solve_radial_from_limit, RadialProfile};
use crate::spectrum::{principal_dirichlet_pair, DirichletModeOperator};

/// Radial Newton residual (componentwise relative).
pub const RADIAL_RESIDUAL: f64 = 1e-10;
/// Wall-clock budget of the nine radial solves.
pub const RADIAL_BUDGET_SECONDS: f64 = 10.0;
/// `||u_k - u_tilde||_k` at `k = 0.025`, `lambda = 1`, 2000 intervals, with 10% headroom.
pub const CONVERGENCE_REGRESSION: f64 = 1.1 * 4.7872e-3;
/// Identities that hold exactly for the discrete operators up to rounding.
pub const ENERGY_IDENTITY: f64 = 1e-8;
pub const DENSE_ORACLE: f64 = 1e-9;
pub const DENSE_ORACLE_INTERVALS: usize = 400;
pub const ORTHOGONALITY: f64 = 1e-10;
pub const FORM_IDENTITY: f64 = 1e-8;
/// Grid-doubling change of `lambda_*`.
pub const GRID_DOUBLING: f64 = 1e-6;
pub const CERTIFICATE_BUDGET_SECONDS: f64 = 60.0;
/// `lambda_*(0.01)` on 2000 intervals.
pub const LAMBDA_STAR_REGRESSION: f64 = 398.842_463_387_8;
pub const LAMBDA_STAR_DRIFT: f64 = 1e-6;
/// Minimum observed order of the central-difference error and its final value.
pub const JACOBIAN_ORDER: f64 = 1.9;
pub const JACOBIAN_ERROR: f64 = 1e-4;
/// `eps` sequences per Fourier mode. The degree-2 Dirichlet eigenvalue is ~1e-4 on
/// the window, so the response of mode 1 is quadratic in `eps` with a coefficient
/// ~1e7 and its differences must stay in the `1e-6` range.
pub const JACOBIAN_EPS_MODE1: [f64; 3] = [4e-6, 2e-6, 1e-6];
pub const JACOBIAN_EPS_MODE2: [f64; 3] = [1e-2, 5e-3, 2.5e-3];
pub const BRANCH_AMPLITUDES: [f64; 4] = [1e-3, 2e-3, 4e-3, 8e-3];
pub const BRANCH_F_RESIDUAL: f64 = 1e-8;
pub const NEUMANN_SPREAD: f64 = 1e-6;
pub const BRANCH_BUDGET_SECONDS: f64 = 300.0;
pub const TRACE_RANDOM_PROFILES: usize = 20;
pub const TRACE_SEED: u64 = 0x5eed_0d9;
pub const RESCALE_RESIDUAL: f64 = 1e-8;
/// Degrees probed by the per-mode identities.
pub const PROBE_DEGREES: std::ops::RangeInclusive<usize> = 1..=6;

/// Grids and parameters of the suite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Reference {
    pub d: usize,
    pub p: f64,
    pub n: usize,
    pub k: f64,
    pub intervals: usize,
    /// Radial node gaps of the two-dimensional annulus solves.
    pub annulus_intervals: usize,
    pub theta_points: usize,
    pub solution_modes: usize,
}

impl Default for Reference {
    fn default() -> Self {
        Reference {
            d: 2,
            p: 3.0,
            n: 2,
            k: 0.01,
            intervals: 2000,
            annulus_intervals: 480,
            theta_points: 256,
            solution_modes: 16,
        }
    }
}

impl Reference {
    pub fn params(&self, lambda: f64) -> Result<ProblemParams> {
        ProblemParams::new(self.d, self.p, self.k, lambda)
    }

    pub fn group(&self) -> Result<SymmetryGroup> {
        SymmetryGroup::dihedral(self.n, self.d, DEFAULT_MAX_DEGREE)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {:<28} {:>7.2}s  {}", self.id, self.name, self.seconds, self.detail)
    }
}

/// Pass/fail plus a one-line account of the measured values.
struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn strictly_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] < w[1])
}

/// Certificate and solutions shared by the criteria.
pub struct Suite {
    pub reference: Reference,
    pub limit: Window,
    pub window: Window,
    pub certificate: BifurcationCertificate,
    /// Limit window plus certificate, in seconds.
    pub certify_seconds: f64,
    pub u_star: RadialProfile,
    branch: OnceLock<Result<(AnnulusGrid, Vec<BranchPoint>, f64)>>,
}

impl Suite {
    pub fn prepare(reference: Reference) -> Result<Self> {
        let group = reference.group()?;
        let start = Instant::now();
        let base = reference.params(1.0)?;
        let limit = select_window(&base, &group)?;
        let (window, certificate) = certify(&base, &group, &limit, reference.intervals)?;
        let certify_seconds = start.elapsed().as_secs_f64();
        let u_star = solve_radial_from_limit(&base.with_lambda(certificate.lambda_star), reference.intervals)?.0;
        Ok(Suite { reference, limit, window, certificate, certify_seconds, u_star, branch: OnceLock::new() })
    }

    pub fn criteria() -> Vec<(usize, &'static str)> {
        vec![
            (1, "radial residual"),
            (2, "k -> 0 convergence"),
            (3, "Dirichlet energy identity"),
            (4, "principal pair"),
            (5, "orthogonality identities"),
            (6, "sigma_1 / Q identity"),
            (7, "mode monotonicity"),
            (8, "lambda_* certificate"),
            (9, "linearization"),
            (10, "branch"),
            (11, "trace inequality"),
            (12, "rescaling"),
        ]
    }

    pub fn run(&self, id: usize) -> CriterionReport {
        let name = Self::criteria().into_iter().find(|c| c.0 == id).map_or("unknown", |c| c.1).to_string();
        let start = Instant::now();
        let result = match id {
            1 => self.radial_residual(),
            2 => self.convergence(),
            3 => self.energy_identity(),
            4 => self.principal_pair(),
            5 => self.orthogonality(),
            6 => self.form_identity(),
            7 => self.monotonicity(),
            8 => self.certificate_checks(),
            9 => self.linearization(),
            10 => self.branch_checks(),
            11 => self.trace_inequality(),
            12 => self.rescaling(),
            _ => Err(OdpError::InvalidParams(format!("no criterion {id}"))),
        };
        let seconds = start.elapsed().as_secs_f64();
        let (passed, detail) = match result {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        CriterionReport { id, name, passed, detail, seconds }
    }

    pub fn run_all(&self) -> Vec<CriterionReport> {
        Self::criteria().into_iter().map(|(id, _)| self.run(id)).collect()
    }

    fn params(&self, lambda: f64) -> Result<ProblemParams> {
        self.reference.params(lambda)
    }

    fn radial_residual(&self) -> Result<Outcome> {
        let (l0, l1) = (self.limit.lambda0, self.limit.lambda1);
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let mut positive = true;
        for k in [0.2, 0.1, 0.05] {
            for lambda in [l0, 0.5 * (l0 + l1), l1] {
                let u = solve_radial_any(&self.params(lambda)?.with_k(k), self.reference.intervals)?;
                worst = worst.max(u.residual_norm);
                positive &= u.interior_min() > 0.0;
            }
        }
        let seconds = start.elapsed().as_secs_f64();
        outcome(
            worst < RADIAL_RESIDUAL && positive && seconds < RADIAL_BUDGET_SECONDS,
            format!("max residual {worst:.2e} over 9 solves on [{l0:.4}, {l1:.4}], {seconds:.2}s"),
        )
    }

    fn convergence(&self) -> Result<Outcome> {
        let rows = convergence_study(&self.params(1.0)?, &[0.2, 0.1, 0.05, 0.025], self.reference.intervals)?;
        let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
        let last = *errors.last().unwrap_or(&f64::INFINITY);
        let shown: Vec<String> = errors.iter().map(|e| format!("{e:.4e}")).collect();
        outcome(
            decreasing && last < CONVERGENCE_REGRESSION,
            format!("errors [{}], regression bound {CONVERGENCE_REGRESSION:.4e}", shown.join(", ")),
        )
    }

    fn energy_identity(&self) -> Result<Outcome> {
        let u = &self.u_star;
        let q = DirichletModeOperator::new(u, 0)?.op.energy(&u.values);
        let target = (u.params.p - 1.0) * u.power_integral();
        let rel = (q + target).abs() / target.abs();
        outcome(rel < ENERGY_IDENTITY, format!("Q^D(u) = {q:.6e}, relative gap {rel:.2e}"))
    }

    fn principal_pair(&self) -> Result<Outcome> {
        let pair = principal_dirichlet_pair(&self.u_star)?;
        let morse = DirichletModeOperator::new(&self.u_star, 0)?.op.dirichlet_count_below(0.0);
        let coarse = solve_radial_from_limit(&self.u_star.params, DENSE_ORACLE_INTERVALS)?.0;
        let banded = principal_dirichlet_pair(&coarse)?;
        let dense = dense_radial_eigenvalues(&coarse)?;
        let gap = (banded.tau - dense[0]).abs().max((banded.second - dense[1]).abs());
        outcome(
            pair.tau < 0.0 && pair.second > 0.0 && morse == 1 && gap < DENSE_ORACLE,
            format!(
                "tau {:.6e}, second {:.6e}, Morse index {morse}, dense gap {gap:.2e} at N = {DENSE_ORACLE_INTERVALS}",
                pair.tau, pair.second
            ),
        )
    }

    fn mode_solves(&self) -> Result<Vec<(usize, ModeSolve)>> {
        PROBE_DEGREES.map(|l| Ok((l, solve_mode_bvp(&self.u_star, l)?))).collect()
    }

    fn orthogonality(&self) -> Result<Outcome> {
        let z = principal_dirichlet_pair(&self.u_star)?;
        let theta = theta_profile(&self.u_star)?;
        let solves = self.mode_solves()?;
        let (mut r1, mut r2): (f64, f64) = (0.0, 0.0);
        for (l, s) in &solves {
            let o = orthogonality_check(&self.u_star, &[(*l, s)], &z, &theta)?;
            r1 = r1.max(o.res1);
            r2 = r2.max(o.res2);
        }
        let refs: Vec<(usize, &ModeSolve)> = solves.iter().map(|(l, s)| (*l, s)).collect();
        let joint = orthogonality_check(&self.u_star, &refs, &z, &theta)?;
        r1 = r1.max(joint.res1);
        r2 = r2.max(joint.res2);
        outcome(
            r1 < ORTHOGONALITY && r2 < ORTHOGONALITY,
            format!("max residuals {r1:.2e} (against z), {r2:.2e} (mean flux) over l = 1..6 and their sum"),
        )
    }

    fn form_identity(&self) -> Result<Outcome> {
        let mut worst: f64 = 0.0;
        for (l, s) in self.mode_solves()? {
            let h = dtn_eigenvalue(&self.u_star, l)?;
            let q = quadratic_form_q(&s.psi, &self.u_star, l)?;
            worst = worst.max(form_gap(&self.u_star, &s, h, q));
        }
        outcome(worst < FORM_IDENTITY, format!("max relative gap {worst:.2e} over l = 1..6"))
    }

    /// Degree 1 is the rotation kernel (`h_1 = 0`) and sits above the kernel
    /// degree while `h_2 < 0`; the full ordering from degree 1 is checked where
    /// `h_2 > 0`, the ordering from degree 2 across the whole window.
    fn monotonicity(&self) -> Result<Outcome> {
        let (l0, l1) = self.window_bounds();
        let star = self.certificate.lambda_star;
        let across: Vec<f64> = (0..5).map(|i| l0 + (l1 - l0) * i as f64 / 4.0).collect();
        let above: Vec<f64> = (1..=5).map(|i| star + (l1 - star) * i as f64 / 5.0).collect();
        let table = |lambda: f64| -> Result<Vec<f64>> {
            let u = solve_radial_from_limit(&self.params(lambda)?, self.reference.intervals)?.0;
            PROBE_DEGREES.map(|l| dtn_eigenvalue(&u, l)).collect()
        };
        let mut ok = true;
        let mut worst_h1: f64 = 0.0;
        for &lambda in &across {
            let h = table(lambda)?;
            ok &= strictly_increasing(&h[1..]);
            worst_h1 = worst_h1.max(h[0].abs());
        }
        for &lambda in &above {
            ok &= strictly_increasing(&table(lambda)?);
        }
        outcome(
            ok,
            format!("h_2 < .. < h_6 at 5 window samples, h_1 < .. < h_6 at 5 samples above lambda_*; max |h_1| {worst_h1:.1e}"),
        )
    }

    fn window_bounds(&self) -> (f64, f64) {
        self.certificate.window
    }

    fn certificate_checks(&self) -> Result<Outcome> {
        let c = &self.certificate;
        let (l0, l1) = c.window;
        let group = self.reference.group()?;
        let doubled = find_lambda_star(&self.params(1.0)?, &group, &self.window, 2 * self.reference.intervals)?;
        let shift = (doubled.lambda_star - c.lambda_star).abs();
        let drift = (c.lambda_star - LAMBDA_STAR_REGRESSION).abs();
        let parity = parity_certificate(c, ROOT_TOLERANCE);
        let jump = c.index_below as i64 - c.index_above as i64;
        let passed = l0 < c.lambda_star
            && c.lambda_star < l1
            && c.h_at_star.abs() < ROOT_TOLERANCE
            && c.sigma1_below < 0.0
            && c.sigma1_above > 0.0
            && jump == 1
            && parity.holds
            && shift < GRID_DOUBLING
            && drift < LAMBDA_STAR_DRIFT
            && self.certify_seconds < CERTIFICATE_BUDGET_SECONDS;
        outcome(
            passed,
            format!(
                "lambda_* {:.10} in [{l0:.6}, {l1:.6}], h {:.1e}, sigma_1 {:.2e} -> {:.2e}, index {} -> {}, doubling {shift:.1e}, {:.1}s",
                c.lambda_star, c.h_at_star, c.sigma1_below, c.sigma1_above, c.index_below, c.index_above, self.certify_seconds
            ),
        )
    }

    /// At `lambda_0`: at `lambda_*` the kernel degree has `h = 0` and the relative
    /// error is undefined.
    fn linearization(&self) -> Result<Outcome> {
        let r = &self.reference;
        let u = solve_radial_from_limit(&self.params(self.certificate.window.0)?, r.annulus_intervals)?.0;
        let grid = annulus_grid_for(&u, r.n, r.theta_points, r.solution_modes)?;
        let mut ok = true;
        let mut parts = Vec::new();
        for (mode, eps) in [(1, &JACOBIAN_EPS_MODE1), (2, &JACOBIAN_EPS_MODE2)] {
            let check = jacobian_check(&grid, &u, mode, eps)?;
            let last = check.rows.last().map_or(f64::INFINITY, |row| row.error);
            ok &= check.observed_order >= JACOBIAN_ORDER && last < JACOBIAN_ERROR;
            parts.push(format!("mode {mode}: order {:.3}, error {last:.2e}", check.observed_order));
        }
        outcome(ok, parts.join("; "))
    }

    /// Traced once, shared by the branch and rescaling criteria.
    fn branch(&self) -> Result<&(AnnulusGrid, Vec<BranchPoint>, f64)> {
        self.branch
            .get_or_init(|| {
                let r = &self.reference;
                let start = Instant::now();
                let u = solve_radial_from_limit(&self.params(self.certificate.lambda_star)?, r.annulus_intervals)?.0;
                let grid = annulus_grid_for(&u, r.n, r.theta_points, r.solution_modes)?;
                let points = trace_branch(&grid, &u, &BRANCH_AMPLITUDES, &BranchOptions::default())?;
                Ok((grid, points, start.elapsed().as_secs_f64()))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn branch_checks(&self) -> Result<Outcome> {
        let (_, points, seconds) = self.branch()?;
        let star = self.certificate.lambda_star;
        let period = 2.0 * std::f64::consts::PI / self.reference.n as f64;
        let mut ok = points.len() == BRANCH_AMPLITUDES.len();
        for pt in points {
            let spread = pt.neumann_stddev / pt.neumann_constant.abs();
            let symmetric = (0..16).all(|i| {
                let t = 0.1 + 0.37 * i as f64;
                let v = pt.field.eval(t).0;
                (v - pt.field.eval(-t).0).abs() < 1e-14 && (v - pt.field.eval(t + period).0).abs() < 1e-14
            });
            let nonconstant = pt.field.amplitude() != 0.0;
            ok &= pt.f_residual < BRANCH_F_RESIDUAL && spread < NEUMANN_SPREAD && symmetric && nonconstant;
        }
        let offsets: Vec<f64> = points.iter().map(|p| (p.lambda - star).abs()).collect();
        ok &= strictly_increasing(&offsets) && *seconds < BRANCH_BUDGET_SECONDS;
        let worst_f = points.iter().map(|p| p.f_residual).fold(0.0_f64, f64::max);
        let worst_s = points.iter().map(|p| p.neumann_stddev / p.neumann_constant.abs()).fold(0.0_f64, f64::max);
        let shown: Vec<String> = points.iter().map(|p| format!("{:.4}", p.lambda - star)).collect();
        outcome(
            ok,
            format!(
                "lambda - lambda_* [{}], max |F| {worst_f:.1e}, max spread {worst_s:.1e}, {seconds:.1}s",
                shown.join(", ")
            ),
        )
    }

    fn trace_inequality(&self) -> Result<Outcome> {
        let u = &self.u_star;
        let d = self.reference.d;
        let mut checked = 0;
        let mut worst_ratio: f64 = 0.0;
        let mut ok = true;
        let mut record = |c: crate::dtn::TraceCheck| {
            ok &= c.holds();
            worst_ratio = worst_ratio.max(c.boundary / c.bound);
            checked += 1;
        };
        for (l, s) in self.mode_solves()? {
            record(trace_check(&u.grid, &s.psi, sphere_eigen(l, d).0)?);
        }
        let mut rng = StdRng::seed_from_u64(TRACE_SEED);
        let length = u.grid.r_end() - 1.0;
        for _ in 0..TRACE_RANDOM_PROFILES {
            let width = 10f64.powf(rng.gen_range(-2.0..1.5));
            let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let degree = rng.gen_range(0..=6);
            let psi = u.grid.sample(|r| {
                let s = (r - 1.0) / length;
                let wave: f64 = coeffs.iter().enumerate().map(|(m, c)| c * (m as f64 * std::f64::consts::PI * s).cos()).sum();
                (-(r - 1.0) / width).exp() * (1.0 + wave) * (1.0 - s)
            });
            record(trace_check(&u.grid, &psi, sphere_eigen(degree, d).0)?);
        }
        outcome(ok, format!("{checked} profiles, max boundary / bound {worst_ratio:.3}"))
    }

    fn rescaling(&self) -> Result<Outcome> {
        let (grid, points, _) = self.branch()?;
        let point = points.first().ok_or_else(|| OdpError::Continuation { amplitude: 0.0, reason: "empty branch".into() })?;
        let rep = rescale_branch_point(grid, point, self.reference.p)?;
        outcome(
            rep.residual_after < RESCALE_RESIDUAL && rep.f_residual_scaled < RESCALE_RESIDUAL,
            format!(
                "epsilon {:.6}, residual {:.1e} -> {:.1e}, scaled |F| {:.1e}",
                rep.epsilon, rep.residual_before, rep.residual_after, rep.f_residual_scaled
            ),
        )
    }
}

/// Two lowest radial Dirichlet eigenvalues from a dense symmetric eigensolve of the
/// mass-scaled pencil, the massless pole row condensed out.
pub fn dense_radial_eigenvalues(u: &RadialProfile) -> Result<Vec<f64>> {
    let op = DirichletModeOperator::new(u, 0)?.op;
    let a = op.matrix.to_dense();
    let pole = op.len() - 1;
    let m = pole - 1;
    let schur = nalgebra::DMatrix::from_fn(m, m, |i, j| {
        let (ii, jj) = (i + 1, j + 1);
        let v = a[ii][jj] - a[ii][pole] * a[pole][jj] / a[pole][pole];
        v / (op.mass[ii] * op.mass[jj]).sqrt()
    });
    let mut ev: Vec<f64> = schur.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn criteria_are_numbered_once() {
        let ids: Vec<usize> = Suite::criteria().iter().map(|c| c.0).collect();
        assert_eq!(ids, (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn dense_eigenvalues_match_the_banded_pair() {
        let u = solve_radial_from_limit(&ProblemParams::new(2, 3.0, 0.1, 1.0).unwrap(), 200).unwrap().0;
        let pair = principal_dirichlet_pair(&u).unwrap();
        let dense = dense_radial_eigenvalues(&u).unwrap();
        assert!((pair.tau - dense[0]).abs() < 1e-9);
        assert!((pair.second - dense[1]).abs() < 1e-9);
    }

    #[test]
    fn report_line_carries_the_verdict() {
        let r = CriterionReport { id: 3, name: "x".into(), passed: false, detail: "d".into(), seconds: 0.5 };
        assert!(r.to_string().starts_with("[FAIL]  3"));
    }
}
