//! The flat limit problem outside the unit ball of R^d: the positive radial
//! solution, its linearized spectrum, limit DtN values and the working window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};
use crate::geometry::{sphere_eigen, ProblemParams, RadialGrid, SymmetryGroup};
use crate::modeop::{linearized_potential, newton_semilinear, ModeOperator, NEAR_SINGULAR_COND};

/// Default node gaps of the exterior grid.
pub const DEFAULT_EXTERIOR_INTERVALS: usize = 800;

#[derive(Debug, Clone)]
pub struct ExteriorProfile {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
    pub lambda: f64,
    pub p: f64,
    /// Decay rate `1/sqrt(lambda)` of the Robin closure at `R_max`.
    pub robin_coeff: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LimitSpectrum {
    pub tau_tilde: f64,
    /// Normalized to unit weighted H^1 norm, positive.
    pub z_tilde: Vec<f64>,
    pub second_eig: f64,
}

pub fn default_r_max(lambda: f64) -> f64 {
    1.0 + 40.0 * lambda.sqrt()
}

/// Soliton-shaped guess centred `center` decay lengths from the boundary.
fn bump_guess(grid: &RadialGrid, lambda: f64, p: f64, amplitude: f64, center: f64) -> Vec<f64> {
    let peak = ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0));
    let width = 0.5 * (p - 1.0);
    grid.sample(|r| {
        let t = (r - 1.0) / lambda.sqrt();
        amplitude * peak * (2.0 * t).tanh() / (width * (t - center)).cosh().powf(2.0 / (p - 1.0))
    })
}

/// Solves the exterior radial problem on `[1, r_max]` with a Robin closure.
pub fn solve_exterior_radial(params: &ProblemParams, r_max: f64, intervals: usize) -> Result<ExteriorProfile> {
    params.validate()?;
    let lambda = params.lambda;
    if r_max < 1.0 + 30.0 * lambda.sqrt() {
        return Err(OdpError::InvalidParams(format!(
            "R_max = {r_max} is below 1 + 30 sqrt(lambda) = {}",
            1.0 + 30.0 * lambda.sqrt()
        )));
    }
    let grid = RadialGrid::exterior(params.d, r_max, intervals)?;
    let robin = 1.0 / lambda.sqrt();
    let zero = vec![0.0; grid.len()];
    let base = ModeOperator::assemble(&grid, lambda, &zero, 0.0, Some(robin))?;
    let mut last = OdpError::TrivialSolution;
    for (amplitude, center) in [(1.0, 1.5), (1.3, 1.0), (1.0, 3.0), (1.6, 0.5), (2.0, 2.0)] {
        let guess = bump_guess(&grid, lambda, params.p, amplitude, center);
        match newton_semilinear(&base.matrix, &base.mass, params.p, &guess) {
            Ok(sol) => {
                return Ok(ExteriorProfile {
                    values: sol.values,
                    residual_norm: sol.residual_norm,
                    grid,
                    lambda,
                    p: params.p,
                    robin_coeff: robin,
                })
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

impl ExteriorProfile {
    pub fn du_at_1(&self) -> f64 {
        self.grid.derivative_at_start(&self.values)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Value at `r`, extended by zero past `R_max`.
    pub fn eval(&self, r: f64) -> f64 {
        self.grid.interpolate(&self.values, r)
    }

    fn mode_operator(&self, degree: usize) -> Result<ModeOperator> {
        let pot = linearized_potential(&self.values, self.p);
        let mu = sphere_eigen(degree, self.grid.d()).0;
        ModeOperator::assemble(&self.grid, self.lambda, &pot, mu, Some(self.robin_coeff))
    }
}

/// Two lowest eigenvalues of the radial linearization with Dirichlet data at `r = 1`.
pub fn exterior_linearized_spectrum(profile: &ExteriorProfile) -> Result<LimitSpectrum> {
    let op = profile.mode_operator(0)?;
    let pairs = op.dirichlet_eigenpairs(2)?;
    let (tau, second) = (pairs[0].value, pairs[1].value);
    if !(tau < 0.0 && second > 0.0) {
        return Err(OdpError::SignPattern(format!(
            "expected tau < 0 < second eigenvalue, got {tau:.6e}, {second:.6e}"
        )));
    }
    let mut z = pairs[0].vector.clone();
    let nrm = profile.grid.h1_squared(&z).sqrt();
    z.iter_mut().for_each(|v| *v /= nrm);
    Ok(LimitSpectrum { tau_tilde: tau, z_tilde: z, second_eig: second })
}

/// Limit DtN eigenvalue `-psi'(1) - (d-1)` of degree `l`.
pub fn limit_dtn_value(profile: &ExteriorProfile, l: usize) -> Result<f64> {
    let op = profile.mode_operator(l)?;
    let cond = op.condition_estimate()?;
    if cond > NEAR_SINGULAR_COND {
        return Err(OdpError::NearSingular { degree: l, cond });
    }
    Ok(op.boundary_solve()?.flux - (profile.grid.d() as f64 - 1.0))
}

/// Smallest Dirichlet eigenvalue of degree `l` (second one for `l = 0`).
pub fn limit_dirichlet_margin(profile: &ExteriorProfile, l: usize) -> Result<f64> {
    let op = profile.mode_operator(l)?;
    if l == 0 {
        Ok(op.dirichlet_eigenpairs(2)?[1].value)
    } else {
        Ok(op.dirichlet_eigenpairs(1)?[0].value)
    }
}

/// Spectral data at one `lambda`: principal eigenvalue, Dirichlet margin over the
/// relevant modes, and the DtN values of the allowed degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub tau: f64,
    /// Minimum of the radial second eigenvalue and the first eigenvalue of every allowed degree.
    pub margin: f64,
    /// `(degree, h)` for every allowed degree; NaN where the solve was near singular.
    pub h: Vec<(usize, f64)>,
}

impl ScanRow {
    /// Smallest DtN value and its degree.
    pub fn sigma1(&self) -> (usize, f64) {
        self.h
            .iter()
            .copied()
            .filter(|(_, h)| h.is_finite())
            .fold((0, f64::INFINITY), |best, (l, h)| if h < best.1 { (l, h) } else { best })
    }

    /// `sigma_1`, or `-inf` when the Dirichlet form has a nonpositive direction:
    /// then the full form is not positive either.
    pub fn signed_sigma(&self) -> f64 {
        if self.margin > 0.0 {
            self.sigma1().1
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn h_of(&self, degree: usize) -> f64 {
        self.h.iter().find(|(l, _)| *l == degree).map_or(f64::NAN, |x| x.1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Window {
    pub lambda0: f64,
    pub lambda1: f64,
    /// Supremum of the parameters where the form is negative somewhere.
    pub lambda_star: f64,
    /// Last Dirichlet degeneracy below `lambda_star`, if the scan saw one.
    pub lambda_degenerate: Option<f64>,
    /// Degree whose DtN value vanishes at `lambda_star`.
    pub crossing_degree: usize,
    /// Smallest Dirichlet margin sampled on `[lambda0, lambda1]`.
    pub margin: f64,
    pub scan: Vec<ScanRow>,
}

/// Degrees entering the margin and the DtN table: the allowed modes only, since
/// the Dirichlet space is restricted to group-invariant functions.
pub fn window_degrees(group: &SymmetryGroup) -> Vec<usize> {
    group.allowed_modes.iter().map(|m| m.degree).collect()
}

/// One row of the limit scan.
pub fn scan_row(d: usize, p: f64, lambda: f64, degrees: &[usize]) -> Result<ScanRow> {
    let params = ProblemParams::new(d, p, 0.0, lambda)?;
    let prof = solve_exterior_radial(&params, default_r_max(lambda), DEFAULT_EXTERIOR_INTERVALS)?;
    let spec = exterior_linearized_spectrum(&prof)?;
    let mut margin = spec.second_eig;
    let mut h = Vec::with_capacity(degrees.len());
    for &l in degrees {
        margin = margin.min(limit_dirichlet_margin(&prof, l)?);
        h.push((l, limit_dtn_value(&prof, l).unwrap_or(f64::NAN)));
    }
    Ok(ScanRow { lambda, tau: spec.tau_tilde, margin, h })
}

/// Brent's method on a bracketing interval.
pub fn brent(mut f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa * fb > 0.0 {
        return Err(OdpError::NoBracket(format!("f({a}) = {fa:.3e}, f({b}) = {fb:.3e}")));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut pp, mut q);
            if a == c {
                pp = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                pp = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if pp > 0.0 {
                q = -q;
            }
            pp = pp.abs();
            if 2.0 * pp < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = pp / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Ok(b)
}

/// Logarithmic lambda grid on `(lo, hi]`.
pub fn log_lambdas(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (1..=points).map(|j| (a + (b - a) * j as f64 / points as f64).exp()).collect()
}

/// Upper end of the default limit scan.
pub const SCAN_LAMBDA_MAX: f64 = 2000.0;

/// Locates the last sign change of the signed `sigma_1` along `lambdas` and builds
/// a window around it. Used for the flat limit and, unchanged, for the sphere.
///
/// When the change is preceded by a Dirichlet degeneracy the DtN value of the
/// degenerating degree comes back from `-inf`; the window then sits inside
/// `(Lambda_0, inf)` so that every margin stays positive.
pub fn locate_window(eval: impl Fn(f64) -> Result<ScanRow> + Sync, lambdas: &[f64]) -> Result<Window> {
    let scan: Vec<ScanRow> = lambdas.par_iter().map(|&lam| eval(lam)).collect::<Result<_>>()?;
    let table = || {
        scan.iter()
            .map(|r| format!("{:.4}:{:.3e}/{:.3e}", r.lambda, r.signed_sigma(), r.margin))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let last_negative = scan.iter().rposition(|r| !(r.signed_sigma() > 0.0));
    let j = match last_negative {
        Some(j) if j + 1 < scan.len() => j,
        _ => {
            return Err(OdpError::NoBracket(format!(
                "signed sigma_1 has no final sign change on [{:.4}, {:.4}]: {}",
                lambdas[0],
                lambdas[lambdas.len() - 1],
                table()
            )))
        }
    };
    let (lo, hi) = (scan[j].lambda, scan[j + 1].lambda);
    let mut degenerate = None;
    let mut a = lo;
    if !(scan[j].margin > 0.0) {
        // Lambda_0: last nonpositive margin.
        let (mut x0, mut x1) = (lo, hi);
        while x1 - x0 > 1e-10 * x1 {
            let mid = 0.5 * (x0 + x1);
            if eval(mid)?.margin > 0.0 {
                x1 = mid;
            } else {
                x0 = mid;
            }
        }
        degenerate = Some(x1);
        a = f64::NAN;
        let mut gap = hi - x1;
        for _ in 0..40 {
            gap *= 0.5;
            let row = eval(x1 + gap)?;
            if row.signed_sigma() < 0.0 {
                a = x1 + gap;
                break;
            }
        }
        if a.is_nan() {
            return Err(OdpError::WindowInvalid { margin: 0.0, lambda: x1, degree: 0 });
        }
    }
    let crossing_degree = eval(a)?.sigma1().0;
    let f = |lam: f64| -> Result<f64> {
        let row = eval(lam)?;
        Ok(if row.margin > 0.0 { row.h_of(crossing_degree) } else { -1e6 })
    };
    let star = brent(f, a, hi, 1e-13 * hi)?;
    let lower = degenerate.unwrap_or(lo);
    let mut half = 0.5 * (star - lower);
    for _ in 0..12 {
        let (l0, l1) = (star - half, star + half);
        let samples: Vec<ScanRow> = (0..=6)
            .map(|i| l0 + (l1 - l0) * i as f64 / 6.0)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&lam| eval(lam))
            .collect::<Result<_>>()?;
        let margin = samples.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
        let first = &samples[0];
        let last = &samples[samples.len() - 1];
        if margin > 0.0 && first.sigma1().1 < 0.0 && last.sigma1().1 > 0.0 {
            return Ok(Window {
                lambda0: l0,
                lambda1: l1,
                lambda_star: star,
                lambda_degenerate: degenerate,
                crossing_degree,
                margin,
                scan,
            });
        }
        half *= 0.5;
    }
    Err(OdpError::WindowInvalid { margin: 0.0, lambda: star, degree: crossing_degree })
}

/// Window for the flat limit of `(d, p)` and `group` from a scan on `(0.05, 2000]`.
pub fn select_window(params_base: &ProblemParams, group: &SymmetryGroup) -> Result<Window> {
    group.validate()?;
    let (d, p) = (params_base.d, params_base.p);
    let degrees = window_degrees(group);
    locate_window(|lam| scan_row(d, p, lam, &degrees), &log_lambdas(0.05, SCAN_LAMBDA_MAX, 72))
}
