//! The crossing parameter `lambda_*(k)` on the sphere, its parity certificate and
//! sweeps over `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtn::{dtn_report, DtnReport};
use crate::error::{OdpError, Result};
use crate::exterior::{brent, locate_window, log_lambdas, ScanRow, Window};
use crate::geometry::{ProblemParams, SymmetryGroup};
use crate::radial::{solve_radial_from_limit, RadialProfile};
use crate::spectrum::{mode_margins, principal_dirichlet_pair, MarginReport};

/// Required accuracy of the DtN value at the certified root.
pub const ROOT_TOLERANCE: f64 = 1e-8;

/// Solution on the limit branch together with its margins and DtN table.
#[derive(Debug, Clone)]
pub struct SphereState {
    pub profile: RadialProfile,
    pub tau: f64,
    pub margins: MarginReport,
    pub dtn: DtnReport,
}

impl SphereState {
    pub fn new(params: &ProblemParams, group: &SymmetryGroup, intervals: usize) -> Result<Self> {
        let (profile, _) = solve_radial_from_limit(params, intervals)?;
        let pair = principal_dirichlet_pair(&profile)?;
        let margins = mode_margins(&profile, group)?;
        let dtn = dtn_report(&profile, group, &pair)?;
        Ok(SphereState { profile, tau: pair.tau, margins, dtn })
    }

    pub fn h_of(&self, degree: usize) -> f64 {
        self.dtn.entries.iter().find(|e| e.l == degree).map_or(f64::NAN, |e| e.h)
    }

    pub fn h_table(&self) -> Vec<(usize, f64)> {
        self.dtn.entries.iter().map(|e| (e.l, e.h)).collect()
    }

    pub fn scan_row(&self) -> ScanRow {
        ScanRow {
            lambda: self.profile.params.lambda,
            tau: self.tau,
            margin: self.margins.margin,
            h: self.h_table(),
        }
    }
}

pub fn sphere_scan_row(params: &ProblemParams, group: &SymmetryGroup, intervals: usize) -> Result<ScanRow> {
    Ok(SphereState::new(params, group, intervals)?.scan_row())
}

/// Window built from the sphere problem itself, scanning a log grid on
/// `[center / 1.5, 1.5 center]`.
pub fn select_window_sphere(params: &ProblemParams, group: &SymmetryGroup, intervals: usize, center: f64) -> Result<Window> {
    group.validate()?;
    let lambdas = log_lambdas(center / 1.5, 1.5 * center, 24);
    locate_window(|lam| sphere_scan_row(&params.with_lambda(lam), group, intervals), &lambdas)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BifurcationCertificate {
    pub k: f64,
    pub lambda_star: f64,
    pub kernel_degree: usize,
    pub kernel_mult: usize,
    pub sigma1_below: f64,
    pub sigma1_above: f64,
    pub index_below: usize,
    pub index_above: usize,
    pub window: (f64, f64),
    pub delta: f64,
    pub h_at_star: f64,
    /// `(degree, h)` at `lambda_* - delta` and `lambda_* + delta`.
    pub h_below: Vec<(usize, f64)>,
    pub h_above: Vec<(usize, f64)>,
    /// `(degree, h)` at the window ends.
    pub h_lambda0: Vec<(usize, f64)>,
    pub h_lambda1: Vec<(usize, f64)>,
    /// Smallest Dirichlet margin at the window ends and the root.
    pub margin: f64,
    /// Smallest `sigma_1` sampled on `[lambda_*, lambda1]`.
    pub sigma1_min_above: f64,
    pub intervals: usize,
}

fn state_at(params: &ProblemParams, group: &SymmetryGroup, intervals: usize, lambda: f64) -> Result<SphereState> {
    SphereState::new(&params.with_lambda(lambda), group, intervals)
}

/// Brent root of `lambda -> h_{i_1}(k, lambda)` on the window, with `sigma_1` and
/// the index evaluated at `lambda_* +- delta`, `delta = 1e-3 (lambda1 - lambda0)`.
pub fn find_lambda_star(
    params: &ProblemParams,
    group: &SymmetryGroup,
    window: &Window,
    intervals: usize,
) -> Result<BifurcationCertificate> {
    group.validate()?;
    let degree = window.crossing_degree;
    let mult = group
        .allowed_modes
        .iter()
        .find(|m| m.degree == degree)
        .map(|m| m.mult)
        .ok_or_else(|| OdpError::InvalidGroup(format!("crossing degree {degree} is not an allowed mode")))?;
    let (l0, l1) = (window.lambda0, window.lambda1);
    let ends = [l0, l1]
        .par_iter()
        .map(|&lam| state_at(params, group, intervals, lam))
        .collect::<Result<Vec<_>>>()?;
    for s in &ends {
        if !(s.margins.margin > 0.0) {
            let deg = s.margins.modes.iter().find(|m| m.1 == s.margins.margin).map_or(0, |m| m.0);
            return Err(OdpError::WindowInvalid { margin: s.margins.margin, lambda: s.profile.params.lambda, degree: deg });
        }
    }
    let (h0, h1) = (ends[0].h_of(degree), ends[1].h_of(degree));
    if !(h0 < 0.0 && h1 > 0.0) {
        return Err(OdpError::NoBracket(format!(
            "h_{degree} = {h0:.4e} at {l0:.6} and {h1:.4e} at {l1:.6}; re-select the window on this k"
        )));
    }
    let star = brent(|lam| Ok(state_at(params, group, intervals, lam)?.h_of(degree)), l0, l1, 0.0)?;
    let delta = 1e-3 * (l1 - l0);
    let samples: Vec<f64> = (1..=5).map(|i| star + (l1 - star) * i as f64 / 5.0).collect();
    let mut lams = vec![star, star - delta, star + delta];
    lams.extend(&samples);
    let states = lams
        .par_iter()
        .map(|&lam| state_at(params, group, intervals, lam))
        .collect::<Result<Vec<_>>>()?;
    let (at, below, above) = (&states[0], &states[1], &states[2]);
    let h_at_star = at.h_of(degree);
    if !(h_at_star.abs() < ROOT_TOLERANCE) {
        return Err(OdpError::NoBracket(format!("root not resolved: h_{degree}({star}) = {h_at_star:.3e}")));
    }
    let sigma1_min_above = states[2..].iter().chain([at]).map(|s| s.dtn.sigma1).fold(f64::INFINITY, f64::min);
    let margin = [&ends[0], &ends[1], at].iter().map(|s| s.margins.margin).fold(f64::INFINITY, f64::min);
    Ok(BifurcationCertificate {
        k: params.k,
        lambda_star: star,
        kernel_degree: degree,
        kernel_mult: mult,
        sigma1_below: below.dtn.sigma1,
        sigma1_above: above.dtn.sigma1,
        index_below: below.dtn.index,
        index_above: above.dtn.index,
        window: (l0, l1),
        delta,
        h_at_star,
        h_below: below.h_table(),
        h_above: above.h_table(),
        h_lambda0: ends[0].h_table(),
        h_lambda1: ends[1].h_table(),
        margin,
        sigma1_min_above,
        intervals,
    })
}

/// Window and certificate for one `k`: the limit window first, then a window
/// re-selected on the sphere problem when the limit one does not bracket.
pub fn certify(
    params: &ProblemParams,
    group: &SymmetryGroup,
    limit: &Window,
    intervals: usize,
) -> Result<(Window, BifurcationCertificate)> {
    match find_lambda_star(params, group, limit, intervals) {
        Ok(cert) => Ok((limit.clone(), cert)),
        Err(OdpError::NoBracket(_)) | Err(OdpError::WindowInvalid { .. }) => {
            let window = select_window_sphere(params, group, intervals, limit.lambda_star)?;
            let cert = find_lambda_star(params, group, &window, intervals)?;
            Ok((window, cert))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityVerdict {
    pub holds: bool,
    pub index_jump: i64,
    /// Degree whose DtN value degenerates at an endpoint or crosses inside the window.
    pub offending: Option<usize>,
    pub diagnostic: String,
}

/// Odd index jump across `lambda_*` with nondegenerate endpoint operators: only
/// the kernel degree may come within `tol` of zero or change sign on the window.
pub fn parity_certificate(cert: &BifurcationCertificate, tol: f64) -> ParityVerdict {
    let jump = cert.index_below as i64 - cert.index_above as i64;
    let verdict = |holds, offending, diagnostic: String| ParityVerdict { holds, index_jump: jump, offending, diagnostic };
    if cert.sigma1_below.abs() <= tol || cert.sigma1_above.abs() <= tol {
        return verdict(
            false,
            Some(cert.kernel_degree),
            format!("sigma_1 within {tol:.1e} of zero at an endpoint: {:.3e}, {:.3e}", cert.sigma1_below, cert.sigma1_above),
        );
    }
    for (l, h) in cert.h_below.iter().chain(&cert.h_above) {
        if *l != cert.kernel_degree && h.abs() <= tol {
            return verdict(false, Some(*l), format!("h_{l} = {h:.3e} at lambda_* +- delta"));
        }
    }
    for ((l, a), (_, b)) in cert.h_lambda0.iter().zip(&cert.h_lambda1) {
        if *l != cert.kernel_degree && a.signum() != b.signum() {
            return verdict(false, Some(*l), format!("h_{l} also changes sign on the window: {a:.3e} -> {b:.3e}"));
        }
    }
    if jump.rem_euclid(2) != 1 {
        return verdict(false, None, format!("index jump {jump} is even"));
    }
    if jump != cert.kernel_mult as i64 {
        return verdict(false, None, format!("index jump {jump} differs from the kernel multiplicity {}", cert.kernel_mult));
    }
    verdict(true, None, format!("index {} -> {}, kernel degree {}", cert.index_below, cert.index_above, cert.kernel_degree))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: f64,
    pub lambda_star: Option<f64>,
    /// Crossing of the limit DtN value, the `k -> 0` reference.
    pub limit_lambda_star: f64,
    pub certificate: Option<BifurcationCertificate>,
    pub parity: Option<bool>,
    pub error: Option<String>,
}

/// Certificates along `k_list`, in parallel over `k`; a failing `k` leaves an
/// error in its row.
pub fn sweep(params_base: &ProblemParams, k_list: &[f64], group: &SymmetryGroup, limit: &Window, intervals: usize) -> Vec<SweepRow> {
    k_list
        .par_iter()
        .map(|&k| {
            let outcome = params_base
                .with_k(k)
                .validate()
                .and_then(|_| certify(&params_base.with_k(k), group, limit, intervals));
            match outcome {
                Ok((_, cert)) => SweepRow {
                    k,
                    lambda_star: Some(cert.lambda_star),
                    limit_lambda_star: limit.lambda_star,
                    parity: Some(parity_certificate(&cert, ROOT_TOLERANCE).holds),
                    certificate: Some(cert),
                    error: None,
                },
                Err(e) => SweepRow {
                    k,
                    lambda_star: None,
                    limit_lambda_star: limit.lambda_star,
                    certificate: None,
                    parity: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_built() -> BifurcationCertificate {
        BifurcationCertificate {
            k: 0.01,
            lambda_star: 10.0,
            kernel_degree: 2,
            kernel_mult: 1,
            sigma1_below: -1e-3,
            sigma1_above: 1e-3,
            index_below: 1,
            index_above: 0,
            window: (9.0, 11.0),
            delta: 2e-3,
            h_at_star: 0.0,
            h_below: vec![(2, -1e-3), (4, 0.5)],
            h_above: vec![(2, 1e-3), (4, 0.5)],
            h_lambda0: vec![(2, -0.4), (4, 0.3)],
            h_lambda1: vec![(2, 0.4), (4, 0.6)],
            margin: 0.1,
            sigma1_min_above: 0.0,
            intervals: 100,
        }
    }

    #[test]
    fn single_crossing_is_certified() {
        let v = parity_certificate(&hand_built(), 1e-8);
        assert!(v.holds, "{}", v.diagnostic);
        assert_eq!(v.index_jump, 1);
    }

    #[test]
    fn second_crossing_in_window_is_rejected() {
        let mut cert = hand_built();
        cert.h_lambda0[1].1 = -0.2;
        let v = parity_certificate(&cert, 1e-8);
        assert!(!v.holds);
        assert_eq!(v.offending, Some(4));
    }

    #[test]
    fn degenerate_endpoint_and_even_jump_are_rejected() {
        let mut cert = hand_built();
        cert.h_above[1].1 = 1e-10;
        assert_eq!(parity_certificate(&cert, 1e-8).offending, Some(4));
        let mut cert = hand_built();
        cert.index_below = 2;
        assert!(!parity_certificate(&cert, 1e-8).holds);
        let mut cert = hand_built();
        cert.sigma1_above = 1e-9;
        assert!(!parity_certificate(&cert, 1e-8).holds);
    }

    #[test]
    fn empty_sweep_is_empty() {
        let params = ProblemParams::new(2, 3.0, 0.01, 1.0).unwrap();
        let group = SymmetryGroup::dihedral(2, 2, 8).unwrap();
        let window = hand_window();
        assert!(sweep(&params, &[], &group, &window, 100).is_empty());
    }

    #[test]
    fn failing_k_keeps_its_row() {
        let params = ProblemParams::new(2, 3.0, 0.01, 1.0).unwrap();
        let group = SymmetryGroup::dihedral(2, 2, 8).unwrap();
        let rows = sweep(&params, &[4.0], &group, &hand_window(), 100);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_some() && rows[0].lambda_star.is_none());
    }

    fn hand_window() -> Window {
        Window {
            lambda0: 9.0,
            lambda1: 11.0,
            lambda_star: 10.0,
            lambda_degenerate: None,
            crossing_degree: 2,
            margin: 0.1,
            scan: Vec::new(),
        }
    }
}
