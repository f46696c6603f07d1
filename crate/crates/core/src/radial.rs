//! Positive radial solutions on S^d(k) minus the unit geodesic ball.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{OdpError, Result};
use crate::exterior::{default_r_max, solve_exterior_radial, ExteriorProfile, DEFAULT_EXTERIOR_INTERVALS};
use crate::geometry::{k_norm, smoothstep, ProblemParams, RadialGrid};
use crate::modeop::{newton_semilinear, semilinear_residual, ModeOperator};

/// Default node gaps of the sphere grid.
pub const DEFAULT_RADIAL_INTERVALS: usize = 2000;

#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub grid: RadialGrid,
    pub values: Vec<f64>,
    pub params: ProblemParams,
    pub residual_norm: f64,
    /// One-sided derivative at `r = 1`.
    pub du_at_1: f64,
}

impl RadialProfile {
    fn from_values(grid: RadialGrid, values: Vec<f64>, params: ProblemParams, residual_norm: f64) -> Self {
        let du_at_1 = grid.derivative_at_start(&values);
        RadialProfile { grid, values, params, residual_norm, du_at_1 }
    }

    pub fn derivative(&self) -> Vec<f64> {
        self.grid.derivative(&self.values)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Smallest value over the nodes with `r > 1`.
    pub fn interior_min(&self) -> f64 {
        self.values[1..].iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// `int u^{p+1} S_k^{d-1} dr`.
    pub fn power_integral(&self) -> f64 {
        let p = self.params.p;
        self.grid.integrate(&self.values.iter().map(|v| v.max(0.0).powf(p + 1.0)).collect::<Vec<_>>())
    }
}

/// Cutoff `chi_k`: 1 below `pi/sqrt(k)`, 0 above `2pi/sqrt(k)`, quintic in between.
pub fn cutoff_chi(k: f64, r: f64) -> (f64, f64) {
    let a = PI / k.sqrt();
    let (s, ds) = smoothstep((r - a) / a);
    (1.0 - s, -ds / a)
}

/// Exterior solution times the cutoff, sampled on `grid`.
pub fn cutoff_guess(ext: &ExteriorProfile, k: f64, grid: &RadialGrid) -> Result<Vec<f64>> {
    if !(k > 0.0) || 2.0 * PI / k.sqrt() >= PI / k {
        return Err(OdpError::InvalidParams(format!(
            "cutoff bands need 2 pi / sqrt(k) < pi / k, i.e. k < 1/4; got k = {k}"
        )));
    }
    Ok(grid.sample(|r| (ext.eval(r) * cutoff_chi(k, r).0).max(0.0)))
}

fn base_operator(params: &ProblemParams, grid: &RadialGrid) -> Result<ModeOperator> {
    let zero = vec![0.0; grid.len()];
    ModeOperator::assemble(grid, params.lambda, &zero, 0.0, None)
}

/// Newton solve of the radial Dirichlet problem from `guess`.
pub fn solve_radial(params: &ProblemParams, grid: &RadialGrid, guess: &[f64]) -> Result<RadialProfile> {
    params.validate()?;
    if guess.len() != grid.len() {
        return Err(OdpError::GridMismatch { expected: grid.len(), got: guess.len() });
    }
    if !grid.pole_flag || (grid.r_end() - PI / params.k).abs() > 1e-9 * grid.r_end() {
        return Err(OdpError::InvalidParams("grid must end at the pole pi/k".into()));
    }
    if guess.iter().any(|&v| v < 0.0) {
        return Err(OdpError::InvalidParams("initial guess must be nonnegative".into()));
    }
    let base = base_operator(params, grid)?;
    let (_, res0) = semilinear_residual(&base.matrix, &base.mass, params.p, guess);
    let values = if res0 < 1e-10 && guess[0] == 0.0 {
        guess.to_vec()
    } else {
        newton_semilinear(&base.matrix, &base.mass, params.p, guess)?.values
    };
    let (_, residual_norm) = semilinear_residual(&base.matrix, &base.mass, params.p, &values);
    let profile = RadialProfile::from_values(grid.clone(), values, *params, residual_norm);
    let min_value = profile.interior_min();
    if !(min_value > 0.0) {
        return Err(OdpError::Positivity { min_value });
    }
    Ok(profile)
}

/// Principal Dirichlet eigenfunction scaled onto the Nehari manifold
/// `<A u, u> = int u^{p+1}`; a mountain-pass starting point.
pub fn nehari_guess(params: &ProblemParams, grid: &RadialGrid) -> Result<Vec<f64>> {
    let op = base_operator(params, grid)?;
    let phi: Vec<f64> = op.dirichlet_eigenpairs(1)?.remove(0).vector.iter().map(|v| v.max(0.0)).collect();
    let quad = op.energy(&phi);
    let power: f64 = phi.iter().zip(&op.mass).map(|(v, m)| m * v.powf(params.p + 1.0)).sum();
    let c = (quad / power).powf(1.0 / (params.p - 1.0));
    Ok(phi.iter().map(|v| c * v).collect())
}

/// Exterior solve, cutoff guess and Newton on the sphere grid: the branch that
/// continues the flat limit.
pub fn solve_radial_from_limit(params: &ProblemParams, intervals: usize) -> Result<(RadialProfile, ExteriorProfile)> {
    params.validate()?;
    let ext = solve_exterior_radial(params, default_r_max(params.lambda), DEFAULT_EXTERIOR_INTERVALS)?;
    let grid = RadialGrid::sphere(params.k, params.d, intervals)?;
    let guess = cutoff_guess(&ext, params.k, &grid)?;
    Ok((solve_radial(params, &grid, &guess)?, ext))
}

/// Some positive solution: the cutoff guess first, then the Nehari-scaled
/// eigenfunction when `k sqrt(lambda)` is too large for the limit profile to be a
/// good start. The second route may land on a different branch.
pub fn solve_radial_any(params: &ProblemParams, intervals: usize) -> Result<RadialProfile> {
    match solve_radial_from_limit(params, intervals) {
        Ok((prof, _)) => Ok(prof),
        Err(first) if !first.is_config_error() => {
            let grid = RadialGrid::sphere(params.k, params.d, intervals)?;
            let fallback = nehari_guess(params, &grid)?;
            solve_radial(params, &grid, &fallback).map_err(|_| first)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub k: f64,
    /// `||u_k - u_tilde||_k` with the limit profile extended by zero.
    pub error: f64,
    pub residual_norm: f64,
}

/// Distance between sphere solutions and the flat limit along `k_list`.
pub fn convergence_study(params_base: &ProblemParams, k_list: &[f64], intervals: usize) -> Result<Vec<ConvergenceRow>> {
    if k_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(OdpError::InvalidParams("k_list must be strictly decreasing".into()));
    }
    let ext = solve_exterior_radial(params_base, default_r_max(params_base.lambda), DEFAULT_EXTERIOR_INTERVALS)?;
    let rows: Vec<ConvergenceRow> = k_list
        .par_iter()
        .map(|&k| {
            let params = params_base.with_k(k);
            let grid = RadialGrid::sphere(k, params.d, intervals)?;
            let guess = cutoff_guess(&ext, k, &grid)?;
            let prof = solve_radial(&params, &grid, &guess)?;
            let limit = grid.sample(|r| ext.eval(r));
            let diff: Vec<f64> = prof.values.iter().zip(&limit).map(|(a, b)| a - b).collect();
            Ok(ConvergenceRow { k, error: k_norm(&diff, &grid)?, residual_norm: prof.residual_norm })
        })
        .collect::<Result<_>>()?;
    Ok(rows)
}

/// Largest `k` in `candidates` (tried in decreasing order) at which the cutoff
/// guess converges; an empirical stand-in for the non-constructive threshold.
pub fn largest_converging_k(params_base: &ProblemParams, candidates: &[f64], intervals: usize) -> Option<f64> {
    let mut ks = candidates.to_vec();
    ks.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ks.into_iter().find(|&k| solve_radial_from_limit(&params_base.with_k(k), intervals).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_bands_and_slope() {
        let k: f64 = 0.05;
        let a = PI / k.sqrt();
        assert_eq!(cutoff_chi(k, a * 0.99).0, 1.0);
        assert_eq!(cutoff_chi(k, 2.0 * a).0, 0.0);
        let worst = (0..=4000)
            .map(|j| cutoff_chi(k, a + a * j as f64 / 4000.0).1.abs())
            .fold(0.0_f64, f64::max);
        assert!(worst <= k.sqrt(), "{worst}");
    }

    #[test]
    fn cutoff_guess_rejects_large_k() {
        let params = ProblemParams::new(2, 3.0, 0.3, 1.0).unwrap();
        let ext = solve_exterior_radial(&params, default_r_max(1.0), 400).unwrap();
        let grid = RadialGrid::sphere(0.3, 2, 400).unwrap();
        assert!(cutoff_guess(&ext, 0.3, &grid).is_err());
    }

    #[test]
    fn sphere_solution_properties() {
        let params = ProblemParams::new(2, 3.0, 0.1, 1.0).unwrap();
        let (prof, _) = solve_radial_from_limit(&params, 1000).unwrap();
        assert!(prof.residual_norm < 1e-10);
        assert!(prof.du_at_1 > 0.0);
        assert!(prof.interior_min() > 0.0);
        assert_eq!(prof.values[0], 0.0);
        // energy identity
        let lhs = {
            let op = base_operator(&params, &prof.grid).unwrap();
            op.energy(&prof.values)
        };
        let rhs = prof.power_integral();
        assert!(((lhs - rhs) / rhs).abs() < 1e-8);
        // pole regularity
        let du = prof.derivative();
        assert!(du.last().unwrap().abs() < 1e-8);
    }

    #[test]
    fn converged_guess_is_returned_unchanged() {
        let params = ProblemParams::new(2, 3.0, 0.1, 1.0).unwrap();
        let (prof, _) = solve_radial_from_limit(&params, 800).unwrap();
        let again = solve_radial(&params, &prof.grid, &prof.values).unwrap();
        assert_eq!(again.values, prof.values);
    }

    #[test]
    fn nehari_fallback_reaches_a_positive_solution() {
        // Far outside the limit regime: the cutoff guess collapses to zero.
        let params = ProblemParams::new(2, 3.0, 0.2, 400.0).unwrap();
        assert!(solve_radial_from_limit(&params, 600).is_err());
        let prof = solve_radial_any(&params, 600).unwrap();
        assert!(prof.residual_norm < 1e-10 && prof.interior_min() > 0.0);
    }
}
