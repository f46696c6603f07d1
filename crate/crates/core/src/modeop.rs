//! Radial mode operators `-lambda Delta + 1 - V` restricted to one harmonic degree,
//! discretized on a spectral-element grid, plus the shared semilinear Newton solver.

use crate::band::BandMatrix;
use crate::eigen::{self, EigenPair};
use crate::error::{OdpError, Result};
use crate::geometry::RadialGrid;

/// Condition estimate above which a mode's boundary solve is treated as unreliable.
pub const NEAR_SINGULAR_COND: f64 = 1e8;

/// Weak-form matrix of the mode-`mu` operator on all grid nodes.
///
/// Row 0 is the inner boundary; the last row is either the pole (zero mass) or a
/// Robin boundary.
#[derive(Debug, Clone)]
pub struct ModeOperator {
    pub matrix: BandMatrix,
    pub mass: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    /// `lambda S_k^{d-1}(r0)`: converts the node-0 residual into a radial flux.
    pub boundary_weight: f64,
    pole_dirichlet: bool,
}

/// Boundary solve with unit inner datum.
#[derive(Debug, Clone)]
pub struct BoundarySolve {
    pub psi: Vec<f64>,
    /// `-psi'(r0)` from the variationally consistent node-0 residual.
    pub flux: f64,
}

impl ModeOperator {
    /// `potential[i]` is the zeroth-order coefficient subtracted from 1 (e.g. `p u^{p-1}`);
    /// `robin` adds `u' + robin u = 0` at the outer end of a non-pole grid.
    pub fn assemble(grid: &RadialGrid, lambda: f64, potential: &[f64], mu: f64, robin: Option<f64>) -> Result<Self> {
        let n = grid.len();
        if potential.len() != n {
            return Err(OdpError::GridMismatch { expected: n, got: potential.len() });
        }
        let (k, d) = (grid.k(), grid.d() as i32);
        let mut matrix = grid.stiffness(|r| lambda * crate::geometry::s_pow(k, r, d - 1));
        let mass = grid.quad_weights.clone();
        let angular = if mu != 0.0 { grid.weights_pow(d - 3) } else { vec![0.0; n] };
        for i in 0..n {
            matrix.add(i, i, mass[i] * (1.0 - potential[i]) + lambda * mu * angular[i]);
        }
        if let Some(beta) = robin {
            if !grid.pole_flag {
                matrix.add(n - 1, n - 1, lambda * grid.s_pow_at(n - 1, d - 1) * beta);
            }
        }
        Ok(ModeOperator {
            matrix,
            mass,
            lambda,
            mu,
            boundary_weight: lambda * grid.s_pow_at(0, d - 1),
            pole_dirichlet: grid.pole_flag && mu > 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Unknowns of the homogeneous Dirichlet problem (inner node removed, pole removed for `mu > 0`).
    pub fn free_range(&self) -> std::ops::Range<usize> {
        let end = if self.pole_dirichlet { self.len() - 1 } else { self.len() };
        1..end
    }

    fn pencil(&self, range: std::ops::Range<usize>) -> (BandMatrix, Vec<f64>, Vec<usize>) {
        let idx: Vec<usize> = range.collect();
        let a = self.matrix.submatrix(&idx);
        let m = idx.iter().map(|&i| self.mass[i]).collect();
        (a, m, idx)
    }

    fn expand(&self, idx: &[usize], x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.len()];
        for (&i, &v) in idx.iter().zip(x) {
            full[i] = v;
        }
        full
    }

    /// Lowest Dirichlet eigenpairs, vectors expanded to the full node set.
    pub fn dirichlet_eigenpairs(&self, count: usize) -> Result<Vec<EigenPair>> {
        let (a, m, idx) = self.pencil(self.free_range());
        let pairs = eigen::lowest_eigenpairs(&a, &m, count)?;
        Ok(pairs
            .into_iter()
            .map(|p| EigenPair { value: p.value, vector: self.expand(&idx, &p.vector) })
            .collect())
    }

    /// Number of Dirichlet eigenvalues below `sigma`.
    pub fn dirichlet_count_below(&self, sigma: f64) -> usize {
        let (a, m, _) = self.pencil(self.free_range());
        eigen::count_below(&a, &m, sigma)
    }

    /// Distance from 0 to the Dirichlet spectrum.
    pub fn dirichlet_gap(&self) -> Result<f64> {
        let (a, m, _) = self.pencil(self.free_range());
        Ok(eigen::smallest_magnitude(&a, &m))
    }

    /// Condition estimate of the Dirichlet block on the scale of the unit mass term.
    pub fn condition_estimate(&self) -> Result<f64> {
        Ok(1.0 / self.dirichlet_gap()?.max(f64::MIN_POSITIVE))
    }

    /// Solves the homogeneous equation with `psi(r0) = 1`.
    pub fn boundary_solve(&self) -> Result<BoundarySolve> {
        let (a, _, idx) = self.pencil(self.free_range());
        let rhs: Vec<f64> = idx.iter().map(|&i| -self.matrix.get(i, 0)).collect();
        let x = a.lu()?.solve(&rhs);
        let mut psi = self.expand(&idx, &x);
        psi[0] = 1.0;
        let flux = self.apply_row(0, &psi) / self.boundary_weight;
        Ok(BoundarySolve { psi, flux })
    }

    /// Steklov route: `-psi'(r0)` as the jump point of the inertia of
    /// `A - eta * boundary_weight * e0 e0^T` on the Dirichlet unknowns plus node 0.
    pub fn steklov_flux(&self) -> Result<f64> {
        let range = 0..self.free_range().end;
        let (a, _, _) = self.pencil(range.clone());
        let mut b = vec![0.0; range.len()];
        b[0] = self.boundary_weight;
        let baseline = self.dirichlet_count_below(0.0);
        let count = |eta: f64| a.inertia_below(eta, &b);
        let mut lo = -1.0;
        let mut guard = 0;
        while count(lo) > baseline {
            lo *= 2.0;
            guard += 1;
            if guard > 300 {
                return Err(OdpError::Eigen("steklov bracket: no lower bound".into()));
            }
        }
        let mut hi = 1.0_f64.max(lo.abs());
        guard = 0;
        while count(hi) <= baseline {
            hi *= 2.0;
            guard += 1;
            if guard > 300 {
                return Err(OdpError::Eigen("steklov bracket: no upper bound".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count(mid) > baseline {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn apply_row(&self, i: usize, x: &[f64]) -> f64 {
        self.matrix.row_range(i).map(|j| self.matrix.get(i, j) * x[j]).sum()
    }

    /// `x^T A x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        self.matrix.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// Converged semilinear solution with diagnostics.
#[derive(Debug, Clone)]
pub struct SemilinearSolution {
    pub values: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Residual of `-lambda Delta u + u - (u^+)^p` with `u(r0) = 0` and its
/// componentwise relative size `|r_i| / (sum_j |a_ij u_j| + m_i |u_i|^p)`.
pub fn semilinear_residual(base: &BandMatrix, mass: &[f64], p: f64, u: &[f64]) -> (Vec<f64>, f64) {
    let (r, worst, _) = residual_with_merit(base, mass, p, u);
    (r, worst)
}

/// Residual, its relative sup norm and the mass-weighted l2 merit.
fn residual_with_merit(base: &BandMatrix, mass: &[f64], p: f64, u: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = u.len();
    let mut r = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let mut merit = 0.0;
    for i in 1..n {
        let mut acc = 0.0;
        let mut size = 0.0;
        for j in base.row_range(i) {
            let t = base.get(i, j) * u[j];
            acc += t;
            size += t.abs();
        }
        let nl = mass[i] * u[i].max(0.0).powf(p);
        r[i] = acc - nl;
        size += nl;
        if size > 0.0 {
            worst = worst.max(r[i].abs() / size);
        }
        let scale = if mass[i] > 0.0 { mass[i] } else { base.get(i, i).abs() };
        merit += r[i] * r[i] / scale;
    }
    (r, worst, merit.sqrt())
}

/// Damped Newton for the radial semilinear problem. `base` is the mode-0 operator
/// without potential (stiffness + mass + boundary terms).
pub fn newton_semilinear(base: &BandMatrix, mass: &[f64], p: f64, guess: &[f64]) -> Result<SemilinearSolution> {
    let n = guess.len();
    let mut u = guess.to_vec();
    u[0] = 0.0;
    let (mut res, mut norm, mut merit) = residual_with_merit(base, mass, p, &u);
    let mut iterations = 0;
    while iterations < 60 {
        if norm < 1e-12 {
            break;
        }
        iterations += 1;
        let mut jac = base.clone();
        for i in 0..n {
            jac.add(i, i, -mass[i] * p * u[i].max(0.0).powf(p - 1.0));
        }
        for j in jac.row_range(0) {
            jac.set(0, j, 0.0);
            jac.set(j, 0, 0.0);
        }
        jac.set(0, 0, 1.0);
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let step = jac.lu()?.solve(&rhs);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=12 {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let (r2, n2, m2) = residual_with_merit(base, mass, p, &trial);
            if m2 < merit || n2 < 1e-12 {
                u = trial;
                res = r2;
                norm = n2;
                merit = m2;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let step_size = step.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * t;
        let scale = u.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        if !accepted && norm < 1e-10 {
            break;
        }
        if !accepted {
            return Err(OdpError::NewtonDivergence { iterations, residual: norm });
        }
        if step_size < 1e-14 * scale {
            break;
        }
    }
    if u.iter().fold(0.0_f64, |m, v| m.max(v.abs())) < 1e-6 {
        return Err(OdpError::TrivialSolution);
    }
    if norm > 1e-10 {
        return Err(OdpError::NewtonDivergence { iterations, residual: norm });
    }
    Ok(SemilinearSolution { values: u, residual_norm: norm, iterations })
}

/// `p (u^+)^{p-1}` at the nodes.
pub fn linearized_potential(u: &[f64], p: f64) -> Vec<f64> {
    u.iter().map(|&v| p * v.max(0.0).powf(p - 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_operator_flux_matches_bessel_decay() {
        // -Delta psi + psi = 0 outside the unit disk, psi(1) = 1, decaying: psi = K0(r)/K0(1),
        // so -psi'(1) = K1(1)/K0(1).
        let grid = RadialGrid::exterior(2, 41.0, 800).unwrap();
        let zero = vec![0.0; grid.len()];
        let op = ModeOperator::assemble(&grid, 1.0, &zero, 0.0, Some(1.0)).unwrap();
        let bs = op.boundary_solve().unwrap();
        let k0_1 = 0.421_024_438_240_708_3;
        let k1_1 = 0.601_907_230_197_234_6;
        assert!((bs.flux - k1_1 / k0_1).abs() < 1e-9, "{}", bs.flux);
        let st = op.steklov_flux().unwrap();
        assert!((st - bs.flux).abs() < 1e-10);
    }

    #[test]
    fn flux_equals_energy_of_boundary_solution() {
        let grid = RadialGrid::sphere(0.3, 3, 300).unwrap();
        let pot = grid.sample(|r| 2.0 * (-(r - 2.0f64).powi(2)).exp());
        let op = ModeOperator::assemble(&grid, 0.7, &pot, 6.0, None).unwrap();
        let bs = op.boundary_solve().unwrap();
        assert!((op.energy(&bs.psi) - op.boundary_weight * bs.flux).abs() < 1e-10 * op.energy(&bs.psi).abs());
    }
}
