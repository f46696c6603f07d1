//! Mode-decomposed linearized Dirichlet operator around a sphere solution:
//! the principal radial pair and the per-mode nondegeneracy margins.

use serde::{Deserialize, Serialize};

use crate::error::{OdpError, Result};
use crate::geometry::{sphere_eigen, SymmetryGroup};
use crate::modeop::{linearized_potential, ModeOperator};
use crate::radial::RadialProfile;

/// `-lambda Delta_l + 1 - p u^{p-1}` on degree `l`, Dirichlet at `r = 1`.
#[derive(Debug, Clone)]
pub struct DirichletModeOperator {
    pub degree: usize,
    pub mu: f64,
    pub op: ModeOperator,
}

impl DirichletModeOperator {
    pub fn new(u: &RadialProfile, degree: usize) -> Result<Self> {
        let mu = sphere_eigen(degree, u.params.d).0;
        let pot = linearized_potential(&u.values, u.params.p);
        let op = ModeOperator::assemble(&u.grid, u.params.lambda, &pot, mu, None)?;
        Ok(DirichletModeOperator { degree, mu, op })
    }

    /// Largest entry of `A - A^T` relative to the largest entry of `A`.
    pub fn asymmetry(&self) -> f64 {
        self.op.matrix.asymmetry() / self.op.matrix.max_abs()
    }

    pub fn eigenvalues(&self, count: usize) -> Result<Vec<f64>> {
        Ok(self.op.dirichlet_eigenpairs(count)?.into_iter().map(|p| p.value).collect())
    }
}

/// Principal radial eigenpair of the linearized Dirichlet operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrincipalPair {
    pub tau: f64,
    /// Unit weighted H^1 norm, positive in the interior, `z(1) = 0`.
    pub z: Vec<f64>,
    pub h1_norm: f64,
    /// Weighted L^2 norm of the stored `z`.
    pub l2_norm: f64,
    /// Second radial eigenvalue.
    pub second: f64,
}

pub fn principal_dirichlet_pair(u: &RadialProfile) -> Result<PrincipalPair> {
    let pairs = DirichletModeOperator::new(u, 0)?.op.dirichlet_eigenpairs(2)?;
    let tau = pairs[0].value;
    if !(tau < 0.0) {
        return Err(OdpError::SignPattern(format!("principal eigenvalue {tau:.6e} is not negative")));
    }
    let mut z = pairs[0].vector.clone();
    let h1 = u.grid.h1_squared(&z).sqrt();
    z.iter_mut().for_each(|v| *v /= h1);
    let l2 = u.grid.integrate(&z.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    Ok(PrincipalPair { tau, z, h1_norm: 1.0, l2_norm: l2, second: pairs[1].value })
}

/// Smallest relevant Dirichlet eigenvalue per degree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginReport {
    pub lambda: f64,
    /// Second eigenvalue of degree 0; the first is the principal one.
    pub radial_second: f64,
    /// `(degree, first eigenvalue)` over the allowed modes.
    pub modes: Vec<(usize, f64)>,
    pub margin: f64,
}

/// Margins at the parameters of `u`. Only group-invariant directions count: the
/// degrees outside the group, degree 1 included, never enter the Dirichlet space.
pub fn mode_margins(u: &RadialProfile, group: &SymmetryGroup) -> Result<MarginReport> {
    group.validate()?;
    let radial_second = principal_dirichlet_pair(u)?.second;
    let modes = group
        .allowed_modes
        .iter()
        .map(|m| Ok((m.degree, DirichletModeOperator::new(u, m.degree)?.eigenvalues(1)?[0])))
        .collect::<Result<Vec<_>>>()?;
    let margin = modes.iter().map(|m| m.1).fold(radial_second, f64::min);
    Ok(MarginReport { lambda: u.params.lambda, radial_second, modes, margin })
}

/// Minimum margin over solutions sampled across a window; nonpositive values
/// invalidate the window.
pub fn dirichlet_margin(profiles: &[RadialProfile], group: &SymmetryGroup) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for u in profiles {
        let rep = mode_margins(u, group)?;
        if !(rep.margin > 0.0) {
            let degree = rep.modes.iter().find(|m| m.1 == rep.margin).map_or(0, |m| m.0);
            return Err(OdpError::WindowInvalid { margin: rep.margin, lambda: rep.lambda, degree });
        }
        worst = worst.min(rep.margin);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProblemParams;
    use crate::radial::solve_radial_from_limit;
    use nalgebra::DMatrix;

    fn reference(intervals: usize) -> RadialProfile {
        let params = ProblemParams::new(2, 3.0, 0.1, 1.0).unwrap();
        solve_radial_from_limit(&params, intervals).unwrap().0
    }

    #[test]
    fn principal_pair_matches_dense_oracle() {
        let u = reference(400);
        let pair = principal_dirichlet_pair(&u).unwrap();
        let op = DirichletModeOperator::new(&u, 0).unwrap().op;
        // Dense pencil on nodes 1..n; the massless pole row is condensed out.
        let n = op.len();
        let a = op.matrix.to_dense();
        let pole = n - 1;
        let inner: Vec<usize> = (1..pole).collect();
        let m = inner.len();
        let schur = DMatrix::from_fn(m, m, |i, j| {
            let (ii, jj) = (inner[i], inner[j]);
            let v = a[ii][jj] - a[ii][pole] * a[pole][jj] / a[pole][pole];
            v / (op.mass[ii] * op.mass[jj]).sqrt()
        });
        let mut ev: Vec<f64> = schur.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((pair.tau - ev[0]).abs() < 1e-9, "{} vs {}", pair.tau, ev[0]);
        assert!((pair.second - ev[1]).abs() < 1e-9);
        assert!(pair.tau < 0.0 && pair.second > 0.0);
        assert!(pair.z[1..pair.z.len() - 1].iter().all(|&v| v > 0.0));
        assert_eq!(pair.z[0], 0.0);
    }

    #[test]
    fn solution_has_negative_rayleigh_quotient() {
        let u = reference(1000);
        let op = DirichletModeOperator::new(&u, 0).unwrap().op;
        let q = op.energy(&u.values);
        let target = -(u.params.p - 1.0) * u.power_integral();
        assert!(((q - target) / target).abs() < 1e-8);
    }

    #[test]
    fn operators_are_symmetric_and_ordered_by_degree() {
        let u = reference(800);
        let mut last = f64::NEG_INFINITY;
        for l in 0..7 {
            let dm = DirichletModeOperator::new(&u, l).unwrap();
            assert!(dm.asymmetry() < 1e-12);
            let e = dm.eigenvalues(1).unwrap()[0];
            assert!(e > last, "degree {l}: {e} <= {last}");
            last = e;
        }
    }

    #[test]
    fn eigenvectors_are_mass_orthogonal() {
        let u = reference(800);
        let pairs = DirichletModeOperator::new(&u, 2).unwrap().op.dirichlet_eigenpairs(3).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let g: f64 = u.grid.quad_weights.iter().zip(&pairs[i].vector).zip(&pairs[j].vector).map(|((m, a), b)| m * a * b).sum();
                assert!(g.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn margins_skip_degree_one() {
        let u = reference(800);
        let group = SymmetryGroup::dihedral(2, 2, 8).unwrap();
        let rep = mode_margins(&u, &group).unwrap();
        assert!(rep.modes.iter().all(|m| m.0 % 2 == 0));
        assert!(rep.radial_second > 0.0);
        assert_eq!(rep.margin, rep.modes.iter().map(|m| m.1).fold(rep.radial_second, f64::min));
    }
}
