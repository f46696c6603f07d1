//! Lowest eigenpairs of banded symmetric pencils `A x = sigma M x` with diagonal `M >= 0`.
//!
//! Eigenvalues are isolated by bisection on Sylvester inertia counts and polished
//! by inverse iteration followed by a Rayleigh quotient. Rows with zero mass must
//! form a positive definite block (they carry no finite eigenvalues).

use crate::band::BandMatrix;
use crate::error::{OdpError, Result};

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// M-normalized; largest-magnitude component positive.
    pub vector: Vec<f64>,
}

/// Number of eigenvalues strictly below `sigma`.
pub fn count_below(a: &BandMatrix, mass: &[f64], sigma: f64) -> usize {
    a.inertia_below(sigma, mass)
}

/// Smallest `sigma` with `count_below(sigma) > index`, bracketed to relative `tol`.
pub fn bisect_eigenvalue(a: &BandMatrix, mass: &[f64], index: usize, tol: f64) -> Result<(f64, f64)> {
    let n_finite = mass.iter().filter(|&&m| m > 0.0).count();
    if index >= n_finite {
        return Err(OdpError::Eigen(format!("requested eigenvalue {index} of {n_finite}")));
    }
    let mut lo = -1.0;
    let mut guard = 0;
    while count_below(a, mass, lo) > index {
        lo *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(OdpError::Eigen("no lower bound for the spectrum".into()));
        }
    }
    let mut hi = 1.0_f64.max(lo.abs());
    guard = 0;
    while count_below(a, mass, hi) <= index {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(OdpError::Eigen("no upper bound for the spectrum".into()));
        }
    }
    while hi - lo > tol * (1.0 + lo.abs().min(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if count_below(a, mass, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

fn m_dot(mass: &[f64], x: &[f64], y: &[f64]) -> f64 {
    mass.iter().zip(x).zip(y).map(|((m, x), y)| m * x * y).sum()
}

fn normalize(mass: &[f64], x: &mut [f64]) {
    let nrm = m_dot(mass, x, x).sqrt();
    let big = x.iter().fold(0.0_f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
    let s = if big < 0.0 { -1.0 / nrm } else { 1.0 / nrm };
    x.iter_mut().for_each(|v| *v *= s);
}

/// Eigenvector for a bracketed eigenvalue by inverse iteration.
pub fn eigenpair_near(a: &BandMatrix, mass: &[f64], bracket: (f64, f64)) -> Result<EigenPair> {
    let n = a.dim();
    let width = (bracket.1 - bracket.0).max(1e-14);
    let mut shift = 0.5 * (bracket.0 + bracket.1);
    let lu = loop {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted.add(i, i, -shift * mass[i]);
        }
        match shifted.lu() {
            Ok(lu) => break lu,
            Err(_) => shift += 0.1 * width,
        }
    };
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    for _ in 0..4 {
        let rhs: Vec<f64> = x.iter().zip(mass).map(|(x, m)| x * m).collect();
        x = lu.solve(&rhs);
        normalize(mass, &mut x);
    }
    let ax = a.matvec(&x);
    let value = x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() / m_dot(mass, &x, &x);
    Ok(EigenPair { value, vector: x })
}

/// Relative bracket width before shift-invert takes over.
pub const ISOLATION_TOLERANCE: f64 = 1e-3;

/// Bracket holding eigenvalue `index` and no other, at most `tol` wide (relative).
fn isolate(a: &BandMatrix, mass: &[f64], index: usize, tol: f64) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = bisect_eigenvalue(a, mass, index, tol)?;
    for _ in 0..60 {
        if count_below(a, mass, lo) == index && count_below(a, mass, hi) == index + 1 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if count_below(a, mass, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

/// Inverse iteration at the bracket midpoint, run until the iterate settles;
/// `None` unless the Rayleigh quotient lands inside the bracket, which then holds
/// no other eigenvalue.
fn shift_invert(a: &BandMatrix, mass: &[f64], bracket: (f64, f64)) -> Option<EigenPair> {
    let shift = 0.5 * (bracket.0 + bracket.1);
    let mut shifted = a.clone();
    for (i, m) in mass.iter().enumerate() {
        shifted.add(i, i, -shift * m);
    }
    let lu = shifted.lu().ok()?;
    let mut x: Vec<f64> = (0..a.dim()).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    normalize(mass, &mut x);
    for _ in 0..30 {
        let rhs: Vec<f64> = x.iter().zip(mass).map(|(x, m)| x * m).collect();
        let mut y = lu.solve(&rhs);
        normalize(mass, &mut y);
        let change: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        x = y;
        if m_dot(mass, &change, &change).sqrt() < 1e-13 {
            break;
        }
    }
    let ax = a.matvec(&x);
    let value = x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>() / m_dot(mass, &x, &x);
    (value >= bracket.0 && value <= bracket.1).then_some(EigenPair { value, vector: x })
}

/// The `count` smallest eigenpairs in increasing order.
pub fn lowest_eigenpairs(a: &BandMatrix, mass: &[f64], count: usize) -> Result<Vec<EigenPair>> {
    if mass.len() != a.dim() {
        return Err(OdpError::GridMismatch { expected: a.dim(), got: mass.len() });
    }
    (0..count)
        .map(|j| {
            let bracket = isolate(a, mass, j, ISOLATION_TOLERANCE)?;
            match shift_invert(a, mass, bracket) {
                Some(pair) => Ok(pair),
                None => eigenpair_near(a, mass, bisect_eigenvalue(a, mass, j, 1e-12)?),
            }
        })
        .collect()
}

/// Distance from 0 to the spectrum by inverse iteration at zero shift; converges
/// from above, so it never understates the distance.
pub fn smallest_magnitude(a: &BandMatrix, mass: &[f64]) -> f64 {
    let Ok(lu) = a.lu() else { return 0.0 };
    let mut x: Vec<f64> = (0..a.dim()).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    normalize(mass, &mut x);
    let mut estimate = f64::INFINITY;
    for _ in 0..8 {
        let rhs: Vec<f64> = x.iter().zip(mass).map(|(x, m)| x * m).collect();
        x = lu.solve(&rhs);
        let nrm = m_dot(mass, &x, &x).sqrt();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return 0.0;
        }
        estimate = 1.0 / nrm;
        x.iter_mut().for_each(|v| *v /= nrm);
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn pencil(n: usize) -> (BandMatrix, Vec<f64>) {
        let mut a = BandMatrix::zeros(n, 2, 2);
        let mass: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.3).sin()).collect();
        for i in 0..n {
            a.set(i, i, 4.0 + (i as f64 * 0.7).cos() - 2.5 * (i == n / 3) as u8 as f64);
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
                a.set(i + 1, i, -1.0);
            }
            if i + 2 < n {
                a.set(i, i + 2, 0.2);
                a.set(i + 2, i, 0.2);
            }
        }
        (a, mass)
    }

    #[test]
    fn matches_dense_generalized_eigensolve() {
        let n = 60;
        let (a, mass) = pencil(n);
        let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j) / (mass[i] * mass[j]).sqrt());
        let mut oracle: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pairs = lowest_eigenpairs(&a, &mass, 3).unwrap();
        for (p, o) in pairs.iter().zip(&oracle) {
            assert!((p.value - o).abs() < 1e-12, "{} vs {o}", p.value);
        }
        for i in 0..3 {
            for j in 0..3 {
                let g = m_dot(&mass, &pairs[i].vector, &pairs[j].vector);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn smallest_magnitude_resolves_a_near_singular_pencil() {
        let n = 60;
        let (mut a, mass) = pencil(n);
        let shift = lowest_eigenpairs(&a, &mass, 3).unwrap()[2].value + 1e-9;
        for (i, m) in mass.iter().enumerate() {
            a.add(i, i, -shift * m);
        }
        let est = smallest_magnitude(&a, &mass);
        assert!(est >= 1e-9 * (1.0 - 1e-6) && est < 1e-9 * (1.0 + 1e-6), "{est}");
    }

    #[test]
    fn zero_mass_rows_are_condensed_implicitly() {
        // Last row massless: equals the Schur-complement pencil.
        let n = 30;
        let (mut a, mut mass) = pencil(n);
        mass[n - 1] = 0.0;
        a.set(n - 1, n - 1, 10.0);
        let c: Vec<f64> = (0..n - 1).map(|i| a.get(i, n - 1)).collect();
        let schur = DMatrix::from_fn(n - 1, n - 1, |i, j| {
            (a.get(i, j) - c[i] * c[j] / 10.0) / (mass[i] * mass[j]).sqrt()
        });
        let mut oracle: Vec<f64> = schur.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pairs = lowest_eigenpairs(&a, &mass, 2).unwrap();
        assert!((pairs[0].value - oracle[0]).abs() < 1e-12);
        assert!((pairs[1].value - oracle[1]).abs() < 1e-12);
    }
}
