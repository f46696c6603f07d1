//! Banded matrices: LU with partial pivoting and inertia counts.

use crate::error::{OdpError, Result};

/// Square banded matrix with `kl` sub-diagonals and `ku` super-diagonals, stored by rows.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Columns `j` with a stored entry in row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.data[self.idx(i, j)] * x[j]).sum())
            .collect()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in self.row_range(i) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Restriction to the index set `keep` (must be increasing and contiguous
    /// enough that the band structure survives, e.g. dropping boundary rows).
    pub fn submatrix(&self, keep: &[usize]) -> BandMatrix {
        let m = keep.len();
        let mut out = BandMatrix::zeros(m, self.kl, self.ku);
        for (a, &i) in keep.iter().enumerate() {
            for b in out.row_range(a) {
                let j = keep[b];
                if self.in_band(i, j) && j < self.n {
                    out.set(a, b, self.get(i, j));
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    /// LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let ku2 = self.kl + self.ku;
        let w = kl + ku2 + 1;
        let mut a = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        for i in 0..n {
            for j in self.row_range(i) {
                a[at(i, j)] = self.get(i, j);
            }
        }
        let mut piv = vec![0usize; n];
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl + 1).min(n);
            let last_col = (k + ku2 + 1).min(n);
            let mut p = k;
            let mut best = a[at(k, k)].abs();
            for i in k + 1..last_row {
                let v = a[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 {
                return Err(OdpError::Singular(k));
            }
            piv[k] = p;
            if p != k {
                for j in k..last_col {
                    a.swap(at(k, j), at(p, j));
                }
            }
            let d = a[at(k, k)];
            for i in k + 1..last_row {
                let l = a[at(i, k)] / d;
                a[at(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..last_col {
                        a[at(i, j)] -= l * a[at(k, j)];
                    }
                }
            }
        }
        Ok(BandLu { n, kl, ku2, data: a, piv })
    }

    /// Number of negative pivots of the unpivoted elimination of the (symmetric)
    /// matrix `self - shift * diag(mass)`; by Sylvester's law this is the number of
    /// generalized eigenvalues below `shift`.
    pub fn inertia_below(&self, shift: f64, mass: &[f64]) -> usize {
        assert_eq!(mass.len(), self.n);
        let n = self.n;
        let b = self.kl.max(self.ku);
        let w = 2 * b + 1;
        let mut a = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + b - i);
        for i in 0..n {
            for j in self.row_range(i) {
                a[at(i, j)] = self.get(i, j);
            }
            a[at(i, i)] -= shift * mass[i];
        }
        let tiny = self.max_abs().max(1.0) * 1e-15;
        let mut neg = 0;
        for k in 0..n {
            let mut d = a[at(k, k)];
            if d.abs() < tiny {
                d = if d < 0.0 { -tiny } else { tiny };
            }
            if d < 0.0 {
                neg += 1;
            }
            let last = (k + b + 1).min(n);
            for i in k + 1..last {
                let l = a[at(i, k)] / d;
                if l != 0.0 {
                    for j in k + 1..last {
                        a[at(i, j)] -= l * a[at(k, j)];
                    }
                }
            }
        }
        neg
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku2: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let kl = self.kl;
        let w = kl + self.ku2 + 1;
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        let a = &self.data;
        let mut x = rhs.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..(k + kl + 1).min(n) {
                    x[i] -= a[at(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..(k + self.ku2 + 1).min(n) {
                s -= a[at(k, j)] * x[j];
            }
            x[k] = s / a[at(k, k)];
        }
        x
    }

    /// Ratio of the largest to the smallest pivot magnitude of U; a cheap
    /// lower bound for the condition number.
    pub fn pivot_ratio(&self) -> f64 {
        let w = self.kl + self.ku2 + 1;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for k in 0..self.n {
            let v = self.data[k * w + self.kl].abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    proptest! {
        #[test]
        fn lu_solve_inverts_matvec(
            n in 3usize..40,
            kl in 0usize..4,
            ku in 0usize..4,
            seed in 0u64..1000,
        ) {
            let mut m = BandMatrix::zeros(n, kl, ku);
            let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            };
            for i in 0..n {
                for j in m.row_range(i) {
                    m.set(i, j, next());
                }
                // keep it safely nonsingular while allowing pivoting to matter
                m.add(i, i, if i % 3 == 0 { 0.01 } else { 2.0 });
            }
            let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let b = m.matvec(&x);
            let y = m.lu().unwrap().solve(&b);
            let dense = m.to_dense();
            let r = dense_matvec(&dense, &y);
            for i in 0..n {
                prop_assert!((r[i] - b[i]).abs() < 1e-8 * (1.0 + b[i].abs()));
            }
        }
    }

    #[test]
    fn inertia_counts_negative_eigenvalues_of_laplacian() {
        // 1D Dirichlet Laplacian, eigenvalues 2 - 2 cos(j pi / (n+1))
        let n = 30;
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.set(i, i, 2.0);
            if i + 1 < n {
                m.set(i, i + 1, -1.0);
                m.set(i + 1, i, -1.0);
            }
        }
        let mass = vec![1.0; n];
        for shift in [0.1, 0.5, 1.0, 2.5, 3.9] {
            let expected = (1..=n)
                .filter(|&j| {
                    2.0 - 2.0 * (j as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos() < shift
                })
                .count();
            assert_eq!(m.inertia_below(shift, &mass), expected);
        }
    }
}
