//! Gauss-Lobatto-Legendre and Gauss-Legendre rules on the reference interval [-1, 1].

/// Evaluates the Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-14 {
        // endpoint limit of n(n+1)/2 * x^(n+1)
        0.5 * nf * (nf + 1.0) * x.powi(n as i32 + 1)
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// Gauss-Lobatto-Legendre rule with `degree + 1` points, including both endpoints.
#[derive(Debug, Clone)]
pub struct GllRule {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `diff[q][j]` is the derivative of the j-th Lagrange basis polynomial at node q.
    pub diff: Vec<Vec<f64>>,
}

impl GllRule {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 1, "GLL rule needs degree >= 1");
        let n = degree;
        let nf = n as f64;
        let mut nodes = vec![0.0; n + 1];
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        for j in 1..n {
            // interior nodes are the roots of P_n'
            let mut x = -(std::f64::consts::PI * j as f64 / nf).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let d2p = (2.0 * x * dp - nf * (nf + 1.0) * p) / (1.0 - x * x);
                let dx = dp / d2p;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[j] = x;
        }
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (p, _) = legendre(n, x);
                2.0 / (nf * (nf + 1.0) * p * p)
            })
            .collect();
        let pn: Vec<f64> = nodes.iter().map(|&x| legendre(n, x).0).collect();
        let mut diff = vec![vec![0.0; n + 1]; n + 1];
        for q in 0..=n {
            for j in 0..=n {
                diff[q][j] = if q != j {
                    pn[q] / (pn[j] * (nodes[q] - nodes[j]))
                } else if q == 0 {
                    -nf * (nf + 1.0) / 4.0
                } else if q == n {
                    nf * (nf + 1.0) / 4.0
                } else {
                    0.0
                };
            }
        }
        GllRule { degree, nodes, weights, diff }
    }
}

/// Gauss-Legendre rule with `n` interior points.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gll_integrates_polynomials_exactly() {
        let rule = GllRule::new(8);
        // exact up to degree 2*8 - 1 = 15
        for m in 0..=15 {
            let approx: f64 = rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.powi(m))
                .sum();
            let exact = if m % 2 == 1 { 0.0 } else { 2.0 / (m as f64 + 1.0) };
            assert!((approx - exact).abs() < 1e-14, "degree {m}: {approx} vs {exact}");
        }
    }

    #[test]
    fn gll_differentiates_polynomials_exactly() {
        let rule = GllRule::new(7);
        let f: Vec<f64> = rule.nodes.iter().map(|x| x.powi(7) - 2.0 * x * x).collect();
        for (q, &x) in rule.nodes.iter().enumerate() {
            let df: f64 = rule.diff[q].iter().zip(&f).map(|(d, v)| d * v).sum();
            let exact = 7.0 * x.powi(6) - 4.0 * x;
            assert!((df - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 4, 17, 40] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let second: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            if n >= 2 {
                assert!((second - 2.0 / 3.0).abs() < 1e-13);
            }
        }
    }
}
