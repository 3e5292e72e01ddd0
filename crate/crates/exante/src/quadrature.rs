//! Gauss–Hermite rules for expectations over normal variables.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// Physicists' Gauss–Hermite rule: `∫ f(x) e^{-x²} dx ≈ Σ w_j f(x_j)`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Nodes from the Jacobi matrix eigenvalues, polished by Newton steps on
    /// the normalized Hermite functions; weights from the Christoffel sum.
    pub fn new(n: usize) -> HermiteRule {
        assert!(n >= 1, "rule needs at least one node");
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            jac[(k, k - 1)] = b;
            jac[(k - 1, k)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jac)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (psi_n, psi_nm1, _) = hermite_functions(n, *x);
                // d/dx psi_n = sqrt(2n) psi_{n-1} - x psi_n
                let d = (2.0 * n as f64).sqrt() * psi_nm1 - *x * psi_n;
                if d == 0.0 || !d.is_finite() {
                    break;
                }
                let step = psi_n / d;
                if !step.is_finite() {
                    break;
                }
                *x -= step;
                if step.abs() < 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, _, sumsq) = hermite_functions(n, *x);
            weights.push((-*x * *x).exp() / sumsq);
        }
        HermiteRule { nodes, weights }
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_std_normal(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let norm = std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            acc += w * f(scale * x);
        }
        acc / norm
    }
}

/// Hermite functions psi_k(x) = H_k(x) e^{-x²/2} / sqrt(2^k k! sqrt(pi)).
/// Returns (psi_n, psi_{n-1}, Σ_{k<n} psi_k²).
fn hermite_functions(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next =
            (2.0 / (k as f64 + 1.0)).sqrt() * x * cur - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// The 512-node rule used by the CES oracle, built once.
pub fn hermite_512() -> &'static HermiteRule {
    static RULE: OnceLock<HermiteRule> = OnceLock::new();
    RULE.get_or_init(|| HermiteRule::new(512))
}

/// A 64-node rule for nested (two-dimensional) expectations.
pub fn hermite_64() -> &'static HermiteRule {
    static RULE: OnceLock<HermiteRule> = OnceLock::new();
    RULE.get_or_init(|| HermiteRule::new(64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_rule_matches_closed_form() {
        let r = HermiteRule::new(3);
        let x = 1.5f64.sqrt();
        assert!((r.nodes[2] - x).abs() < 1e-14);
        assert!((r.nodes[1]).abs() < 1e-14);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        assert!((r.weights[1] - 2.0 * pi_sqrt / 3.0).abs() < 1e-14);
        assert!((r.weights[0] - pi_sqrt / 6.0).abs() < 1e-14);
    }

    #[test]
    fn normal_moments() {
        let r = hermite_512();
        let sum: f64 = r.weights.iter().sum();
        assert!((sum - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((r.expect_std_normal(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((r.expect_std_normal(|z| z.powi(4)) - 3.0).abs() < 1e-11);
        // E[exp(Z)] = e^{1/2}
        assert!((r.expect_std_normal(f64::exp) - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn rule_is_symmetric() {
        let r = hermite_64();
        let n = r.nodes.len();
        for i in 0..n {
            assert!((r.nodes[i] + r.nodes[n - 1 - i]).abs() < 1e-12);
            assert!((r.weights[i] - r.weights[n - 1 - i]).abs() < 1e-14);
        }
    }
}
