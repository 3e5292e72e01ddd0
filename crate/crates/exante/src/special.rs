use statrs::function::erf::erfc_inv;

/// Standard normal cdf, accurate in both tails.
pub fn phi(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: inverse erfc start, one Newton step on `phi`.
pub fn phi_inv(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    let d = density(x);
    if d > 1e-300 {
        // solve on the smaller tail to keep relative accuracy
        let step = if x < 0.0 {
            (phi(x) - p) / d
        } else {
            (phi(-x) - (1.0 - p)) / -d
        };
        x - step
    } else {
        x
    }
}

/// Pr(l < Z < u) for Z standard normal, without cancellation in the upper tail.
pub fn normal_interval(l: f64, u: f64) -> f64 {
    if !(u > l) {
        return 0.0;
    }
    if l > 0.0 {
        (phi(-l) - phi(-u)).max(0.0)
    } else {
        (phi(u) - phi(l)).max(0.0)
    }
}

pub fn logistic_quantile(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((phi(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((phi(0.0) - 0.5).abs() < 1e-16);
        assert!((phi(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
        assert!((phi_inv(0.75) - 0.674_489_750_196_081_7).abs() < 1e-14);
        assert!((phi_inv(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((phi(phi_inv(0.025)) - 0.025).abs() < 1e-15);
        assert!(phi(-37.0) > 0.0);
        assert!((normal_interval(8.0, f64::INFINITY) - phi(-8.0)).abs() < 1e-25);
    }
}
