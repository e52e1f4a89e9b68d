//! Classical allocation rules and DBCD smoothing.

fn clip(e: f64, delta: f64) -> f64 {
    e.clamp(delta, 1.0 - delta)
}

/// Neyman allocation σ1 / (σ1 + σ0), clipped; 0.5 when both are zero.
pub fn neyman(sigma1: f64, sigma0: f64, delta: f64) -> f64 {
    let s = sigma1 + sigma0;
    if !(s > 0.0) {
        return 0.5;
    }
    clip(sigma1 / s, delta)
}

/// Failure-reduction rule √μ1 / (√μ1 + √μ0), clipped; 0.5 when both are zero.
pub fn rosenberger(mu1: f64, mu0: f64, delta: f64) -> f64 {
    let (r1, r0) = (mu1.max(0.0).sqrt(), mu0.max(0.0).sqrt());
    if !(r1 + r0 > 0.0) {
        return 0.5;
    }
    clip(r1 / (r1 + r0), delta)
}

/// Hu–Zhang allocation function g(f, π) pulling the observed treated
/// fraction `f` toward `target`.
pub fn dbcd_smooth(target: f64, current_fraction: f64, n_assigned: usize, gamma: f64, delta: f64) -> f64 {
    if n_assigned == 0 {
        return target;
    }
    if current_fraction <= 0.0 {
        return 1.0 - delta;
    }
    if current_fraction >= 1.0 {
        return delta;
    }
    let pi = target;
    let f = current_fraction;
    let up = pi * (pi / f).powf(gamma);
    let down = (1.0 - pi) * ((1.0 - pi) / (1.0 - f)).powf(gamma);
    clip(up / (up + down), delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neyman_examples() {
        assert!((0.36f64 / (0.36 + 2.06) - 0.1488).abs() < 5e-5);
        assert_eq!(neyman(0.36, 2.06, 0.1), 0.36 / (0.36 + 2.06));
        assert_eq!(neyman(0.36, 2.06, 0.2), 0.2);
        assert!((neyman(0.82, 0.31, 0.1) - 0.7257).abs() < 5e-5);
        assert_eq!(neyman(1.3, 1.3, 0.1), 0.5);
        assert_eq!(neyman(0.0, 0.0, 0.1), 0.5);
    }

    #[test]
    fn rosenberger_examples() {
        assert!((rosenberger(0.78, 0.57, 0.1) - 0.539127).abs() < 1e-6);
        assert!((rosenberger(0.84, 0.63, 0.1) - 0.535898).abs() < 1e-6);
        assert_eq!(rosenberger(0.4, 0.4, 0.1), 0.5);
        assert_eq!(rosenberger(0.0, 0.0, 0.1), 0.5);
    }

    #[test]
    fn dbcd_examples() {
        // 0.864 / (0.864 + 0.256)
        assert!((dbcd_smooth(0.6, 0.5, 10, 2.0, 0.1) - 0.771429).abs() < 1e-6);
        assert_eq!(dbcd_smooth(0.6, 0.3, 0, 2.0, 0.1), 0.6);
        assert_eq!(dbcd_smooth(0.6, 0.0, 3, 2.0, 0.1), 0.9);
        assert_eq!(dbcd_smooth(0.6, 1.0, 3, 2.0, 0.1), 0.1);
    }

    proptest! {
        #[test]
        fn dbcd_fixed_point_and_zero_gamma(pi in 0.1f64..0.9, f in 0.01f64..0.99) {
            prop_assert!((dbcd_smooth(pi, pi, 5, 2.0, 0.05) - pi).abs() < 1e-12);
            prop_assert!((dbcd_smooth(pi, f, 5, 0.0, 0.05) - pi).abs() < 1e-12);
        }

        #[test]
        fn dbcd_pulls_toward_target(pi in 0.2f64..0.8, f in 0.01f64..0.99) {
            let g = dbcd_smooth(pi, f, 5, 2.0, 0.01);
            if f < pi { prop_assert!(g >= pi - 1e-12); }
            if f > pi { prop_assert!(g <= pi + 1e-12); }
        }
    }
}
