//! One-dimensional convex minimization on an interval via the derivative.

/// Minimizer of a convex function on `[lo, hi]` given its derivative.
///
/// Illinois regula falsi on the derivative with a bisection safeguard; stops
/// when the bracket is below `tol` (absolute) or the derivative vanishes.
pub fn argmin_convex<F: Fn(f64) -> f64>(df: F, lo: f64, hi: f64, tol: f64) -> f64 {
    debug_assert!(lo <= hi);
    let mut a = lo;
    let mut b = hi;
    let mut fa = df(a);
    if fa >= 0.0 {
        return a;
    }
    let mut fb = df(b);
    if fb <= 0.0 {
        return b;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        // keep regula falsi steps away from the bracket ends
        let w = b - a;
        if !(c > a + 0.01 * w && c < b - 0.01 * w) {
            c = 0.5 * (a + b);
        }
        let fc = df(c);
        if fc == 0.0 {
            return c;
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_interior_and_clipped() {
        let x = argmin_convex(|x| 2.0 * (x - 0.3), 0.0, 1.0, 1e-14);
        assert!((x - 0.3).abs() < 1e-12);
        assert_eq!(argmin_convex(|x| 2.0 * (x - 2.0), 0.0, 1.0, 1e-14), 1.0);
        assert_eq!(argmin_convex(|x| 2.0 * (x + 2.0), 0.0, 1.0, 1e-14), 0.0);
    }

    #[test]
    fn steep_reciprocal() {
        // d/dx [1/x + 100 x] has its root at 0.1
        let x = argmin_convex(|x| -1.0 / (x * x) + 100.0, 1e-3, 10.0, 1e-14);
        assert!((x - 0.1).abs() < 1e-12);
    }
}
