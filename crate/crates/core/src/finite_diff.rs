//! Central finite differences with one Richardson extrapolation step, used as
//! independent oracles for analytic derivatives.

/// First derivative of `f` at `x` with step `h`.
pub fn d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let c = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    (4.0 * c(0.5 * h) - c(h)) / 3.0
}

/// Mixed second derivative in (x, y).
pub fn d11(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    let c = |s: f64| {
        let (hx, hy) = (s * hx, s * hy);
        (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy))
            / (4.0 * hx * hy)
    };
    (4.0 * c(0.5) - c(1.0)) / 3.0
}

/// Mixed third derivative in all three arguments.
pub fn d111(f: impl Fn(f64, f64, f64) -> f64, z: [f64; 3], h: [f64; 3]) -> f64 {
    let c = |s: f64| {
        let h = h.map(|x| s * x);
        let mut acc = 0.0;
        for corner in 0..8u8 {
            let sign = |bit: u8| if corner & (1 << bit) == 0 { 1.0 } else { -1.0 };
            let (sx, sy, sz) = (sign(0), sign(1), sign(2));
            acc += sx * sy * sz * f(z[0] + sx * h[0], z[1] + sy * h[1], z[2] + sz * h[2]);
        }
        acc / (8.0 * h[0] * h[1] * h[2])
    };
    (4.0 * c(0.5) - c(1.0)) / 3.0
}

const STEP_LADDER: [f64; 9] = [16.0, 8.0, 4.0, 2.0, 1.0, 0.5, 0.25, 0.125, 0.0625];

/// Evaluates `estimate` at step multipliers 16 down to 1/16 and returns
/// the value whose two neighbours agree most closely, balancing
/// truncation against rounding without knowing the function's scale.
pub fn stable(estimate: impl Fn(f64) -> f64) -> f64 {
    let values: Vec<f64> = STEP_LADDER.iter().map(|&m| estimate(m)).collect();
    (1..values.len() - 1)
        .min_by(|&i, &j| {
            let spread = |k: usize| (values[k + 1] - values[k - 1]).abs();
            spread(i).total_cmp(&spread(j))
        })
        .map(|i| values[i])
        .expect("ladder has interior points")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        assert!((d1(|x| x.powi(3), 2.0, 1e-3) - 12.0).abs() < 1e-9);
        assert!((d11(|x, y| x * x * y * y, 1.0, 2.0, 1e-3, 1e-3) - 8.0).abs() < 1e-7);
        assert!((d111(|x, y, z| x * y * z * z, [1.0, 1.0, 3.0], [1e-2; 3]) - 6.0).abs() < 1e-8);
    }

    #[test]
    fn stable_picks_the_plateau() {
        // rounding noise injected at small steps, truncation bias at large ones
        let est = |m: f64| {
            let noise = if m < 0.4 {
                1e-3 / m
                    * if (m.log2() as i32) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
            } else {
                0.0
            };
            1.0 + noise + if m > 3.0 { 1e-3 * m } else { 0.0 }
        };
        assert_eq!(stable(est), 1.0);
        let f = |x: f64| (3.0 * x).exp() * 1e-8 + 1.0;
        let got = stable(|m| d1(f, 0.2, 1e-4 * m));
        assert!((got - 3e-8 * 0.6f64.exp()).abs() < 1e-12, "{got}");
    }

    #[test]
    fn smooth_function() {
        let got = d111(
            |x, y, z| (x + 2.0 * y + 3.0 * z).sin(),
            [0.1, 0.2, 0.3],
            [1e-2; 3],
        );
        let expected = -6.0 * (1.4f64).cos();
        assert!((got - expected).abs() < 1e-7, "{got} vs {expected}");
    }
}
