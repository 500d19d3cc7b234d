//! Sign constraint on the off-diagonal operator entry.

use crate::math;

/// `e^{−5}`, the magnitude of `g(0)` and the smallest attainable `|K1|`
/// on the linear branch.
pub const FLOOR: f64 = 0.006_737_946_999_085_467;

/// Maps a raw network output to a strictly negative `K1`:
/// `−raw − e^{−5}` for `raw ≥ 0`, `−exp(raw − 5)` otherwise.
#[inline]
pub fn g(raw: f64) -> f64 {
    if raw >= 0.0 {
        -raw - FLOOR
    } else {
        -math::exp(raw - 5.0)
    }
}

/// `dg/draw`.
#[inline]
pub fn g_slope(raw: f64) -> f64 {
    if raw >= 0.0 {
        -1.0
    } else {
        -math::exp(raw - 5.0)
    }
}

/// Right inverse of [`g`]. Values at or above zero have no preimage and
/// are clamped to `−1e−300` first.
pub fn g_inverse(k1: f64) -> f64 {
    let k1 = k1.min(-1e-300);
    if k1 <= -FLOOR {
        -k1 - FLOOR
    } else {
        math::ln(-k1) + 5.0
    }
}

/// Zero row sum: `K0 = −K1_left − K1_right`.
#[inline]
pub fn k0_from_k1(left: f64, right: f64) -> f64 {
    -left - right
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert!((FLOOR - (-5.0f64).exp()).abs() < 1e-18);
        assert!((g(0.0) + 0.006_737_947).abs() < 1e-9);
        assert!((g(5.0) + 5.0 + FLOOR).abs() < 1e-15);
        let tiny = g(-40.0);
        assert!(tiny < 0.0 && (tiny + (-45.0f64).exp()).abs() < 1e-30);
        assert_eq!(k0_from_k1(-1.0, -2.0), 3.0);
        assert_eq!(k0_from_k1(0.0, 0.0), 0.0);
    }

    #[test]
    fn continuous_decreasing_negative_on_grid() {
        let xs: Vec<f64> = (0..10_000)
            .map(|k| -50.0 + 100.0 * k as f64 / 9_999.0)
            .collect();
        for w in xs.windows(2) {
            assert!(g(w[0]) < 0.0 && g(w[1]) < 0.0);
            assert!(g(w[1]) < g(w[0]));
        }
        assert!((g(-1e-12) - g(1e-12)).abs() < 1e-11);
    }

    proptest! {
        #[test]
        fn inverse_round_trip(raw in -30.0f64..30.0) {
            prop_assert!((g_inverse(g(raw)) - raw).abs() < 1e-9 * raw.abs().max(1.0));
        }

        #[test]
        fn slope_matches_difference(raw in -20.0f64..20.0) {
            prop_assume!(raw.abs() > 1e-4);
            let h = 1e-6;
            let fd = (g(raw + h) - g(raw - h)) / (2.0 * h);
            prop_assert!((fd - g_slope(raw)).abs() <= 1e-6 * g_slope(raw).abs().max(1e-3));
        }

        #[test]
        fn k0_nonnegative_for_nonpositive_inputs(a in -10.0f64..=0.0, b in -10.0f64..=0.0) {
            prop_assert!(k0_from_k1(a, b) >= 0.0);
        }
    }
}
