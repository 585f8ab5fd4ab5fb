//! Standard normal distribution functions evaluated stably in the tails.
//!
//! Likelihood ratios are exponentially sensitive to the copula scores, so
//! every quantity here is available in log form. The quantile uses
//! Wichura's AS241 (PPND16) rational approximation, relative accuracy about
//! 1e-16 over `p >= 1e-300`, followed in the far tail by a Newton step on the
//! log survival function so that arguments below the double-precision range
//! (given as log-probabilities) stay accurate.

use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log Phi(t)`, accurate for arbitrarily negative `t`.
pub fn log_norm_cdf(t: f64) -> f64 {
    if t > 0.0 {
        (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
    } else if t > -30.0 {
        (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series; truncation error < 1e-15 at t = -30.
        let t2 = 1.0 / (t * t);
        let series = 1.0 - t2 * (1.0 - 3.0 * t2 * (1.0 - 5.0 * t2 * (1.0 - 7.0 * t2)));
        -0.5 * t * t - (-t).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `log(1 - Phi(z))`.
pub fn log_norm_sf(z: f64) -> f64 {
    log_norm_cdf(-z)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Upper-tail quantile magnitude from `r = sqrt(-log p)`, `p < 0.075`.
fn tail_branch(r: f64) -> f64 {
    if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    }
}

/// Inverse of the standard normal CDF.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let z = tail_branch((-tail.ln()).sqrt());
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// The `z` with `log(1 - Phi(z)) = log_sf`, for any `log_sf <= 0`.
///
/// Large positive `z` are reached without forming `exp(log_sf)`, which lets
/// callers pass survival probabilities far below `f64::MIN_POSITIVE`.
pub fn norm_quantile_upper_log(log_sf: f64) -> f64 {
    if log_sf.is_nan() || log_sf > 0.0 {
        return f64::NAN;
    }
    if log_sf == 0.0 {
        return f64::NEG_INFINITY;
    }
    if log_sf > 0.075f64.ln() {
        return -norm_quantile(log_sf.exp());
    }
    let r = (-log_sf).sqrt();
    let mut z = tail_branch(r);
    if r > 25.0 {
        // Outside AS241's fitted range: polish on the log survival function.
        for _ in 0..3 {
            let ls = log_norm_sf(z);
            let slope = -(-0.5 * z * z - LN_SQRT_2PI - ls).exp();
            let step = (ls - log_sf) / slope;
            z -= step;
            if step.abs() <= 1e-15 * z.abs() {
                break;
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values from scipy.special.ndtri / log_ndtr.
    #[test]
    fn quantile_matches_reference_values() {
        let cases = [
            (1e-300, -37.047_096_299_361_2),
            (1e-100, -21.273_453_560_965_322),
            (1e-20, -9.262_340_089_798_409),
            (1e-10, -6.361_340_902_404_056),
            (1e-5, -4.264_890_793_922_825),
            (0.01, -2.326_347_874_040_840_8),
            (0.07, -1.475_791_028_179_170_6),
            (0.2, -0.841_621_233_572_914_2),
            (0.8, 0.841_621_233_572_914_3),
            (0.93, 1.475_791_028_179_171),
            (0.999, 3.090_232_306_167_813),
        ];
        for (p, z) in cases {
            assert!(
                rel(norm_quantile(p), z) < 1e-12,
                "p={p}: {} vs {z}",
                norm_quantile(p)
            );
        }
        assert_eq!(norm_quantile(0.5), 0.0);
    }

    #[test]
    fn log_cdf_matches_reference_values() {
        let cases = [
            (-40.0, -804.608_442_013_753_7),
            (-25.0, -316.639_408_008_020_27),
            (-10.0, -53.231_285_150_512_48),
            (-1.0, -1.841_021_645_009_264),
            (0.0, -0.693_147_180_559_945_3),
            (2.0, -0.023_012_909_328_963_486),
            (8.0, -6.220_960_574_271_743e-16),
        ];
        for (t, v) in cases {
            assert!(
                rel(log_norm_cdf(t), v) < 1e-10,
                "t={t}: {} vs {v}",
                log_norm_cdf(t)
            );
        }
    }

    #[test]
    fn upper_log_quantile_inverts_log_sf() {
        for &z in &[-3.0, -0.5, 0.0, 0.7, 1.5, 4.0, 12.0, 30.0, 40.0, 60.0] {
            let back = norm_quantile_upper_log(log_norm_sf(z));
            assert!(
                (back - z).abs() < 1e-9 * (1.0 + z.abs()),
                "z={z} back={back}"
            );
        }
    }

    #[test]
    fn quantile_edges() {
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_quantile(1.0), f64::INFINITY);
        assert!(norm_quantile(1.5).is_nan());
        assert!((norm_cdf(norm_quantile(0.3)) - 0.3).abs() < 1e-15);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }
}
