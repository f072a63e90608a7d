// Published rational-approximation coefficients are kept at their printed precision.
#![allow(clippy::excessive_precision)]

use statrs::function::gamma;

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `1 - Phi(x)` without cancellation.
pub fn std_normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF on `(0, 1)`.
///
/// Wichura's AS 241 rational approximation followed by one Newton step
/// against [`std_normal_cdf`] on the tail nearer to `p`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    let x = as241(p);
    let x = if p < 0.5 {
        x - (std_normal_cdf(x) - p) / std_normal_pdf(x)
    } else {
        x + (std_normal_upper_tail(x) - (1.0 - p)) / std_normal_pdf(x)
    };
    Ok(x)
}

fn poly(coef: &[f64], r: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * r + c)
}

fn as241(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_854_561,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Upper tail `P(X > x)` of a chi-square variable with `df` degrees of freedom.
pub fn chisq_upper_tail(x: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::Domain(format!(
            "chi-square degrees of freedom must be positive, got {df}"
        )));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "chi-square statistic must be non-negative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    gamma::checked_gamma_ur(0.5 * df, 0.5 * x).map_err(|e| Error::Numerical(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values computed with 40-digit arithmetic (mpmath).
    const PHI_TABLE: [(f64, f64); 9] = [
        (1.959964, 0.975_000_000_903_557_6),
        (-1.959964, 0.024_999_999_096_442_404),
        (-8.0, 6.220_960_574_271_784e-16),
        (-3.5, 2.326_290_790_355_250_4e-4),
        (-1.0, 0.158_655_253_931_457_05),
        (0.5, 0.691_462_461_274_013_1),
        (2.5, 0.993_790_334_674_223_9),
        (6.0, 0.999_999_999_013_412_4),
        (-12.0, 1.776_482_112_077_679e-33),
    ];

    #[test]
    fn normal_cdf_matches_high_precision_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        for (x, want) in PHI_TABLE {
            assert_abs_diff_eq!(std_normal_cdf(x), want, epsilon = 1e-12);
        }
        // relative accuracy deep in the lower tail
        let v = std_normal_cdf(-12.0);
        assert!((v / 1.776_482_112_077_679e-33 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_examples() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(
            std_normal_quantile(0.975).unwrap(),
            1.959964,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            std_normal_quantile(0.025).unwrap(),
            -1.959964,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            std_normal_quantile(0.975).unwrap(),
            -std_normal_quantile(0.025).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn normal_quantile_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_quantile(p).is_err());
        }
    }

    #[test]
    fn quantile_cdf_round_trip() {
        let mut p = 1e-8;
        while p < 1.0 - 1e-8 {
            for q in [p, 1.0 - p] {
                let x = std_normal_quantile(q).unwrap();
                assert!((std_normal_cdf(x) - q).abs() < 1e-12, "p = {q}");
            }
            p *= 1.37;
        }
    }

    #[test]
    fn chisq_examples() {
        assert_eq!(chisq_upper_tail(0.0, 3.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            chisq_upper_tail(1.3862944, 2.0).unwrap(),
            0.499_999_990_279_972_7,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            chisq_upper_tail(12.95, 6.0).unwrap(),
            0.0438,
            epsilon = 5e-5
        );
        // 40-digit references
        let cases = [
            (12.95, 6.0, 0.043_836_857_749_278_68),
            (13.01, 6.0, 0.042_877_420_696_073_2),
            (8.82, 8.0, 0.357_707_492_507_192_9),
            (5.3509, 4.0, 0.253_149_659_441_165_85),
            (0.5, 1.0, 0.479_500_122_186_953_46),
            (3.7, 3.0, 0.295_734_032_375_275_9),
            (10.0, 5.0, 0.075_235_246_146_512_18),
            (25.3, 7.0, 6.712_440_753_544_794e-4),
            (0.01, 1.0, 0.920_344_325_445_942),
        ];
        for (x, df, want) in cases {
            assert_abs_diff_eq!(chisq_upper_tail(x, df).unwrap(), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn chisq_closed_form_df2() {
        for i in 0..50 {
            let x = i as f64 * 0.7;
            assert_abs_diff_eq!(
                chisq_upper_tail(x, 2.0).unwrap(),
                (-x / 2.0).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn chisq_domain() {
        assert!(chisq_upper_tail(-1.0, 2.0).is_err());
        assert!(chisq_upper_tail(1.0, 0.0).is_err());
    }

    #[test]
    fn chisq_strictly_decreasing() {
        for df in 1..=8 {
            let mut prev = 1.0;
            for i in 1..200 {
                let v = chisq_upper_tail(i as f64 * 0.25, df as f64).unwrap();
                assert!(v < prev);
                prev = v;
            }
        }
    }
}
