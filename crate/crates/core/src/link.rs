//! Modified link functions: `pi = c + d * F(eta)` for the four base CDFs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_upper_tail};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFamily {
    Logit,
    Probit,
    Cloglog,
    Cauchit,
}

impl LinkFamily {
    pub const ALL: [LinkFamily; 4] = [
        LinkFamily::Logit,
        LinkFamily::Probit,
        LinkFamily::Cloglog,
        LinkFamily::Cauchit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkFamily::Logit => "logit",
            LinkFamily::Probit => "probit",
            LinkFamily::Cloglog => "cloglog",
            LinkFamily::Cauchit => "cauchit",
        }
    }

    /// Base CDF and its complement, `(F(eta), 1 - F(eta))`, each computed
    /// without cancellation.
    pub fn cdf_pair(self, eta: f64) -> (f64, f64) {
        match self {
            LinkFamily::Logit => {
                if eta >= 0.0 {
                    let e = (-eta).exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                } else {
                    let e = eta.exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                }
            }
            LinkFamily::Probit => {
                // the smaller tail carries the precision; its complement is exact enough
                if eta < 0.0 {
                    let f = std_normal_cdf(eta);
                    (f, 1.0 - f)
                } else {
                    let s = std_normal_upper_tail(eta);
                    (1.0 - s, s)
                }
            }
            LinkFamily::Cloglog => {
                let h = eta.exp();
                (-(-h).exp_m1(), (-h).exp())
            }
            LinkFamily::Cauchit => {
                if eta == 0.0 {
                    (0.5, 0.5)
                } else if eta > 0.0 {
                    let s = (1.0 / eta).atan() / PI;
                    (1.0 - s, s)
                } else {
                    let f = (-1.0 / eta).atan() / PI;
                    (f, 1.0 - f)
                }
            }
        }
    }

    pub fn cdf(self, eta: f64) -> f64 {
        self.cdf_pair(eta).0
    }

    /// Base density `F'(eta)`.
    pub fn density(self, eta: f64) -> f64 {
        match self {
            LinkFamily::Logit => {
                let (f, s) = self.cdf_pair(eta);
                f * s
            }
            LinkFamily::Probit => std_normal_pdf(eta),
            LinkFamily::Cloglog => (eta - eta.exp()).exp(),
            LinkFamily::Cauchit => 1.0 / (PI * (1.0 + eta * eta)),
        }
    }

    /// `F''(eta)`.
    pub fn density_derivative(self, eta: f64) -> f64 {
        match self {
            LinkFamily::Logit => {
                let (f, s) = self.cdf_pair(eta);
                f * s * (s - f)
            }
            LinkFamily::Probit => -eta * std_normal_pdf(eta),
            LinkFamily::Cloglog => self.density(eta) * (1.0 - eta.exp()),
            LinkFamily::Cauchit => {
                let q = 1.0 + eta * eta;
                -2.0 * eta / (PI * q * q)
            }
        }
    }

    /// Base quantile evaluated from a probability `t` and its complement `s`,
    /// using whichever is more accurate.
    fn quantile_pair(self, t: f64, s: f64) -> Result<f64> {
        Ok(match self {
            LinkFamily::Logit => (t / s).ln(),
            LinkFamily::Probit => {
                if t <= 0.5 {
                    std_normal_quantile(t)?
                } else {
                    -std_normal_quantile(s)?
                }
            }
            LinkFamily::Cloglog => {
                if t <= 0.5 {
                    (-(-t).ln_1p()).ln()
                } else {
                    (-s.ln()).ln()
                }
            }
            LinkFamily::Cauchit => {
                if t <= 0.5 {
                    -1.0 / (PI * t).tan()
                } else {
                    1.0 / (PI * s).tan()
                }
            }
        })
    }

    /// Standard (unmodified) quantile `F^{-1}(t)`.
    pub fn quantile(self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "{} quantile needs a probability in (0, 1), got {t}",
                self.name()
            )));
        }
        self.quantile_pair(t, 1.0 - t)
    }
}

impl fmt::Display for LinkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.strip_prefix("RRlink.").unwrap_or(s);
        LinkFamily::ALL
            .into_iter()
            .find(|l| l.name() == key)
            .ok_or_else(|| Error::UnknownLink(s.to_string()))
    }
}

/// `c + d * F(eta)`; infinite `eta` maps to the interval endpoints.
pub fn mean(eta: f64, c: f64, d: f64, family: LinkFamily) -> f64 {
    let (f, s) = family.cdf_pair(eta);
    if f <= 0.5 {
        c + d * f
    } else {
        (c + d) - d * s
    }
}

/// `(pi, 1 - pi)` with each side computed from the tail that keeps it accurate.
pub fn mean_pair(eta: f64, c: f64, d: f64, family: LinkFamily) -> (f64, f64) {
    let (f, s) = family.cdf_pair(eta);
    if f <= 0.5 {
        let pi = c + d * f;
        (pi, (1.0 - c) - d * f)
    } else {
        (c + d - d * s, (1.0 - c - d) + d * s)
    }
}

/// Inverse of [`mean`]: `F^{-1}((pi - c) / d)`.
pub fn link(pi: f64, c: f64, d: f64, family: LinkFamily) -> Result<f64> {
    if d == 0.0 {
        return Err(Error::Domain(
            "link undefined for a degenerate design (d = 0)".into(),
        ));
    }
    let upper = c + d;
    let (lo, hi) = if d > 0.0 { (c, upper) } else { (upper, c) };
    if !(pi > lo && pi < hi) {
        return Err(Error::Domain(format!(
            "probability {pi} outside the attainable interval ({lo}, {hi})"
        )));
    }
    let t = (pi - c) / d;
    let s = (upper - pi) / d;
    family.quantile_pair(t, s)
}

/// `d pi / d eta = d * F'(eta)`.
pub fn mean_derivative(eta: f64, _c: f64, d: f64, family: LinkFamily) -> f64 {
    d * family.density(eta)
}

/// `d^2 pi / d eta^2 = d * F''(eta)`.
pub fn mean_second_derivative(eta: f64, d: f64, family: LinkFamily) -> f64 {
    d * family.density_derivative(eta)
}

/// Clamps `pi` into `[lo + eps, hi - eps]` with `eps = 1e-10 * |d|`, where
/// `[lo, hi]` is the attainable interval.
pub fn clamp_probability(pi: f64, c: f64, d: f64) -> f64 {
    let eps = 1e-10 * d.abs();
    let upper = c + d;
    let (lo, hi) = if d >= 0.0 { (c, upper) } else { (upper, c) };
    pi.clamp(lo + eps, hi - eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mean_examples() {
        assert_eq!(mean(0.0, 0.0, 1.0, LinkFamily::Logit), 0.5);
        assert_abs_diff_eq!(
            mean(0.0, 0.1675, 0.75, LinkFamily::Probit),
            0.5425,
            epsilon = 1e-15
        );
        let want = 0.3 + 0.4 / (1.0 + 1.2f64.exp());
        assert_abs_diff_eq!(
            mean(-1.2, 0.3, 0.4, LinkFamily::Logit),
            want,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(want, 0.392_590_086_600_392_9, epsilon = 1e-15);
    }

    #[test]
    fn mean_at_infinity_hits_endpoints() {
        for fam in LinkFamily::ALL {
            assert_abs_diff_eq!(mean(f64::INFINITY, 0.3, 0.4, fam), 0.7, epsilon = 1e-15);
            assert_abs_diff_eq!(mean(f64::NEG_INFINITY, 0.3, 0.4, fam), 0.3, epsilon = 1e-15);
        }
    }

    #[test]
    fn link_examples() {
        assert_eq!(link(0.5, 0.0, 1.0, LinkFamily::Logit).unwrap(), 0.0);
        assert_abs_diff_eq!(
            link(0.392_590_086_600_392_9, 0.3, 0.4, LinkFamily::Logit).unwrap(),
            -1.2,
            epsilon = 1e-12
        );
        let err = link(0.2, 0.3, 0.4, LinkFamily::Logit).unwrap_err();
        assert!(err.to_string().contains("(0.3, 0.7"), "{err}");
        assert!(link(0.7, 0.3, 0.4, LinkFamily::Probit).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(mean_derivative(0.0, 0.0, 1.0, LinkFamily::Logit), 0.25);
        assert_abs_diff_eq!(
            mean_derivative(0.0, 0.3, 0.4, LinkFamily::Logit),
            0.1,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            mean_derivative(0.0, 0.0, 1.0, LinkFamily::Cauchit),
            1.0 / PI,
            epsilon = 1e-15
        );
    }

    #[test]
    fn textbook_links_when_unmodified() {
        for &p in &[0.05, 0.3, 0.5, 0.8, 0.97] {
            assert_abs_diff_eq!(
                link(p, 0.0, 1.0, LinkFamily::Logit).unwrap(),
                (p / (1.0 - p)).ln(),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                link(p, 0.0, 1.0, LinkFamily::Cloglog).unwrap(),
                (-(1.0 - p).ln()).ln(),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                link(p, 0.0, 1.0, LinkFamily::Cauchit).unwrap(),
                (PI * (p - 0.5)).tan(),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                std_normal_cdf(link(p, 0.0, 1.0, LinkFamily::Probit).unwrap()),
                p,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for fam in LinkFamily::ALL {
            for (c, d) in [(0.0, 1.0), (0.1675, 0.75), (0.8, -0.6)] {
                let mut eta = -6.0;
                while eta <= 6.0 {
                    let fd = (mean(eta + h, c, d, fam) - mean(eta - h, c, d, fam)) / (2.0 * h);
                    let an = mean_derivative(eta, c, d, fam);
                    assert!(
                        (fd - an).abs() <= 1e-6 * an.abs() + 1e-10,
                        "{fam} eta={eta}: {fd} vs {an}"
                    );
                    let fd2 = (mean_derivative(eta + h, c, d, fam)
                        - mean_derivative(eta - h, c, d, fam))
                        / (2.0 * h);
                    let an2 = mean_second_derivative(eta, d, fam);
                    assert!((fd2 - an2).abs() <= 1e-6 * an2.abs().max(1e-6));
                    eta += 0.37;
                }
            }
        }
    }

    #[test]
    fn clamping_stays_inside_interval() {
        let v = clamp_probability(0.7, 0.3, 0.4);
        assert!(v < 0.7 && v > 0.69);
        let v = clamp_probability(0.1, 0.8, -0.6);
        assert!(v > 0.2);
    }

    #[test]
    fn parse_names() {
        assert_eq!("probit".parse::<LinkFamily>().unwrap(), LinkFamily::Probit);
        assert_eq!(
            "RRlink.cloglog".parse::<LinkFamily>().unwrap(),
            LinkFamily::Cloglog
        );
        assert!("identity".parse::<LinkFamily>().is_err());
    }

    fn valid_design() -> impl Strategy<Value = (f64, f64)> {
        (0.0f64..1.0, 0.02f64..1.0, any::<bool>()).prop_map(|(lo, width, neg)| {
            let width = width * (1.0 - lo);
            let width = width.max(1e-3);
            let lo = lo.min(1.0 - width);
            if neg {
                (lo + width, -width)
            } else {
                (lo, width)
            }
        })
    }

    proptest! {
        // Round trip accurate to the conditioning of pi as a double.
        #[test]
        fn round_trip((c, d) in valid_design(), eta in -8.0f64..8.0, k in 0usize..4) {
            let fam = LinkFamily::ALL[k];
            let pi = mean(eta, c, d, fam);
            let (lo, hi) = if d > 0.0 { (c, c + d) } else { (c + d, c) };
            prop_assume!(pi > lo && pi < hi);
            let back = link(pi, c, d, fam).unwrap();
            let ulp = f64::EPSILON * pi.abs().max(c.abs()).max((c + d).abs());
            let bound = 1e-10 + 4.0 * ulp / (d.abs() * fam.density(eta));
            prop_assert!((back - eta).abs() <= bound, "{} {} {} {} {}", fam, c, d, eta, back);
        }

        #[test]
        fn monotone_in_eta((c, d) in valid_design(), eta in -6.0f64..6.0, k in 0usize..4) {
            let fam = LinkFamily::ALL[k];
            let a = mean(eta, c, d, fam);
            let b = mean(eta + 0.05, c, d, fam);
            // saturation in the far tail can make neighbouring values equal
            let strict = eta.abs() < 3.0;
            if d > 0.0 {
                prop_assert!(b > a || (!strict && b == a))
            } else {
                prop_assert!(b < a || (!strict && b == a))
            }
            prop_assert!(mean_derivative(eta, c, d, fam).signum() == d.signum());
        }
    }
}
