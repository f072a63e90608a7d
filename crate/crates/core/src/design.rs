//! Randomized-response questioning designs.
//!
//! Every supported design makes the probability of an observed "yes" an
//! affine function of the prevalence of the sensitive attribute,
//! `pi = c + d * prevalence`. This module maps a design and its chance
//! parameters `(p1, p2)` onto `(c, d)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The questioning designs understood by the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RRDesignKind {
    /// Direct questioning, no masking.
    DQ,
    Warner,
    Forced,
    /// Unrelated question model.
    UQM,
    Kuk,
    Crosswise,
    Triangular,
}

impl RRDesignKind {
    pub const ALL: [RRDesignKind; 7] = [
        RRDesignKind::DQ,
        RRDesignKind::Warner,
        RRDesignKind::Forced,
        RRDesignKind::UQM,
        RRDesignKind::Kuk,
        RRDesignKind::Crosswise,
        RRDesignKind::Triangular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RRDesignKind::DQ => "DQ",
            RRDesignKind::Warner => "Warner",
            RRDesignKind::Forced => "Forced",
            RRDesignKind::UQM => "UQM",
            RRDesignKind::Kuk => "Kuk",
            RRDesignKind::Crosswise => "Crosswise",
            RRDesignKind::Triangular => "Triangular",
        }
    }

    /// Whether `p2` enters the response-probability tree.
    pub fn uses_p2(self) -> bool {
        matches!(
            self,
            RRDesignKind::Forced | RRDesignKind::UQM | RRDesignKind::Kuk
        )
    }
}

impl fmt::Display for RRDesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RRDesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RRDesignKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownDesign(s.to_string()))
    }
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {value} is outside [0, 1]")))
    }
}

/// Returns `(c, d)` for a design and its parameters.
///
/// `p2` is ignored by DQ, Warner, Crosswise and Triangular. A degenerate
/// design (`d == 0`) is returned with a warning; fitting code rejects it.
pub fn derive_rr_parameters(kind: RRDesignKind, p1: f64, p2: f64) -> Result<(f64, f64)> {
    check_probability("p1", p1)?;
    if kind.uses_p2() {
        check_probability("p2", p2)?;
    }
    let (c, d) = match kind {
        RRDesignKind::DQ => (0.0, 1.0),
        // yes with prob p1 to the sensitive statement, (1 - p1) to its negation
        RRDesignKind::Warner | RRDesignKind::Crosswise => (1.0 - p1, 2.0 * p1 - 1.0),
        // answer truthfully with prob p1, otherwise a forced "yes" with prob p2
        RRDesignKind::Forced | RRDesignKind::UQM => ((1.0 - p1) * p2, p1),
        // red card drawn with p1 for bearers and p2 for non-bearers
        RRDesignKind::Kuk => (p2, p1 - p2),
        RRDesignKind::Triangular => (p1, 1.0 - p1),
    };
    if d == 0.0 {
        log::warn!("{kind} design with p1 = {p1}, p2 = {p2} is degenerate (d = 0)");
    }
    Ok((c, d))
}

/// One observation's questioning design with its derived `(c, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RRAssignment {
    pub kind: RRDesignKind,
    pub p1: f64,
    pub p2: f64,
    pub c: f64,
    pub d: f64,
}

impl RRAssignment {
    pub fn new(kind: RRDesignKind, p1: f64, p2: f64) -> Result<Self> {
        let (c, d) = derive_rr_parameters(kind, p1, p2)?;
        Ok(RRAssignment { kind, p1, p2, c, d })
    }

    /// Direct questioning.
    pub fn direct() -> Self {
        RRAssignment {
            kind: RRDesignKind::DQ,
            p1: 1.0,
            p2: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.d == 0.0
    }

    /// Closed range of attainable response probabilities, `(min, max)`.
    pub fn attainable(&self) -> (f64, f64) {
        let hi = self.c + self.d;
        if self.d >= 0.0 {
            (self.c, hi)
        } else {
            (hi, self.c)
        }
    }

    /// Response probability for a given prevalence.
    pub fn response_probability(&self, prevalence: f64) -> f64 {
        self.c + self.d * prevalence
    }
}
