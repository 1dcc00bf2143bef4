//! Confidence-to-hyperparameter map for the corrective pass.
//!
//! `Φ(s) = A + (1 - s) B`, evaluated per component as a linear
//! interpolation between the range endpoints and clamped back into range.
//! Above the skip threshold the corrective pass is disabled (`T' = 0`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CadrError {
    #[error("alignment score {0} is not finite")]
    NonFinite(f64),
    #[error("invalid CADR range for {name}: [{min}, {max}]")]
    Range { name: &'static str, min: f64, max: f64 },
    #[error("skip threshold {0} outside (0, 1]")]
    Threshold(f64),
}

/// Closed interval `[min, max]` with `min <= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn span(self) -> f64 {
        self.max - self.min
    }

    /// `min + u (max - min)`, exact at both ends and clamped into range.
    pub fn lerp(self, u: f64) -> f64 {
        if u >= 1.0 {
            return self.max;
        }
        if u <= 0.0 {
            return self.min;
        }
        (self.min + self.span() * u).clamp(self.min, self.max)
    }

    pub fn contains(self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn validate(self, name: &'static str) -> Result<(), CadrError> {
        if self.min.is_finite() && self.max.is_finite() && self.min <= self.max {
            Ok(())
        } else {
            Err(CadrError::Range {
                name,
                min: self.min,
                max: self.max,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadrConfig {
    pub lambda: Interval,
    pub guidance: Interval,
    pub t_prime: (u32, u32),
    pub rho: Interval,
    pub skip_threshold: f64,
}

impl Default for CadrConfig {
    fn default() -> Self {
        Self {
            lambda: Interval::new(0.12, 0.30),
            guidance: Interval::new(3.6, 5.0),
            t_prime: (16, 30),
            rho: Interval::new(0.60, 0.85),
            skip_threshold: 0.9,
        }
    }
}

impl CadrConfig {
    pub fn validate(&self) -> Result<(), CadrError> {
        self.lambda.validate("lambda")?;
        self.guidance.validate("guidance")?;
        self.rho.validate("rho")?;
        let (t_lo, t_hi) = self.t_prime;
        if t_lo > t_hi || t_lo == 0 {
            return Err(CadrError::Range {
                name: "t_prime",
                min: t_lo as f64,
                max: t_hi as f64,
            });
        }
        if !(self.skip_threshold > 0.0 && self.skip_threshold <= 1.0) {
            return Err(CadrError::Threshold(self.skip_threshold));
        }
        Ok(())
    }
}

/// Corrective-pass hyperparameters. `t_prime == 0` means the pass is skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadrParams {
    pub lambda: f64,
    pub guidance: f64,
    pub t_prime: u32,
    pub rho: f64,
}

impl CadrParams {
    pub fn is_skip(&self) -> bool {
        self.t_prime == 0
    }
}

/// Evaluates `Φ(s)`. Scores outside `[0, 1]` are clamped first.
pub fn cadr_from_alignment(s: f64, config: &CadrConfig) -> Result<CadrParams, CadrError> {
    if !s.is_finite() {
        return Err(CadrError::NonFinite(s));
    }
    let s = s.clamp(0.0, 1.0);
    if s > config.skip_threshold {
        return Ok(CadrParams {
            lambda: config.lambda.min,
            guidance: config.guidance.min,
            t_prime: 0,
            rho: config.rho.min,
        });
    }
    let u = 1.0 - s;
    let (t_lo, t_hi) = config.t_prime;
    let t = (t_lo as f64 + (t_hi - t_lo) as f64 * u + 0.5).floor() as u32;
    Ok(CadrParams {
        lambda: config.lambda.lerp(u),
        guidance: config.guidance.lerp(u),
        t_prime: t.clamp(t_lo, t_hi),
        rho: config.rho.lerp(u),
    })
}

/// [`cadr_from_alignment`] for scores reported on a 0..100 scale.
pub fn cadr_from_percent(score: f64, config: &CadrConfig) -> Result<CadrParams, CadrError> {
    cadr_from_alignment(score / 100.0, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn percent_scores_are_rescaled() {
        let cfg = CadrConfig::default();
        assert_eq!(cadr_from_percent(40.0, &cfg).unwrap(), phi(0.4));
        assert_eq!(cadr_from_percent(0.0, &cfg).unwrap(), phi(0.0));
        assert!(cadr_from_percent(95.0, &cfg).unwrap().is_skip());
        assert!(cadr_from_percent(f64::NAN, &cfg).is_err());
    }

    fn phi(s: f64) -> CadrParams {
        cadr_from_alignment(s, &CadrConfig::default()).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let low = phi(0.0);
        assert_eq!((low.lambda, low.guidance, low.t_prime, low.rho), (0.30, 5.0, 30, 0.85));
        let cfg = CadrConfig {
            skip_threshold: 1.0,
            ..CadrConfig::default()
        };
        let high = cadr_from_alignment(1.0, &cfg).unwrap();
        assert_eq!((high.lambda, high.guidance, high.t_prime, high.rho), (0.12, 3.6, 16, 0.60));
    }

    #[test]
    fn high_confidence_skips() {
        let p = phi(0.95);
        assert!(p.is_skip());
        assert_eq!((p.lambda, p.guidance, p.rho), (0.12, 3.6, 0.60));
        assert!(!phi(0.9).is_skip());
    }

    #[test]
    fn midpoint() {
        let p = phi(0.5);
        assert!((p.lambda - 0.21).abs() < 1e-12);
        assert!((p.guidance - 4.3).abs() < 1e-12);
        assert_eq!(p.t_prime, 23);
        assert!((p.rho - 0.725).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_scores_clamp() {
        assert_eq!(phi(-3.0), phi(0.0));
        assert_eq!(phi(7.0), phi(1.0));
        assert!(matches!(
            cadr_from_alignment(f64::NAN, &CadrConfig::default()),
            Err(CadrError::NonFinite(_))
        ));
        assert!(cadr_from_alignment(f64::INFINITY, &CadrConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CadrConfig::default().validate().is_ok());
        let bad = CadrConfig {
            rho: Interval::new(0.9, 0.1),
            ..CadrConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CadrConfig {
            skip_threshold: 0.0,
            ..CadrConfig::default()
        };
        assert_eq!(bad.validate(), Err(CadrError::Threshold(0.0)));
    }

    proptest! {
        #[test]
        fn monotone_below_threshold(a in 0.0f64..=0.9, b in 0.0f64..=0.9) {
            let (s1, s2) = if a <= b { (a, b) } else { (b, a) };
            let (p1, p2) = (phi(s1), phi(s2));
            prop_assert!(p1.lambda >= p2.lambda);
            prop_assert!(p1.guidance >= p2.guidance);
            prop_assert!(p1.t_prime >= p2.t_prime);
            prop_assert!(p1.rho >= p2.rho);
        }

        #[test]
        fn outputs_stay_in_range(s in -10.0f64..10.0) {
            let cfg = CadrConfig::default();
            let p = phi(s);
            prop_assert!(cfg.lambda.contains(p.lambda));
            prop_assert!(cfg.guidance.contains(p.guidance));
            prop_assert!(cfg.rho.contains(p.rho));
            prop_assert!(p.t_prime == 0 || (16..=30).contains(&p.t_prime));
        }
    }
}
