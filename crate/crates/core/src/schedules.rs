//! Epoch-indexed learning-rate policies.
//!
//! * `step1`: `lr0` until epoch `⌊E/4⌋`, then `lr0 / 10` (the drop happens at that epoch).
//! * `step2`: `lr0 · 0.6^⌊e / ⌈E/4⌉⌋`.
//! * `cosine`: `lr0 · ½(1 + cos(π·e / (E − 1)))`, reaching 0 at the last epoch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    Step1,
    Step2,
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Step1 => "step1",
            ScheduleKind::Step2 => "step2",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "step1" => Ok(ScheduleKind::Step1),
            "step2" => Ok(ScheduleKind::Step2),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!(
                "unknown schedule `{other}` (expected step1, step2 or cosine)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lr0: f64,
    pub total_epochs: usize,
}

const STEP1_DIVISOR: f64 = 10.0;
const STEP2_FACTOR: f64 = 0.6;

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, lr0: f64, total_epochs: usize) -> Result<Self> {
        let spec = Self {
            kind,
            lr0,
            total_epochs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.total_epochs == 0 {
            return Err(Error::invalid("total_epochs must be at least 1"));
        }
        Ok(())
    }
}

pub fn lr_at(spec: &ScheduleSpec, epoch: usize) -> Result<f64> {
    spec.validate()?;
    let e = spec.total_epochs;
    if epoch >= e {
        return Err(Error::invalid(format!("epoch {epoch} outside [0, {e})")));
    }
    Ok(match spec.kind {
        ScheduleKind::Step1 => {
            if epoch < e / 4 {
                spec.lr0
            } else {
                spec.lr0 / STEP1_DIVISOR
            }
        }
        ScheduleKind::Step2 => {
            let period = e.div_ceil(4);
            spec.lr0 * STEP2_FACTOR.powi((epoch / period) as i32)
        }
        ScheduleKind::Cosine => {
            if e == 1 {
                spec.lr0
            } else {
                let t = epoch as f64 / (e - 1) as f64;
                spec.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ScheduleKind, e: usize) -> ScheduleSpec {
        ScheduleSpec::new(kind, 1e-4, e).unwrap()
    }

    #[test]
    fn step1_drops_at_quarter() {
        let s = spec(ScheduleKind::Step1, 100);
        assert_eq!(lr_at(&s, 24).unwrap(), 1e-4);
        assert_eq!(lr_at(&s, 25).unwrap(), 1e-5);
        assert_eq!(lr_at(&s, 99).unwrap(), 1e-5);
    }

    #[test]
    fn step2_compounds() {
        let s = spec(ScheduleKind::Step2, 100);
        assert_eq!(lr_at(&s, 0).unwrap(), 1e-4);
        assert_eq!(lr_at(&s, 25).unwrap(), 1e-4 * 0.6);
        let last = lr_at(&s, 99).unwrap();
        assert!((last - 2.16e-5).abs() < 1e-18);
    }

    #[test]
    fn cosine_endpoints() {
        let s = spec(ScheduleKind::Cosine, 100);
        assert_eq!(lr_at(&s, 0).unwrap(), 1e-4);
        assert!(lr_at(&s, 99).unwrap().abs() < 1e-20);
        let mid = 1e-4 * 0.5 * (1.0 + (std::f64::consts::PI * 49.0 / 99.0).cos());
        assert!((lr_at(&s, 49).unwrap() - mid).abs() < 1e-18);
        assert_eq!(lr_at(&spec(ScheduleKind::Cosine, 1), 0).unwrap(), 1e-4);
    }

    #[test]
    fn distinct_value_counts() {
        for e in [4, 8, 20, 100] {
            let count = |kind| {
                let s = spec(kind, e);
                let mut v: Vec<u64> = (0..e).map(|i| lr_at(&s, i).unwrap().to_bits()).collect();
                v.dedup();
                v.len()
            };
            assert_eq!(count(ScheduleKind::Step1), 2, "E={e}");
            assert_eq!(count(ScheduleKind::Step2), 4, "E={e}");
        }
    }

    #[test]
    fn monotone_nonincreasing() {
        for kind in [ScheduleKind::Step1, ScheduleKind::Step2, ScheduleKind::Cosine] {
            for e in [1, 2, 3, 7, 50, 101] {
                let s = spec(kind, e);
                let lrs: Vec<f64> = (0..e).map(|i| lr_at(&s, i).unwrap()).collect();
                assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{kind} E={e}");
            }
        }
    }

    #[test]
    fn out_of_range() {
        let s = spec(ScheduleKind::Step1, 10);
        assert!(lr_at(&s, 10).is_err());
        assert!(ScheduleSpec::new(ScheduleKind::Step1, 0.0, 10).is_err());
        assert!(ScheduleSpec::new(ScheduleKind::Step1, 1e-3, 0).is_err());
        assert!("step3".parse::<ScheduleKind>().is_err());
    }
}
