use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation time in seconds.
///
/// Always finite and non-negative. Ordering uses `f64::total_cmp`, which for
/// the admissible range coincides with numeric ordering.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(f64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0.0);

    /// Panics on negative or non-finite input; time values are produced by the
    /// simulator itself, so a bad value is a programming error.
    pub fn from_secs(secs: f64) -> Self {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "simulation time must be finite and non-negative, got {secs}"
        );
        SimTime(secs)
    }

    pub fn try_from_secs(secs: f64) -> Option<Self> {
        (secs.is_finite() && secs >= 0.0).then_some(SimTime(secs))
    }

    pub fn as_secs(self) -> f64 {
        self.0
    }

    /// `self + delta` seconds.
    pub fn after(self, delta: f64) -> Self {
        SimTime::from_secs(self.0 + delta)
    }

    pub fn since(self, earlier: SimTime) -> f64 {
        self.0 - earlier.0
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_is_numeric() {
        let a = SimTime::from_secs(1.5);
        let b = SimTime::from_secs(2.0);
        assert!(a < b);
        assert_eq!(a.after(0.5), b);
        assert_eq!(b.since(a), 0.5);
    }

    #[test]
    #[should_panic]
    fn negative_time_panics() {
        SimTime::from_secs(-1.0);
    }

    #[test]
    fn try_from_rejects_nan() {
        assert!(SimTime::try_from_secs(f64::NAN).is_none());
        assert!(SimTime::try_from_secs(-0.1).is_none());
        assert!(SimTime::try_from_secs(0.0).is_some());
    }
}
