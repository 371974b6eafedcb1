//! Interval-censored observations and datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CovariateProfile;

/// One subject: the censoring interval `(left, right]`, the event indicator
/// and the covariate profile. Right censoring is encoded as `right = +inf`
/// with `event = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalObservation {
    pub left: f64,
    pub right: f64,
    pub event: bool,
    pub profile: CovariateProfile,
}

impl IntervalObservation {
    pub fn new(left: f64, right: f64, event: bool, profile: CovariateProfile) -> Result<Self> {
        if !left.is_finite() || left < 0.0 {
            return Err(Error::InvalidData(format!(
                "left limit must be finite and non-negative, got {left}"
            )));
        }
        if !(left < right) {
            return Err(Error::InvalidData(format!(
                "interval limits must satisfy left < right, got ({left}, {right})"
            )));
        }
        if event != right.is_finite() {
            return Err(Error::InvalidData(format!(
                "event indicator {event} inconsistent with right limit {right}"
            )));
        }
        Ok(Self { left, right, event, profile })
    }

    /// Interval-censored observation with both limits finite.
    pub fn interval(left: f64, right: f64, profile: CovariateProfile) -> Result<Self> {
        Self::new(left, right, true, profile)
    }

    /// Right-censored observation at `left`.
    pub fn right_censored(left: f64, profile: CovariateProfile) -> Result<Self> {
        Self::new(left, f64::INFINITY, false, profile)
    }
}

/// An ordered collection of observations with consistent covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<IntervalObservation>,
    q1: usize,
    q2: usize,
}

impl Dataset {
    pub fn new(observations: Vec<IntervalObservation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::InvalidData("dataset must contain at least one observation".into()))?;
        let q1 = first.profile.z().len() - 1;
        let q2 = first.profile.x().len();
        for (i, obs) in observations.iter().enumerate() {
            if obs.profile.z().len() != q1 + 1 || obs.profile.x().len() != q2 {
                return Err(Error::InvalidData(format!(
                    "observation {i} has inconsistent covariate dimensions"
                )));
            }
        }
        let n_events = observations.iter().filter(|o| o.event).count();
        if n_events == 0 || n_events == observations.len() {
            log::warn!(
                "dataset has {} interval-censored of {} observations; a cure model fit needs \
                 both event and censored subjects to be well posed",
                n_events,
                observations.len()
            );
        }
        Ok(Self { observations, q1, q2 })
    }

    pub fn observations(&self) -> &[IntervalObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Incidence covariate dimension (excluding the intercept).
    pub fn q1(&self) -> usize {
        self.q1
    }

    /// Latency covariate dimension.
    pub fn q2(&self) -> usize {
        self.q2
    }

    /// Number of interval-censored observations.
    pub fn num_events(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    /// Number of right-censored observations.
    pub fn num_right_censored(&self) -> usize {
        self.len() - self.num_events()
    }

    /// All finite interval limits, pooled: every left limit plus each finite
    /// right limit.
    pub fn pooled_finite_limits(&self) -> Vec<f64> {
        let mut limits = Vec::with_capacity(2 * self.len());
        for obs in &self.observations {
            limits.push(obs.left);
            if obs.right.is_finite() {
                limits.push(obs.right);
            }
        }
        limits
    }
}
