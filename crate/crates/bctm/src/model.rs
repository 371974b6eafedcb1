//! Core model functions for the Box-Cox transformation cure model (BCTM).
//!
//! The BCTM unifies the mixture cure model (`alpha = 1`) and the
//! promotion-time cure model (`alpha = 0`) in one family indexed by the
//! transformation parameter `alpha in [0, 1]`. Incidence is linked to
//! covariates `z` through `beta`; latency follows a proportional-hazards
//! structure on covariates `x` with a piecewise-linear baseline hazard
//! defined on a knot grid.
//!
//! Everything in this module is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::clamped_linear_predictor;

/// Below this value of `alpha` all transformation branches switch to the
/// `alpha = 0` (logarithmic) formulas to avoid catastrophic cancellation.
pub const ALPHA_BRANCH_EPS: f64 = 1e-8;

/// Ordered cut-points `tau[0] < tau[1] < ... < tau[B]` with `tau[0] = 0`,
/// defining the piecewise-linear baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KnotGrid {
    tau: Vec<f64>,
}

impl KnotGrid {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.len() < 2 {
            return Err(Error::InvalidKnots(format!(
                "need at least two cut-points, got {}",
                tau.len()
            )));
        }
        if tau[0] != 0.0 {
            return Err(Error::InvalidKnots(format!(
                "first cut-point must be 0, got {}",
                tau[0]
            )));
        }
        for w in tau.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidKnots(format!(
                    "cut-points must be finite and strictly increasing, got {:?} before {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// Number of segments `B` (one less than the number of cut-points).
    pub fn num_segments(&self) -> usize {
        self.tau.len() - 1
    }

    /// The last cut-point `tau[B]`.
    pub fn upper(&self) -> f64 {
        *self.tau.last().unwrap()
    }
}

impl TryFrom<Vec<f64>> for KnotGrid {
    type Error = Error;
    fn try_from(tau: Vec<f64>) -> Result<Self> {
        KnotGrid::new(tau)
    }
}

impl From<KnotGrid> for Vec<f64> {
    fn from(grid: KnotGrid) -> Self {
        grid.tau
    }
}

/// Full parameter vector `theta = (alpha, psi, beta, gamma)`.
///
/// `psi` holds the baseline hazard values at the cut-points (length `B + 1`),
/// `beta` the incidence coefficients (intercept first, length `q1 + 1`) and
/// `gamma` the latency PH coefficients (length `q2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BctmParameters {
    pub alpha: f64,
    pub psi: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl BctmParameters {
    pub fn new(alpha: f64, psi: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let params = Self { alpha, psi, beta, gamma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameters(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.psi.is_empty() || self.psi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParameters(
                "psi must be non-empty with finite non-negative entries".into(),
            ));
        }
        if self.beta.is_empty() {
            return Err(Error::InvalidParameters(
                "beta must contain at least the intercept".into(),
            ));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.beta) || !finite(&self.gamma) {
            return Err(Error::InvalidParameters(
                "beta and gamma entries must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Checks agreement with a knot grid: `len(psi) == len(tau)`.
    pub fn validate_against(&self, knots: &KnotGrid) -> Result<()> {
        self.validate()?;
        if self.psi.len() != knots.tau().len() {
            return Err(Error::InvalidParameters(format!(
                "psi has length {} but the knot grid has {} cut-points",
                self.psi.len(),
                knots.tau().len()
            )));
        }
        Ok(())
    }

    /// Total number of parameters `B + q1 + q2 + 3`.
    pub fn len(&self) -> usize {
        1 + self.psi.len() + self.beta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattens to `[alpha, psi.., beta.., gamma..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.alpha);
        v.extend_from_slice(&self.psi);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v
    }

    /// Inverse of [`BctmParameters::to_vec`] for the same dimensions.
    pub fn from_vec(v: &[f64], num_segments: usize, q1: usize, q2: usize) -> Self {
        let n_psi = num_segments + 1;
        let n_beta = q1 + 1;
        assert_eq!(v.len(), 1 + n_psi + n_beta + q2, "parameter vector length mismatch");
        Self {
            alpha: v[0],
            psi: v[1..1 + n_psi].to_vec(),
            beta: v[1 + n_psi..1 + n_psi + n_beta].to_vec(),
            gamma: v[1 + n_psi + n_beta..].to_vec(),
        }
    }

    /// Parameter names in `to_vec` order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["alpha".to_string()];
        names.extend((0..self.psi.len()).map(|b| format!("psi{b}")));
        names.extend((0..self.beta.len()).map(|j| format!("beta{j}")));
        names.extend((1..=self.gamma.len()).map(|j| format!("gamma{j}")));
        names
    }
}

/// Covariate rows for one subject: `z` for incidence (leading 1), `x` for latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    z: Vec<f64>,
    x: Vec<f64>,
}

impl CovariateProfile {
    pub fn new(z: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if z.first() != Some(&1.0) {
            return Err(Error::InvalidData(format!(
                "incidence row must start with the intercept 1, got {:?}",
                z.first()
            )));
        }
        if z.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        Ok(Self { z, x })
    }

    /// Builds a profile from raw covariates, prepending the intercept to `z`.
    pub fn from_covariates(z_covs: &[f64], x_covs: &[f64]) -> Result<Self> {
        let mut z = Vec::with_capacity(z_covs.len() + 1);
        z.push(1.0);
        z.extend_from_slice(z_covs);
        Self::new(z, x_covs.to_vec())
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }
}

/// Box-Cox transform `G(u, alpha) = (u^alpha - 1)/alpha`, with the `ln u`
/// branch taken for `alpha` below [`ALPHA_BRANCH_EPS`].
pub fn box_cox(u: f64, alpha: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::Domain(format!("box_cox requires u > 0, got {u}")));
    }
    if alpha < ALPHA_BRANCH_EPS {
        Ok(u.ln())
    } else {
        // expm1 keeps precision for alpha*ln(u) near 0
        Ok((alpha * u.ln()).exp_m1() / alpha)
    }
}

/// Incidence link `exp(z'beta) / (1 + alpha exp(z'beta))` (`exp(z'beta)` at
/// `alpha = 0`).
pub fn transform_link(alpha: f64, beta: &[f64], z: &[f64]) -> f64 {
    let e = clamped_linear_predictor(beta, z).exp();
    if alpha < ALPHA_BRANCH_EPS {
        e
    } else {
        e / (1.0 + alpha * e)
    }
}

pub(crate) fn cure_rate_from_predictor(alpha: f64, eta: f64) -> f64 {
    let e = eta.exp();
    if alpha < ALPHA_BRANCH_EPS {
        (-e).exp()
    } else {
        // (1 + alpha e)^(-1/alpha) via ln_1p for stability at small alpha
        (-(alpha * e).ln_1p() / alpha).exp()
    }
}

/// Cure probability `pi(theta; z)`, the limit of the population survival
/// function as time grows.
pub fn cure_rate(params: &BctmParameters, z: &[f64]) -> f64 {
    cure_rate_from_predictor(params.alpha, clamped_linear_predictor(&params.beta, z))
}

/// Piecewise-linear baseline hazard: interpolates `psi[b]` at the cut-points,
/// extends the last linear piece past `tau[B]`, floored at zero.
pub fn baseline_hazard(y: f64, knots: &KnotGrid, psi: &[f64]) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("baseline hazard requires y >= 0, got {y}")));
    }
    let tau = knots.tau();
    debug_assert_eq!(psi.len(), tau.len());
    let b_max = knots.num_segments();
    // the interpolant passes through psi[b] at tau[b] exactly
    if let Some(b) = tau.iter().position(|t| *t == y) {
        return Ok(psi[b]);
    }
    // membership [tau[b-1], tau[b]) with the final segment closed at tau[B]
    for b in 1..=b_max {
        if y < tau[b] {
            let slope = (psi[b] - psi[b - 1]) / (tau[b] - tau[b - 1]);
            return Ok(psi[b] + slope * (y - tau[b]));
        }
    }
    // y > tau[B]: extend the last piece, never below zero
    let slope = (psi[b_max] - psi[b_max - 1]) / (tau[b_max] - tau[b_max - 1]);
    Ok((psi[b_max] + slope * (y - tau[b_max])).max(0.0))
}

/// Closed-form integral of [`baseline_hazard`] from 0 to `y`.
pub fn baseline_cum_hazard(y: f64, knots: &KnotGrid, psi: &[f64]) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!(
            "cumulative baseline hazard requires y >= 0, got {y}"
        )));
    }
    let tau = knots.tau();
    debug_assert_eq!(psi.len(), tau.len());
    let b_max = knots.num_segments();
    let mut total = 0.0;
    for b in 1..=b_max {
        if y <= tau[b - 1] {
            break;
        }
        let m = y.min(tau[b]);
        let slope = (psi[b] - psi[b - 1]) / (tau[b] - tau[b - 1]);
        total += psi[b] * (m - tau[b - 1])
            + slope * ((m * m - tau[b - 1] * tau[b - 1]) / 2.0 - tau[b] * (m - tau[b - 1]));
    }
    if y > tau[b_max] {
        let slope = (psi[b_max] - psi[b_max - 1]) / (tau[b_max] - tau[b_max - 1]);
        // stop integrating where the extended piece crosses zero
        let m = if slope < 0.0 {
            y.min(tau[b_max] - psi[b_max] / slope)
        } else {
            y
        };
        let d = m - tau[b_max];
        if d > 0.0 {
            total += psi[b_max] * d + slope * d * d / 2.0;
        }
    }
    Ok(total)
}

/// Latency survival `S(y) = exp(-exp(x'gamma) * Lambda0(y))`.
pub fn latency_survival(
    y: f64,
    profile: &CovariateProfile,
    params: &BctmParameters,
    knots: &KnotGrid,
) -> Result<f64> {
    let cum = baseline_cum_hazard(y, knots, &params.psi)?;
    let ph = clamped_linear_predictor(&params.gamma, profile.x()).exp();
    Ok((-ph * cum).exp())
}

pub(crate) fn population_survival_from_parts(alpha: f64, eta: f64, latency: f64) -> f64 {
    let e = eta.exp();
    if alpha < ALPHA_BRANCH_EPS {
        (-e * (1.0 - latency)).exp()
    } else {
        let link = e / (1.0 + alpha * e);
        ((-alpha * link * (1.0 - latency)).ln_1p() / alpha).exp()
    }
}

/// Population survival `S_p(y)`: combines incidence and latency through the
/// Box-Cox transform. Equals 1 at `y = 0` and tends to the cure rate.
pub fn population_survival(
    y: f64,
    profile: &CovariateProfile,
    params: &BctmParameters,
    knots: &KnotGrid,
) -> Result<f64> {
    let latency = latency_survival(y, profile, params, knots)?;
    let eta = clamped_linear_predictor(&params.beta, profile.z());
    Ok(population_survival_from_parts(params.alpha, eta, latency))
}

/// Conditional survival of a susceptible subject,
/// `S_u(y) = (S_p(y) - pi) / (1 - pi)`.
pub fn susceptible_survival(
    y: f64,
    profile: &CovariateProfile,
    params: &BctmParameters,
    knots: &KnotGrid,
) -> Result<f64> {
    let pi = cure_rate(params, profile.z());
    if 1.0 - pi <= 0.0 {
        return Err(Error::DegenerateIncidence { value: pi });
    }
    let sp = population_survival(y, profile, params, knots)?;
    Ok(((sp - pi) / (1.0 - pi)).clamp(0.0, 1.0))
}
