//! Data generation for the simulation design, cut-point and initial-value
//! rules, and the Monte-Carlo study harness.
//!
//! One subject is generated as follows: draw covariates `x1 ~ Bernoulli(0.5)`
//! and `x2 ~ Uniform[0.1, 20]` (shared by incidence and latency), a uniform
//! `u`, and a censoring time `c ~ Exp(zeta_star)`. If `u <= pi(z)` the
//! subject is cured and right-censored at `c`. Otherwise the same `u`,
//! rescaled to the conditional quantile `(u - pi)/(1 - pi)`, drives the
//! latency draw; event times are then coarsened into observation intervals
//! from uniform visit offsets `d1 ~ U[0.2, 0.7]`, `d2 ~ U[0, 1]`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IntervalObservation};
use crate::em::{fit_em, EmConfig};
use crate::error::{Error, Result};
use crate::model::{
    cure_rate_from_predictor, population_survival_from_parts, BctmParameters, CovariateProfile,
    KnotGrid,
};
use crate::numeric::{clamped_linear_predictor, quantile_sorted};

/// How latency times are drawn for susceptible subjects.
///
/// The two modes coincide at `alpha = 1` and differ elsewhere. `InvertSu`
/// draws from the transformation model itself, making the fitted family
/// correctly specified; it is the default because it is what reproduces the
/// reference simulation aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LatencyGenerator {
    /// Exponential with rate `zeta * exp(gamma'x)`.
    #[serde(rename = "paper-exponential")]
    PaperExponential,
    /// Numerically inverts the susceptible survival function of the true
    /// constant-hazard model at the conditional quantile (bisection to 1e-10).
    #[default]
    #[serde(rename = "invert-su")]
    InvertSu,
}

/// True data-generating configuration for one simulation scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimScenario {
    pub alpha_true: f64,
    pub n: usize,
    /// Constant true baseline hazard.
    pub zeta: f64,
    /// Censoring rate parameter.
    pub zeta_star: f64,
    /// Incidence coefficients `(intercept, x1, x2)`.
    pub beta_true: Vec<f64>,
    /// Latency PH coefficients `(x1, x2)`.
    pub gamma_true: Vec<f64>,
    pub seed: u64,
    /// Number of baseline segments for the fitted model.
    pub b_fit: usize,
    pub reps: usize,
    #[serde(default)]
    pub generator: LatencyGenerator,
    /// Wald-validity screen: replications whose fitted incidence or latency
    /// coefficients carry an undefined standard error, or one above this
    /// cap, are excluded from the aggregates (diverged, non-identified
    /// fits). `None` disables the screen.
    #[serde(default = "default_wald_se_cap")]
    pub wald_se_cap: Option<f64>,
}

fn default_wald_se_cap() -> Option<f64> {
    Some(2.0)
}

impl SimScenario {
    /// Reference scenario: `beta = (0.6, -1.5, 0.1)`, `gamma = (-1.2, 0.1)`,
    /// `zeta = zeta_star = 0.1`.
    pub fn reference(alpha_true: f64, n: usize, b_fit: usize, reps: usize, seed: u64) -> Self {
        Self {
            alpha_true,
            n,
            zeta: 0.1,
            zeta_star: 0.1,
            beta_true: vec![0.6, -1.5, 0.1],
            gamma_true: vec![-1.2, 0.1],
            seed,
            b_fit,
            reps,
            generator: LatencyGenerator::default(),
            wald_se_cap: default_wald_se_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0) || !(self.zeta_star > 0.0) {
            return Err(Error::Config("zeta and zeta_star must be positive".into()));
        }
        if self.n < 2 || self.reps < 1 || self.b_fit < 1 {
            return Err(Error::Config(
                "scenario needs n >= 2, reps >= 1 and b_fit >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha_true) {
            return Err(Error::Config("alpha_true must lie in [0, 1]".into()));
        }
        if self.beta_true.len() != 3 || self.gamma_true.len() != 2 {
            return Err(Error::Config(
                "the generator uses covariates (x1, x2): beta_true must have length 3 \
                 and gamma_true length 2"
                    .into(),
            ));
        }
        if self.wald_se_cap.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("wald_se_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Latent truth tallies from one generated dataset.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GenerationDiagnostics {
    pub n: usize,
    pub n_cured: usize,
    /// Susceptible subjects right-censored by the censoring mechanism.
    pub n_susceptible_censored: usize,
    pub n_events: usize,
}

impl GenerationDiagnostics {
    pub fn cured_fraction(&self) -> f64 {
        self.n_cured as f64 / self.n as f64
    }

    /// Share of subjects whose (latent) event was cut off by censoring; the
    /// scenario parameters keep this near 20-30%.
    pub fn susceptible_censored_fraction(&self) -> f64 {
        self.n_susceptible_censored as f64 / self.n as f64
    }

    /// Overall share with `delta = 0` (cured plus susceptible-censored).
    pub fn right_censored_fraction(&self) -> f64 {
        (self.n_cured + self.n_susceptible_censored) as f64 / self.n as f64
    }
}

/// Interval limits for an event observed at `t` under visit offsets
/// `(d1, d2)`: `(0, d2]` when `t < d2`, else the `rho`-th window of width
/// `d1` anchored at `d2`.
pub(crate) fn censoring_interval(t: f64, d1: f64, d2: f64) -> (f64, f64) {
    if t < d2 {
        (0.0, d2)
    } else {
        let rho = ((t - d2) / d1).floor() + 1.0;
        (d2 + (rho - 1.0) * d1, d2 + rho * d1)
    }
}

/// Susceptible survival of the true constant-hazard model.
fn true_susceptible_survival(y: f64, alpha: f64, eta_z: f64, event_rate: f64) -> f64 {
    let latency = (-event_rate * y).exp();
    let sp = population_survival_from_parts(alpha, eta_z, latency);
    let pi = cure_rate_from_predictor(alpha, eta_z);
    ((sp - pi) / (1.0 - pi)).clamp(0.0, 1.0)
}

fn invert_true_susceptible_survival(target: f64, alpha: f64, eta_z: f64, event_rate: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&target) || target == 1.0);
    if target >= 1.0 {
        return 0.0;
    }
    let mut hi = 1.0 / event_rate;
    let mut iters = 0;
    while true_susceptible_survival(hi, alpha, eta_z, event_rate) > target {
        hi *= 2.0;
        iters += 1;
        assert!(iters < 2048, "failed to bracket the latency quantile");
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if true_susceptible_survival(mid, alpha, eta_z, event_rate) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Generates one replication's dataset. `(scenario, rep_index)` fully
/// determines the output: each replication owns an independent counter-derived
/// stream of the scenario seed.
pub fn generate_dataset(
    scenario: &SimScenario,
    rep_index: usize,
) -> Result<(Dataset, GenerationDiagnostics)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(rep_index as u64);

    let mut observations = Vec::with_capacity(scenario.n);
    let mut diag = GenerationDiagnostics { n: scenario.n, ..Default::default() };
    let censor_dist = Exp::new(scenario.zeta_star).expect("zeta_star > 0");

    for _ in 0..scenario.n {
        let x1 = f64::from(rng.random_bool(0.5));
        let x2 = rng.random_range(0.1..20.0);
        let u: f64 = rng.random();
        let c: f64 = censor_dist.sample(&mut rng);

        let z = [1.0, x1, x2];
        let x = [x1, x2];
        let profile = CovariateProfile::new(z.to_vec(), x.to_vec())?;
        let eta_z = clamped_linear_predictor(&scenario.beta_true, &z);
        let pi = cure_rate_from_predictor(scenario.alpha_true, eta_z);

        if u <= pi {
            diag.n_cured += 1;
            observations.push(IntervalObservation::right_censored(c, profile)?);
            continue;
        }

        // the same u, rescaled past the cure mass, drives the latency draw
        let conditional_quantile = (u - pi) / (1.0 - pi);
        let event_rate = scenario.zeta * clamped_linear_predictor(&scenario.gamma_true, &x).exp();
        let y = match scenario.generator {
            LatencyGenerator::PaperExponential => {
                -conditional_quantile.max(f64::MIN_POSITIVE).ln() / event_rate
            }
            LatencyGenerator::InvertSu => invert_true_susceptible_survival(
                conditional_quantile,
                scenario.alpha_true,
                eta_z,
                event_rate,
            ),
        };

        if c <= y {
            diag.n_susceptible_censored += 1;
            observations.push(IntervalObservation::right_censored(c, profile)?);
        } else {
            diag.n_events += 1;
            let d1 = rng.random_range(0.2..0.7);
            let d2 = rng.random_range(0.0..1.0);
            let (l, r) = censoring_interval(y, d1, d2);
            assert!(l < y && y <= r, "event interval must contain the latent time");
            observations.push(IntervalObservation::interval(l, r, profile)?);
        }
    }
    Ok((Dataset::new(observations)?, diag))
}

/// Equi-proportion quantile cut-points over the pooled finite interval
/// limits: `tau_0 = 0`, `tau_B` the pooled maximum, interior knots at the
/// `b/B` quantiles. Ties are nudged upward by `1e-12` of the range.
pub fn select_cutpoints_quantile(data: &Dataset, num_segments: usize) -> Result<KnotGrid> {
    if num_segments < 1 {
        return Err(Error::InvalidKnots("need at least one segment".into()));
    }
    let mut pool = data.pooled_finite_limits();
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = pool.clone();
    distinct.dedup();
    if distinct.len() < num_segments + 1 {
        return Err(Error::InvalidKnots(format!(
            "{} distinct finite limits cannot support {} cut-points",
            distinct.len(),
            num_segments + 1
        )));
    }
    let max = *pool.last().unwrap();
    let mut tau = vec![0.0];
    for b in 1..num_segments {
        tau.push(quantile_sorted(&pool, b as f64 / num_segments as f64));
    }
    tau.push(max);
    let nudge = 1e-12 * max;
    for i in 1..tau.len() {
        if tau[i] <= tau[i - 1] {
            tau[i] = tau[i - 1] + nudge;
        }
    }
    KnotGrid::new(tau)
}

/// Initial knot hazards: all `0.001`, then cumulated through
/// `psi_b <- psi_{b-1} + psi_b + psi_b^2` so the values rise gently.
pub fn initial_psi(num_segments: usize) -> Vec<f64> {
    let mut psi = vec![0.001; num_segments + 1];
    for b in 1..=num_segments {
        psi[b] = psi[b - 1] + psi[b] + psi[b] * psi[b];
    }
    psi
}

/// Draws each coordinate uniformly within a 10% margin of its reference
/// value (orientation corrected for negative values); zero stays zero.
pub fn initial_coeffs_perturbed(reference: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reference
        .iter()
        .map(|&v| {
            if v == 0.0 {
                0.0
            } else {
                let (lo, hi) = if v > 0.0 { (0.9 * v, 1.1 * v) } else { (1.1 * v, 0.9 * v) };
                rng.random_range(lo..hi)
            }
        })
        .collect()
}

/// Initial parameters for a simulation fit: `alpha = 0.5` (mid-point of the
/// search interval), the psi recursion, and 10%-perturbed coefficients.
pub fn simulation_initial_values(scenario: &SimScenario, rep_index: usize) -> BctmParameters {
    let seed = scenario
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(rep_index as u64);
    let mut coeffs = initial_coeffs_perturbed(
        &[scenario.beta_true.clone(), scenario.gamma_true.clone()].concat(),
        seed,
    );
    let gamma0 = coeffs.split_off(scenario.beta_true.len());
    BctmParameters {
        alpha: 0.5,
        psi: initial_psi(scenario.b_fit),
        beta: coeffs,
        gamma: gamma0,
    }
}

/// One converged replication of the generate/fit pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepOutcome {
    pub theta: Vec<f64>,
    pub se: Vec<Option<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub diagnostics: GenerationDiagnostics,
}

/// Per-parameter aggregate row of a Monte-Carlo study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    /// Mean of the estimates.
    pub est: f64,
    /// Mean of the reported standard errors (over replications with one).
    pub se: Option<f64>,
    /// `est` minus the true value, where a true value exists.
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Percent of 95% Wald intervals covering the true value.
    pub cp: Option<f64>,
    /// Replications contributing to `se` and `cp`.
    pub n_se_used: usize,
}

/// Monte-Carlo aggregates over converged replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rows: Vec<ParamSummary>,
    pub mean_loglik: f64,
    pub mean_aic: f64,
    pub n_requested: usize,
    pub n_converged: usize,
    /// Replications that errored or failed to converge.
    pub n_failed: usize,
    /// Converged replications dropped by the Wald-validity screen.
    #[serde(default)]
    pub n_excluded_wald: usize,
    pub mean_cured_fraction: f64,
    pub mean_susceptible_censored_fraction: f64,
    pub mean_right_censored_fraction: f64,
}

/// Harness arithmetic: aggregates replication outcomes against optional true
/// values (one per parameter, `None` where no truth is defined).
pub fn aggregate_report(
    outcomes: &[RepOutcome],
    names: &[String],
    truth: &[Option<f64>],
    n_requested: usize,
    n_failed: usize,
) -> Result<MonteCarloReport> {
    if outcomes.is_empty() {
        return Err(Error::Estimation("no converged replications to aggregate".into()));
    }
    assert_eq!(names.len(), truth.len());
    let m = outcomes.len() as f64;
    let mut rows = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let est = outcomes.iter().map(|o| o.theta[j]).sum::<f64>() / m;
        let ses: Vec<f64> = outcomes.iter().filter_map(|o| o.se[j]).collect();
        let se = (!ses.is_empty()).then(|| ses.iter().sum::<f64>() / ses.len() as f64);
        let (bias, rmse, cp) = match truth[j] {
            Some(t) => {
                let bias = est - t;
                let mse = outcomes
                    .iter()
                    .map(|o| (o.theta[j] - t) * (o.theta[j] - t))
                    .sum::<f64>()
                    / m;
                let covered = outcomes
                    .iter()
                    .filter(|o| o.se[j].is_some_and(|s| (o.theta[j] - t).abs() <= 1.96 * s))
                    .count();
                let cp = (!ses.is_empty())
                    .then(|| 100.0 * covered as f64 / ses.len() as f64);
                (Some(bias), Some(mse.sqrt()), cp)
            }
            None => (None, None, None),
        };
        rows.push(ParamSummary {
            name: name.clone(),
            est,
            se,
            bias,
            rmse,
            cp,
            n_se_used: ses.len(),
        });
    }
    let mean = |f: &dyn Fn(&RepOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / m;
    Ok(MonteCarloReport {
        rows,
        mean_loglik: mean(&|o| o.loglik),
        mean_aic: mean(&|o| o.aic),
        n_requested,
        n_converged: outcomes.len(),
        n_failed,
        n_excluded_wald: 0,
        mean_cured_fraction: mean(&|o| o.diagnostics.cured_fraction()),
        mean_susceptible_censored_fraction: mean(&|o| o.diagnostics.susceptible_censored_fraction()),
        mean_right_censored_fraction: mean(&|o| o.diagnostics.right_censored_fraction()),
    })
}

/// True when every incidence/latency coefficient of the outcome carries a
/// defined standard error no larger than `cap`. Fits that diverge along
/// non-identified rays show up with enormous or failed coefficient SEs;
/// this screen keeps Wald-based aggregation meaningful.
fn wald_inference_ok(outcome: &RepOutcome, num_segments: usize, cap: f64) -> bool {
    let coef_start = num_segments + 2; // alpha plus B+1 knot hazards
    outcome.se[coef_start..]
        .iter()
        .all(|se| se.is_some_and(|s| s <= cap))
}

/// Runs one generate / select-cutpoints / initialize / fit replication.
pub fn run_replication(
    scenario: &SimScenario,
    config: &EmConfig,
    rep_index: usize,
) -> Result<RepOutcome> {
    let (data, diagnostics) = generate_dataset(scenario, rep_index)?;
    let knots = select_cutpoints_quantile(&data, scenario.b_fit)?;
    let init = simulation_initial_values(scenario, rep_index);
    let fit = fit_em(&data, &knots, &init, config)?;
    if !fit.converged {
        return Err(Error::Estimation(format!(
            "replication {rep_index} did not converge in {} EM iterations",
            fit.n_em_iters
        )));
    }
    Ok(RepOutcome {
        theta: fit.theta_hat.to_vec(),
        se: fit.se,
        loglik: fit.loglik,
        aic: fit.aic,
        diagnostics,
    })
}

/// True values in flat parameter order; `None` for the knot hazards, whose
/// piecewise-linear parameterization has no constant-hazard counterpart.
pub fn scenario_truth(scenario: &SimScenario) -> (Vec<String>, Vec<Option<f64>>) {
    let template = BctmParameters {
        alpha: scenario.alpha_true,
        psi: vec![0.0; scenario.b_fit + 1],
        beta: scenario.beta_true.clone(),
        gamma: scenario.gamma_true.clone(),
    };
    let names = template.names();
    let mut truth = vec![Some(scenario.alpha_true)];
    truth.extend(std::iter::repeat_n(None, scenario.b_fit + 1));
    truth.extend(scenario.beta_true.iter().map(|v| Some(*v)));
    truth.extend(scenario.gamma_true.iter().map(|v| Some(*v)));
    (names, truth)
}

/// Full Monte-Carlo study: replications run in parallel, aggregation is an
/// ordered reduction keyed by replication index. Non-convergent replications
/// are excluded and tallied.
pub fn monte_carlo_study(scenario: &SimScenario, config: &EmConfig) -> Result<MonteCarloReport> {
    scenario.validate()?;
    config.validate()?;
    let results: Vec<Result<RepOutcome>> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| run_replication(scenario, config, rep))
        .collect();

    let mut outcomes = Vec::with_capacity(scenario.reps);
    let mut n_failed = 0usize;
    let mut n_excluded_wald = 0usize;
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(outcome) => {
                if scenario
                    .wald_se_cap
                    .is_none_or(|cap| wald_inference_ok(&outcome, scenario.b_fit, cap))
                {
                    outcomes.push(outcome);
                } else {
                    n_excluded_wald += 1;
                    log::info!("replication {rep} excluded by the Wald-validity screen");
                }
            }
            Err(err) => {
                n_failed += 1;
                log::warn!("replication {rep} excluded: {err}");
            }
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Estimation("all replications failed".into()));
    }
    let (names, truth) = scenario_truth(scenario);
    let mut report = aggregate_report(&outcomes, &names, &truth, scenario.reps, n_failed)?;
    report.n_excluded_wald = n_excluded_wald;
    Ok(report)
}
