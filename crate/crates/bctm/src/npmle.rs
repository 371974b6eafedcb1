//! Turnbull NPMLE for interval-censored data and the real-data
//! initialization pipeline: log-log regression for the latency
//! coefficients, the censoring-proportion equation system for the incidence
//! coefficients, the empirical baseline-hazard curve, and cut-point
//! suggestion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{cure_rate_from_predictor, KnotGrid, ALPHA_BRANCH_EPS};
use crate::numeric::{clamped_linear_predictor, dot};
use crate::simulation::select_cutpoints_quantile;

const MAX_SELF_CONSISTENCY_ITERS: usize = 200_000;

/// A maximal-intersection support interval `(lower, upper]`; `upper` may be
/// infinite when mass remains beyond the last finite limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub lower: f64,
    pub upper: f64,
}

/// Nonparametric maximum-likelihood survival estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmleEstimate {
    pub support: Vec<SupportInterval>,
    pub mass: Vec<f64>,
    /// Unique finite interval limits of the data, sorted ascending.
    pub time_points: Vec<f64>,
}

impl NpmleEstimate {
    pub fn from_parts(
        support: Vec<SupportInterval>,
        mass: Vec<f64>,
        time_points: Vec<f64>,
    ) -> Result<Self> {
        if support.len() != mass.len() {
            return Err(Error::InvalidData("support and mass lengths differ".into()));
        }
        if mass.iter().any(|m| *m < 0.0) {
            return Err(Error::InvalidData("masses must be non-negative".into()));
        }
        Ok(Self { support, mass, time_points })
    }

    /// Step-function survival under the right-continuous upper-bound
    /// convention: mass counts as failed only once its whole support
    /// interval lies at or before `t`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let dead: f64 = self
            .support
            .iter()
            .zip(&self.mass)
            .filter(|(s, _)| s.upper <= t)
            .map(|(_, m)| m)
            .sum();
        (1.0 - dead).clamp(0.0, 1.0)
    }

    /// Survival evaluated at every stored time point.
    pub fn survival_curve(&self) -> Vec<(f64, f64)> {
        self.time_points.iter().map(|&t| (t, self.survival_at(t))).collect()
    }
}

/// Maximal-intersection intervals of the censoring intervals `(l_i, r_i]`:
/// a left endpoint immediately followed (in sorted order) by a right
/// endpoint delimits one support interval.
fn turnbull_support(data: &Dataset) -> Vec<SupportInterval> {
    #[derive(PartialEq)]
    enum Kind {
        Right,
        Left,
    }
    let mut endpoints: Vec<(f64, Kind)> = Vec::with_capacity(2 * data.len());
    for obs in data.observations() {
        endpoints.push((obs.left, Kind::Left));
        endpoints.push((obs.right, Kind::Right));
    }
    // rights sort before lefts at equal values so empty intervals never form
    endpoints.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| match (&a.1, &b.1) {
                (Kind::Right, Kind::Left) => std::cmp::Ordering::Less,
                (Kind::Left, Kind::Right) => std::cmp::Ordering::Greater,
                _ => std::cmp::Ordering::Equal,
            })
    });
    let mut support = Vec::new();
    let mut pending: Option<f64> = None;
    for (value, kind) in endpoints {
        match kind {
            Kind::Left => pending = Some(value),
            Kind::Right => {
                if let Some(lower) = pending.take() {
                    support.push(SupportInterval { lower, upper: value });
                }
            }
        }
    }
    support
}

/// Turnbull self-consistency NPMLE. Masses are redistributed proportionally
/// over each observation's compatible support intervals until the largest
/// mass change falls below `tol`.
pub fn turnbull_npmle(data: &Dataset, tol: f64) -> Result<NpmleEstimate> {
    if data.is_empty() {
        return Err(Error::InvalidData("NPMLE needs a non-empty dataset".into()));
    }
    let support = turnbull_support(data);
    if support.is_empty() {
        return Err(Error::InvalidData("no support intervals could be formed".into()));
    }
    let compatible: Vec<Vec<usize>> = data
        .observations()
        .iter()
        .map(|obs| {
            support
                .iter()
                .enumerate()
                .filter(|(_, s)| s.lower >= obs.left && s.upper <= obs.right)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    if compatible.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidData(
            "an observation is incompatible with every support interval".into(),
        ));
    }

    let k = support.len();
    let n = data.len() as f64;
    let mut mass = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    for iter in 0..MAX_SELF_CONSISTENCY_ITERS {
        next.iter_mut().for_each(|m| *m = 0.0);
        for comp in &compatible {
            let denom: f64 = comp.iter().map(|&j| mass[j]).sum();
            for &j in comp {
                next[j] += mass[j] / denom;
            }
        }
        next.iter_mut().for_each(|m| *m /= n);
        let delta = mass
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut mass, &mut next);
        if delta < tol {
            break;
        }
        if iter + 1 == MAX_SELF_CONSISTENCY_ITERS {
            log::warn!("NPMLE self-consistency stopped at the iteration cap");
        }
    }

    let mut time_points = data.pooled_finite_limits();
    time_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    time_points.dedup();
    NpmleEstimate::from_parts(support, mass, time_points)
}

/// Covariate pairing for the regression steps: each time point borrows the
/// latency covariates of the observation whose nearest finite interval
/// endpoint is closest (ties resolved by the lowest observation index).
fn paired_covariates<'d>(data: &'d Dataset, t: f64) -> &'d [f64] {
    let mut best = (f64::INFINITY, 0usize);
    for (i, obs) in data.observations().iter().enumerate() {
        let mut d = (obs.left - t).abs();
        if obs.right.is_finite() {
            d = d.min((obs.right - t).abs());
        }
        if d < best.0 {
            best = (d, i);
        }
    }
    data.observations()[best.1].profile.x()
}

/// Result of the log-log survival regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLogRegression {
    /// Latency coefficient starting values.
    pub gamma0: Vec<f64>,
    /// Intercept `ln(-ln S0)` of the regression.
    pub intercept: f64,
    /// False when the covariate design had no variation (slopes forced to 0).
    pub identifiable: bool,
    pub n_points: usize,
}

impl LogLogRegression {
    /// Baseline survival level implied by the intercept.
    pub fn s0(&self) -> f64 {
        (-self.intercept.exp()).exp()
    }
}

/// Regresses `ln(-ln S_j)` on the paired covariate rows (with intercept).
/// Points with survival 0 or 1 carry no information and are dropped.
pub fn loglog_regression_gamma0(
    npmle: &NpmleEstimate,
    data: &Dataset,
) -> Result<LogLogRegression> {
    let q2 = data.q2();
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for &t in &npmle.time_points {
        let s = npmle.survival_at(t);
        if s <= 0.0 || s >= 1.0 {
            continue;
        }
        let response = (-s.ln()).ln();
        rows.push((response, paired_covariates(data, t).to_vec()));
    }
    if rows.len() < q2 + 2 {
        return Err(Error::Estimation(format!(
            "log-log regression needs at least {} usable survival points, got {}",
            q2 + 2,
            rows.len()
        )));
    }
    let n = rows.len();
    let mut design = DMatrix::zeros(n, q2 + 1);
    let mut response = DVector::zeros(n);
    for (i, (y, x)) in rows.iter().enumerate() {
        design[(i, 0)] = 1.0;
        for (j, v) in x.iter().enumerate() {
            design[(i, j + 1)] = *v;
        }
        response[i] = *y;
    }
    let svd = design.clone().svd(true, true);
    let rank = svd.rank(1e-10 * svd.singular_values.max());
    let solution = svd
        .solve(&response, 1e-10)
        .map_err(|e| Error::Estimation(format!("regression solve failed: {e}")))?;
    let identifiable = rank == q2 + 1;
    let mut gamma0: Vec<f64> = solution.iter().skip(1).copied().collect();
    if !identifiable {
        log::warn!("log-log regression design is rank-deficient; slopes set to 0");
        gamma0.iter_mut().for_each(|g| *g = 0.0);
    }
    Ok(LogLogRegression { gamma0, intercept: solution[0], identifiable, n_points: n })
}

/// Solves `cure_rate(alpha0, beta; z_k) = p_k` for `beta` by damped Newton
/// iteration. Targets pair an incidence row (leading 1) with a probability.
pub fn solve_beta0_system(targets: &[(Vec<f64>, f64)], alpha0: f64) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::Estimation("no targets for the incidence solve".into()));
    }
    let dim = targets[0].0.len();
    if targets.len() != dim {
        return Err(Error::Estimation(format!(
            "need as many targets as incidence coefficients: {} targets for dimension {dim}",
            targets.len()
        )));
    }
    for (z, p) in targets {
        if z.len() != dim || z[0] != 1.0 {
            return Err(Error::Estimation("every target row needs a leading 1".into()));
        }
        if !(0.0 < *p && *p < 1.0) {
            return Err(Error::Estimation(format!(
                "target probabilities must lie strictly in (0, 1), got {p}"
            )));
        }
    }

    // linearization: each target pins its linear predictor exactly
    let eta_for = |p: f64| -> f64 {
        if alpha0 < ALPHA_BRANCH_EPS {
            (-p.ln()).ln()
        } else {
            ((p.powf(-alpha0) - 1.0) / alpha0).ln()
        }
    };
    let design = DMatrix::from_fn(dim, dim, |i, j| targets[i].0[j]);
    let eta = DVector::from_iterator(dim, targets.iter().map(|(_, p)| eta_for(*p)));
    let mut beta: Vec<f64> = match design.clone().lu().solve(&eta) {
        Some(b) => b.iter().copied().collect(),
        None => vec![0.0; dim],
    };

    let residuals = |beta: &[f64]| -> Vec<f64> {
        targets
            .iter()
            .map(|(z, p)| cure_rate_from_predictor(alpha0, dot(beta, z)) - p)
            .collect()
    };
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut res = residuals(&beta);
    let mut iterations = 0usize;
    while max_abs(&res) >= 1e-8 && iterations < 1000 {
        iterations += 1;
        // d pi / d eta = -pi * link
        let jac = DMatrix::from_fn(dim, dim, |i, j| {
            let (z, _) = &targets[i];
            let eta = dot(&beta, z);
            let e = eta.clamp(-700.0, 700.0).exp();
            let pi = cure_rate_from_predictor(alpha0, eta);
            let link = if alpha0 < ALPHA_BRANCH_EPS { e } else { e / (1.0 + alpha0 * e) };
            -pi * link * z[j]
        });
        let rhs = DVector::from_iterator(dim, res.iter().map(|r| -r));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::RootFind { residual: max_abs(&res), iterations });
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + damping * s)
                .collect();
            let cand_res = residuals(&candidate);
            if max_abs(&cand_res) < max_abs(&res) {
                beta = candidate;
                res = cand_res;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if max_abs(&res) >= 1e-8 {
        return Err(Error::RootFind { residual: max_abs(&res), iterations });
    }
    Ok(beta)
}

/// Empirical baseline hazard curve `(t_j, h_j)`: removes the PH covariate
/// effect from each survival point, differences the implied cumulative
/// hazard, and floors negative increments at zero.
pub fn empirical_baseline_hazard(
    npmle: &NpmleEstimate,
    gamma0: &[f64],
    data: &Dataset,
) -> Result<Vec<(f64, f64)>> {
    let mut cumulative: Vec<(f64, f64)> = Vec::new();
    for &t in &npmle.time_points {
        let s = npmle.survival_at(t);
        if s <= 0.0 {
            continue; // infinite cumulative hazard carries no slope information
        }
        let x = paired_covariates(data, t);
        let ph = clamped_linear_predictor(gamma0, x).exp();
        // S_j = S0_j^exp(x'gamma)  =>  H_j = -ln(S_j) / exp(x'gamma)
        cumulative.push((t, -s.ln() / ph));
    }
    if cumulative.len() < 2 {
        return Err(Error::Estimation(
            "need at least two finite survival points for a hazard curve".into(),
        ));
    }
    let mut curve = Vec::with_capacity(cumulative.len() - 1);
    let mut floored = false;
    for pair in cumulative.windows(2) {
        let (t0, h0) = pair[0];
        let (t1, h1) = pair[1];
        let mut slope = (h1 - h0) / (t1 - t0);
        if slope < 0.0 {
            slope = 0.0;
            floored = true;
        }
        curve.push((t0, slope));
    }
    if floored {
        log::warn!("empirical baseline hazard had negative increments; floored at 0");
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutpointMode {
    #[serde(rename = "inflection")]
    Inflection,
    #[serde(rename = "quantile")]
    Quantile,
}

/// Cut-points plus the mode that actually produced them (inflection mode
/// falls back to quantiles when the curve has too little curvature).
#[derive(Debug, Clone)]
pub struct SuggestedCutpoints {
    pub grid: KnotGrid,
    pub used_mode: CutpointMode,
}

/// Suggests cut-points from the empirical hazard curve: either pooled-limit
/// quantiles, or the interior points of largest absolute discrete second
/// difference of the curve.
pub fn suggest_cutpoints(
    hazard_curve: &[(f64, f64)],
    data: &Dataset,
    num_segments: usize,
    mode: CutpointMode,
) -> Result<SuggestedCutpoints> {
    if num_segments < 1 {
        return Err(Error::InvalidKnots("need at least one segment".into()));
    }
    let quantile = |warned: bool| -> Result<SuggestedCutpoints> {
        if warned {
            log::warn!("inflection cut-point selection fell back to quantiles");
        }
        Ok(SuggestedCutpoints {
            grid: select_cutpoints_quantile(data, num_segments)?,
            used_mode: CutpointMode::Quantile,
        })
    };
    match mode {
        CutpointMode::Quantile => quantile(false),
        CutpointMode::Inflection => {
            let upper = data
                .pooled_finite_limits()
                .into_iter()
                .fold(0.0f64, f64::max);
            if upper <= 0.0 {
                return Err(Error::InvalidKnots("no positive finite limits".into()));
            }
            if num_segments == 1 {
                return Ok(SuggestedCutpoints {
                    grid: KnotGrid::new(vec![0.0, upper])?,
                    used_mode: CutpointMode::Inflection,
                });
            }
            // interior candidates ranked by |h[j-1] - 2 h[j] + h[j+1]|
            let mut candidates: Vec<(f64, f64)> = hazard_curve
                .windows(3)
                .map(|w| {
                    let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
                    (w[1].0, d2.abs())
                })
                .filter(|(t, d2)| *t > 0.0 && *t < upper && *d2 > 0.0)
                .collect();
            candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            candidates.truncate(num_segments - 1);
            if candidates.len() < num_segments - 1 {
                return quantile(true);
            }
            let mut tau: Vec<f64> = candidates.iter().map(|(t, _)| *t).collect();
            tau.sort_by(|a, b| a.partial_cmp(b).unwrap());
            tau.dedup();
            if tau.len() < num_segments - 1 {
                return quantile(true);
            }
            let mut grid = vec![0.0];
            grid.extend(tau);
            grid.push(upper);
            Ok(SuggestedCutpoints {
                grid: KnotGrid::new(grid)?,
                used_mode: CutpointMode::Inflection,
            })
        }
    }
}

/// Knot hazards read off the empirical curve by linear interpolation
/// (constant extension outside its range), floored at `1e-4`.
pub fn initial_psi_from_curve(hazard_curve: &[(f64, f64)], knots: &KnotGrid) -> Vec<f64> {
    const FLOOR: f64 = 1e-4;
    let interp = |t: f64| -> f64 {
        if hazard_curve.is_empty() {
            return 0.0;
        }
        if t <= hazard_curve[0].0 {
            return hazard_curve[0].1;
        }
        if t >= hazard_curve[hazard_curve.len() - 1].0 {
            return hazard_curve[hazard_curve.len() - 1].1;
        }
        for pair in hazard_curve.windows(2) {
            let (t0, h0) = pair[0];
            let (t1, h1) = pair[1];
            if t <= t1 {
                return h0 + (h1 - h0) * (t - t0) / (t1 - t0);
            }
        }
        unreachable!("interpolation point not bracketed")
    };
    knots.tau().iter().map(|&t| interp(t).max(FLOOR)).collect()
}

/// Starting values assembled by the full initialization pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitBundle {
    pub alpha0: f64,
    pub beta0: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub psi0: Vec<f64>,
    pub knots: KnotGrid,
    pub baseline_hazard_curve: Vec<(f64, f64)>,
}

/// Default incidence targets built from observed censoring proportions of a
/// binary grouping covariate: subjects at the minima of the remaining
/// covariates get their group's censoring proportion as cure target, and
/// subjects at the means get half of it.
pub fn default_beta0_targets(data: &Dataset, group_index: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let q1 = data.q1();
    if group_index >= q1 {
        return Err(Error::Config(format!(
            "group covariate index {group_index} out of range for {q1} incidence covariates"
        )));
    }
    let dim = q1 + 1;
    if dim > 4 {
        return Err(Error::Config(
            "default incidence targets support at most four coefficients; \
             provide explicit targets"
                .into(),
        ));
    }
    let n = data.len() as f64;
    let mut censored = [0usize; 2];
    let mut counts = [0usize; 2];
    let mut mins = vec![f64::INFINITY; q1];
    let mut sums = vec![0.0; q1];
    for obs in data.observations() {
        let covs = &obs.profile.z()[1..];
        let g = covs[group_index];
        if g != 0.0 && g != 1.0 {
            return Err(Error::Config(
                "the grouping covariate must be binary (0/1)".into(),
            ));
        }
        let gi = g as usize;
        counts[gi] += 1;
        if !obs.event {
            censored[gi] += 1;
        }
        for (j, v) in covs.iter().enumerate() {
            mins[j] = mins[j].min(*v);
            sums[j] += v;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Config("both grouping levels must be present".into()));
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let prop = |g: usize| censored[g] as f64 / counts[g] as f64;

    let row = |values: &[f64], group: f64| -> Vec<f64> {
        let mut z = Vec::with_capacity(dim);
        z.push(1.0);
        for (j, v) in values.iter().enumerate() {
            z.push(if j == group_index { group } else { *v });
        }
        z
    };
    let all = [
        (row(&mins, 1.0), prop(1)),
        (row(&mins, 0.0), prop(0)),
        (row(&means, 1.0), prop(1) / 2.0),
        (row(&means, 0.0), prop(0) / 2.0),
    ];
    Ok(all.into_iter().take(dim).collect())
}

/// Runs the whole initialization pipeline on a dataset: NPMLE, log-log
/// regression, incidence solve, empirical hazard curve, cut-points and knot
/// hazards. `alpha0` seeds both the incidence solve and the EM start.
pub fn init_pipeline(
    data: &Dataset,
    num_segments: usize,
    mode: CutpointMode,
    alpha0: f64,
    group_index: usize,
) -> Result<InitBundle> {
    let npmle = turnbull_npmle(data, 1e-8)?;
    let regression = loglog_regression_gamma0(&npmle, data)?;
    let targets = default_beta0_targets(data, group_index)?;
    let beta0 = solve_beta0_system(&targets, alpha0)?;
    let curve = empirical_baseline_hazard(&npmle, &regression.gamma0, data)?;
    let suggested = suggest_cutpoints(&curve, data, num_segments, mode)?;
    let psi0 = initial_psi_from_curve(&curve, &suggested.grid);
    Ok(InitBundle {
        alpha0,
        beta0,
        gamma0: regression.gamma0,
        psi0,
        knots: suggested.grid,
        baseline_hazard_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IntervalObservation;
    use crate::model::CovariateProfile;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn no_cov() -> CovariateProfile {
        CovariateProfile::new(vec![1.0], vec![]).unwrap()
    }

    #[test]
    fn disjoint_intervals_split_mass_evenly() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.0, 1.0, no_cov()).unwrap(),
            IntervalObservation::interval(2.0, 3.0, no_cov()).unwrap(),
        ])
        .unwrap();
        let est = turnbull_npmle(&data, 1e-10).unwrap();
        assert_eq!(est.support.len(), 2);
        assert_relative_eq!(est.mass[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(est.mass[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn identical_intervals_collapse_to_one_support() {
        let obs: Vec<_> = (0..5)
            .map(|_| IntervalObservation::interval(1.0, 2.0, no_cov()).unwrap())
            .collect();
        let est = turnbull_npmle(&Dataset::new(obs).unwrap(), 1e-10).unwrap();
        assert_eq!(est.support.len(), 1);
        assert_relative_eq!(est.mass[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn right_censored_only_keeps_survival_at_one() {
        let obs: Vec<_> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&l| IntervalObservation::right_censored(l, no_cov()).unwrap())
            .collect();
        let est = turnbull_npmle(&Dataset::new(obs).unwrap(), 1e-10).unwrap();
        assert_eq!(est.support.len(), 1);
        assert!(est.support[0].upper.is_infinite());
        for t in [0.0, 0.5, 1.0, 2.0] {
            assert_eq!(est.survival_at(t), 1.0);
        }
    }

    #[test]
    fn masses_sum_to_at_most_one() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.0, 1.5, no_cov()).unwrap(),
            IntervalObservation::interval(1.0, 2.5, no_cov()).unwrap(),
            IntervalObservation::right_censored(2.0, no_cov()).unwrap(),
        ])
        .unwrap();
        let est = turnbull_npmle(&data, 1e-10).unwrap();
        let total: f64 = est.mass.iter().sum();
        assert!(total <= 1.0 + 1e-9);
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn self_consistency_fixed_point_holds() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.0, 2.0, no_cov()).unwrap(),
            IntervalObservation::interval(1.0, 3.0, no_cov()).unwrap(),
            IntervalObservation::interval(2.5, 4.0, no_cov()).unwrap(),
            IntervalObservation::right_censored(0.5, no_cov()).unwrap(),
        ])
        .unwrap();
        let est = turnbull_npmle(&data, 1e-12).unwrap();
        // every mass equals the average of its allocation probabilities
        let n = data.len() as f64;
        for (k, s) in est.support.iter().enumerate() {
            let mut allocated = 0.0;
            for obs in data.observations() {
                let compatible: Vec<usize> = est
                    .support
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.lower >= obs.left && c.upper <= obs.right)
                    .map(|(j, _)| j)
                    .collect();
                if compatible.contains(&k) {
                    let denom: f64 = compatible.iter().map(|&j| est.mass[j]).sum();
                    allocated += est.mass[k] / denom;
                }
            }
            assert_relative_eq!(est.mass[k], allocated / n, epsilon = 1e-8, max_relative = 1e-6);
            assert!(s.lower < s.upper);
        }
    }

    /// Product-limit Kaplan-Meier for exactly observed and right-censored
    /// times; the independent oracle for the reduction test.
    fn kaplan_meier(events: &[f64], censored: &[f64]) -> Vec<(f64, f64)> {
        let mut unique_events: Vec<f64> = events.to_vec();
        unique_events.sort_by(|a, b| a.partial_cmp(b).unwrap());
        unique_events.dedup();
        let mut out = Vec::with_capacity(unique_events.len());
        let mut survival = 1.0;
        for &t in &unique_events {
            let at_risk = events.iter().filter(|&&e| e >= t).count()
                + censored.iter().filter(|&&c| c >= t).count();
            let deaths = events.iter().filter(|&&e| e == t).count();
            survival *= 1.0 - deaths as f64 / at_risk as f64;
            out.push((t, survival));
        }
        out
    }

    #[test]
    fn reduces_to_kaplan_meier_for_exact_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let events: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..8.0)).collect();
        let censored: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..8.0)).collect();
        let mut obs = Vec::new();
        for &t in &events {
            obs.push(IntervalObservation::interval(t - 1e-9, t, no_cov()).unwrap());
        }
        for &c in &censored {
            obs.push(IntervalObservation::right_censored(c, no_cov()).unwrap());
        }
        let est = turnbull_npmle(&Dataset::new(obs).unwrap(), 1e-10).unwrap();
        for (t, km) in kaplan_meier(&events, &censored) {
            assert!(
                (est.survival_at(t) - km).abs() < 1e-6,
                "at {t}: NPMLE {} vs KM {km}",
                est.survival_at(t)
            );
        }
    }

    #[test]
    fn loglog_regression_recovers_exact_ph_coefficients() {
        // synthetic exact relation S_j = S0^exp(x_j gamma)
        let gamma = [0.8, -0.5];
        let s0: f64 = 0.6;
        let mut xs = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [0.5, 0.25],
            [0.2, 0.9],
        ];
        // order rows so the implied survival decreases along the time axis
        let survival = |x: &[f64; 2]| {
            let ph = (gamma[0] * x[0] + gamma[1] * x[1]).exp();
            s0.powf(ph)
        };
        xs.sort_by(|a, b| survival(b).partial_cmp(&survival(a)).unwrap());
        let mut obs = Vec::new();
        let mut support = Vec::new();
        let mut time_points = Vec::new();
        for (j, x) in xs.iter().enumerate() {
            let t = (j + 1) as f64;
            time_points.push(t);
            obs.push(
                IntervalObservation::interval(
                    t - 0.01,
                    t,
                    CovariateProfile::new(vec![1.0], x.to_vec()).unwrap(),
                )
                .unwrap(),
            );
            support.push(SupportInterval { lower: t - 0.01, upper: t });
        }
        let data = Dataset::new(obs).unwrap();
        // encode the synthetic survival through support masses so that
        // S(t_j) equals the PH relation exactly at each time point
        let mut mass = Vec::new();
        let mut prev = 1.0;
        for x in &xs {
            let s = survival(x);
            mass.push(prev - s);
            prev = s;
        }
        let est = NpmleEstimate::from_parts(support, mass, time_points).unwrap();
        let fit = loglog_regression_gamma0(&est, &data).unwrap();
        assert!(fit.identifiable);
        assert_relative_eq!(fit.gamma0[0], gamma[0], epsilon = 1e-6);
        assert_relative_eq!(fit.gamma0[1], gamma[1], epsilon = 1e-6);
        assert_relative_eq!(fit.s0(), s0, epsilon = 1e-6);
    }

    #[test]
    fn loglog_regression_flags_constant_design() {
        let mut obs = Vec::new();
        for j in 0..5 {
            let t = (j + 1) as f64;
            obs.push(
                IntervalObservation::interval(
                    t - 0.01,
                    t,
                    CovariateProfile::new(vec![1.0], vec![2.0]).unwrap(),
                )
                .unwrap(),
            );
        }
        let data = Dataset::new(obs).unwrap();
        let est = turnbull_npmle(&data, 1e-10).unwrap();
        let fit = loglog_regression_gamma0(&est, &data).unwrap();
        assert!(!fit.identifiable);
        assert_eq!(fit.gamma0, vec![0.0]);
    }

    #[test]
    fn beta0_solver_hits_targets() {
        let targets = vec![
            (vec![1.0, 0.0, 0.1], 0.7337),
            (vec![1.0, 0.0, 0.9], 0.6296),
            (vec![1.0, 1.0, 0.5], 0.3669),
        ];
        for alpha0 in [0.0, 0.5, 1.0] {
            let beta = solve_beta0_system(&targets, alpha0).unwrap();
            for (z, p) in &targets {
                let pi = cure_rate_from_predictor(alpha0, dot(&beta, z));
                assert!((pi - p).abs() < 1e-6, "alpha0={alpha0}: {pi} vs {p}");
            }
        }
    }

    #[test]
    fn beta0_solver_symmetric_targets_zero_slope() {
        let targets = vec![(vec![1.0, 1.0], 0.5), (vec![1.0, -1.0], 0.5)];
        let beta = solve_beta0_system(&targets, 0.5).unwrap();
        assert!(beta[1].abs() < 1e-8, "slope {}", beta[1]);
    }

    #[test]
    fn beta0_solver_rejects_bad_targets() {
        assert!(solve_beta0_system(&[(vec![1.0, 0.5], 1.0)], 0.5).is_err());
        assert!(solve_beta0_system(&[(vec![0.5, 0.5], 0.5)], 0.5).is_err());
        assert!(solve_beta0_system(&[(vec![1.0], 0.5), (vec![1.0], 0.6)], 0.5).is_err());
    }

    #[test]
    fn empirical_hazard_hand_example() {
        // S0 = (1, e^-1) at t = (0, 1): H = (0, 1), h = (1)
        let est = NpmleEstimate::from_parts(
            vec![
                SupportInterval { lower: -0.5, upper: 0.0 },
                SupportInterval { lower: 0.5, upper: 1.0 },
            ],
            vec![0.0, 1.0 - (-1.0f64).exp()],
            vec![0.0, 1.0],
        )
        .unwrap();
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.0, no_cov()).unwrap(),
        ])
        .unwrap();
        let curve = empirical_baseline_hazard(&est, &[], &data).unwrap();
        assert_eq!(curve.len(), 1);
        assert_relative_eq!(curve[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empirical_hazard_identity_when_gamma_zero() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.0, no_cov()).unwrap(),
            IntervalObservation::interval(1.5, 2.0, no_cov()).unwrap(),
            IntervalObservation::right_censored(2.5, no_cov()).unwrap(),
        ])
        .unwrap();
        let est = turnbull_npmle(&data, 1e-10).unwrap();
        let curve = empirical_baseline_hazard(&est, &[], &data).unwrap();
        // with no covariate effect the curve differences -ln(S) itself
        let mut expected = Vec::new();
        let pts: Vec<(f64, f64)> = est
            .time_points
            .iter()
            .map(|&t| (t, est.survival_at(t)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        for w in pts.windows(2) {
            let slope = ((-w[1].1.ln()) - (-w[0].1.ln())) / (w[1].0 - w[0].0);
            expected.push((w[0].0, slope.max(0.0)));
        }
        assert_eq!(curve.len(), expected.len());
        for ((t, h), (te, he)) in curve.iter().zip(&expected) {
            assert_relative_eq!(t, te);
            assert_relative_eq!(h, he, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_hazard_constant_for_exponential_survival() {
        let rate = 0.1;
        let times: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let mut support = Vec::new();
        let mut mass = Vec::new();
        let mut prev = 1.0;
        for &t in &times {
            support.push(SupportInterval { lower: t - 0.01, upper: t });
            let s = (-rate * t).exp();
            mass.push(prev - s);
            prev = s;
        }
        let est = NpmleEstimate::from_parts(support, mass, times.clone()).unwrap();
        let data = Dataset::new(
            times
                .iter()
                .map(|&t| IntervalObservation::interval(t - 0.01, t, no_cov()).unwrap())
                .collect(),
        )
        .unwrap();
        let curve = empirical_baseline_hazard(&est, &[], &data).unwrap();
        for (t, h) in curve {
            assert!((h - rate).abs() < 1e-10, "at {t}: {h}");
        }
    }

    #[test]
    fn suggest_cutpoints_finds_single_kink() {
        // piecewise-linear hazard with one kink at t = 2
        let curve: Vec<(f64, f64)> = (0..=8)
            .map(|i| {
                let t = 0.5 * i as f64;
                let h = if t <= 2.0 { 0.1 * t } else { 0.2 + 0.5 * (t - 2.0) };
                (t, h)
            })
            .collect();
        let data = Dataset::new(vec![
            IntervalObservation::interval(1.0, 4.0, no_cov()).unwrap(),
            IntervalObservation::interval(2.0, 3.0, no_cov()).unwrap(),
        ])
        .unwrap();
        let suggested = suggest_cutpoints(&curve, &data, 2, CutpointMode::Inflection).unwrap();
        assert_eq!(suggested.used_mode, CutpointMode::Inflection);
        assert_eq!(suggested.grid.tau(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn suggest_cutpoints_falls_back_on_flat_curve() {
        let curve: Vec<(f64, f64)> = (0..=8).map(|i| (0.5 * i as f64, 0.3)).collect();
        let data = Dataset::new(vec![
            IntervalObservation::interval(1.0, 2.0, no_cov()).unwrap(),
            IntervalObservation::interval(3.0, 4.0, no_cov()).unwrap(),
        ])
        .unwrap();
        let suggested = suggest_cutpoints(&curve, &data, 2, CutpointMode::Inflection).unwrap();
        assert_eq!(suggested.used_mode, CutpointMode::Quantile);
        assert_eq!(suggested.grid.tau(), &[0.0, 2.5, 4.0]);
    }

    #[test]
    fn initial_psi_from_curve_examples() {
        let knots = KnotGrid::new(vec![0.0, 2.0, 4.0]).unwrap();
        let constant: Vec<(f64, f64)> = vec![(0.5, 0.1), (1.0, 0.1), (3.0, 0.1)];
        assert_eq!(initial_psi_from_curve(&constant, &knots), vec![0.1, 0.1, 0.1]);
        // linear curve h(t) = 0.05 t; h(0) = 0 floors to 1e-4
        let linear: Vec<(f64, f64)> = (0..=8).map(|i| (0.5 * i as f64, 0.025 * i as f64)).collect();
        let psi = initial_psi_from_curve(&linear, &knots);
        assert_eq!(psi[0], 1e-4);
        assert_relative_eq!(psi[1], 0.1, epsilon = 1e-12);
        assert_relative_eq!(psi[2], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn default_targets_reflect_group_censoring() {
        let make = |event: bool, g: f64, d: f64| {
            let p = CovariateProfile::new(vec![1.0, d, g], vec![d, g]).unwrap();
            if event {
                IntervalObservation::interval(0.5, 1.0, p).unwrap()
            } else {
                IntervalObservation::right_censored(1.0, p).unwrap()
            }
        };
        // group 1: 2 of 4 censored; group 0: 3 of 4 censored
        let data = Dataset::new(vec![
            make(true, 1.0, 1.0),
            make(true, 1.0, 2.0),
            make(false, 1.0, 3.0),
            make(false, 1.0, 4.0),
            make(true, 0.0, 1.5),
            make(false, 0.0, 2.5),
            make(false, 0.0, 3.5),
            make(false, 0.0, 4.5),
        ])
        .unwrap();
        let targets = default_beta0_targets(&data, 1).unwrap();
        assert_eq!(targets.len(), 3);
        assert_relative_eq!(targets[0].1, 0.5);
        assert_relative_eq!(targets[1].1, 0.75);
        assert_relative_eq!(targets[2].1, 0.25);
        // min of the duration covariate is 1.0; the group slot carries the level
        assert_eq!(targets[0].0, vec![1.0, 1.0, 1.0]);
        assert_eq!(targets[1].0, vec![1.0, 1.0, 0.0]);
    }
}
