//! EM fitting loop with simultaneous M-step maximization over all
//! parameters (including the transformation parameter), standard-error
//! extraction from the observed information, and a profile-likelihood
//! comparison mode that freezes `alpha` on a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{
    aic, estep_weights, numerical_hessian, observed_loglik, observed_loglik_unchecked,
    q_function_unchecked,
};
use crate::model::{BctmParameters, KnotGrid};
use crate::optim::{minimize, Bounds, OptimOptions, OptimizerKind};

/// A parameter sitting within this distance of a box bound is flagged as a
/// boundary estimate (its Wald standard error is formally invalid there).
pub const BOUNDARY_EPS: f64 = 1e-6;

/// EM and M-step controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Relative parameter-change tolerance for EM convergence.
    pub tol: f64,
    pub max_em_iters: usize,
    pub optimizer: OptimizerKind,
    pub optimizer_tol: f64,
    pub optimizer_max_evals: usize,
    pub alpha_bounds: (f64, f64),
    pub psi_lower_bound: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_em_iters: 500,
            optimizer: OptimizerKind::Simplex,
            optimizer_tol: 1e-6,
            optimizer_max_evals: 5000,
            alpha_bounds: (0.0, 1.0),
            psi_lower_bound: 0.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.optimizer_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        let (lo, hi) = self.alpha_bounds;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "alpha bounds must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        if self.psi_lower_bound < 0.0 {
            return Err(Error::Config("psi lower bound must be non-negative".into()));
        }
        Ok(())
    }
}

/// Maximum-likelihood fit summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: BctmParameters,
    /// Standard errors in `[alpha, psi.., beta.., gamma..]` order; `None`
    /// marks undefined entries (non-positive variance or failed information).
    pub se: Vec<Option<f64>>,
    /// Covariance matrix (row-major); `None` when the observed information
    /// could not be evaluated. Undefined entries (frozen coordinates) hold
    /// NaN and serialize as JSON null.
    #[serde(with = "nullable_matrix")]
    pub vcov: Option<Vec<Vec<f64>>>,
    pub loglik: f64,
    pub aic: f64,
    /// Number of estimated parameters used in the AIC.
    pub n_params: usize,
    pub n_em_iters: usize,
    pub converged: bool,
    /// Observed log-likelihood at the initial point and after every M-step.
    pub loglik_trace: Vec<f64>,
    /// Coordinates whose estimate sits on a box bound.
    pub boundary: Vec<bool>,
    /// Covariance came from a pseudo-inverse of a singular information matrix.
    pub vcov_pseudo_inverse: bool,
    /// The EM loop stopped because an M-step failed to improve.
    pub mstep_stalled: bool,
    /// Set when the fit was run with `alpha` frozen.
    pub fixed_alpha: Option<f64>,
}

/// JSON cannot hold NaN; undefined covariance entries round-trip as null.
mod nullable_matrix {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        value: &Option<Vec<Vec<f64>>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        value
            .as_ref()
            .map(|m| {
                m.iter()
                    .map(|row| {
                        row.iter()
                            .map(|v| v.is_finite().then_some(*v))
                            .collect::<Vec<Option<f64>>>()
                    })
                    .collect::<Vec<_>>()
            })
            .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Option<Vec<Vec<f64>>>, D::Error> {
        let raw: Option<Vec<Vec<Option<f64>>>> = Option::deserialize(deserializer)?;
        Ok(raw.map(|m| {
            m.into_iter()
                .map(|row| row.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect()
        }))
    }
}

/// Maps the model parameters onto the optimizer vector, optionally freezing
/// `alpha`.
#[derive(Debug, Clone)]
struct ParamLayout {
    num_segments: usize,
    q1: usize,
    q2: usize,
    fixed_alpha: Option<f64>,
}

impl ParamLayout {
    fn new(knots: &KnotGrid, data: &Dataset, fixed_alpha: Option<f64>) -> Self {
        Self {
            num_segments: knots.num_segments(),
            q1: data.q1(),
            q2: data.q2(),
            fixed_alpha,
        }
    }

    fn full_dim(&self) -> usize {
        self.num_segments + self.q1 + self.q2 + 3
    }

    fn dim(&self) -> usize {
        self.full_dim() - usize::from(self.fixed_alpha.is_some())
    }

    fn to_optim_vec(&self, params: &BctmParameters) -> Vec<f64> {
        let full = params.to_vec();
        match self.fixed_alpha {
            Some(_) => full[1..].to_vec(),
            None => full,
        }
    }

    fn to_params(&self, v: &[f64]) -> BctmParameters {
        match self.fixed_alpha {
            Some(alpha) => {
                let mut full = Vec::with_capacity(v.len() + 1);
                full.push(alpha);
                full.extend_from_slice(v);
                BctmParameters::from_vec(&full, self.num_segments, self.q1, self.q2)
            }
            None => BctmParameters::from_vec(v, self.num_segments, self.q1, self.q2),
        }
    }

    fn bounds(&self, config: &EmConfig) -> Bounds {
        let mut lower = Vec::with_capacity(self.dim());
        let mut upper = Vec::with_capacity(self.dim());
        if self.fixed_alpha.is_none() {
            lower.push(config.alpha_bounds.0);
            upper.push(config.alpha_bounds.1);
        }
        for _ in 0..=self.num_segments {
            lower.push(config.psi_lower_bound);
            upper.push(f64::INFINITY);
        }
        for _ in 0..(self.q1 + 1 + self.q2) {
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
        }
        Bounds::new(lower, upper).expect("layout bounds are well ordered")
    }
}

/// Outcome of one M-step.
#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub theta: BctmParameters,
    /// The objective strictly improved over the initial point.
    pub improved: bool,
    /// The optimizer neither converged nor improved.
    pub no_progress: bool,
    pub objective: f64,
    pub evals: usize,
}

/// Maximizes an arbitrary objective over the full parameter box
/// (`alpha in [0,1]`, `psi >= 0`, `beta`/`gamma` free).
pub fn mstep_maximize<F: Fn(&BctmParameters) -> f64>(
    objective: F,
    init: &BctmParameters,
    config: &EmConfig,
) -> Result<MStepOutcome> {
    let layout = ParamLayout {
        num_segments: init.psi.len() - 1,
        q1: init.beta.len() - 1,
        q2: init.gamma.len(),
        fixed_alpha: None,
    };
    mstep_with_layout(&objective, init, config, &layout)
}

fn mstep_with_layout<F: Fn(&BctmParameters) -> f64>(
    objective: &F,
    init: &BctmParameters,
    config: &EmConfig,
    layout: &ParamLayout,
) -> Result<MStepOutcome> {
    config.validate()?;
    let f_init = objective(init);
    if !f_init.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let bounds = layout.bounds(config);
    let x0 = layout.to_optim_vec(init);
    let options = OptimOptions {
        tol: config.optimizer_tol,
        max_evals: config.optimizer_max_evals,
    };
    let outcome = minimize(
        config.optimizer,
        |v| -objective(&layout.to_params(v)),
        &x0,
        &bounds,
        &options,
    )?;
    let best = -outcome.f;
    if best < f_init {
        // never step downhill; hand back the starting point
        return Ok(MStepOutcome {
            theta: init.clone(),
            improved: false,
            no_progress: true,
            objective: f_init,
            evals: outcome.evals,
        });
    }
    let improved = best > f_init;
    Ok(MStepOutcome {
        theta: layout.to_params(&outcome.x),
        improved,
        no_progress: !improved && !outcome.converged,
        objective: best,
        evals: outcome.evals,
    })
}

/// Largest per-coordinate relative parameter change. The raw criterion
/// `|Δθ_b| / |θ_b|` is undefined at zero, so the denominator is floored at
/// the tolerance itself.
fn max_relative_change(old: &[f64], new: &[f64], tol: f64) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| ((n - o) / o.abs().max(tol)).abs())
        .fold(0.0, f64::max)
}

/// Fits the model by EM with all parameters maximized simultaneously.
pub fn fit_em(
    data: &Dataset,
    knots: &KnotGrid,
    init: &BctmParameters,
    config: &EmConfig,
) -> Result<FitResult> {
    fit_em_impl(data, knots, init, config, None)
}

/// Fits with `alpha` frozen at the given value (profile-likelihood building
/// block). The frozen coordinate is excluded from the M-step and reported
/// with an undefined standard error.
pub fn fit_em_fixed_alpha(
    data: &Dataset,
    knots: &KnotGrid,
    init: &BctmParameters,
    config: &EmConfig,
    alpha: f64,
) -> Result<FitResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameters(format!(
            "frozen alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut start = init.clone();
    start.alpha = alpha;
    fit_em_impl(data, knots, &start, config, Some(alpha))
}

fn fit_em_impl(
    data: &Dataset,
    knots: &KnotGrid,
    init: &BctmParameters,
    config: &EmConfig,
    fixed_alpha: Option<f64>,
) -> Result<FitResult> {
    config.validate()?;
    init.validate_against(knots)?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot fit an empty dataset".into()));
    }
    let layout = ParamLayout::new(knots, data, fixed_alpha);

    let ll_init = observed_loglik(init, data, knots)?;
    if !ll_init.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut theta = init.clone();
    let mut trace = vec![ll_init];
    let mut converged = false;
    let mut stalled = false;
    let mut n_iters = 0usize;

    for k in 1..=config.max_em_iters {
        let wrap = |e: Error| Error::EmIteration { iteration: k, source: Box::new(e) };
        let weights = estep_weights(&theta, data, knots).map_err(wrap)?;
        let outcome = mstep_with_layout(
            &|p: &BctmParameters| q_function_unchecked(p, data, knots, &weights),
            &theta,
            config,
            &layout,
        )
        .map_err(wrap)?;
        n_iters = k;
        if outcome.no_progress {
            stalled = true;
            break;
        }
        let ll = observed_loglik(&outcome.theta, data, knots).map_err(wrap)?;
        trace.push(ll);
        let rel = max_relative_change(&theta.to_vec(), &outcome.theta.to_vec(), config.tol);
        theta = outcome.theta;
        if rel < config.tol {
            converged = true;
            break;
        }
    }

    let loglik = *trace.last().unwrap();
    let n_params = layout.dim();
    let (se, vcov, boundary, pseudo) = match standard_errors_impl(&theta, data, knots, &layout, config)
    {
        Ok(se) => (se.se, Some(se.vcov), se.boundary, se.used_pseudo_inverse),
        Err(err) => {
            log::warn!("standard errors unavailable: {err}");
            let dim = layout.full_dim();
            (vec![None; dim], None, boundary_flags(&theta, config), false)
        }
    };

    Ok(FitResult {
        theta_hat: theta,
        se,
        vcov,
        loglik,
        aic: aic(loglik, n_params),
        n_params,
        n_em_iters: n_iters,
        converged,
        loglik_trace: trace,
        boundary,
        vcov_pseudo_inverse: pseudo,
        mstep_stalled: stalled,
        fixed_alpha,
    })
}

/// Standard errors and covariance of the full parameter vector.
#[derive(Debug, Clone)]
pub struct StandardErrors {
    /// One entry per parameter in `[alpha, psi.., beta.., gamma..]` order.
    pub se: Vec<Option<f64>>,
    /// Row-major covariance matrix over the same ordering.
    pub vcov: Vec<Vec<f64>>,
    pub boundary: Vec<bool>,
    pub used_pseudo_inverse: bool,
}

fn boundary_flags(theta: &BctmParameters, config: &EmConfig) -> Vec<bool> {
    let mut flags = Vec::with_capacity(theta.len());
    let (alo, ahi) = config.alpha_bounds;
    flags.push((theta.alpha - alo).abs() < BOUNDARY_EPS || (ahi - theta.alpha).abs() < BOUNDARY_EPS);
    for p in &theta.psi {
        flags.push((p - config.psi_lower_bound).abs() < BOUNDARY_EPS);
    }
    flags.extend(std::iter::repeat_n(false, theta.beta.len() + theta.gamma.len()));
    flags
}

/// Inverse negated observed-information standard errors at `theta_hat`.
pub fn standard_errors(
    theta_hat: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
) -> Result<StandardErrors> {
    let layout = ParamLayout::new(knots, data, None);
    standard_errors_impl(theta_hat, data, knots, &layout, &EmConfig::default())
}

fn standard_errors_impl(
    theta_hat: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
    layout: &ParamLayout,
    config: &EmConfig,
) -> Result<StandardErrors> {
    theta_hat.validate_against(knots)?;
    let x = layout.to_optim_vec(theta_hat);
    let hessian = numerical_hessian(
        |v| observed_loglik_unchecked(&layout.to_params(v), data, knots),
        &x,
    )?;
    let info = -hessian;
    let dim = info.nrows();
    let (inv, pseudo) = match info.clone().try_inverse() {
        Some(inv) => (inv, false),
        None => {
            let svd = info.svd(true, true);
            let inv = svd
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Estimation(format!("pseudo-inverse failed: {e}")))?;
            (inv, true)
        }
    };

    // re-insert the frozen alpha as an undefined row/column
    let full_dim = layout.full_dim();
    let offset = usize::from(layout.fixed_alpha.is_some());
    let mut vcov = vec![vec![f64::NAN; full_dim]; full_dim];
    for i in 0..dim {
        for j in 0..dim {
            vcov[i + offset][j + offset] = inv[(i, j)];
        }
    }
    let mut se: Vec<Option<f64>> = (0..full_dim)
        .map(|i| {
            let v = vcov[i][i];
            (v.is_finite() && v > 0.0).then(|| v.sqrt())
        })
        .collect();
    if layout.fixed_alpha.is_some() {
        se[0] = None;
    }
    Ok(StandardErrors {
        se,
        vcov,
        boundary: boundary_flags(theta_hat, config),
        used_pseudo_inverse: pseudo,
    })
}

/// One grid point of a profile-likelihood scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub alpha: f64,
    pub loglik: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Result of a profile-likelihood scan over an `alpha` grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFit {
    pub best: FitResult,
    pub table: Vec<ProfilePoint>,
}

/// Runs `fit_em` with `alpha` frozen at each grid value (in parallel) and
/// returns the best fit along with the full profile table. Failed grid
/// points are recorded and skipped.
pub fn profile_fit(
    data: &Dataset,
    knots: &KnotGrid,
    init: &BctmParameters,
    config: &EmConfig,
    alpha_grid: &[f64],
) -> Result<ProfileFit> {
    if alpha_grid.is_empty() {
        return Err(Error::Config("alpha grid must be non-empty".into()));
    }
    if alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Config("alpha grid values must lie in [0, 1]".into()));
    }
    let fits: Vec<(f64, Result<FitResult>)> = alpha_grid
        .par_iter()
        .map(|&alpha| (alpha, fit_em_fixed_alpha(data, knots, init, config, alpha)))
        .collect();

    let mut table = Vec::with_capacity(fits.len());
    let mut best: Option<FitResult> = None;
    for (alpha, fit) in fits {
        match fit {
            Ok(fit) => {
                table.push(ProfilePoint {
                    alpha,
                    loglik: Some(fit.loglik),
                    converged: fit.converged,
                    error: None,
                });
                if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                    best = Some(fit);
                }
            }
            Err(err) => table.push(ProfilePoint {
                alpha,
                loglik: None,
                converged: false,
                error: Some(err.to_string()),
            }),
        }
    }
    let best = best.ok_or_else(|| Error::Estimation("every profile grid point failed".into()))?;
    Ok(ProfileFit { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadratic_objective(center: Vec<f64>) -> impl Fn(&BctmParameters) -> f64 {
        move |p: &BctmParameters| {
            -p.to_vec()
                .iter()
                .zip(&center)
                .map(|(v, c)| (v - c) * (v - c))
                .sum::<f64>()
        }
    }

    fn init_params() -> BctmParameters {
        BctmParameters::new(0.5, vec![0.5, 0.5], vec![0.0, 0.0], vec![0.0]).unwrap()
    }

    #[test]
    fn mstep_reaches_interior_optimum() {
        // layout: [alpha, psi0, psi1, beta0, beta1, gamma1]
        let center = vec![0.4, 0.3, 0.9, -0.5, 0.2, 0.6];
        let out = mstep_maximize(quadratic_objective(center.clone()), &init_params(), &EmConfig::default())
            .unwrap();
        assert!(out.improved);
        for (v, c) in out.theta.to_vec().iter().zip(&center) {
            assert!((v - c).abs() < 1e-3, "{v} vs {c}");
        }
    }

    #[test]
    fn mstep_projects_alpha_onto_box() {
        let center = vec![1.3, 0.3, 0.9, -0.5, 0.2, 0.6];
        let out = mstep_maximize(quadratic_objective(center), &init_params(), &EmConfig::default())
            .unwrap();
        assert_relative_eq!(out.theta.alpha, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn mstep_keeps_psi_nonnegative() {
        let center = vec![0.5, -0.4, 0.9, -0.5, 0.2, 0.6];
        let out = mstep_maximize(quadratic_objective(center), &init_params(), &EmConfig::default())
            .unwrap();
        assert!(out.theta.psi[0] >= 0.0);
        assert!(out.theta.psi[0] < 1e-9);
    }

    #[test]
    fn mstep_rejects_non_finite_start() {
        let objective = |_: &BctmParameters| f64::NEG_INFINITY;
        assert!(matches!(
            mstep_maximize(objective, &init_params(), &EmConfig::default()),
            Err(Error::NonFiniteObjective)
        ));
    }

    #[test]
    fn relative_change_guards_zero_denominator() {
        // the zero coordinate uses the tolerance as its denominator
        let change = max_relative_change(&[0.0, 1.0], &[0.0005, 1.0], 1e-3);
        assert_relative_eq!(change, 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            max_relative_change(&[2.0, 1.0], &[2.001, 1.0], 1e-3),
            0.0005,
            epsilon = 1e-12
        );
    }
}
