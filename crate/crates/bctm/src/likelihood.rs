//! Observed- and complete-data log-likelihoods, E-step machinery and
//! numerical differentiation for the observed information matrix.
//!
//! Observation `i` contributes `ln[S_p(l_i) - S_p(r_i)]` when interval
//! censored and `ln S_p(l_i)` when right censored. The E-step weight of a
//! right-censored subject is its conditional probability of being
//! susceptible given survival past `l_i`.

use nalgebra::DMatrix;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    cure_rate, population_survival, susceptible_survival, BctmParameters, KnotGrid,
};
use crate::numeric::{finite_difference_gradient, finite_difference_hessian};

/// Floor inside the logarithm of an interval probability; the structured
/// degeneracy error fires first whenever the true difference is non-positive.
const LOG_DIFF_FLOOR: f64 = 1e-300;

/// E-step weights, one per right-censored observation in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepWeights {
    w: Vec<f64>,
}

impl EStepWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameters(
                "E-step weights must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { w })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Observed-data log-likelihood.
pub fn observed_loglik(params: &BctmParameters, data: &Dataset, knots: &KnotGrid) -> Result<f64> {
    params.validate_against(knots)?;
    let mut total = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        let sp_l = population_survival(obs.left, &obs.profile, params, knots)?;
        if obs.event {
            let sp_r = population_survival(obs.right, &obs.profile, params, knots)?;
            let diff = sp_l - sp_r;
            if diff <= 0.0 {
                return Err(Error::LikelihoodDegenerate { index: i });
            }
            total += diff.max(LOG_DIFF_FLOOR).ln();
        } else {
            total += sp_l.ln();
        }
    }
    Ok(total)
}

/// Complete-data log-likelihood with known cure statuses `eta` (one entry per
/// right-censored observation, `true` = susceptible).
pub fn complete_loglik(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
    eta: &[bool],
) -> Result<f64> {
    let weights: Vec<f64> = eta.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
    q_function(params, data, knots, &EStepWeights::new(weights)?)
}

/// E-step: conditional susceptibility weights at the current parameters.
pub fn estep_weights(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
) -> Result<EStepWeights> {
    params.validate_against(knots)?;
    let mut w = Vec::with_capacity(data.num_right_censored());
    for (i, obs) in data.observations().iter().enumerate() {
        if obs.event {
            continue;
        }
        let pi = cure_rate(params, obs.profile.z());
        let su = susceptible_survival(obs.left, &obs.profile, params, knots)?;
        let sp = population_survival(obs.left, &obs.profile, params, knots)?;
        if sp <= 0.0 {
            return Err(Error::LikelihoodDegenerate { index: i });
        }
        w.push(((1.0 - pi) * su / sp).clamp(0.0, 1.0));
    }
    EStepWeights::new(w)
}

/// Conditional expectation of the complete-data log-likelihood given weights
/// `w` for the right-censored subjects; affine in each weight.
pub fn q_function(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
    weights: &EStepWeights,
) -> Result<f64> {
    params.validate_against(knots)?;
    if weights.len() != data.num_right_censored() {
        return Err(Error::InvalidParameters(format!(
            "got {} weights for {} right-censored observations",
            weights.len(),
            data.num_right_censored()
        )));
    }
    let mut total = 0.0;
    let mut wi = 0;
    for (i, obs) in data.observations().iter().enumerate() {
        if obs.event {
            let sp_l = population_survival(obs.left, &obs.profile, params, knots)?;
            let sp_r = population_survival(obs.right, &obs.profile, params, knots)?;
            let diff = sp_l - sp_r;
            if diff <= 0.0 {
                return Err(Error::LikelihoodDegenerate { index: i });
            }
            total += diff.max(LOG_DIFF_FLOOR).ln();
        } else {
            let w = weights.values()[wi];
            wi += 1;
            let pi = cure_rate(params, obs.profile.z());
            if pi <= 0.0 || pi >= 1.0 {
                return Err(Error::DegenerateIncidence { value: pi });
            }
            // 0 * ln(0) is taken as 0 throughout
            if w < 1.0 {
                total += (1.0 - w) * pi.ln();
            }
            if w > 0.0 {
                let su = susceptible_survival(obs.left, &obs.profile, params, knots)?;
                total += w * ((1.0 - pi) * su).ln();
            }
        }
    }
    Ok(total)
}

/// Binary entropy of the E-step weights, the gap between the observed
/// log-likelihood and `Q(theta, theta)`.
pub fn estep_entropy(weights: &EStepWeights) -> f64 {
    let term = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    -weights.values().iter().map(|&w| term(w) + term(1.0 - w)).sum::<f64>()
}

/// Akaike information criterion `2 p - 2 loglik`.
pub fn aic(loglik: f64, n_params: usize) -> f64 {
    assert!(n_params >= 1, "aic requires at least one parameter");
    2.0 * n_params as f64 - 2.0 * loglik
}

/// Central finite-difference Hessian of an arbitrary scalar function, with
/// per-coordinate steps `1e-4 * max(|theta_j|, 1)`.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Result<DMatrix<f64>> {
    finite_difference_hessian(f, at)
}

/// Finite-difference gradient of the observed log-likelihood in the flat
/// `[alpha, psi.., beta.., gamma..]` parameterization.
pub fn loglik_gradient(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
) -> Result<Vec<f64>> {
    params.validate_against(knots)?;
    observed_loglik(params, data, knots)?;
    let b = knots.num_segments();
    let (q1, q2) = (data.q1(), data.q2());
    finite_difference_gradient(
        |v| {
            let p = BctmParameters::from_vec(v, b, q1, q2);
            observed_loglik_unchecked(&p, data, knots)
        },
        &params.to_vec(),
    )
}

/// Q-function as a plain value: degeneracies map to `-inf`, parameter bounds
/// are not enforced. This is the M-step objective surface.
pub(crate) fn q_function_unchecked(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
    weights: &EStepWeights,
) -> f64 {
    let mut total = 0.0;
    let mut wi = 0;
    for obs in data.observations() {
        if obs.event {
            let sp_l = match population_survival(obs.left, &obs.profile, params, knots) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            let sp_r = match population_survival(obs.right, &obs.profile, params, knots) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            let diff = sp_l - sp_r;
            if diff <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += diff.max(LOG_DIFF_FLOOR).ln();
        } else {
            let w = weights.values()[wi];
            wi += 1;
            let pi = cure_rate(params, obs.profile.z());
            if pi <= 0.0 || pi >= 1.0 {
                return f64::NEG_INFINITY;
            }
            if w < 1.0 {
                total += (1.0 - w) * pi.ln();
            }
            if w > 0.0 {
                let su = match susceptible_survival(obs.left, &obs.profile, params, knots) {
                    Ok(v) => v,
                    Err(_) => return f64::NEG_INFINITY,
                };
                total += w * ((1.0 - pi) * su).ln();
            }
        }
    }
    total
}

/// Observed log-likelihood as a plain value: degeneracies map to `-inf`,
/// parameter bounds are not enforced. This is the objective surface seen by
/// optimizers and finite-difference stencils.
pub(crate) fn observed_loglik_unchecked(
    params: &BctmParameters,
    data: &Dataset,
    knots: &KnotGrid,
) -> f64 {
    let mut total = 0.0;
    for obs in data.observations() {
        let sp_l = match population_survival(obs.left, &obs.profile, params, knots) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        if obs.event {
            let sp_r = match population_survival(obs.right, &obs.profile, params, knots) {
                Ok(v) => v,
                Err(_) => return f64::NEG_INFINITY,
            };
            let diff = sp_l - sp_r;
            if diff <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += diff.max(LOG_DIFF_FLOOR).ln();
        } else {
            total += sp_l.ln();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IntervalObservation;
    use crate::model::CovariateProfile;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> KnotGrid {
        KnotGrid::new(vec![0.0, 1.0, 3.0]).unwrap()
    }

    fn theta() -> BctmParameters {
        BctmParameters::new(0.5, vec![0.3, 0.6, 0.4], vec![0.4, -0.8], vec![0.25]).unwrap()
    }

    fn profile(zc: f64, xc: f64) -> CovariateProfile {
        CovariateProfile::new(vec![1.0, zc], vec![xc]).unwrap()
    }

    fn toy_dataset() -> Dataset {
        Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.5, profile(1.0, 0.5)).unwrap(),
            IntervalObservation::right_censored(2.0, profile(-0.5, 1.0)).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn observed_loglik_zero_for_censored_at_origin() {
        let data = Dataset::new(vec![
            IntervalObservation::right_censored(0.0, profile(0.3, 0.1)).unwrap(),
            IntervalObservation::right_censored(0.0, profile(-1.0, 0.6)).unwrap(),
        ])
        .unwrap();
        assert_relative_eq!(observed_loglik(&theta(), &data, &grid()).unwrap(), 0.0);
    }

    #[test]
    fn observed_loglik_matches_hand_sum() {
        let data = toy_dataset();
        let t = theta();
        let g = grid();
        // independent composition of the two contributions
        let o0 = &data.observations()[0];
        let o1 = &data.observations()[1];
        let expected = (population_survival(0.5, &o0.profile, &t, &g).unwrap()
            - population_survival(1.5, &o0.profile, &t, &g).unwrap())
        .ln()
            + population_survival(2.0, &o1.profile, &t, &g).unwrap().ln();
        assert_relative_eq!(
            observed_loglik(&t, &data, &g).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn observed_loglik_detects_degenerate_interval() {
        // identically zero hazard makes every interval probability zero
        let flat = BctmParameters::new(0.5, vec![0.0, 0.0, 0.0], vec![0.4, -0.8], vec![0.25])
            .unwrap();
        match observed_loglik(&flat, &toy_dataset(), &grid()) {
            Err(Error::LikelihoodDegenerate { index }) => assert_eq!(index, 0),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn estep_weight_at_origin_is_one_minus_cure_rate() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.5, profile(1.0, 0.5)).unwrap(),
            IntervalObservation::right_censored(0.0, profile(-0.5, 1.0)).unwrap(),
        ])
        .unwrap();
        let t = theta();
        let w = estep_weights(&t, &data, &grid()).unwrap();
        let pi = cure_rate(&t, data.observations()[1].profile.z());
        assert_relative_eq!(w.values()[0], 1.0 - pi, epsilon = 1e-12);
    }

    #[test]
    fn estep_weight_tends_to_one_without_cured_mass() {
        // a large positive intercept drives the cure rate to zero
        let t = BctmParameters::new(0.5, vec![0.3, 0.6, 0.4], vec![30.0, 0.0], vec![0.25])
            .unwrap();
        let data = toy_dataset();
        let w = estep_weights(&t, &data, &grid()).unwrap();
        assert!(w.values()[0] > 1.0 - 1e-9, "w = {}", w.values()[0]);
    }

    #[test]
    fn estep_weight_identity_routes_agree() {
        // alpha = 0.5, z'beta = 0, Lambda(l) = 1
        let g = KnotGrid::new(vec![0.0, 2.0]).unwrap();
        let t = BctmParameters::new(0.5, vec![1.0, 1.0], vec![0.0], vec![]).unwrap();
        let prof = CovariateProfile::new(vec![1.0], vec![]).unwrap();
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.5, prof.clone()).unwrap(),
            IntervalObservation::right_censored(1.0, prof.clone()).unwrap(),
        ])
        .unwrap();
        let w = estep_weights(&t, &data, &g).unwrap().values()[0];
        let sp = population_survival(1.0, &prof, &t, &g).unwrap();
        let pi = cure_rate(&t, prof.z());
        assert_relative_eq!(w, (sp - pi) / sp, epsilon = 1e-12);
        assert_relative_eq!(w, 1.0 - pi / sp, epsilon = 1e-12);
    }

    #[test]
    fn complete_loglik_binary_cases() {
        let data = Dataset::new(vec![
            IntervalObservation::interval(0.5, 1.5, profile(1.0, 0.5)).unwrap(),
            IntervalObservation::right_censored(0.0, profile(-0.5, 1.0)).unwrap(),
            IntervalObservation::right_censored(0.0, profile(0.2, -0.3)).unwrap(),
        ])
        .unwrap();
        let t = theta();
        let g = grid();
        // all eta = 1 coincides with Q at unit weights
        let all_susceptible = complete_loglik(&t, &data, &g, &[true, true]).unwrap();
        let q = q_function(&t, &data, &g, &EStepWeights::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_relative_eq!(all_susceptible, q, epsilon = 1e-14);
        // all eta = 0 with l = 0: event term plus sum of ln(pi)
        let all_cured = complete_loglik(&t, &data, &g, &[false, false]).unwrap();
        let o0 = &data.observations()[0];
        let event_term = (population_survival(0.5, &o0.profile, &t, &g).unwrap()
            - population_survival(1.5, &o0.profile, &t, &g).unwrap())
        .ln();
        let pi_sum: f64 = data.observations()[1..]
            .iter()
            .map(|o| cure_rate(&t, o.profile.z()).ln())
            .sum();
        assert_relative_eq!(all_cured, event_term + pi_sum, epsilon = 1e-12);
    }

    #[test]
    fn complete_loglik_matches_hand_sum_on_random_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = grid();
        let t = theta();
        let mut obs = Vec::new();
        for i in 0..10 {
            let p = profile(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if i % 2 == 0 {
                let l = rng.random_range(0.1..1.0);
                obs.push(IntervalObservation::interval(l, l + 0.8, p).unwrap());
            } else {
                obs.push(IntervalObservation::right_censored(rng.random_range(0.0..2.0), p).unwrap());
            }
        }
        let data = Dataset::new(obs).unwrap();
        let eta: Vec<bool> = (0..data.num_right_censored()).map(|_| rng.random_bool(0.5)).collect();

        let mut expected = 0.0;
        let mut k = 0;
        for o in data.observations() {
            if o.event {
                let d = population_survival(o.left, &o.profile, &t, &g).unwrap()
                    - population_survival(o.right, &o.profile, &t, &g).unwrap();
                expected += d.ln();
            } else {
                let pi = cure_rate(&t, o.profile.z());
                if eta[k] {
                    let su = susceptible_survival(o.left, &o.profile, &t, &g).unwrap();
                    expected += ((1.0 - pi) * su).ln();
                } else {
                    expected += pi.ln();
                }
                k += 1;
            }
        }
        assert_relative_eq!(
            complete_loglik(&t, &data, &g, &eta).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn q_function_linear_in_weights() {
        let data = toy_dataset();
        let t = theta();
        let g = grid();
        let q_at = |w: f64| {
            q_function(&t, &data, &g, &EStepWeights::new(vec![w]).unwrap()).unwrap()
        };
        // three-point collinearity and the half-weight average
        let (q0, qh, q1) = (q_at(0.0), q_at(0.5), q_at(1.0));
        assert_relative_eq!(qh, 0.5 * (q0 + q1), epsilon = 1e-12);
        assert_relative_eq!(q_at(0.25), 0.75 * q0 + 0.25 * q1, epsilon = 1e-12);
        // binary weights coincide with complete-data log-likelihoods
        assert_relative_eq!(
            q0,
            complete_loglik(&t, &data, &g, &[false]).unwrap(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            q1,
            complete_loglik(&t, &data, &g, &[true]).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn q_at_self_weights_lower_bounds_loglik_by_entropy() {
        let data = toy_dataset();
        let t = theta();
        let g = grid();
        let w = estep_weights(&t, &data, &g).unwrap();
        let q = q_function(&t, &data, &g, &w).unwrap();
        let ll = observed_loglik(&t, &data, &g).unwrap();
        let ent = estep_entropy(&w);
        assert!(ent >= 0.0);
        assert!(q <= ll + 1e-12);
        assert_relative_eq!(ll, q + ent, epsilon = 1e-10);
    }

    #[test]
    fn aic_reproduces_reference_rows() {
        assert_relative_eq!(aic(0.0, 1), 2.0);
        let rows = [(-199.5193, 10, "419.0386"), (-194.1805, 15, "418.3610")];
        for (ll, p, printed) in rows {
            let value = aic(ll, p);
            assert_eq!(format!("{value:.4}"), printed);
            assert_relative_eq!(value, printed.parse::<f64>().unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let f = |v: &[f64]| -(v[0] * v[0] + 3.0 * v[1] * v[1]) / 2.0;
        let h = numerical_hessian(f, &[0.4, -1.2]).unwrap();
        assert_relative_eq!(h[(0, 0)], -1.0, epsilon = 1e-6);
        assert_relative_eq!(h[(1, 1)], -3.0, epsilon = 1e-6);
        assert_relative_eq!(h[(0, 1)], 0.0, epsilon = 1e-6);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
    }

    #[test]
    fn hessian_recovers_bernoulli_standard_error() {
        // n = 100, p_hat = 0.3: SE = sqrt(0.3 * 0.7 / 100)
        let f = |v: &[f64]| 100.0 * (0.3 * v[0].ln() + 0.7 * (1.0 - v[0]).ln());
        let h = numerical_hessian(f, &[0.3]).unwrap();
        let se = (-1.0 / h[(0, 0)]).sqrt();
        assert!((se - (0.3f64 * 0.7 / 100.0).sqrt()).abs() < 1e-4, "se = {se}");
    }

    #[test]
    fn hessian_reports_non_finite_stencil() {
        let f = |v: &[f64]| v[0].ln();
        match numerical_hessian(f, &[1e-6]) {
            Err(Error::NonFiniteStencil { i: 0, j: 0 }) => {}
            other => panic!("expected stencil error, got {other:?}"),
        }
    }

    #[test]
    fn gradient_zero_for_flat_likelihood() {
        // a single right-censored subject at l = 0 contributes ln(1) everywhere
        let data = Dataset::new(vec![
            IntervalObservation::right_censored(0.0, profile(0.5, 0.5)).unwrap(),
        ])
        .unwrap();
        let g = loglik_gradient(&theta(), &data, &grid()).unwrap();
        for v in g {
            assert!(v.abs() < 1e-10, "gradient component {v}");
        }
    }

    #[test]
    fn gradient_matches_analytic_special_case() {
        // alpha = 0, B = 1, gamma absent: S_p(y) = exp(-e^eta (1 - e^-Lambda(y)))
        // with Lambda(y) = psi0 y + (psi1 - psi0) y^2 / (2 tau1) for y <= tau1.
        let g = KnotGrid::new(vec![0.0, 4.0]).unwrap();
        let t = BctmParameters::new(0.0, vec![0.4, 0.9], vec![0.3, -0.6], vec![]).unwrap();
        let tau1 = 4.0;
        let mut obs = Vec::new();
        let zs = [0.5, -0.5, 1.0];
        for (k, &zc) in zs.iter().enumerate() {
            let p = CovariateProfile::new(vec![1.0, zc], vec![]).unwrap();
            let l = 0.4 + 0.5 * k as f64;
            obs.push(IntervalObservation::interval(l, l + 0.9, p.clone()).unwrap());
            obs.push(IntervalObservation::right_censored(l + 0.3, p).unwrap());
        }
        let data = Dataset::new(obs).unwrap();

        let lambda = |y: f64, psi: &[f64]| psi[0] * y + (psi[1] - psi[0]) * y * y / (2.0 * tau1);
        let dlam = |y: f64| [y - y * y / (2.0 * tau1), y * y / (2.0 * tau1)];
        // d ln Sp / d psi_b = -e^eta e^-Lambda dLambda_b; d ln Sp / d beta_j = -z_j e^eta (1 - e^-Lambda)
        let mut expected = vec![0.0; 4]; // psi0, psi1, beta0, beta1
        for o in data.observations() {
            let eta = t.beta[0] + t.beta[1] * o.profile.z()[1];
            let e = eta.exp();
            let sp = |y: f64| (-e * (1.0 - (-lambda(y, &t.psi)).exp())).exp();
            let dsp = |y: f64| {
                let lam = lambda(y, &t.psi);
                let s = sp(y);
                let dl = dlam(y);
                let dpsi = [-s * e * (-lam).exp() * dl[0], -s * e * (-lam).exp() * dl[1]];
                let factor = -s * e * (1.0 - (-lam).exp());
                [dpsi[0], dpsi[1], factor, factor * o.profile.z()[1]]
            };
            if o.event {
                let denom = sp(o.left) - sp(o.right);
                let dl = dsp(o.left);
                let dr = dsp(o.right);
                for j in 0..4 {
                    expected[j] += (dl[j] - dr[j]) / denom;
                }
            } else {
                let s = sp(o.left);
                let d = dsp(o.left);
                for j in 0..4 {
                    expected[j] += d[j] / s;
                }
            }
        }
        let grad = loglik_gradient(&t, &data, &g).unwrap();
        // layout: [alpha, psi0, psi1, beta0, beta1]
        for (j, e) in expected.iter().enumerate() {
            assert!(
                (grad[j + 1] - e).abs() < 1e-4,
                "component {j}: fd {} vs analytic {e}",
                grad[j + 1]
            );
        }
    }

    #[test]
    fn weights_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid();
        for _ in 0..100 {
            let t = BctmParameters::new(
                rng.random_range(0.0..=1.0),
                vec![
                    rng.random_range(0.0..1.5),
                    rng.random_range(0.0..1.5),
                    rng.random_range(0.0..1.5),
                ],
                vec![rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)],
                vec![rng.random_range(-1.0..1.0)],
            )
            .unwrap();
            let data = toy_dataset();
            let w = estep_weights(&t, &data, &g).unwrap();
            for v in w.values() {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
