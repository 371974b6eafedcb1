//! Bounded derivative-free and quasi-Newton minimizers used by the M-step.
//!
//! Both methods handle box constraints by projecting trial points onto the
//! feasible box before evaluation, so the objective is only ever queried at
//! feasible points and the returned minimizer is always feasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer selection for the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// Bounded Nelder-Mead simplex; robust to the non-smooth branch seam at
    /// `alpha = 0` and the default.
    #[default]
    #[serde(rename = "simplex")]
    Simplex,
    /// Projected-gradient BFGS with finite-difference gradients.
    #[serde(rename = "quasi-newton-with-bounds")]
    QuasiNewton,
}

/// Per-coordinate box constraints; use infinities for unconstrained sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidParameters("bound vectors differ in length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameters("bounds must satisfy lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn projected(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.project(&mut y);
        y
    }
}

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_evals: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` over the box from `x0`. The objective may return non-finite
/// values away from `x0`; those points are treated as worst-possible.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    kind: OptimizerKind,
    f: F,
    x0: &[f64],
    bounds: &Bounds,
    options: &OptimOptions,
) -> Result<OptimOutcome> {
    assert_eq!(x0.len(), bounds.len(), "dimension mismatch");
    match kind {
        OptimizerKind::Simplex => nelder_mead(f, x0, bounds, options),
        OptimizerKind::QuasiNewton => projected_bfgs(f, x0, bounds, options),
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    bounds: &Bounds,
    options: &OptimOptions,
) -> Result<OptimOutcome> {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(f(x))
    };

    let start = bounds.projected(x0);
    let f_start = eval(&start);
    if !f_start.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    // initial simplex: step each coordinate, flipping direction at a bound.
    // Steps stay small so a warm-started call polishes locally instead of
    // leaping along flat ridges.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.clone(), f_start));
    for i in 0..n {
        let step = (0.1 * start[i].abs()).max(0.1);
        let mut vertex = start.clone();
        vertex[i] += step;
        bounds.project(&mut vertex);
        if vertex[i] == start[i] {
            vertex[i] = start[i] - step;
            bounds.project(&mut vertex);
        }
        let fv = eval(&vertex);
        simplex.push((vertex, fv));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    order(&mut simplex);

    // coordinates that converged a hair away from a finite bound are tried
    // at the bound itself, so active constraints land exactly
    let snap_to_bounds = |x: &[f64], fx: f64, eval: &mut dyn FnMut(&[f64]) -> f64| {
        let mut best = (x.to_vec(), fx);
        for i in 0..n {
            for bound in [bounds.lower[i], bounds.upper[i]] {
                if bound.is_finite()
                    && best.0[i] != bound
                    && (best.0[i] - bound).abs() <= 1e-5 * (1.0 + bound.abs())
                {
                    let mut candidate = best.0.clone();
                    candidate[i] = bound;
                    let fc = eval(&candidate);
                    if fc <= best.1 {
                        best = (candidate, fc);
                    }
                }
            }
        }
        best
    };

    while evals.get() < options.max_evals {
        let best_f = simplex[0].1;
        let worst_f = simplex[n].1;
        // function-value flatness only: walking a flat ridge to no gain is
        // worse than returning the current best
        if worst_f - best_f <= options.tol * (best_f.abs() + options.tol) {
            let (x, f) = snap_to_bounds(&simplex[0].0, simplex[0].1, &mut |p| eval(p));
            return Ok(OptimOutcome { x, f, evals: evals.get(), converged: true });
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for (x, _) in simplex.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let blend = |a: f64, x: &[f64]| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(x)
                .map(|(c, w)| c + a * (c - w))
                .collect();
            bounds.project(&mut p);
            p
        };

        let worst = simplex[n].0.clone();
        let reflected = blend(REFLECT, &worst);
        let f_reflected = eval(&reflected);

        if f_reflected < simplex[0].1 {
            let expanded = blend(EXPAND, &worst);
            let f_expanded = eval(&expanded);
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
        } else if f_reflected < simplex[n - 1].1 {
            simplex[n] = (reflected, f_reflected);
        } else {
            let (contracted, f_contracted) = if f_reflected < simplex[n].1 {
                let outside = blend(CONTRACT, &worst);
                let fv = eval(&outside);
                (outside, fv)
            } else {
                let inside = blend(-CONTRACT, &worst);
                let fv = eval(&inside);
                (inside, fv)
            };
            if f_contracted < simplex[n].1.min(f_reflected) {
                simplex[n] = (contracted, f_contracted);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, v)| b + SHRINK * (v - b))
                        .collect();
                    bounds.project(&mut x);
                    let fv = eval(&x);
                    *entry = (x, fv);
                }
            }
        }
        order(&mut simplex);
    }

    let (x, f) = snap_to_bounds(&simplex[0].0, simplex[0].1, &mut |p| eval(p));
    Ok(OptimOutcome { x, f, evals: evals.get(), converged: false })
}

fn projected_bfgs<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    bounds: &Bounds,
    options: &OptimOptions,
) -> Result<OptimOutcome> {
    use nalgebra::{DMatrix, DVector};
    use std::cell::Cell;

    let n = x0.len();
    let evals = Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        sanitize(f(x))
    };

    let mut x = bounds.projected(x0);
    let mut fx = eval(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    // forward/backward differences that stay inside the box
    let gradient = |x: &[f64], fx: f64| -> Option<DVector<f64>> {
        let mut g = DVector::zeros(n);
        let mut probe = x.to_vec();
        for j in 0..n {
            let h = crate::numeric::fd_step(x[j]);
            let up_ok = x[j] + h <= bounds.upper[j];
            let dn_ok = x[j] - h >= bounds.lower[j];
            let (num, den) = if up_ok && dn_ok {
                probe[j] = x[j] + h;
                let fp = eval(&probe);
                probe[j] = x[j] - h;
                let fm = eval(&probe);
                probe[j] = x[j];
                (fp - fm, 2.0 * h)
            } else if up_ok {
                probe[j] = x[j] + h;
                let fp = eval(&probe);
                probe[j] = x[j];
                (fp - fx, h)
            } else {
                probe[j] = x[j] - h;
                let fm = eval(&probe);
                probe[j] = x[j];
                (fx - fm, h)
            };
            if !num.is_finite() {
                return None;
            }
            g[j] = num / den;
        }
        Some(g)
    };

    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut g = match gradient(&x, fx) {
        Some(g) => g,
        None => {
            return Ok(OptimOutcome { x, f: fx, evals: evals.get(), converged: false })
        }
    };

    let mut converged = false;
    while evals.get() < options.max_evals {
        // projected-gradient stationarity
        let pg_norm = (0..n)
            .map(|j| ((x[j] - g[j]).clamp(bounds.lower[j], bounds.upper[j]) - x[j]).abs())
            .fold(0.0, f64::max);
        if pg_norm <= options.tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }

        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            dir = -g.clone();
        }

        // backtracking line search along the projected path
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let mut cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + t * di).collect();
            bounds.project(&mut cand);
            let fc = eval(&cand);
            let step: Vec<f64> = cand.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            let decrease: f64 = step.iter().zip(g.iter()).map(|(s, gi)| s * gi).sum();
            if fc.is_finite() && fc <= fx + 1e-4 * decrease.min(0.0) && fc < fx {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
            if evals.get() >= options.max_evals {
                break;
            }
        }
        let Some((x_new, f_new)) = accepted else { break };

        let g_new = match gradient(&x_new, f_new) {
            Some(g) => g,
            None => {
                x = x_new;
                fx = f_new;
                break;
            }
        };
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            // BFGS inverse update
            let rho = 1.0 / sy;
            let identity = DMatrix::<f64>::identity(n, n);
            let left = &identity - rho * &s * y.transpose();
            let right = &identity - rho * &y * s.transpose();
            h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
        }

        let f_change = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if f_change <= options.tol * (fx.abs() + options.tol) {
            converged = true;
            break;
        }
    }

    Ok(OptimOutcome { x, f: fx, evals: evals.get(), converged })
}
