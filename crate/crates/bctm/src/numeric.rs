//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear predictor clamped to ±700 so that `exp` never overflows.
pub fn clamped_linear_predictor(coef: &[f64], cov: &[f64]) -> f64 {
    dot(coef, cov).clamp(-700.0, 700.0)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Linear-interpolation quantile (R type 7) of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Relative finite-difference step for coordinate value `theta_j`.
pub fn fd_step(theta_j: f64) -> f64 {
    1e-4 * theta_j.abs().max(1.0)
}

/// Central finite-difference gradient with the step rule [`fd_step`].
///
/// Any non-finite objective value at a stencil point is reported with the
/// offending coordinate.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; at.len()];
    let mut x = at.to_vec();
    for j in 0..at.len() {
        let h = fd_step(at[j]);
        x[j] = at[j] + h;
        let fp = f(&x);
        x[j] = at[j] - h;
        let fm = f(&x);
        x[j] = at[j];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteStencil { i: j, j });
        }
        grad[j] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central finite-difference Hessian, symmetric by construction.
pub fn finite_difference_hessian<F: Fn(&[f64]) -> f64>(f: F, at: &[f64]) -> Result<DMatrix<f64>> {
    let p = at.len();
    let mut hess = DMatrix::zeros(p, p);
    let f0 = f(at);
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut x = at.to_vec();
    for i in 0..p {
        let hi = fd_step(at[i]);
        x[i] = at[i] + hi;
        let fp = f(&x);
        x[i] = at[i] - hi;
        let fm = f(&x);
        x[i] = at[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteStencil { i, j: i });
        }
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..p {
            let hj = fd_step(at[j]);
            let mut eval = |si: f64, sj: f64| {
                x[i] = at[i] + si * hi;
                x[j] = at[j] + sj * hj;
                let v = f(&x);
                x[i] = at[i];
                x[j] = at[j];
                v
            };
            let fpp = eval(1.0, 1.0);
            let fpm = eval(1.0, -1.0);
            let fmp = eval(-1.0, 1.0);
            let fmm = eval(-1.0, -1.0);
            if ![fpp, fpm, fmp, fmm].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteStencil { i, j });
            }
            let mixed = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    Ok(hess)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); `None` for fewer than two values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_polynomials() {
        let f = |x: f64| 3.0 * x * x;
        assert_relative_eq!(adaptive_simpson(&f, 0.0, 2.0, 1e-12), 8.0, epsilon = 1e-10);
        let g = |x: f64| x.exp();
        assert_relative_eq!(
            adaptive_simpson(&g, 0.0, 1.0, 1e-12),
            1.0f64.exp() - 1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn quantile_matches_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
