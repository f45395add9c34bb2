use crate::error::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)`.
    pub max_relative_error: f64,
    /// Index of the parameter attaining the maximum.
    pub worst_index: Option<usize>,
    pub numeric: Vec<f64>,
}

/// Denominator floor of the relative error, per unit of `max(1, |f(x)|)`.
///
/// Central differences at `ε = 1e-5` carry roundoff of order
/// `1e-11 · |f(x)|`, so a gradient that is zero by construction would
/// otherwise read as a large relative error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` with central differences of `f` around `point`.
///
/// `f` must be deterministic. A non-finite evaluation is an error.
pub fn check_gradients<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if point.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} analytic gradients",
            point.len(),
            analytic.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let mut p = point.to_vec();
    let floor = RELATIVE_ERROR_FLOOR * f(&p).abs().max(1.0);
    let mut numeric = Vec::with_capacity(p.len());
    let mut worst = (0.0, None);
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = f(&p);
        p[i] = orig - eps;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at parameter {i}: f(+) = {plus}, f(-) = {minus}"
            )));
        }
        let n = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], n, floor);
        if err > worst.0 || worst.1.is_none() {
            worst = (err, Some(i));
        }
        numeric.push(n);
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = check_gradients(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-9);
    }

    #[test]
    fn constant_function() {
        let r = check_gradients(|_| 4.2, &[1.0, -2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert_eq!(r.numeric, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_error() {
        let r = check_gradients(|p| (p[0]).ln(), &[0.0], &[1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn detects_wrong_gradient() {
        let r = check_gradients(|p| p[0] * p[0], &[3.0], &[5.0], 1e-5).unwrap();
        assert!(r.max_relative_error > 0.1);
    }
}
