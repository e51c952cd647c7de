use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("fields differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("reference field has zero norm")]
    ZeroNorm,
    #[error("true parameter is zero; relative error undefined")]
    ZeroParameter,
}

/// `‖exact - predicted‖₂ / ‖exact‖₂` for a real field.
pub fn relative_l2_error(predicted: &[f64], exact: &[f64]) -> Result<f64, MetricError> {
    if predicted.len() != exact.len() {
        return Err(MetricError::Length(predicted.len(), exact.len()));
    }
    let num: f64 = predicted.iter().zip(exact).map(|(p, e)| (e - p).powi(2)).sum();
    let den: f64 = exact.iter().map(|e| e * e).sum();
    if den == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    Ok((num / den).sqrt())
}

/// Same for a complex field `u + iv`, with the complex modulus inside the sums.
pub fn relative_l2_error_complex(
    (pu, pv): (&[f64], &[f64]),
    (eu, ev): (&[f64], &[f64]),
) -> Result<f64, MetricError> {
    let n = eu.len();
    for len in [pu.len(), pv.len(), ev.len()] {
        if len != n {
            return Err(MetricError::Length(len, n));
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..n {
        num += (eu[k] - pu[k]).powi(2) + (ev[k] - pv[k]).powi(2);
        den += eu[k] * eu[k] + ev[k] * ev[k];
    }
    if den == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    Ok((num / den).sqrt())
}

/// `|learned - truth| / |truth|` in percent.
pub fn parameter_relative_error(learned: f64, truth: f64) -> Result<f64, MetricError> {
    if truth == 0.0 {
        return Err(MetricError::ZeroParameter);
    }
    Ok((learned - truth).abs() / truth.abs() * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let e = [1.0, -2.0, 0.5];
        assert_eq!(relative_l2_error(&e, &e), Ok(0.0));
        assert_eq!(relative_l2_error(&[0.0; 3], &e), Ok(1.0));
        let scaled: Vec<f64> = e.iter().map(|v| 1.01 * v).collect();
        assert!((relative_l2_error(&scaled, &e).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(relative_l2_error(&e, &[0.0; 3]), Err(MetricError::ZeroNorm));
        assert_eq!(relative_l2_error(&e, &[1.0]), Err(MetricError::Length(3, 1)));
    }

    #[test]
    fn complex_error_uses_the_modulus() {
        let (u, v) = ([3.0, 0.0], [4.0, 1.0]);
        assert_eq!(relative_l2_error_complex((&u, &v), (&u, &v)), Ok(0.0));
        let zero = [0.0; 2];
        assert_eq!(relative_l2_error_complex((&zero, &zero), (&u, &v)), Ok(1.0));
        // A pure phase flip of the second entry: |S_e - S_p| = 2.
        let got = relative_l2_error_complex((&u, &[4.0, -1.0]), (&u, &v)).unwrap();
        assert!((got - (4.0f64 / 26.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parameter_errors() {
        assert!((parameter_relative_error(0.498461, 0.5).unwrap() - 0.3078).abs() < 1e-12);
        assert!((parameter_relative_error(0.990150, 1.0).unwrap() - 0.985).abs() < 1e-12);
        assert_eq!(parameter_relative_error(0.5, 0.5), Ok(0.0));
        assert_eq!(parameter_relative_error(0.1, 0.0), Err(MetricError::ZeroParameter));
    }
}
