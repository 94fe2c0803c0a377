//! Numerical building blocks shared by the hazard, loss, pricing and
//! solvency modules.

pub mod quadrature;
pub mod roots;

use statrs::function::erf::erfc;

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal survival function, accurate in the upper tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Mean and coefficient of variation (sample standard deviation over the
/// mean). Returns a zero CoV for fewer than two values or a zero mean.
pub fn mean_cov(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || mean == 0.0 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / mean.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert!((std_normal_cdf(1.959963984540054) - 0.975).abs() < 1e-11);
        assert!((std_normal_sf(5.0) - 2.866515718791939e-7).abs() < 1e-16);
    }

    #[test]
    fn cov_of_identical_values_is_zero() {
        assert_eq!(mean_cov(&[3.0, 3.0, 3.0]), (3.0, 0.0));
        assert_eq!(mean_cov(&[0.0, 0.0]), (0.0, 0.0));
        assert_eq!(mean_cov(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn cov_uses_sample_standard_deviation() {
        let (m, c) = mean_cov(&[8.0, 12.0]);
        assert_eq!(m, 10.0);
        assert!((c - 8f64.sqrt() / 10.0).abs() < 1e-15);
    }
}
