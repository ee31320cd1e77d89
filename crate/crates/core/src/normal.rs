use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

/// `z` with `Φ(z) = prob`.
pub fn quantile(prob: f64) -> f64 {
    standard().inverse_cdf(prob)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * standard().sf(z.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_table() {
        assert!((quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((quantile(0.95) - 1.6448536269514722).abs() < 1e-9);
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-9);
    }
}
