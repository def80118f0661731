use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Summed in index order so the result does not depend on scheduling.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Estimate { mean, se: (var / n as f64).sqrt() }
    }

    /// Binomial proportion with standard error `sqrt(p(1-p)/n)`.
    pub fn proportion(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Estimate { mean: p, se: (p * (1.0 - p) / n as f64).sqrt() }
    }

    /// Number of standard errors separating `self` from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        (self.mean - value) / self.se
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_estimates() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        let p = Estimate::proportion(25, 100);
        assert_eq!(p.mean, 0.25);
        assert!((p.se - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
    }
}
