//! Least-squares projections used as conditional expectations.

use nalgebra::{DMatrix, DVector};

use crate::error::{GameError, Result};

/// Columns whose mean square is below this are treated as absent.
const ZERO_COLUMN: f64 = 1e-28;
/// Smallest admissible ratio of a Cholesky pivot to its Gram diagonal.
const PIVOT_RATIO: f64 = 1e-12;

/// Row-major design matrix without intercept.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn new(rows: usize, dim: usize) -> Self {
        Design { rows, dim, data: vec![0.0; rows * dim] }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Least-squares coefficients for each target. Vanishing columns get a
    /// zero coefficient; collinear nonzero columns are an error tagged with
    /// `step`.
    pub fn solve(&self, targets: &[&[f64]], step: usize) -> Result<Vec<Vec<f64>>> {
        let d = self.dim;
        let mut gram = vec![0.0; d * d];
        let mut rhs = vec![0.0; d * targets.len()];
        for r in 0..self.rows {
            let x = self.row(r);
            for a in 0..d {
                if x[a] == 0.0 {
                    continue;
                }
                for b in 0..=a {
                    gram[a * d + b] += x[a] * x[b];
                }
                for (t, y) in targets.iter().enumerate() {
                    rhs[t * d + a] += x[a] * y[r];
                }
            }
        }
        let active: Vec<usize> = (0..d).filter(|&a| gram[a * d + a] > ZERO_COLUMN * self.rows as f64).collect();
        let mut out = vec![vec![0.0; d]; targets.len()];
        if active.is_empty() {
            return Ok(out);
        }
        let k = active.len();
        let g = DMatrix::from_fn(k, k, |i, j| {
            let (a, b) = (active[i].max(active[j]), active[i].min(active[j]));
            gram[a * d + b]
        });
        let chol = g.clone().cholesky().ok_or(GameError::RegressionSingular { step })?;
        let l = chol.l();
        for i in 0..k {
            if l[(i, i)] * l[(i, i)] < PIVOT_RATIO * g[(i, i)] {
                return Err(GameError::RegressionSingular { step });
            }
        }
        for (t, coef) in out.iter_mut().enumerate() {
            let b = DVector::from_fn(k, |i, _| rhs[t * d + active[i]]);
            let sol = chol.solve(&b);
            for (i, &a) in active.iter().enumerate() {
                coef[a] = sol[i];
            }
        }
        Ok(out)
    }

    #[inline]
    pub fn predict_row(&self, r: usize, coef: &[f64]) -> f64 {
        self.row(r).iter().zip(coef).map(|(x, c)| x * c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_exact_linear_model() {
        let mut d = Design::new(50, 2);
        let mut y = vec![0.0; 50];
        for r in 0..50 {
            let (a, b) = ((r as f64 * 0.37).sin(), (r as f64 * 0.11).cos());
            d.row_mut(r).copy_from_slice(&[a, b]);
            y[r] = 2.0 * a - 0.5 * b;
        }
        let c = d.solve(&[&y], 0).unwrap();
        assert!((c[0][0] - 2.0).abs() < 1e-12 && (c[0][1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_columns_are_dropped() {
        let mut d = Design::new(10, 2);
        let y: Vec<f64> = (0..10).map(|r| r as f64).collect();
        for r in 0..10 {
            d.row_mut(r)[0] = r as f64;
        }
        let c = d.solve(&[&y], 0).unwrap();
        assert!((c[0][0] - 1.0).abs() < 1e-14);
        assert_eq!(c[0][1], 0.0);
        let empty = Design::new(4, 3);
        assert_eq!(empty.solve(&[&[1.0; 4]], 0).unwrap(), vec![vec![0.0; 3]]);
    }

    #[test]
    fn collinear_columns_are_singular() {
        let mut d = Design::new(6, 2);
        for r in 0..6 {
            let a = r as f64 - 2.5;
            d.row_mut(r).copy_from_slice(&[a, -3.0 * a]);
        }
        assert!(matches!(d.solve(&[&[1.0; 6]], 7), Err(GameError::RegressionSingular { step: 7 })));
    }

    proptest! {
        // fitted residuals are orthogonal to every column
        #[test]
        fn normal_equations_hold(seed in 0u64..1000) {
            let rows = 40;
            let mut d = Design::new(rows, 3);
            let mut y = vec![0.0; rows];
            for r in 0..rows {
                let s = (seed as f64 + 1.0) * (r as f64 + 1.0);
                d.row_mut(r).copy_from_slice(&[s.sin(), (0.3 * s).cos(), (1.7 * s).sin()]);
                y[r] = (2.3 * s).cos();
            }
            let c = d.solve(&[&y], 0).unwrap();
            for a in 0..3 {
                let dot: f64 = (0..rows).map(|r| d.row(r)[a] * (y[r] - d.predict_row(r, &c[0]))).sum();
                prop_assert!(dot.abs() < 1e-9);
            }
        }
    }
}
