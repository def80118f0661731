//! Uniform time grids whose step divides the horizon and every delay lag.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// How far the step count may be refined while searching for a common divisor.
const MAX_REFINEMENT: usize = 64;
const LAG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub requested_dt: f64,
}

impl TimeGrid {
    /// Grid with `steps = ceil(horizon / dt)`, `dt` shrunk to `horizon / steps`.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        Self::aligned(horizon, dt, &[])
    }

    /// Coarsest grid at least as fine as `dt` on which every lag in
    /// `exact_lags` lands on a node.
    pub fn aligned(horizon: f64, dt: f64, exact_lags: &[f64]) -> Result<Self> {
        if !(horizon > 0.0) || !(dt > 0.0) || !dt.is_finite() {
            return Err(GameError::GridMismatch(format!("need horizon > 0 and dt > 0, got {horizon}, {dt}")));
        }
        let base = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        for steps in base..=base * MAX_REFINEMENT {
            let step = horizon / steps as f64;
            let fits = exact_lags.iter().all(|&lag| {
                let k = lag / step;
                (k - k.round()).abs() <= LAG_TOL * k.max(1.0)
            });
            if fits {
                if steps != base {
                    log::info!("dt adjusted from {dt} to {step} so lags land on the grid");
                }
                return Ok(TimeGrid { horizon, steps, dt: step, requested_dt: dt });
            }
        }
        Err(GameError::GridMismatch(format!(
            "no step <= {dt} divides horizon {horizon} and lags {exact_lags:?}"
        )))
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|n| self.time(n))
    }

    /// Number of steps spanned by `lag` (rounded to the nearest node).
    pub fn lag_steps(&self, lag: f64) -> usize {
        (lag / self.dt).round() as usize
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    /// Bracketing node and weight for linear interpolation at `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= -1e-12 && t <= self.horizon * (1.0 + 1e-12)) {
            return Err(GameError::OutOfRange { t, horizon: self.horizon });
        }
        let x = (t / self.dt).clamp(0.0, self.steps as f64);
        let n = (x.floor() as usize).min(self.steps.saturating_sub(1));
        Ok((n, (x - n as f64).clamp(0.0, 1.0)))
    }

    pub fn interpolate(&self, values: &[f64], t: f64) -> Result<f64> {
        debug_assert_eq!(values.len(), self.steps + 1);
        let (n, w) = self.locate(t)?;
        Ok(values[n] * (1.0 - w) + values[n + 1] * w)
    }

    /// Trapezoid weights (1/2 at both ends).
    pub fn trapezoid_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.steps {
            0.5
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_grid() {
        let g = TimeGrid::new(1.0, 1e-3).unwrap();
        assert_eq!(g.steps, 1000);
        assert_eq!(g.time(1000), 1.0);
        let g = TimeGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.steps, 4);
        assert!((g.dt - 0.25).abs() < 1e-15);
    }

    #[test]
    fn adjusts_down_to_common_divisor() {
        // 0.3 does not divide 1.0 for 4 steps; 0.25 lags need multiples of 4
        let g = TimeGrid::aligned(1.0, 0.3, &[0.25]).unwrap();
        assert_eq!(g.steps, 4);
        let g = TimeGrid::aligned(1.0, 0.1, &[0.25]).unwrap();
        assert_eq!(g.steps, 12);
        assert_eq!(g.lag_steps(0.25), 3);
        assert!(g.dt <= 0.1);
    }

    #[test]
    fn impossible_grid() {
        assert!(matches!(
            TimeGrid::aligned(1.0, 0.5, &[1.0 / std::f64::consts::PI]),
            Err(GameError::GridMismatch(_))
        ));
    }

    #[test]
    fn interpolation_and_range() {
        let g = TimeGrid::new(2.0, 0.5).unwrap();
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert!((g.interpolate(&v, 1.25).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(g.interpolate(&v, 2.0).unwrap(), 4.0);
        assert!(matches!(g.interpolate(&v, 2.5), Err(GameError::OutOfRange { .. })));
    }
}
