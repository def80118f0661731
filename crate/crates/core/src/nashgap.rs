//! Deviation harness for the closed-loop equilibrium.
//!
//! For any control `alpha^i` of player `i` against equilibrium opponents,
//!
//! ```text
//! J^i(alpha^i) - V^i(0) = E int_0^T 1/2 (alpha^i_t - m_t)^2 dt
//! ```
//!
//! where `m_t` is the equilibrium feedback evaluated along the deviated
//! trajectory with the actual control history. The harness estimates both
//! sides; deviated and equilibrium runs share Brownian increments.

use std::fmt;
use std::str::FromStr;

use crate::ekernels::{feedback_law, EKernels};
use crate::error::{GameError, Result};
use crate::grid::TimeGrid;
use crate::params::GameParams;
use crate::report::Table;
use crate::simulate::{drift_atoms, realized_cost_controlled, simulate_with, ClosedLoop, Controller, History, PathBundle, SimConfig};
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationKind {
    /// `alpha^i = m + magnitude`
    ConstantShift,
    /// `alpha^i = magnitude * m`
    ScaledFeedback,
    /// `alpha^i` read from an explicit open-loop table.
    CustomTable,
}

impl fmt::Display for DeviationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviationKind::ConstantShift => "constant_shift",
            DeviationKind::ScaledFeedback => "scaled_feedback",
            DeviationKind::CustomTable => "custom_table",
        })
    }
}

impl FromStr for DeviationKind {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_shift" => Ok(DeviationKind::ConstantShift),
            "scaled_feedback" => Ok(DeviationKind::ScaledFeedback),
            "custom_table" => Ok(DeviationKind::CustomTable),
            other => Err(GameError::BadDeviation(format!("unknown deviation kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSpec {
    pub player: usize,
    pub kind: DeviationKind,
    pub magnitude: f64,
    /// Control values on a uniform grid over `[0, T]` (first entry at 0, last
    /// at T); interpolated linearly onto the simulation grid.
    pub table: Option<Vec<f64>>,
}

impl DeviationSpec {
    pub fn constant_shift(player: usize, delta: f64) -> Self {
        DeviationSpec { player, kind: DeviationKind::ConstantShift, magnitude: delta, table: None }
    }

    pub fn scaled_feedback(player: usize, factor: f64) -> Self {
        DeviationSpec { player, kind: DeviationKind::ScaledFeedback, magnitude: factor, table: None }
    }

    pub fn custom_table(player: usize, table: Vec<f64>) -> Self {
        DeviationSpec { player, kind: DeviationKind::CustomTable, magnitude: 1.0, table: Some(table) }
    }

    /// The equilibrium itself, expressed as a deviation.
    pub fn none(player: usize) -> Self {
        Self::constant_shift(player, 0.0)
    }

    fn check(&self, n_players: usize) -> Result<()> {
        if self.player >= n_players {
            return Err(GameError::BadDeviation(format!("player {} of {n_players}", self.player)));
        }
        if !self.magnitude.is_finite() {
            return Err(GameError::BadDeviation("magnitude must be finite".into()));
        }
        if self.kind == DeviationKind::CustomTable {
            match &self.table {
                Some(t) if t.len() >= 2 && t.iter().all(|v| v.is_finite()) => {}
                _ => return Err(GameError::BadDeviation("custom_table needs >= 2 finite values".into())),
            }
        }
        Ok(())
    }
}

/// Equilibrium opponents, deviating player `i`.
pub struct Deviated<'a> {
    base: ClosedLoop<'a>,
    player: usize,
    kind: DeviationKind,
    magnitude: f64,
    table: Vec<f64>,
}

impl<'a> Deviated<'a> {
    pub fn new(base: ClosedLoop<'a>, dev: &DeviationSpec, grid: &TimeGrid) -> Result<Self> {
        let table = match (&dev.kind, &dev.table) {
            (DeviationKind::CustomTable, Some(t)) => {
                let src = TimeGrid::new(grid.horizon, grid.horizon / (t.len() - 1) as f64)?;
                grid.times().map(|s| src.interpolate(t, s)).collect::<Result<Vec<_>>>()?
            }
            _ => Vec::new(),
        };
        Ok(Deviated { base, player: dev.player, kind: dev.kind, magnitude: dev.magnitude, table })
    }
}

impl Controller for Deviated<'_> {
    fn lags(&self) -> usize {
        self.base.lags()
    }

    fn controls(&self, n: usize, x: &[f64], hist: &History, out: &mut [f64]) -> f64 {
        self.base.feedback(n, x, hist, out);
        let m = out[self.player];
        let a = match self.kind {
            DeviationKind::ConstantShift => m + self.magnitude,
            DeviationKind::ScaledFeedback => self.magnitude * m,
            DeviationKind::CustomTable => self.table[n],
        };
        out[self.player] = a;
        (a - m) * (a - m)
    }

    fn value_gradient(&self, n: usize, x: &[f64], hist: &History, player: usize) -> f64 {
        self.base.gradient(n, x, hist, player)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashGapReport {
    pub deviation: DeviationSpec,
    /// `V^i(0, xi, empty history)`.
    pub value0: f64,
    /// Mean realized equilibrium cost of the deviating player.
    pub equilibrium_cost: Estimate,
    /// Same expectation with the value martingale removed path by path.
    pub equilibrium_cost_cv: Estimate,
    /// `J^i(deviated) - J^i(equilibrium)`, paired by path.
    pub gap: Estimate,
    /// `1/2 int (alpha^i - m)^2 dt` along the deviated paths.
    pub predicted: Estimate,
    /// Standard error of the per-path difference `gap - predicted`.
    pub paired_se: f64,
}

impl NashGapReport {
    /// `sqrt(gap_se^2 + predicted_se^2)`.
    pub fn combined_se(&self) -> f64 {
        self.gap.se.hypot(self.predicted.se)
    }

    pub fn ratio(&self) -> f64 {
        self.gap.mean / self.predicted.mean
    }

    /// Relative distance of the (variance-reduced) equilibrium cost from the
    /// value function.
    pub fn value_mismatch(&self) -> f64 {
        (self.equilibrium_cost_cv.mean - self.value0).abs() / self.value0.abs()
    }

    pub fn to_table(reports: &[NashGapReport]) -> Table {
        let mut t = Table::new(&["deviation_kind", "magnitude", "gap", "gap_se", "predicted", "predicted_se", "ratio"]);
        for r in reports {
            t.push(vec![
                r.deviation.kind.to_string().as_str().into(),
                r.deviation.magnitude.into(),
                r.gap.mean.into(),
                r.gap.se.into(),
                r.predicted.mean.into(),
                r.predicted.se.into(),
                r.ratio().into(),
            ]);
        }
        t
    }
}

/// Paired deviated and equilibrium runs. With `crn = false` the equilibrium
/// run uses an unrelated seed, which is only useful to measure what common
/// random numbers buy.
pub fn nash_gap_with(p: &GameParams, k: &EKernels, dev: &DeviationSpec, cfg: &SimConfig, crn: bool) -> Result<NashGapReport> {
    p.validate()?;
    dev.check(p.n_players)?;
    let grid = TimeGrid::aligned(p.horizon, cfg.dt, &[p.delay])?;
    if !grid.same_as(&k.grid) {
        return Err(GameError::GridMismatch(format!(
            "kernels have {} steps, dt {} gives {}",
            k.grid.steps, cfg.dt, grid.steps
        )));
    }
    let law = feedback_law(k);
    let drift = drift_atoms(p, &grid);
    let cfg = &cfg.tracking(dev.player);
    let deviated = Deviated::new(ClosedLoop::new(&law), dev, &grid)?;
    let dev_run = simulate_with(p, &grid, &drift, &deviated, cfg)?;
    let mut eq_cfg = *cfg;
    if !crn {
        eq_cfg.seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    }
    let eq_run = simulate_with(p, &grid, &drift, &ClosedLoop::new(&law), &eq_cfg)?;
    let value0 = k.value_function(0, &p.initial_reserves, &[])?[dev.player];
    Ok(report(dev, value0, &dev_run, &eq_run))
}

pub fn nash_gap(p: &GameParams, k: &EKernels, dev: &DeviationSpec, cfg: &SimConfig) -> Result<NashGapReport> {
    nash_gap_with(p, k, dev, cfg, true)
}

fn report(dev: &DeviationSpec, value0: f64, dev_run: &PathBundle, eq_run: &PathBundle) -> NashGapReport {
    let i = dev.player;
    let n = dev_run.n_paths;
    let diffs: Vec<f64> = (0..n).map(|k| dev_run.cost(k, i) - eq_run.cost(k, i)).collect();
    let eq: Vec<f64> = (0..n).map(|k| eq_run.cost(k, i)).collect();
    let paired: Vec<f64> = diffs.iter().zip(&dev_run.tracked_gap).map(|(d, g)| d - g).collect();
    NashGapReport {
        deviation: dev.clone(),
        value0,
        equilibrium_cost: Estimate::from_samples(&eq),
        equilibrium_cost_cv: realized_cost_controlled(eq_run, i),
        gap: Estimate::from_samples(&diffs),
        predicted: Estimate::from_samples(&dev_run.tracked_gap),
        paired_se: Estimate::from_samples(&paired).se,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekernels::solve_e_system;

    fn setup() -> (GameParams, EKernels) {
        let p = GameParams::new(4, 1.0, 1.0, 2.0, 0.5, 1.0, 0.25).with_reserves(vec![-0.5, 0.0, 0.2, 0.3]);
        let k = solve_e_system(&p, 0.01).unwrap();
        (p, k)
    }

    #[test]
    fn zero_deviation_is_exact() {
        let (p, k) = setup();
        let r = nash_gap(&p, &k, &DeviationSpec::none(1), &SimConfig::new(0.01, 200, 4)).unwrap();
        assert_eq!(r.gap.mean, 0.0);
        assert_eq!(r.predicted.mean, 0.0);
    }

    #[test]
    fn constant_shift_prediction_is_deterministic() {
        let (p, k) = setup();
        let r = nash_gap(&p, &k, &DeviationSpec::constant_shift(0, 0.3), &SimConfig::new(0.01, 50, 4)).unwrap();
        // 1/2 delta^2 T for every path
        assert!((r.predicted.mean - 0.045).abs() < 1e-12);
        assert!(r.predicted.se < 1e-12);
    }

    #[test]
    fn gap_matches_prediction() {
        let (p, k) = setup();
        let r = nash_gap(&p, &k, &DeviationSpec::constant_shift(2, 0.4), &SimConfig::new(0.01, 2000, 8)).unwrap();
        assert!(r.gap.mean > -3.0 * r.gap.se);
        assert!((r.gap.mean - r.predicted.mean).abs() <= 3.0 * r.combined_se() + 0.05 * r.predicted.mean, "{r:?}");
    }

    #[test]
    fn custom_table_and_errors() {
        let (p, k) = setup();
        let cfg = SimConfig::new(0.01, 20, 1);
        let r = nash_gap(&p, &k, &DeviationSpec::custom_table(0, vec![0.0, 0.0]), &cfg).unwrap();
        assert!(r.predicted.mean > 0.0);
        assert!(matches!(
            nash_gap(&p, &k, &DeviationSpec::custom_table(0, vec![1.0]), &cfg),
            Err(GameError::BadDeviation(_))
        ));
        assert!(matches!(
            nash_gap(&p, &k, &DeviationSpec::constant_shift(9, 0.1), &cfg),
            Err(GameError::BadDeviation(_))
        ));
        assert!(matches!(
            nash_gap(&p, &k, &DeviationSpec::constant_shift(0, f64::NAN), &cfg),
            Err(GameError::BadDeviation(_))
        ));
        assert!(matches!(
            nash_gap(&p, &k, &DeviationSpec::none(0), &SimConfig::new(0.02, 2, 0)),
            Err(GameError::GridMismatch(_))
        ));
        assert_eq!("scaled_feedback".parse::<DeviationKind>().unwrap(), DeviationKind::ScaledFeedback);
    }

    #[test]
    fn csv_layout() {
        let (p, k) = setup();
        let r = nash_gap(&p, &k, &DeviationSpec::scaled_feedback(0, 1.5), &SimConfig::new(0.01, 20, 1)).unwrap();
        let csv = NashGapReport::to_table(&[r]).to_csv();
        assert!(csv.starts_with("deviation_kind,magnitude,gap,gap_se,predicted,predicted_se,ratio\nscaled_feedback,1.5,"));
    }
}
