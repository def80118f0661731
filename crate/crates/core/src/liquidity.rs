//! Liquidity rate `2 K(t) + q` across a sweep of delays.

use rayon::prelude::*;

use crate::ekernels::{solve_e_system_with, E2Storage};
use crate::error::Result;
use crate::grid::TimeGrid;
use crate::params::GameParams;
use crate::report::{Cell, Table};

#[derive(Debug, Clone)]
pub struct LiquidityCurve {
    pub tau: f64,
    pub times: Vec<f64>,
    /// `None` when `tau = 0`: banks do not lend at all.
    pub rate: Option<Vec<f64>>,
}

impl LiquidityCurve {
    pub fn at_start(&self) -> Option<f64> {
        self.rate.as_ref().map(|r| r[0])
    }

    pub fn at_end(&self) -> Option<f64> {
        self.rate.as_ref().map(|r| r[r.len() - 1])
    }
}

#[derive(Debug, Clone)]
pub struct LiquidityStudy {
    pub curves: Vec<LiquidityCurve>,
}

/// One kernel solve per delay in `taus`, all other constants from `p`.
pub fn liquidity_study(p: &GameParams, taus: &[f64], dt: f64) -> Result<LiquidityStudy> {
    for &tau in taus {
        p.clone().with_delay(tau).validate()?;
    }
    let curves = taus
        .par_iter()
        .map(|&tau| {
            if tau == 0.0 {
                let grid = TimeGrid::new(p.horizon, dt)?;
                return Ok(LiquidityCurve { tau, times: grid.times().collect(), rate: None });
            }
            let k = solve_e_system_with(&p.clone().with_delay(tau), dt, E2Storage::Compact)?;
            let rate = (0..=k.steps()).map(|n| k.liquidity_at_node(n)).collect();
            Ok(LiquidityCurve { tau, times: k.grid.times().collect(), rate: Some(rate) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LiquidityStudy { curves })
}

impl LiquidityStudy {
    /// Whether the rate at `t = 0` strictly increases along the sweep, ignoring
    /// `tau = 0` entries.
    pub fn increasing_at_start(&self) -> bool {
        let starts: Vec<f64> = self.curves.iter().filter_map(|c| c.at_start()).collect();
        starts.windows(2).all(|w| w[1] > w[0])
    }

    /// "tau,t,liquidity" in long format; the rate is empty for `tau = 0`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["tau", "t", "liquidity"]);
        for c in &self.curves {
            for (n, &time) in c.times.iter().enumerate() {
                let rate = c.rate.as_ref().map(|r| r[n]);
                t.push(vec![c.tau.into(), time.into(), rate.into()]);
            }
        }
        t
    }

    /// "tau,liquidity_t0,increasing": `increasing` compares with the previous
    /// delay that has a rate and is empty for the first one.
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["tau", "liquidity_t0", "increasing"]);
        let mut prev: Option<f64> = None;
        for c in &self.curves {
            let start = c.at_start();
            let flag = match (prev, start) {
                (Some(a), Some(b)) => Cell::Int((b > a) as i64),
                _ => Cell::Empty,
            };
            t.push(vec![c.tau.into(), start.into(), flag]);
            if start.is_some() {
                prev = start;
            }
        }
        t
    }
}
