//! No-delay benchmark: the open-loop Riccati gain and the closed-form
//! systemic-risk probability.
//!
//! The gain solves
//! `phi' = 2q(1 - 1/(2N)) phi + (1 - 1/N) phi^2 - (eps - q^2)`, `phi(T) = c`,
//! and the equilibrium control is `[q + (1 - 1/N) phi_t](xbar - x^i)`.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GameError, Result};
use crate::grid::TimeGrid;
use crate::params::{GameParams, SystemicRiskQuery};
use crate::report::Table;

const BLOWUP: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub phi: Vec<f64>,
    pub params: GameParams,
}

/// Right-hand side of the Riccati ODE in forward time.
pub fn riccati_rhs(p: &GameParams, phi: f64) -> f64 {
    let n = p.n_players as f64;
    2.0 * p.q * (1.0 - 0.5 / n) * phi + p.a1() * phi * phi - (p.epsilon - p.q * p.q)
}

/// Integrate backward from `phi(T) = c` with classical RK4.
pub fn solve_riccati(p: &GameParams, dt: f64) -> Result<RiccatiSolution> {
    p.validate_nodelay()?;
    let grid = TimeGrid::new(p.horizon, dt)?;
    let phi = integrate_backward(p, &grid, p.c)?;
    Ok(RiccatiSolution { grid, phi, params: p.clone() })
}

fn integrate_backward(p: &GameParams, grid: &TimeGrid, terminal: f64) -> Result<Vec<f64>> {
    let h = grid.dt;
    let mut phi = vec![0.0; grid.steps + 1];
    phi[grid.steps] = terminal;
    let f = |y: f64| riccati_rhs(p, y);
    for n in (0..grid.steps).rev() {
        let y = phi[n + 1];
        // stepping by -h
        let k1 = f(y);
        let k2 = f(y - 0.5 * h * k1);
        let k3 = f(y - 0.5 * h * k2);
        let k4 = f(y - h * k3);
        let next = y - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() || next.abs() > BLOWUP {
            return Err(GameError::Blowup(next.abs()));
        }
        phi[n] = next;
    }
    Ok(phi)
}

impl RiccatiSolution {
    pub fn phi_at(&self, t: f64) -> Result<f64> {
        self.grid.interpolate(&self.phi, t)
    }

    /// Equilibrium feedback gain `q + (1 - 1/N) phi_t`.
    pub fn gain_at_node(&self, n: usize) -> f64 {
        self.params.q + self.params.a1() * self.phi[n]
    }

    /// Max over interior nodes of |d phi/dt - rhs(phi)|, with the derivative
    /// taken by the fourth-order centered stencil.
    pub fn ode_defect(&self) -> f64 {
        let h = self.grid.dt;
        let phi = &self.phi;
        (2..self.grid.steps.saturating_sub(1))
            .map(|n| {
                let deriv = (phi[n - 2] - 8.0 * phi[n - 1] + 8.0 * phi[n + 1] - phi[n + 2]) / (12.0 * h);
                (deriv - riccati_rhs(&self.params, self.phi[n])).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "phi", "gain"]);
        for n in 0..=self.grid.steps {
            t.push(vec![self.grid.time(n).into(), self.phi[n].into(), self.gain_at_node(n).into()]);
        }
        t
    }
}

/// `q + (1 - 1/N) phi_t`, linearly interpolated between nodes.
pub fn nodelay_feedback_gain(sol: &RiccatiSolution, t: f64) -> Result<f64> {
    Ok(sol.params.q + sol.params.a1() * sol.phi_at(t)?)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// `P(min_t (Xbar_t - Xbar_0) <= D) = 2 Phi(D sqrt(N) / (sigma sqrt(T)))`.
pub fn systemic_prob_closed_form(p: &GameParams, query: &SystemicRiskQuery) -> Result<f64> {
    let d = query.default_level;
    if !(d <= 0.0) {
        return Err(GameError::BadLevel(d));
    }
    let z = d * (p.n_players as f64).sqrt() / (p.sigma * p.horizon.sqrt());
    Ok((2.0 * normal_cdf(z)).min(1.0))
}
