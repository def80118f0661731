//! Costs, Hamiltonian and the pointwise control minimizer shared by all solvers.

use crate::params::GameParams;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `xbar - x^i`
#[inline]
pub fn spread(x: &[f64], i: usize) -> f64 {
    mean(x) - x[i]
}

/// `f_i(x, a) = a^2/2 - q a (xbar - x^i) + (eps/2)(xbar - x^i)^2`
pub fn running_cost(p: &GameParams, x: &[f64], i: usize, a: f64) -> f64 {
    running_cost_from_spread(p, spread(x, i), a)
}

#[inline]
pub fn running_cost_from_spread(p: &GameParams, d: f64, a: f64) -> f64 {
    0.5 * a * a - p.q * a * d + 0.5 * p.epsilon * d * d
}

/// `g_i(x) = (c/2)(xbar - x^i)^2`
pub fn terminal_cost(p: &GameParams, x: &[f64], i: usize) -> f64 {
    let d = spread(x, i);
    0.5 * p.c * d * d
}

/// `H^i(x, y, alpha) = sum_k alpha^k y^k + f_i(x, alpha^i)`.
pub fn hamiltonian(p: &GameParams, x: &[f64], i: usize, y_row: &[f64], alpha: &[f64]) -> f64 {
    debug_assert_eq!(y_row.len(), alpha.len());
    let transport: f64 = alpha.iter().zip(y_row).map(|(a, y)| a * y).sum();
    transport + running_cost(p, x, i, alpha[i])
}

/// Unique root of `d/da f_i(x, a) = -y`, i.e. `-y + q (xbar - x^i)`.
pub fn pointwise_minimizer(p: &GameParams, x: &[f64], i: usize, y: f64) -> f64 {
    -y + p.q * spread(x, i)
}

/// `d/da f_i(x, a)`
pub fn running_cost_control_derivative(p: &GameParams, x: &[f64], i: usize, a: f64) -> f64 {
    a - p.q * spread(x, i)
}
