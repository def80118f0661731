//! Euler-Maruyama Monte Carlo for the N-bank system.
//!
//! Reserves evolve as `X_{n+1} = X_n + sum_l w_l alpha_{n - d_l} dt + sigma sqrt(dt) eta`
//! where `(d_l, w_l)` are the delay atoms in steps. Controls before time 0 are
//! zero. Paths are independent and run in parallel; each one draws its noise
//! from its own counter-based stream, so results do not depend on scheduling.

use rayon::prelude::*;

use crate::ekernels::FeedbackLaw;
use crate::error::{GameError, Result};
use crate::grid::TimeGrid;
use crate::model;
use crate::params::{GameParams, SystemicRiskQuery};
use crate::report::Table;
use crate::riccati::RiccatiSolution;
use crate::rng::PathRng;
use crate::stats::Estimate;

pub const UNSTABLE_LEVEL: f64 = 1e9;

/// Sliding window over the last `m` control vectors and their spreads
/// `abar - alpha^i`.
///
/// Each entry is written twice, at slots `k % m` and `k % m + m`, so the
/// window is always one contiguous block ordered oldest (lag `m`) to newest
/// (lag 1).
pub struct History {
    m: usize,
    n: usize,
    pushed: usize,
    alpha: Vec<f64>,
    spread: Vec<f64>,
}

impl History {
    pub fn new(m: usize, n_players: usize) -> Self {
        History { m, n: n_players, pushed: 0, alpha: vec![0.0; 2 * m * n_players], spread: vec![0.0; 2 * m * n_players] }
    }

    pub fn lags(&self) -> usize {
        self.m
    }

    pub fn push(&mut self, alpha: &[f64]) {
        if self.m == 0 {
            return;
        }
        let abar = model::mean(alpha);
        let slot = self.pushed % self.m;
        for copy in [slot, slot + self.m] {
            let base = copy * self.n;
            self.alpha[base..base + self.n].copy_from_slice(alpha);
            for (s, a) in self.spread[base..base + self.n].iter_mut().zip(alpha) {
                *s = abar - a;
            }
        }
        self.pushed += 1;
    }

    fn window<'a>(&self, data: &'a [f64]) -> &'a [f64] {
        let start = (self.pushed % self.m.max(1)) * self.n;
        &data[start..start + self.m * self.n]
    }

    /// Past controls, `m x N`, oldest first.
    pub fn alpha_window(&self) -> &[f64] {
        self.window(&self.alpha)
    }

    /// Past spreads `abar - alpha^i`, `m x N`, oldest first.
    pub fn spread_window(&self) -> &[f64] {
        self.window(&self.spread)
    }

    /// Control vector `lag` steps back (`1 <= lag <= m`).
    pub fn alpha_lagged(&self, lag: usize) -> &[f64] {
        let w = self.alpha_window();
        let i = self.m - lag;
        &w[i * self.n..(i + 1) * self.n]
    }
}

/// A feedback rule evaluated once per step on every path.
pub trait Controller: Sync {
    /// Number of past control vectors the rule reads.
    fn lags(&self) -> usize;

    /// Write the controls at node `n` into `out` and return the squared
    /// deviation of the tracked player from the equilibrium feedback (0 when
    /// nothing is tracked).
    fn controls(&self, n: usize, x: &[f64], hist: &History, out: &mut [f64]) -> f64;

    /// `dV^i/dD` at node `n` when the rule comes with a value function; feeds
    /// the martingale control variate. Zero otherwise.
    fn value_gradient(&self, _n: usize, _x: &[f64], _hist: &History, _player: usize) -> f64 {
        0.0
    }
}

/// Equilibrium closed-loop law of the delayed game.
pub struct ClosedLoop<'a> {
    law: &'a FeedbackLaw,
    /// Memory kernel per node with lags reversed to match the history window.
    reversed: Vec<f64>,
    /// `E1` per node, reversed the same way.
    reversed_e1: Vec<f64>,
    dt: f64,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(law: &'a FeedbackLaw) -> Self {
        let m = law.lags;
        let mut reversed = Vec::with_capacity((law.grid.steps + 1) * m);
        let mut reversed_e1 = Vec::with_capacity((law.grid.steps + 1) * m);
        for n in 0..=law.grid.steps {
            reversed.extend((0..m).map(|i| law.memory_at(n, m - i)));
            reversed_e1.extend((0..m).map(|i| law.value_e1[n * (m + 1) + m - i]));
        }
        ClosedLoop { law, reversed, reversed_e1, dt: law.grid.dt }
    }

    /// `phi_cl D_i + 2 A1 sum_j memory(t, j) h^i_{t - j dt} dt` for every player.
    pub fn feedback(&self, n: usize, x: &[f64], hist: &History, out: &mut [f64]) {
        let xbar = model::mean(x);
        let phi = self.law.phi_cl[n];
        for (o, xi) in out.iter_mut().zip(x) {
            *o = phi * (xbar - xi);
        }
        let m = self.law.lags;
        if m == 0 {
            return;
        }
        let np = x.len();
        let kernel = &self.reversed[n * m..(n + 1) * m];
        let full = hist.spread_window();
        let window = &full[full.len() - m * np..];
        let scale = self.law.memory_scale * self.dt;
        for (i, &k) in kernel.iter().enumerate() {
            let row = &window[i * np..(i + 1) * np];
            let w = scale * k;
            for (o, h) in out.iter_mut().zip(row) {
                *o += w * h;
            }
        }
    }

    /// `2 E0 D_i + 2 sum_j E1(t, j) h^i_{t - j dt} dt`.
    pub fn gradient(&self, n: usize, x: &[f64], hist: &History, player: usize) -> f64 {
        let d = model::spread(x, player);
        let mut g = 2.0 * self.law.value_e0[n] * d;
        let m = self.law.lags;
        if m > 0 {
            let np = x.len();
            let full = hist.spread_window();
            let window = &full[full.len() - m * np..];
            let kernel = &self.reversed_e1[n * m..(n + 1) * m];
            let acc: f64 = kernel.iter().enumerate().map(|(i, k)| k * window[i * np + player]).sum();
            g += 2.0 * self.dt * acc;
        }
        g
    }
}

impl Controller for ClosedLoop<'_> {
    fn lags(&self) -> usize {
        self.law.lags
    }

    fn controls(&self, n: usize, x: &[f64], hist: &History, out: &mut [f64]) -> f64 {
        self.feedback(n, x, hist, out);
        0.0
    }

    fn value_gradient(&self, n: usize, x: &[f64], hist: &History, player: usize) -> f64 {
        self.gradient(n, x, hist, player)
    }
}

/// Open-loop equilibrium of the game without delay, `[q + A1 phi_t] D_i`.
pub struct NoDelay {
    gain: Vec<f64>,
}

impl NoDelay {
    pub fn new(sol: &RiccatiSolution, grid: &TimeGrid) -> Result<Self> {
        let gain = grid
            .times()
            .map(|t| crate::riccati::nodelay_feedback_gain(sol, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(NoDelay { gain })
    }
}

impl Controller for NoDelay {
    fn lags(&self) -> usize {
        0
    }

    fn controls(&self, n: usize, x: &[f64], _hist: &History, out: &mut [f64]) -> f64 {
        let xbar = model::mean(x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.gain[n] * (xbar - xi);
        }
        0.0
    }
}

pub struct ZeroControl;

impl Controller for ZeroControl {
    fn lags(&self) -> usize {
        0
    }

    fn controls(&self, _n: usize, _x: &[f64], _hist: &History, out: &mut [f64]) -> f64 {
        out.fill(0.0);
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep full per-path trajectories (memory heavy).
    pub store_paths: bool,
    /// Player whose feedback deviation and value martingale are recorded.
    pub tracked_player: usize,
}

impl SimConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig { dt, n_paths, seed, store_paths: false, tracked_player: 0 }
    }

    pub fn with_paths(mut self) -> Self {
        self.store_paths = true;
        self
    }

    pub fn tracking(mut self, player: usize) -> Self {
        self.tracked_player = player;
        self
    }
}

/// Full trajectories, path-major.
#[derive(Debug, Clone, Default)]
pub struct Trajectories {
    /// `n_paths x (M + 1) x N`
    pub x: Vec<f64>,
    /// `n_paths x (M + 1) x N`
    pub alpha: Vec<f64>,
    /// `n_paths x M x N`
    pub dw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PathBundle {
    pub params: GameParams,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    /// Realized cost per (path, player).
    pub costs: Vec<f64>,
    /// Per path: discrete minimum of `Xbar_t - Xbar_0`.
    pub min_mean_drop: Vec<f64>,
    /// Per path: max over steps of `|sum_i alpha^i| / max_i |alpha^i|`.
    pub clearing: Vec<f64>,
    /// Per path: trapezoid `int 1/2 (alpha^i - feedback)^2 dt` for the tracked player.
    pub tracked_gap: Vec<f64>,
    /// Per path: `sum_n dV/dD (t_n) sigma (dWbar - dW^i)` for the tracked player,
    /// a mean-zero control variate for its cost.
    pub value_martingale: Vec<f64>,
    /// Terminal state per (path, player).
    pub x_final: Vec<f64>,
    pub trajectories: Option<Trajectories>,
}

struct PathOutcome {
    costs: Vec<f64>,
    min_drop: f64,
    clearing: f64,
    tracked: f64,
    martingale: f64,
    x_final: Vec<f64>,
    traj: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

/// Drift atoms `(lag in steps, weight)` for a params' delay measure on `grid`.
pub fn drift_atoms(p: &GameParams, grid: &TimeGrid) -> Vec<(usize, f64)> {
    p.delay_measure.atoms.iter().map(|a| (grid.lag_steps(a.lag), a.weight)).collect()
}

fn run_path<C: Controller>(
    p: &GameParams,
    grid: &TimeGrid,
    drift: &[(usize, f64)],
    ctrl: &C,
    seed: u64,
    path: usize,
    store: bool,
    tracked_player: usize,
) -> Result<PathOutcome> {
    let np = p.n_players;
    let steps = grid.steps;
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let depth = drift.iter().map(|a| a.0).max().unwrap_or(0).max(ctrl.lags());
    let mut hist = History::new(depth, np);
    let mut rng = PathRng::new(seed, path as u64);

    let mut x = p.initial_reserves.clone();
    let mut alpha = vec![0.0; np];
    let mut noise = vec![0.0; np];
    let mut costs = vec![0.0; np];
    let xbar0 = model::mean(&x);
    let mut min_drop: f64 = 0.0;
    let mut clearing: f64 = 0.0;
    let mut tracked = 0.0;
    let mut martingale = 0.0;
    let tp = tracked_player;
    let mut traj = store.then(|| {
        (
            Vec::with_capacity((steps + 1) * np),
            Vec::with_capacity((steps + 1) * np),
            Vec::with_capacity(steps * np),
        )
    });

    for n in 0..=steps {
        let dev2 = ctrl.controls(n, &x, &hist, &mut alpha);
        let w = grid.trapezoid_weight(n) * dt;
        tracked += w * 0.5 * dev2;
        for i in 0..np {
            costs[i] += w * model::running_cost(p, &x, i, alpha[i]);
        }
        let amax = alpha.iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
        if amax > 0.0 {
            clearing = clearing.max(alpha.iter().sum::<f64>().abs() / amax);
        }
        if let Some((tx, ta, _)) = traj.as_mut() {
            tx.extend_from_slice(&x);
            ta.extend_from_slice(&alpha);
        }
        if n == steps {
            break;
        }
        let grad = ctrl.value_gradient(n, &x, &hist, tp);
        rng.increments(sqrt_dt, &mut noise);
        martingale += grad * p.sigma * (model::mean(&noise) - noise[tp]);
        for &(lag, weight) in drift {
            let src: &[f64] = if lag == 0 {
                &alpha
            } else if lag <= n {
                hist.alpha_lagged(lag)
            } else {
                continue;
            };
            for i in 0..np {
                x[i] += weight * src[i] * dt;
            }
        }
        for i in 0..np {
            x[i] += p.sigma * noise[i];
            if !(x[i].abs() <= UNSTABLE_LEVEL) {
                return Err(GameError::Unstable { step: n + 1, value: x[i] });
            }
        }
        if let Some((_, _, tw)) = traj.as_mut() {
            tw.extend_from_slice(&noise);
        }
        hist.push(&alpha);
        min_drop = min_drop.min(model::mean(&x) - xbar0);
    }
    for i in 0..np {
        costs[i] += model::terminal_cost(p, &x, i);
    }
    Ok(PathOutcome { costs, min_drop, clearing, tracked, martingale, x_final: x, traj })
}

/// Simulate `cfg.n_paths` paths under `ctrl` with the given drift atoms.
pub fn simulate_with<C: Controller>(
    p: &GameParams,
    grid: &TimeGrid,
    drift: &[(usize, f64)],
    ctrl: &C,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    if cfg.n_paths == 0 {
        return Err(GameError::InvalidParam("n_paths must be positive".into()));
    }
    if cfg.tracked_player >= p.n_players {
        return Err(GameError::InvalidParam(format!("tracked player {} of {}", cfg.tracked_player, p.n_players)));
    }
    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| run_path(p, grid, drift, ctrl, cfg.seed, path, cfg.store_paths, cfg.tracked_player))
        .collect::<Result<_>>()?;
    let np = p.n_players;
    let mut b = PathBundle {
        params: p.clone(),
        grid: *grid,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        costs: Vec::with_capacity(cfg.n_paths * np),
        min_mean_drop: Vec::with_capacity(cfg.n_paths),
        clearing: Vec::with_capacity(cfg.n_paths),
        tracked_gap: Vec::with_capacity(cfg.n_paths),
        value_martingale: Vec::with_capacity(cfg.n_paths),
        x_final: Vec::with_capacity(cfg.n_paths * np),
        trajectories: cfg.store_paths.then(Trajectories::default),
    };
    for o in outcomes {
        b.costs.extend_from_slice(&o.costs);
        b.min_mean_drop.push(o.min_drop);
        b.clearing.push(o.clearing);
        b.tracked_gap.push(o.tracked);
        b.value_martingale.push(o.martingale);
        b.x_final.extend_from_slice(&o.x_final);
        if let (Some(t), Some((x, a, w))) = (b.trajectories.as_mut(), o.traj) {
            t.x.extend(x);
            t.alpha.extend(a);
            t.dw.extend(w);
        }
    }
    Ok(b)
}

/// Grid for a closed-loop run, checked against the law's grid.
fn closed_loop_grid(p: &GameParams, law: &FeedbackLaw, dt: f64) -> Result<TimeGrid> {
    let grid = if p.delay > 0.0 {
        TimeGrid::aligned(p.horizon, dt, &[p.delay])?
    } else {
        TimeGrid::new(p.horizon, dt)?
    };
    if !grid.same_as(&law.grid) {
        return Err(GameError::GridMismatch(format!(
            "law has {} steps, dt {dt} gives {}",
            law.grid.steps, grid.steps
        )));
    }
    Ok(grid)
}

/// Closed-loop equilibrium of the delayed game (or no lending when `tau = 0`).
pub fn simulate_closed_loop(p: &GameParams, law: &FeedbackLaw, cfg: &SimConfig) -> Result<PathBundle> {
    p.validate()?;
    let grid = closed_loop_grid(p, law, cfg.dt)?;
    let drift = drift_atoms(p, &grid);
    simulate_with(p, &grid, &drift, &ClosedLoop::new(law), cfg)
}

/// Equilibrium of the game without delay: `dX = [q + A1 phi] D dt + sigma dW`.
pub fn simulate_nodelay(p: &GameParams, sol: &RiccatiSolution, cfg: &SimConfig) -> Result<PathBundle> {
    p.validate()?;
    let grid = TimeGrid::new(p.horizon, cfg.dt)?;
    simulate_with(p, &grid, &[(0, 1.0)], &NoDelay::new(sol, &grid)?, cfg)
}

/// No controls at all; reserves are independent Brownian motions.
pub fn simulate_zero(p: &GameParams, cfg: &SimConfig) -> Result<PathBundle> {
    p.validate()?;
    let grid = TimeGrid::new(p.horizon, cfg.dt)?;
    simulate_with(p, &grid, &[], &ZeroControl, cfg)
}

impl PathBundle {
    pub fn n_players(&self) -> usize {
        self.params.n_players
    }

    pub fn cost(&self, path: usize, player: usize) -> f64 {
        self.costs[path * self.n_players() + player]
    }

    pub fn final_state(&self, path: usize) -> &[f64] {
        let np = self.n_players();
        &self.x_final[path * np..(path + 1) * np]
    }

    pub fn max_clearing_residual(&self) -> f64 {
        self.clearing.iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    /// Mean realized cost averaged over players.
    pub fn mean_cost(&self) -> Estimate {
        let np = self.n_players() as f64;
        let per_path: Vec<f64> = self.costs.chunks(self.n_players()).map(|c| c.iter().sum::<f64>() / np).collect();
        Estimate::from_samples(&per_path)
    }

    /// One-row summary "tau,dt,n_paths,seed,mean_J_per_player,systemic_prob,se".
    pub fn summary_table(&self, query: &SystemicRiskQuery) -> Table {
        let mut t = Table::new(&["tau", "dt", "n_paths", "seed", "mean_J_per_player", "systemic_prob", "se"]);
        let prob = estimate_systemic_prob(self, query);
        t.push(vec![
            self.params.delay.into(),
            self.grid.dt.into(),
            self.n_paths.into(),
            self.seed.into(),
            self.mean_cost().mean.into(),
            prob.mean.into(),
            prob.se.into(),
        ]);
        t
    }
}

/// Per-path costs of player `i` and their ensemble mean.
pub fn realized_cost(b: &PathBundle, i: usize) -> (Vec<f64>, Estimate) {
    let per_path: Vec<f64> = (0..b.n_paths).map(|k| b.cost(k, i)).collect();
    let est = Estimate::from_samples(&per_path);
    (per_path, est)
}

/// Mean cost of the tracked player with the value martingale subtracted path
/// by path. Unbiased for the same expectation as [`realized_cost`], with far
/// smaller variance when the rule carries a value function.
pub fn realized_cost_controlled(b: &PathBundle, tracked_player: usize) -> Estimate {
    let adjusted: Vec<f64> = (0..b.n_paths).map(|k| b.cost(k, tracked_player) - b.value_martingale[k]).collect();
    Estimate::from_samples(&adjusted)
}

/// Fraction of paths with `min_n (Xbar_n - Xbar_0) <= D`.
pub fn estimate_systemic_prob(b: &PathBundle, query: &SystemicRiskQuery) -> Estimate {
    let hits = b.min_mean_drop.iter().filter(|&&d| d <= query.default_level).count();
    Estimate::proportion(hits, b.n_paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekernels::{feedback_law, solve_e_system};
    use crate::riccati::solve_riccati;

    #[test]
    fn history_window_order() {
        let mut h = History::new(3, 2);
        assert_eq!(h.alpha_window(), &[0.0; 6]);
        for k in 1..=5 {
            h.push(&[k as f64, -(k as f64)]);
        }
        assert_eq!(h.alpha_window(), &[3.0, -3.0, 4.0, -4.0, 5.0, -5.0]);
        assert_eq!(h.alpha_lagged(1), &[5.0, -5.0]);
        assert_eq!(h.alpha_lagged(3), &[3.0, -3.0]);
        assert_eq!(h.spread_window()[..2], [-3.0, 3.0]);
    }

    #[test]
    fn no_lending_gives_brownian_reserves() {
        let p = GameParams::new(5, 1.0, 1.0, 2.0, 0.0, 1.0, 0.0);
        let law = FeedbackLaw::no_lending(&p, 0.01).unwrap();
        let b = simulate_closed_loop(&p, &law, &SimConfig::new(0.01, 10_000, 3)).unwrap();
        let xbar: Vec<f64> = (0..b.n_paths).map(|k| model::mean(b.final_state(k))).collect();
        let e = Estimate::from_samples(&xbar);
        let var = xbar.iter().map(|v| (v - e.mean).powi(2)).sum::<f64>() / (xbar.len() - 1) as f64;
        // se of a sample variance of Gaussians is about var sqrt(2/n)
        let target = 1.0 / 5.0;
        assert!((var - target).abs() < 3.0 * target * (2.0 / 10_000f64).sqrt());
    }

    #[test]
    fn zero_control_cost_matches_brownian_spread() {
        let p = GameParams::new(4, 1.0, 0.5, 2.0, 0.0, 1.0, 0.0);
        let b = simulate_zero(&p, &SimConfig::new(0.01, 20_000, 5)).unwrap();
        let (_, est) = realized_cost(&b, 2);
        let expect = 0.5 * p.epsilon * p.a1() * 0.5;
        assert!((est.mean - expect).abs() < 3.0 * est.se + 0.01 * expect, "{est:?} vs {expect}");
    }

    #[test]
    fn clearing_house_and_reproducibility() {
        let p = GameParams::new(6, 1.0, 1.0, 2.0, 0.5, 1.0, 0.2)
            .with_reserves(vec![-1.0, -0.5, 0.0, 0.2, 0.5, 1.0]);
        let k = solve_e_system(&p, 0.01).unwrap();
        let law = feedback_law(&k);
        let cfg = SimConfig::new(0.01, 64, 11).with_paths();
        let a = simulate_closed_loop(&p, &law, &cfg).unwrap();
        assert!(a.max_clearing_residual() <= 1e-10);
        let b = simulate_closed_loop(&p, &law, &cfg).unwrap();
        assert_eq!(a.costs, b.costs);
        let ta = a.trajectories.as_ref().unwrap();
        assert_eq!(ta.x, b.trajectories.as_ref().unwrap().x);
        let steps = a.grid.steps;
        assert_eq!(ta.x.len(), 64 * (steps + 1) * 6);
        assert_eq!(ta.dw.len(), 64 * steps * 6);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| simulate_closed_loop(&p, &law, &cfg)).unwrap();
        assert_eq!(a.costs, c.costs);
        assert_eq!(a.min_mean_drop, c.min_mean_drop);
    }

    #[test]
    fn nodelay_deterministic_cases() {
        let p = GameParams::new(3, 1.0, 1.0, 2.0, 0.0, 1.0, 0.0).with_reserves(vec![0.5; 3]);
        let sol = solve_riccati(&p, 0.01).unwrap();
        // sigma = 0 is outside the validated range, so drive the engine directly
        let mut quiet = p.clone();
        quiet.sigma = 0.0;
        let grid = TimeGrid::new(1.0, 0.01).unwrap();
        let ctrl = NoDelay::new(&sol, &grid).unwrap();
        let b = simulate_with(&quiet, &grid, &[(0, 1.0)], &ctrl, &SimConfig::new(0.01, 4, 0).with_paths()).unwrap();
        let t = b.trajectories.unwrap();
        assert!(t.alpha.iter().all(|&a| a == 0.0));
        assert!(t.x.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn nodelay_spreads_mean_revert() {
        let p = GameParams::new(4, 0.5, 1.0, 2.0, 0.0, 1.0, 0.0).with_reserves(vec![-1.0, -0.2, 0.2, 1.0]);
        let sol = solve_riccati(&p, 0.01).unwrap();
        let b = simulate_nodelay(&p, &sol, &SimConfig::new(0.01, 2000, 9)).unwrap();
        let spread_t: Vec<f64> = (0..b.n_paths)
            .map(|k| {
                let x = b.final_state(k);
                (model::mean(x) - x[0]).abs()
            })
            .collect();
        let e = Estimate::from_samples(&spread_t);
        assert!(e.mean + 3.0 * e.se < 1.0);
        assert!(b.max_clearing_residual() <= 1e-10);
    }

    #[test]
    fn unstable_is_reported() {
        // a reserve above the guard level trips it on the first step
        let p = GameParams::new(2, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0).with_reserves(vec![2e9, 0.0]);
        let r = simulate_zero(&p, &SimConfig::new(0.1, 2, 0));
        assert!(matches!(r, Err(GameError::Unstable { step: 1, .. })));
    }

    #[test]
    fn systemic_zero_level_is_certain() {
        let p = GameParams::new(3, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0);
        let b = simulate_zero(&p, &SimConfig::new(0.05, 50, 2)).unwrap();
        let e = estimate_systemic_prob(&b, &SystemicRiskQuery::new(0.0).unwrap());
        assert_eq!(e.mean, 1.0);
        let csv = b.summary_table(&SystemicRiskQuery::new(-0.7).unwrap()).to_csv();
        assert!(csv.starts_with("tau,dt,n_paths,seed,mean_J_per_player,systemic_prob,se\n"));
    }

    #[test]
    fn grid_mismatch() {
        let p = GameParams::new(4, 1.0, 1.0, 2.0, 0.0, 1.0, 0.25);
        let law = feedback_law(&solve_e_system(&p, 0.01).unwrap());
        let r = simulate_closed_loop(&p, &law, &SimConfig::new(0.02, 2, 0));
        assert!(matches!(r, Err(GameError::GridMismatch(_))));
    }
}
