//! Open-loop equilibrium via the forward / anticipated-backward system.
//!
//! In centered variables `X^c = X^i - Xbar`, player `i` uses
//! `alpha^i = -Ytilde^i - q X^c`, where
//! `Ytilde_t = E[ sum_l w_l Y_{t + d_l} | F_t ]` over the delay atoms and
//! `Y = Y^{i,i}` solves
//!
//! ```text
//! dY = A1 [ q Ytilde + (q^2 - eps) X^c ] dt + Z dW,   Y_T = c A1 X^c_T,
//! ```
//!
//! with `Y = 0` after `T`. Conditional expectations are least-squares
//! projections on per-player features pooled over paths and players. The
//! system is solved by damped Picard iteration, optionally continued in
//! `lambda` from the decoupled problem
//!
//! ```text
//! dX^c = [ -(1 - lambda) Y + lambda sum_l w_l alpha_{t - d_l} ] dt + sigma dB
//! dY   = [ -(1 - lambda) X^c + lambda A1 (q Ytilde + (q^2 - eps) X^c) ] dt + Z dW
//! Y_T  = (1 - lambda + lambda c A1) X^c_T
//! ```

use crate::error::{GameError, Result};
use crate::grid::TimeGrid;
use crate::params::GameParams;
use crate::regression::Design;
use crate::report::Table;
use crate::rng::PathRng;
use crate::stats::Estimate;

const MIN_DAMPING: f64 = 1.0 / 64.0;

/// Per-player regression features at each time.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// Own centered state only.
    CenteredState,
    /// Own centered state plus averages of the player's own past controls
    /// over the given window lengths (time units).
    StateAndHistory { windows: Vec<f64> },
}

impl Basis {
    fn dim(&self) -> usize {
        match self {
            Basis::CenteredState => 1,
            Basis::StateAndHistory { windows } => 1 + windows.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FabsdeConfig {
    pub dt: f64,
    /// Monte Carlo paths; each contributes one regression row per player.
    pub n_paths: usize,
    pub n_picard: usize,
    pub picard_tol: f64,
    pub homotopy_steps: usize,
    pub damping: f64,
    pub basis: Basis,
}

impl Default for FabsdeConfig {
    fn default() -> Self {
        FabsdeConfig {
            dt: 5e-3,
            n_paths: 10_000,
            n_picard: 50,
            picard_tol: 1e-6,
            homotopy_steps: 1,
            damping: 1.0,
            basis: Basis::CenteredState,
        }
    }
}

impl FabsdeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GameError::InvalidParam(m.to_string()));
        if !(self.picard_tol > 0.0) {
            return bad("picard_tol must be > 0");
        }
        if self.homotopy_steps < 1 {
            return bad("homotopy_steps must be >= 1");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        if self.n_paths == 0 || self.n_picard == 0 {
            return bad("n_paths and n_picard must be positive");
        }
        if let Basis::StateAndHistory { windows } = &self.basis {
            if windows.iter().any(|w| !(*w > 0.0)) {
                return bad("history windows must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRecord {
    pub iter: usize,
    pub lambda: f64,
    pub residual: f64,
}

/// Converged (or last) iterate. Arrays are time-major: entry `(n, row)` with
/// `row = path * N + player` sits at `n * rows + row`.
#[derive(Debug, Clone)]
pub struct FabsdeSolution {
    pub params: GameParams,
    pub config: FabsdeConfig,
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// `Xbar` per `(n, path)`.
    pub xbar: Vec<f64>,
    pub xc: Vec<f64>,
    pub alpha: Vec<f64>,
    pub ydiag: Vec<f64>,
    pub ytilde: Vec<f64>,
    /// `dW^i - dWbar` per `(n, row)`, `n < M`.
    pub db: Vec<f64>,
    /// `Z^{i,i,k}_n = z_n (delta_ik - 1/N)`.
    pub z: Vec<f64>,
    /// Coefficients of `Y_n` on the features.
    pub y_coeffs: Vec<Vec<f64>>,
    /// Coefficients of `Ytilde_n` on the features.
    pub anticipation_coeffs: Vec<Vec<f64>>,
    pub residuals: Vec<PicardRecord>,
    pub converged: bool,
    /// Common off-diagonal adjoint `Y^{i,j}`, `j != i`, once solved.
    pub yoff: Option<Vec<f64>>,
    /// Drift atoms in steps.
    atoms: Vec<(usize, f64)>,
    windows: Vec<usize>,
}

struct Paths {
    xbar: Vec<f64>,
    xc: Vec<f64>,
    alpha: Vec<f64>,
    /// Running sums of past controls per row, `(M + 2) x rows`.
    cum: Vec<f64>,
}

struct Coeffs {
    y: Vec<Vec<f64>>,
    yt: Vec<Vec<f64>>,
}

struct Sweep {
    coeffs: Coeffs,
    y: Vec<f64>,
    yt: Vec<f64>,
}

struct Problem<'a> {
    p: &'a GameParams,
    grid: TimeGrid,
    rows: usize,
    dim: usize,
    atoms: Vec<(usize, f64)>,
    windows: Vec<usize>,
    db: Vec<f64>,
    dwbar: Vec<f64>,
}

impl Problem<'_> {
    fn features(&self, paths: &Paths, n: usize, r: usize, out: &mut [f64]) {
        let rows = self.rows;
        out[0] = paths.xc[n * rows + r];
        for (k, &w) in self.windows.iter().enumerate() {
            let lo = n.saturating_sub(w);
            out[1 + k] = (paths.cum[n * rows + r] - paths.cum[lo * rows + r]) / w as f64;
        }
    }

    fn design(&self, paths: &Paths, n: usize) -> Design {
        let mut d = Design::new(self.rows, self.dim);
        for r in 0..self.rows {
            self.features(paths, n, r, d.row_mut(r));
        }
        d
    }

    fn forward(&self, coeffs: &Coeffs, lambda: f64) -> Paths {
        let (rows, steps, dt) = (self.rows, self.grid.steps, self.grid.dt);
        let np = self.p.n_players;
        let n_paths = rows / np;
        let q = self.p.q;
        let mut xbar = vec![0.0; (steps + 1) * n_paths];
        let mut xc = vec![0.0; (steps + 1) * rows];
        let alpha = vec![0.0; (steps + 1) * rows];
        let cum = vec![0.0; (steps + 2) * rows];
        let xi_bar = self.p.mean_reserve();
        for path in 0..n_paths {
            xbar[path] = xi_bar;
            for i in 0..np {
                xc[path * np + i] = self.p.initial_reserves[i] - xi_bar;
            }
        }
        let mut paths = Paths { xbar, xc, alpha, cum };
        let mut f = vec![0.0; self.dim];
        for n in 0..=steps {
            let (cy, ct) = (&coeffs.y[n], &coeffs.yt[n]);
            for r in 0..rows {
                self.features(&paths, n, r, &mut f);
                let yt: f64 = f.iter().zip(ct).map(|(a, b)| a * b).sum();
                let a = -yt - q * paths.xc[n * rows + r];
                paths.alpha[n * rows + r] = a;
                paths.cum[(n + 1) * rows + r] = paths.cum[n * rows + r] + a;
            }
            if n == steps {
                break;
            }
            for r in 0..rows {
                self.features(&paths, n, r, &mut f);
                let y: f64 = f.iter().zip(cy).map(|(a, b)| a * b).sum();
                let mut drift = -(1.0 - lambda) * y;
                for &(lag, w) in &self.atoms {
                    if lag <= n {
                        drift += lambda * w * paths.alpha[(n - lag) * rows + r];
                    }
                }
                paths.xc[(n + 1) * rows + r] =
                    paths.xc[n * rows + r] + drift * dt + self.p.sigma * self.db[n * rows + r];
            }
            for path in 0..n_paths {
                paths.xbar[(n + 1) * n_paths + path] =
                    paths.xbar[n * n_paths + path] + self.p.sigma * self.dwbar[n * n_paths + path];
            }
        }
        paths
    }

    fn backward(&self, paths: &Paths, lambda: f64) -> Result<Sweep> {
        let (rows, steps, dt) = (self.rows, self.grid.steps, self.grid.dt);
        let p = self.p;
        let a1 = p.a1();
        let w0: f64 = self.atoms.iter().filter(|a| a.0 == 0).map(|a| a.1).sum();
        let mut y = vec![0.0; (steps + 1) * rows];
        let mut yt = vec![0.0; (steps + 1) * rows];
        let mut cy = vec![vec![0.0; self.dim]; steps + 1];
        let mut ct = vec![vec![0.0; self.dim]; steps + 1];
        // a delayed control only moves the state if the repayment falls before T
        let future = |y: &[f64], n: usize, lag: usize, r: usize| {
            if lag == 0 {
                y[n * rows + r]
            } else if n + lag < steps {
                y[(n + lag) * rows + r]
            } else {
                0.0
            }
        };

        let terminal = 1.0 - lambda + lambda * p.c * a1;
        cy[steps][0] = terminal;
        for r in 0..rows {
            y[steps * rows + r] = terminal * paths.xc[steps * rows + r];
        }
        let mut target = vec![0.0; rows];
        let mut antic = vec![0.0; rows];
        for n in (0..=steps).rev() {
            let design = self.design(paths, n);
            if n < steps {
                let state_rate = lambda * a1 * (p.q * p.q - p.epsilon) - (1.0 - lambda);
                for r in 0..rows {
                    let mut ahead = 0.0;
                    for &(lag, w) in &self.atoms {
                        if lag > 0 {
                            ahead += w * future(&y, n, lag, r);
                        }
                    }
                    target[r] = y[(n + 1) * rows + r]
                        - dt * (lambda * a1 * p.q * ahead + state_rate * paths.xc[n * rows + r]);
                }
                let fit = design.solve(&[&target], n)?;
                let scale = 1.0 / (1.0 + lambda * a1 * p.q * w0 * dt);
                cy[n] = fit[0].iter().map(|c| c * scale).collect();
                for r in 0..rows {
                    y[n * rows + r] = design.predict_row(r, &cy[n]);
                }
            }
            for r in 0..rows {
                antic[r] = self.atoms.iter().map(|&(lag, w)| w * future(&y, n, lag, r)).sum();
            }
            ct[n] = design.solve(&[&antic], n)?.remove(0);
            for r in 0..rows {
                yt[n * rows + r] = design.predict_row(r, &ct[n]);
            }
        }
        Ok(Sweep { coeffs: Coeffs { y: cy, yt: ct }, y, yt })
    }

    /// Pathwise Y under `coeffs` on `paths`.
    fn evaluate(&self, paths: &Paths, coeffs: &Coeffs) -> Vec<f64> {
        let rows = self.rows;
        let mut out = vec![0.0; (self.grid.steps + 1) * rows];
        let mut f = vec![0.0; self.dim];
        for n in 0..=self.grid.steps {
            for r in 0..rows {
                self.features(paths, n, r, &mut f);
                out[n * rows + r] = f.iter().zip(&coeffs.y[n]).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = new.iter().map(|a| a * a).sum();
    if num == 0.0 {
        0.0
    } else {
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }
}

fn blend(old: &[Vec<f64>], new: &[Vec<f64>], w: f64) -> Vec<Vec<f64>> {
    old.iter()
        .zip(new)
        .map(|(o, n)| o.iter().zip(n).map(|(a, b)| a + w * (b - a)).collect())
        .collect()
}

/// Solve the open-loop system. Fails with `NoConvergence` if the final
/// homotopy stage does not reach `picard_tol` within `n_picard` iterations.
pub fn solve_fabsde(p: &GameParams, cfg: &FabsdeConfig, seed: u64) -> Result<FabsdeSolution> {
    let sol = solve_fabsde_unchecked(p, cfg, seed)?;
    if !sol.converged {
        let history = sol.residuals.iter().map(|r| r.residual).collect::<Vec<_>>();
        return Err(GameError::NoConvergence { last: *history.last().unwrap_or(&f64::NAN), history });
    }
    Ok(sol)
}

/// As [`solve_fabsde`] but returns the last iterate even without convergence.
pub fn solve_fabsde_unchecked(p: &GameParams, cfg: &FabsdeConfig, seed: u64) -> Result<FabsdeSolution> {
    cfg.validate()?;
    // sigma = 0 is allowed here for deterministic checks
    let mut checked = p.clone();
    if checked.sigma == 0.0 {
        checked.sigma = 1.0;
    }
    checked.validate()?;

    let lags: Vec<f64> = p.delay_measure.atoms.iter().map(|a| a.lag).filter(|&l| l > 0.0).collect();
    let grid = TimeGrid::aligned(p.horizon, cfg.dt, &lags)?;
    let atoms: Vec<(usize, f64)> = p.delay_measure.atoms.iter().map(|a| (grid.lag_steps(a.lag), a.weight)).collect();
    let windows: Vec<usize> = match &cfg.basis {
        Basis::CenteredState => Vec::new(),
        Basis::StateAndHistory { windows } => windows.iter().map(|w| grid.lag_steps(*w).max(1)).collect(),
    };
    let np = p.n_players;
    let rows = cfg.n_paths * np;
    let steps = grid.steps;

    // Brownian increments are drawn once and reused by every iteration
    let mut db = vec![0.0; steps * rows];
    let mut dwbar = vec![0.0; steps * cfg.n_paths];
    let sqrt_dt = grid.dt.sqrt();
    let mut dw = vec![0.0; np];
    for path in 0..cfg.n_paths {
        let mut rng = PathRng::new(seed, path as u64);
        for n in 0..steps {
            rng.increments(sqrt_dt, &mut dw);
            let mean = crate::model::mean(&dw);
            dwbar[n * cfg.n_paths + path] = mean;
            for i in 0..np {
                db[n * rows + path * np + i] = dw[i] - mean;
            }
        }
    }

    let prob = Problem { p, grid, rows, dim: cfg.basis.dim(), atoms: atoms.clone(), windows: windows.clone(), db, dwbar };
    let zero = || vec![vec![0.0; prob.dim]; steps + 1];
    let mut coeffs = Coeffs { y: zero(), yt: zero() };
    let mut records = Vec::new();
    let mut converged = false;
    let mut iter = 0;

    for stage in 1..=cfg.homotopy_steps {
        let lambda = stage as f64 / cfg.homotopy_steps as f64;
        let mut damping = cfg.damping;
        let mut prev = f64::INFINITY;
        converged = false;
        for _ in 0..cfg.n_picard {
            iter += 1;
            let paths = prob.forward(&coeffs, lambda);
            let old_y = prob.evaluate(&paths, &coeffs);
            let sweep = prob.backward(&paths, lambda)?;
            let residual = relative_change(&sweep.y, &old_y);
            records.push(PicardRecord { iter, lambda, residual });
            log::debug!("picard {iter} lambda {lambda} residual {residual:e}");
            if residual > prev && damping > MIN_DAMPING {
                damping *= 0.5;
                log::info!("residual increased; damping lowered to {damping}");
            }
            prev = residual;
            coeffs = Coeffs {
                y: blend(&coeffs.y, &sweep.coeffs.y, damping),
                yt: blend(&coeffs.yt, &sweep.coeffs.yt, damping),
            };
            if residual <= cfg.picard_tol {
                converged = true;
                break;
            }
        }
        if !converged && stage < cfg.homotopy_steps {
            log::warn!("homotopy stage lambda = {lambda} stopped at residual {prev:e}");
        }
    }

    // final undamped sweep so the stored adjoints are consistent with the paths
    let paths = prob.forward(&coeffs, 1.0);
    let sweep = prob.backward(&paths, 1.0)?;
    let z = diagnostic_z(&prob, &sweep.y);
    Ok(FabsdeSolution {
        params: p.clone(),
        config: cfg.clone(),
        grid,
        n_paths: cfg.n_paths,
        xbar: paths.xbar,
        xc: paths.xc,
        alpha: paths.alpha,
        ydiag: sweep.y,
        ytilde: sweep.yt,
        db: prob.db,
        z,
        y_coeffs: sweep.coeffs.y,
        anticipation_coeffs: sweep.coeffs.yt,
        residuals: records,
        converged,
        yoff: None,
        atoms,
        windows,
    })
}

/// `z_n` from regressing `Y_{n+1} - Y_n` on `dB_n` over all rows.
fn diagnostic_z(prob: &Problem, y: &[f64]) -> Vec<f64> {
    let rows = prob.rows;
    (0..prob.grid.steps)
        .map(|n| {
            let mut num = 0.0;
            let mut den = 0.0;
            for r in 0..rows {
                let b = prob.db[n * rows + r];
                num += (y[(n + 1) * rows + r] - y[n * rows + r]) * b;
                den += b * b;
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect()
}

impl FabsdeSolution {
    pub fn rows(&self) -> usize {
        self.n_paths * self.params.n_players
    }

    #[inline]
    pub fn index(&self, n: usize, path: usize, player: usize) -> usize {
        n * self.rows() + path * self.params.n_players + player
    }

    /// `Y^{i,i}` at node `n`; zero past the horizon.
    pub fn ydiag_at(&self, n: usize, path: usize, player: usize) -> f64 {
        if n > self.grid.steps {
            0.0
        } else {
            self.ydiag[self.index(n, path, player)]
        }
    }

    /// `X^i = Xbar + X^{i,c}`.
    pub fn state(&self, n: usize, path: usize, player: usize) -> f64 {
        self.xbar[n * self.n_paths + path] + self.xc[self.index(n, path, player)]
    }

    /// `Z^{i,i,k}` at step `n < M`.
    pub fn z_at(&self, n: usize, i: usize, k: usize) -> f64 {
        let delta = if i == k { 1.0 } else { 0.0 };
        self.z[n] * (delta - 1.0 / self.params.n_players as f64)
    }

    /// `sup_n max_path |mean_i Y^{i,i}|`.
    pub fn clearing_residual(&self) -> f64 {
        let np = self.params.n_players;
        self.ydiag.chunks(np).map(|c| crate::model::mean(c).abs()).fold(0.0, f64::max)
    }

    /// Regress `sum_l w_l Y_{n + d_l}` on the time-`n` features again and return
    /// the largest deviation from the stored `Ytilde`.
    pub fn anticipation_consistency(&self) -> Result<f64> {
        let rows = self.rows();
        let steps = self.grid.steps;
        let mut worst: f64 = 0.0;
        let mut target = vec![0.0; rows];
        for n in 0..=steps {
            let design = self.design(n);
            for (r, t) in target.iter_mut().enumerate() {
                *t = self
                    .atoms
                    .iter()
                    .map(|&(lag, w)| {
                        if lag == 0 || n + lag < steps {
                            w * self.ydiag[(n + lag) * rows + r]
                        } else {
                            0.0
                        }
                    })
                    .sum();
            }
            let coef = design.solve(&[&target], n)?.remove(0);
            for r in 0..rows {
                worst = worst.max((design.predict_row(r, &coef) - self.ytilde[n * rows + r]).abs());
            }
        }
        Ok(worst)
    }

    fn design(&self, n: usize) -> Design {
        let rows = self.rows();
        let mut d = Design::new(rows, 1 + self.windows.len());
        for r in 0..rows {
            let row = d.row_mut(r);
            row[0] = self.xc[n * rows + r];
            for (k, &w) in self.windows.iter().enumerate() {
                let lo = n.saturating_sub(w);
                let s: f64 = (lo..n).map(|m| self.alpha[m * rows + r]).sum();
                row[1 + k] = s / w as f64;
            }
        }
        d
    }

    /// Pooled mean of `Y_{n+1} - Y_n - driver dt - Z dW`; near zero when the
    /// backward equation holds.
    pub fn martingale_check(&self) -> Estimate {
        let p = &self.params;
        let rows = self.rows();
        let dt = self.grid.dt;
        let mut e = Vec::with_capacity(self.grid.steps * rows);
        for n in 0..self.grid.steps {
            for r in 0..rows {
                let k = n * rows + r;
                let driver = p.a1() * (p.q * self.ytilde[k] + (p.q * p.q - p.epsilon) * self.xc[k]);
                e.push(self.ydiag[k + rows] - self.ydiag[k] - driver * dt - self.z[n] * self.db[k]);
            }
        }
        Estimate::from_samples(&e)
    }

    /// "iter,lambda,residual"
    pub fn residual_table(&self) -> Table {
        let mut t = Table::new(&["iter", "lambda", "residual"]);
        for r in &self.residuals {
            t.push(vec![r.iter.into(), r.lambda.into(), r.residual.into()]);
        }
        t
    }

    /// "t,mean_Ydiag,mean_control,clearing_residual": path means of player 0's
    /// adjoint and control, and the largest `|mean_i Y^{i,i}|` over paths.
    pub fn summary_table(&self) -> Table {
        let np = self.params.n_players;
        let rows = self.rows();
        let mut t = Table::new(&["t", "mean_Ydiag", "mean_control", "clearing_residual"]);
        let controls = self.controls_unchecked();
        for n in 0..=self.grid.steps {
            let ys: Vec<f64> = (0..self.n_paths).map(|k| self.ydiag[n * rows + k * np]).collect();
            let al: Vec<f64> = (0..self.n_paths).map(|k| controls[n * rows + k * np]).collect();
            let clear = self.ydiag[n * rows..(n + 1) * rows]
                .chunks(np)
                .map(|c| crate::model::mean(c).abs())
                .fold(0.0, f64::max);
            t.push(vec![
                self.grid.time(n).into(),
                crate::model::mean(&ys).into(),
                crate::model::mean(&al).into(),
                clear.into(),
            ]);
        }
        t
    }

    fn controls_unchecked(&self) -> Vec<f64> {
        let q = self.params.q;
        self.ytilde.iter().zip(&self.xc).map(|(yt, x)| -yt - q * x).collect()
    }
}

/// `alpha^i = -Ytilde^{i,i} + q (Xbar - X^i)` per `(n, row)`.
pub fn openloop_controls(sol: &FabsdeSolution) -> Result<Vec<f64>> {
    if !sol.converged {
        return Err(GameError::NotConverged);
    }
    Ok(sol.controls_unchecked())
}

/// Off-diagonal adjoints. By symmetry every `Y^{i,j}` with `j != i` solves
///
/// ```text
/// dY^{i,j} = -(1/N) [ q Ytilde^{i,i} + (q^2 - eps) X^{i,c} ] dt + Z dW,
/// Y^{i,j}_T = -(c/N) X^{i,c}_T,
/// ```
///
/// so one array per `(n, row)` is stored.
pub fn solve_offdiagonal(sol: &mut FabsdeSolution) -> Result<()> {
    if !sol.converged {
        return Err(GameError::NotConverged);
    }
    let p = sol.params.clone();
    let n_inv = 1.0 / p.n_players as f64;
    let rows = sol.rows();
    let steps = sol.grid.steps;
    let dt = sol.grid.dt;
    let mut y = vec![0.0; (steps + 1) * rows];
    for r in 0..rows {
        y[steps * rows + r] = -p.c * n_inv * sol.xc[steps * rows + r];
    }
    let mut target = vec![0.0; rows];
    for n in (0..steps).rev() {
        let design = sol.design(n);
        for r in 0..rows {
            let k = n * rows + r;
            let driver = -n_inv * (p.q * sol.ytilde[k] + (p.q * p.q - p.epsilon) * sol.xc[k]);
            target[r] = y[k + rows] - dt * driver;
        }
        let coef = design.solve(&[&target], n)?.remove(0);
        for r in 0..rows {
            y[n * rows + r] = design.predict_row(r, &coef);
        }
    }
    sol.yoff = Some(y);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_riccati;

    fn small_cfg() -> FabsdeConfig {
        FabsdeConfig { dt: 0.02, n_paths: 400, n_picard: 60, picard_tol: 1e-8, ..Default::default() }
    }

    fn base() -> GameParams {
        GameParams::new(4, 1.0, 1.0, 2.0, 0.5, 1.0, 0.25).with_reserves(vec![-1.0, -0.2, 0.4, 0.8])
    }

    #[test]
    fn clearing_and_terminal_conditions() {
        let p = base();
        let sol = solve_fabsde(&p, &small_cfg(), 1).unwrap();
        assert!(sol.clearing_residual() <= 1e-8);
        let m = sol.grid.steps;
        for path in 0..sol.n_paths {
            for i in 0..4 {
                let expect = -p.c * (0.25 - 1.0) * sol.xc[sol.index(m, path, i)];
                assert!((sol.ydiag_at(m, path, i) - expect).abs() < 1e-12);
                assert_eq!(sol.ydiag_at(m + 3, path, i), 0.0);
            }
        }
        let alpha = openloop_controls(&sol).unwrap();
        for c in alpha.chunks(4) {
            let scale = c.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            assert!(c.iter().sum::<f64>().abs() <= 1e-8 * scale);
        }
        assert!(sol.anticipation_consistency().unwrap() <= 1e-10);
        let mc = sol.martingale_check();
        assert!(mc.mean.abs() <= 3.0 * mc.se + 1e-12, "{mc:?}");
    }

    #[test]
    fn long_delay_matches_riccati() {
        let p = GameParams::new(4, 1.0, 1.0, 2.0, 0.5, 1.0, 1.0).with_reserves(vec![-1.0, -0.2, 0.4, 0.8]);
        let sol = solve_fabsde(&p, &small_cfg(), 2).unwrap();
        let ric = solve_riccati(&p, sol.grid.dt).unwrap();
        let m = sol.grid.steps;
        let a1 = p.a1();
        let mut err = 0.0;
        let mut norm = 0.0;
        for n in 0..=m {
            for r in 0..sol.rows() {
                let k = n * sol.rows() + r;
                let expect = ric.phi[n] * a1 * sol.xc[k];
                err += (sol.ydiag[k] - expect).powi(2);
                norm += expect * expect;
            }
        }
        assert!((err / norm).sqrt() < 0.02, "rms {}", (err / norm).sqrt());
    }

    #[test]
    fn offdiagonal_is_scaled_diagonal() {
        let p = GameParams::new(4, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0).with_reserves(vec![-1.0, -0.2, 0.4, 0.8]);
        let mut sol = solve_fabsde(&p, &small_cfg(), 3).unwrap();
        solve_offdiagonal(&mut sol).unwrap();
        let yoff = sol.yoff.as_ref().unwrap();
        for (a, b) in yoff.iter().zip(&sol.ydiag) {
            assert!((a + b / 3.0).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn deterministic_symmetric_case_is_trivial() {
        let mut p = GameParams::new(3, 1.0, 1.0, 2.0, 0.5, 1.0, 0.25);
        p.sigma = 0.0;
        let sol = solve_fabsde(&p, &small_cfg(), 0).unwrap();
        assert!(openloop_controls(&sol).unwrap().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn collinear_history_basis_is_singular() {
        let mut p = GameParams::new(2, 1.0, 1.0, 2.0, 0.5, 1.0, 0.25).with_reserves(vec![-0.5, 0.5]);
        p.sigma = 0.0;
        let cfg = FabsdeConfig { basis: Basis::StateAndHistory { windows: vec![0.1] }, ..small_cfg() };
        assert!(matches!(solve_fabsde(&p, &cfg, 0), Err(GameError::RegressionSingular { .. })));
    }

    #[test]
    fn reports_no_convergence() {
        let cfg = FabsdeConfig { n_picard: 2, picard_tol: 1e-14, ..small_cfg() };
        match solve_fabsde(&base(), &cfg, 1) {
            Err(GameError::NoConvergence { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        let sol = solve_fabsde_unchecked(&base(), &cfg, 1).unwrap();
        assert!(matches!(openloop_controls(&sol), Err(GameError::NotConverged)));
    }

    #[test]
    fn config_checks() {
        let bad = FabsdeConfig { damping: 0.0, ..small_cfg() };
        assert!(bad.validate().is_err());
        let bad = FabsdeConfig { homotopy_steps: 0, ..small_cfg() };
        assert!(bad.validate().is_err());
        let bad = FabsdeConfig { picard_tol: 0.0, ..small_cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_headers() {
        let sol = solve_fabsde(&base(), &small_cfg(), 1).unwrap();
        assert!(sol.residual_table().to_csv().starts_with("iter,lambda,residual\n1,1,"));
        let s = sol.summary_table().to_csv();
        assert!(s.starts_with("t,mean_Ydiag,mean_control,clearing_residual\n"));
        assert_eq!(s.lines().count(), sol.grid.steps + 2);
    }
}
