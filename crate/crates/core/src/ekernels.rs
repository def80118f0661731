//! Closed-loop kernels of the delayed game and the feedback law they define.
//!
//! The value of player `i` at time `t` is
//!
//! ```text
//! V = E0(t) D^2 + 2 D \int E1(t, s-t) h_s ds + \iint E2(t, s-t, r-t) h_s h_r ds dr + E3(t)
//! ```
//!
//! with `D = xbar - x^i`, `h_s = abar_s - alpha^i_s` over the window `[t - tau, t)`.
//! Lags are stored by index `j = 0..=m` standing for `u = -j dt`, so `j = 0` is
//! the present and `j = m` is `u = -tau`. Kernels solve, with `K = E0 + E1(t, 0)`
//! and `F(u) = E2(t, u, 0) + E1(t, u)`,
//!
//! ```text
//! E0' + eps/2               = 2 A2 K^2 + 2 q K + q^2/2
//! (d_t - d_u) E1            = (2 A2 K + q) F(u)
//! (d_t - d_u - d_v) E2      = 2 A2 F(u) F(v)
//! E3' + A1 sigma^2 E0       = 0
//! ```
//!
//! with `E1(t, -tau) = -E0(t)`, `E2(t, u, -tau) = -E1(t, u)` and terminal data
//! `(c/2, 0, 0, 0)`. The sweep advances E1 and E2 exactly along their
//! characteristics, so the lag step equals the time step.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{GameError, Result};
use crate::grid::TimeGrid;
use crate::params::GameParams;
use crate::report::Table;

/// Full E2 history is kept when it needs at most this many doubles.
pub const FULL_STORAGE_LIMIT: usize = 8_000_000;

const PAR_MIN_LAGS: usize = 96;
const MAGIC: &[u8; 4] = b"EKRN";
const DUMP_VERSION: u32 = 1;

#[inline]
fn tri(j: usize, k: usize) -> usize {
    let (hi, lo) = if j >= k { (j, k) } else { (k, j) };
    hi * (hi + 1) / 2 + lo
}

fn tri_len(m: usize) -> usize {
    (m + 1) * (m + 2) / 2
}

/// Whether to keep every E2 time slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum E2Storage {
    Auto,
    Full,
    Compact,
}

#[derive(Debug, Clone)]
pub struct EKernels {
    pub params: GameParams,
    pub grid: TimeGrid,
    /// Number of lag steps, `tau / dt`.
    pub lags: usize,
    pub e0: Vec<f64>,
    /// Row-major `(M + 1) x (m + 1)`.
    pub e1: Vec<f64>,
    /// `E2(t_n, -j dt, 0)`, row-major like `e1`.
    pub e2_edge: Vec<f64>,
    pub e3: Vec<f64>,
    e2_full: Option<Vec<f64>>,
    e2_first: Vec<f64>,
    e2_last: Vec<f64>,
}

/// Frozen `E0` and `E1(., 0)` used to replay the sweep.
struct Frozen<'a> {
    e0: &'a [f64],
    e1_at0: Vec<f64>,
}

pub fn solve_e_system(p: &GameParams, dt: f64) -> Result<EKernels> {
    solve_e_system_with(p, dt, E2Storage::Auto)
}

pub fn solve_e_system_with(p: &GameParams, dt: f64, storage: E2Storage) -> Result<EKernels> {
    p.validate()?;
    if p.delay == 0.0 {
        return Err(GameError::TauZero);
    }
    if !p.delay_measure.is_repayment(p.delay) {
        return Err(GameError::BadDelay("closed-loop kernels need the repayment measure".into()));
    }
    let grid = TimeGrid::aligned(p.horizon, dt, &[p.delay])?;
    let lags = grid.lag_steps(p.delay);
    if lags == 0 {
        return Err(GameError::GridMismatch(format!("delay {} shorter than the step {}", p.delay, grid.dt)));
    }
    let full = match storage {
        E2Storage::Full => true,
        E2Storage::Compact => false,
        E2Storage::Auto => (grid.steps + 1).saturating_mul(tri_len(lags)) <= FULL_STORAGE_LIMIT,
    };
    sweep(p, grid, lags, full, None)
}

fn sweep(p: &GameParams, grid: TimeGrid, m: usize, full: bool, frozen: Option<&Frozen>) -> Result<EKernels> {
    let big_m = grid.steps;
    let dt = grid.dt;
    let w = m + 1;
    let a2 = p.a2();
    let q = p.q;
    let slice = tri_len(m);

    let mut e0 = vec![0.0; big_m + 1];
    let mut e1 = vec![0.0; (big_m + 1) * w];
    let mut e2_edge = vec![0.0; (big_m + 1) * w];
    let mut e2_full = if full { Some(vec![0.0; (big_m + 1) * slice]) } else { None };
    e0[big_m] = 0.5 * p.c;

    let e0_rate = |e0v: f64, e1_0: f64| {
        let k = e0v + e1_0;
        2.0 * a2 * k * k + 2.0 * q * k + 0.5 * q * q - 0.5 * p.epsilon
    };

    let mut next = vec![0.0; slice];
    let mut cur = vec![0.0; slice];
    let last_slice = next.clone();
    let mut f_next = vec![0.0; w];

    for n in (0..big_m).rev() {
        let row_next = (n + 1) * w;
        let row = n * w;
        for j in 0..w {
            f_next[j] = next[tri(j, 0)] + e1[row_next + j];
        }
        let k_next = match frozen {
            Some(fz) => fz.e0[n + 1] + fz.e1_at0[n + 1],
            None => e0[n + 1] + e1[row_next],
        };
        let transport = 2.0 * a2 * k_next + q;
        for j in 0..m {
            e1[row + j] = e1[row_next + j + 1] - dt * transport * f_next[j + 1];
        }
        e0[n] = match frozen {
            Some(fz) => fz.e0[n],
            None => {
                let rate_next = e0_rate(e0[n + 1], e1[row_next]);
                let pred = e0[n + 1] - dt * rate_next;
                e0[n + 1] - 0.5 * dt * (rate_next + e0_rate(pred, e1[row]))
            }
        };
        e1[row + m] = -e0[n];

        let source = 2.0 * a2 * dt;
        let update_row = |j: usize, out: &mut [f64]| {
            for (k, v) in out.iter_mut().enumerate() {
                *v = next[tri(j + 1, k + 1)] - source * f_next[j + 1] * f_next[k + 1];
            }
        };
        {
            let mut rows: Vec<&mut [f64]> = Vec::with_capacity(m);
            let mut rest = &mut cur[..tri(m, 0)];
            for j in 0..m {
                let (head, tail) = rest.split_at_mut(j + 1);
                rows.push(head);
                rest = tail;
            }
            if m >= PAR_MIN_LAGS {
                rows.par_iter_mut().enumerate().for_each(|(j, r)| update_row(j, r));
            } else {
                rows.iter_mut().enumerate().for_each(|(j, r)| update_row(j, r));
            }
        }
        for k in 0..m {
            cur[tri(m, k)] = -e1[row + k];
        }
        cur[tri(m, m)] = e0[n];

        for j in 0..w {
            e2_edge[row + j] = cur[tri(j, 0)];
        }
        if let Some(store) = e2_full.as_mut() {
            store[n * slice..(n + 1) * slice].copy_from_slice(&cur);
        }
        for v in [e0[n], e1[row]] {
            if !v.is_finite() || v.abs() > 1e12 {
                return Err(GameError::Blowup(v.abs()));
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    // after the final swap `next` holds the t = 0 slice
    let e2_first = next;

    let mut e3 = vec![0.0; big_m + 1];
    let scale = p.a1() * p.sigma * p.sigma;
    for n in (0..big_m).rev() {
        e3[n] = e3[n + 1] + scale * 0.5 * dt * (e0[n] + e0[n + 1]);
    }

    Ok(EKernels {
        params: p.clone(),
        grid,
        lags: m,
        e0,
        e1,
        e2_edge,
        e3,
        e2_full,
        e2_first,
        e2_last: last_slice,
    })
}

impl EKernels {
    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn has_full_e2(&self) -> bool {
        self.e2_full.is_some()
    }

    #[inline]
    pub fn e1_at(&self, n: usize, j: usize) -> f64 {
        self.e1[n * (self.lags + 1) + j]
    }

    /// `E2(t_n, -j dt, -k dt)`.
    pub fn e2_at(&self, n: usize, j: usize, k: usize) -> Result<f64> {
        if k == 0 {
            return Ok(self.e2_edge[n * (self.lags + 1) + j]);
        }
        if j == 0 {
            return Ok(self.e2_edge[n * (self.lags + 1) + k]);
        }
        Ok(self.e2_slice(n)?[tri(j, k)])
    }

    /// Triangular slice at node `n`.
    pub fn e2_slice(&self, n: usize) -> Result<&[f64]> {
        let len = tri_len(self.lags);
        if let Some(full) = &self.e2_full {
            return Ok(&full[n * len..(n + 1) * len]);
        }
        if n == 0 {
            Ok(&self.e2_first)
        } else if n == self.grid.steps {
            Ok(&self.e2_last)
        } else {
            Err(GameError::SliceNotStored(n))
        }
    }

    /// `E0 + E1(t, 0)` at node `n`.
    pub fn k_at(&self, n: usize) -> f64 {
        self.e0[n] + self.e1_at(n, 0)
    }

    /// `2 E1(t, 0) + 2 E0(t) + q`, interpolated linearly in `t`.
    pub fn liquidity_rate(&self, t: f64) -> Result<f64> {
        let rates: Vec<f64> = (0..=self.grid.steps).map(|n| self.liquidity_at_node(n)).collect();
        self.grid.interpolate(&rates, t)
    }

    pub fn liquidity_at_node(&self, n: usize) -> f64 {
        2.0 * self.k_at(n) + self.params.q
    }

    /// Largest violation of the two lag-boundary conditions over interior times.
    pub fn boundary_residual(&self) -> Result<f64> {
        let m = self.lags;
        let mut worst: f64 = 0.0;
        for n in 0..self.grid.steps {
            worst = worst.max((self.e1_at(n, m) + self.e0[n]).abs());
            let slice = match self.e2_slice(n) {
                Ok(s) => s,
                Err(_) => continue,
            };
            for j in 0..=m {
                worst = worst.max((slice[tri(j, m)] + self.e1_at(n, j)).abs());
            }
        }
        Ok(worst)
    }

    /// Sup over interior nodes of the characteristic difference quotient of E1
    /// minus the trapezoid average of its right-hand side.
    pub fn e1_pde_defect(&self) -> f64 {
        let m = self.lags;
        let a2 = self.params.a2();
        let q = self.params.q;
        let dt = self.grid.dt;
        let rhs = |n: usize, j: usize| {
            let f = self.e2_edge[n * (m + 1) + j] + self.e1_at(n, j);
            (2.0 * a2 * self.k_at(n) + q) * f
        };
        let mut worst: f64 = 0.0;
        for n in 0..self.grid.steps {
            for j in 0..m {
                let quotient = (self.e1_at(n + 1, j + 1) - self.e1_at(n, j)) / dt;
                let avg = 0.5 * (rhs(n + 1, j + 1) + rhs(n, j));
                worst = worst.max((quotient - avg).abs());
            }
        }
        worst
    }

    /// Replay the sweep with `E0` and `E1(., 0)` frozen at the solved values and
    /// return the largest deviation from the stored kernels.
    pub fn fixed_point_residual(&self) -> Result<f64> {
        let frozen = Frozen {
            e0: &self.e0,
            e1_at0: (0..=self.grid.steps).map(|n| self.e1_at(n, 0)).collect(),
        };
        let again = sweep(&self.params, self.grid, self.lags, false, Some(&frozen))?;
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(diff(&self.e0, &again.e0)
            .max(diff(&self.e1, &again.e1))
            .max(diff(&self.e2_edge, &again.e2_edge))
            .max(diff(&self.e2_first, &again.e2_first))
            .max(diff(&self.e3, &again.e3)))
    }

    /// Value of every player at node `n`.
    ///
    /// `past_alpha` lists control vectors on the grid, oldest first, ending at
    /// `t_n - dt`; it must cover `[max(0, t_n - tau), t_n)`. The window sums use
    /// the left-endpoint rule over lags `1..=m`, matching the simulation.
    pub fn value_function(&self, n: usize, x: &[f64], past_alpha: &[Vec<f64>]) -> Result<Vec<f64>> {
        if n > self.grid.steps {
            return Err(GameError::OutOfRange { t: n as f64 * self.grid.dt, horizon: self.grid.horizon });
        }
        let m = self.lags;
        let need = n.min(m);
        if past_alpha.len() < need {
            return Err(GameError::HistoryLength { got: past_alpha.len(), need });
        }
        let np = self.params.n_players;
        if x.len() != np || past_alpha.iter().take(need).any(|a| a.len() != np) {
            return Err(GameError::InvalidParam("state and controls need one entry per player".into()));
        }
        let dt = self.grid.dt;
        let xbar = crate::model::mean(x);
        // h[j - 1] = spread of the control j steps back
        let hist: Vec<Vec<f64>> = (1..=need)
            .map(|j| {
                let a = &past_alpha[past_alpha.len() - j];
                let abar = crate::model::mean(a);
                a.iter().map(|ai| abar - ai).collect()
            })
            .collect();
        let slice = if need > 0 { self.e2_slice(n)? } else { &[] };
        let mut out = Vec::with_capacity(np);
        for i in 0..np {
            let d = xbar - x[i];
            let mut cross = 0.0;
            for j in 1..=need {
                cross += self.e1_at(n, j) * hist[j - 1][i];
            }
            let mut quad = 0.0;
            for j in 1..=need {
                for k in 1..=need {
                    quad += slice[tri(j, k)] * hist[j - 1][i] * hist[k - 1][i];
                }
            }
            out.push(self.e0[n] * d * d + 2.0 * d * cross * dt + quad * dt * dt + self.e3[n]);
        }
        Ok(out)
    }

    /// Per-node summary "t,E0,E1_at_0,liquidity".
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["t", "E0", "E1_at_0", "liquidity"]);
        for n in 0..=self.grid.steps {
            t.push(vec![
                self.grid.time(n).into(),
                self.e0[n].into(),
                self.e1_at(n, 0).into(),
                self.liquidity_at_node(n).into(),
            ]);
        }
        t
    }

    /// Binary dump: 16-byte header (magic, version, M, m) followed by
    /// little-endian f64 data.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let p = &self.params;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for v in [DUMP_VERSION, self.grid.steps as u32, self.lags as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let head = [
            p.n_players as f64,
            p.sigma,
            p.q,
            p.epsilon,
            p.c,
            p.horizon,
            p.delay,
            self.grid.requested_dt,
            if self.e2_full.is_some() { 1.0 } else { 0.0 },
        ];
        let e2_blocks: [&[f64]; 3] = match &self.e2_full {
            Some(full) => [full, &[], &[]],
            None => [&self.e2_first, &self.e2_last, &self.e2_edge],
        };
        let parts: [&[f64]; 7] = [&head, &self.e0, &self.e1, &self.e3, e2_blocks[0], e2_blocks[1], e2_blocks[2]];
        for part in parts {
            for v in part {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if self.e2_full.is_some() {
            for v in &self.e2_edge {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Reload a dump written by [`EKernels::write_binary`]. Initial reserves are
    /// reset to zero since they do not enter the kernels.
    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |msg: &str| GameError::Io(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a kernel dump"));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        if word(1) != DUMP_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (big_m, m) = (word(2), word(3));
        let floats: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut pos = 0;
        let mut take = |len: usize| -> Result<Vec<f64>> {
            if pos + len > floats.len() {
                return Err(bad("truncated"));
            }
            pos += len;
            Ok(floats[pos - len..pos].to_vec())
        };
        let head = take(9)?;
        let params = GameParams::new(head[0] as usize, head[1], head[2], head[3], head[4], head[5], head[6]);
        let grid = TimeGrid::aligned(params.horizon, head[7], &[params.delay])?;
        if grid.steps != big_m || grid.lag_steps(params.delay) != m {
            return Err(bad("grid does not match header"));
        }
        let w = m + 1;
        let e0 = take(big_m + 1)?;
        let e1 = take((big_m + 1) * w)?;
        let e3 = take(big_m + 1)?;
        let slice = tri_len(m);
        let (e2_full, e2_first, e2_last, e2_edge) = if head[8] == 1.0 {
            let full = take((big_m + 1) * slice)?;
            let first = full[..slice].to_vec();
            let last = full[big_m * slice..].to_vec();
            let edge = take((big_m + 1) * w)?;
            (Some(full), first, last, edge)
        } else {
            let first = take(slice)?;
            let last = take(slice)?;
            let edge = take((big_m + 1) * w)?;
            (None, first, last, edge)
        };
        Ok(EKernels { params, grid, lags: m, e0, e1, e2_edge, e3, e2_full, e2_first, e2_last })
    }
}

/// Equilibrium feedback on the kernel grid:
/// `alpha^i_t = phi_cl(t) D + memory_scale * sum_j memory(t, j) h_{t - j dt} dt`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub grid: TimeGrid,
    pub lags: usize,
    /// `2 A1 (E1(t, 0) + E0(t)) + q`.
    pub phi_cl: Vec<f64>,
    /// `E2(t, -j dt, 0) + E1(t, -j dt)`, row-major `(M + 1) x (m + 1)`.
    pub memory: Vec<f64>,
    /// Weight `2 A1` multiplying the memory integral.
    pub memory_scale: f64,
    /// `E0` per node, for value gradients.
    pub value_e0: Vec<f64>,
    /// `E1` per node and lag, row-major like `memory`.
    pub value_e1: Vec<f64>,
}

impl FeedbackLaw {
    #[inline]
    pub fn memory_at(&self, n: usize, j: usize) -> f64 {
        self.memory[n * (self.lags + 1) + j]
    }

    /// Law for `tau = 0`: the control has no effect on reserves, so every
    /// player simply minimizes the running cost, `alpha = q D`.
    pub fn no_lending(p: &GameParams, dt: f64) -> Result<Self> {
        let grid = TimeGrid::new(p.horizon, dt)?;
        Ok(FeedbackLaw {
            grid,
            lags: 0,
            phi_cl: vec![p.q; grid.steps + 1],
            memory: vec![0.0; grid.steps + 1],
            memory_scale: 0.0,
            value_e0: vec![0.0; grid.steps + 1],
            value_e1: vec![0.0; grid.steps + 1],
        })
    }
}

pub fn feedback_law(k: &EKernels) -> FeedbackLaw {
    let w = k.lags + 1;
    let a1 = k.params.a1();
    let phi_cl = (0..=k.grid.steps).map(|n| 2.0 * a1 * k.k_at(n) + k.params.q).collect();
    let memory = k.e2_edge.iter().zip(&k.e1).map(|(a, b)| a + b).collect::<Vec<_>>();
    debug_assert_eq!(memory.len(), (k.grid.steps + 1) * w);
    FeedbackLaw {
        grid: k.grid,
        lags: k.lags,
        phi_cl,
        memory,
        memory_scale: 2.0 * a1,
        value_e0: k.e0.clone(),
        value_e1: k.e1.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64) -> GameParams {
        GameParams::new(10, 1.0, 1.0, 2.0, c, 2.0, 0.5)
    }

    #[test]
    fn terminal_values() {
        let k = solve_e_system(&params(0.6), 0.01).unwrap();
        let big_m = k.steps();
        assert_eq!(k.e0[big_m], 0.3);
        assert!((0..=k.lags).all(|j| k.e1_at(big_m, j) == 0.0));
        assert!(k.e2_slice(big_m).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(k.e3[big_m], 0.0);
        assert_eq!(k.liquidity_at_node(big_m), 0.6 + 1.0);
        let law = feedback_law(&k);
        assert!((law.phi_cl[big_m] - (0.9 * 0.6 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn boundaries_and_symmetry() {
        let k = solve_e_system(&params(0.0), 0.01).unwrap();
        assert!(k.has_full_e2());
        assert!(k.boundary_residual().unwrap() <= 1e-12);
        for n in [0, 37, 150] {
            for j in 0..=k.lags {
                for l in 0..=k.lags {
                    assert_eq!(k.e2_at(n, j, l).unwrap(), k.e2_at(n, l, j).unwrap());
                }
            }
        }
    }

    #[test]
    fn e3_is_integral_of_e0() {
        let p = params(0.0);
        let k = solve_e_system(&p, 0.01).unwrap();
        let dt = k.dt();
        let mut acc = 0.0;
        for n in (0..k.steps()).rev() {
            acc += 0.5 * dt * (k.e0[n] + k.e0[n + 1]);
            assert!((k.e3[n] - p.a1() * acc).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_in_dt() {
        let p = params(0.0);
        let e = |dt| solve_e_system(&p, dt).unwrap().e0[0];
        let (a, b, c) = (e(0.02), e(0.01), e(0.005));
        let order = ((a - b) / (b - c)).abs().log2();
        assert!(order > 0.8, "observed order {order}");
        assert!((b - c).abs() < 0.05);
    }

    #[test]
    fn pde_defect_is_first_order() {
        let p = params(0.0);
        let d1 = solve_e_system(&p, 0.01).unwrap().e1_pde_defect();
        let d2 = solve_e_system(&p, 0.005).unwrap().e1_pde_defect();
        assert!(d1 / d2 >= 1.8, "{d1} / {d2}");
    }

    #[test]
    fn frozen_resweep_is_exact() {
        let k = solve_e_system(&params(0.4), 0.01).unwrap();
        assert!(k.fixed_point_residual().unwrap() <= 1e-10);
    }

    #[test]
    fn long_delay_reduces_to_scalar_ode() {
        let p = GameParams::new(5, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0);
        let k = solve_e_system(&p, 1e-3).unwrap();
        assert!((0..=k.steps()).all(|n| k.e1_at(n, 0) == 0.0));
        // RK4 oracle for E0' = 2 A2 E0^2 + 2 q E0 + q^2/2 - eps/2
        let f = |y: f64| 2.0 * p.a2() * y * y + 2.0 * p.q * y + 0.5 * p.q * p.q - 0.5 * p.epsilon;
        let h = 1e-4;
        let mut y = 0.0;
        for _ in 0..10_000 {
            let k1 = f(y);
            let k2 = f(y - 0.5 * h * k1);
            let k3 = f(y - 0.5 * h * k2);
            let k4 = f(y - h * k3);
            y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert!((k.e0[0] - y).abs() < 1e-3, "{} vs {y}", k.e0[0]);
        assert!((k.liquidity_rate(0.0).unwrap() - (2.0 * k.e0[0] + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn compact_storage() {
        let p = params(0.0);
        let full = solve_e_system_with(&p, 0.01, E2Storage::Full).unwrap();
        let compact = solve_e_system_with(&p, 0.01, E2Storage::Compact).unwrap();
        assert_eq!(full.e0, compact.e0);
        assert_eq!(full.e2_edge, compact.e2_edge);
        assert_eq!(full.e2_slice(0).unwrap(), compact.e2_slice(0).unwrap());
        assert!(matches!(compact.e2_slice(5), Err(GameError::SliceNotStored(5))));
    }

    #[test]
    fn errors() {
        let p = GameParams::new(10, 1.0, 1.0, 2.0, 0.0, 2.0, 0.0);
        assert!(matches!(solve_e_system(&p, 0.01), Err(GameError::TauZero)));
        let p = GameParams::new(10, 1.0, 1.0, 2.0, 0.0, 2.0, 1.0 / std::f64::consts::PI);
        assert!(matches!(solve_e_system(&p, 0.1), Err(GameError::GridMismatch(_))));
    }

    #[test]
    fn value_function_basics() {
        let p = params(0.5).with_reserves((0..10).map(|i| i as f64 * 0.1).collect());
        let k = solve_e_system(&p, 0.01).unwrap();
        let xi = p.initial_reserves.clone();
        let v = k.value_function(0, &xi, &[]).unwrap();
        for i in 0..10 {
            let d = crate::model::mean(&xi) - xi[i];
            assert_eq!(v[i], k.e0[0] * d * d + k.e3[0]);
        }
        let big_m = k.steps();
        let hist = vec![vec![0.3; 10]; k.lags];
        let vt = k.value_function(big_m, &xi, &hist).unwrap();
        for i in 0..10 {
            assert!((vt[i] - crate::model::terminal_cost(&p, &xi, i)).abs() < 1e-14);
        }
        let shifted: Vec<f64> = xi.iter().map(|x| x + 2.0).collect();
        for (a, b) in k.value_function(0, &shifted, &[]).unwrap().iter().zip(&v) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(matches!(
            k.value_function(10, &xi, &hist[..3]),
            Err(GameError::HistoryLength { got: 3, need: 10 })
        ));
    }

    #[test]
    fn binary_roundtrip() {
        let dir = std::env::temp_dir().join(format!("ekrn-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for storage in [E2Storage::Full, E2Storage::Compact] {
            let k = solve_e_system_with(&params(0.2), 0.05, storage).unwrap();
            let path = dir.join("k.bin");
            k.write_binary(&path).unwrap();
            let back = EKernels::read_binary(&path).unwrap();
            assert_eq!(back.e0, k.e0);
            assert_eq!(back.e1, k.e1);
            assert_eq!(back.e2_edge, k.e2_edge);
            assert_eq!(back.e2_slice(0).unwrap(), k.e2_slice(0).unwrap());
            assert_eq!(back.has_full_e2(), k.has_full_e2());
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
