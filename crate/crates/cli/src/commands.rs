use std::path::Path;

use anyhow::{Context, Result};
use game_lab::ekernels::{feedback_law, solve_e_system, solve_e_system_with, E2Storage, FeedbackLaw};
use game_lab::fabsde::{openloop_controls, solve_fabsde, solve_offdiagonal, Basis, FabsdeConfig};
use game_lab::liquidity::liquidity_study;
use game_lab::nashgap::{nash_gap, DeviationKind, DeviationSpec, NashGapReport};
use game_lab::report::{Cell, Table};
use game_lab::riccati::{solve_riccati, systemic_prob_closed_form};
use game_lab::simulate::{estimate_systemic_prob, simulate_closed_loop, PathBundle, SimConfig};
use game_lab::{GameError, GameParams, SystemicRiskQuery};
use serde_json::json;

use crate::{Common, Format, Outcome};

/// Used by `simulate` when no `--D` is given.
const DEFAULT_LEVEL: f64 = -0.7;

fn emit(stem: &str, table: &Table, format: Format) -> (String, Vec<u8>) {
    match format {
        Format::Csv => (format!("{stem}.csv"), table.to_csv().into_bytes()),
        Format::Json => {
            let text = serde_json::to_string_pretty(&table.to_json()).expect("table serializes") + "\n";
            (format!("{stem}.json"), text.into_bytes())
        }
    }
}

fn taus(p: &GameParams, c: &Common) -> Vec<f64> {
    if c.tau_sweep.is_empty() {
        vec![p.delay]
    } else {
        c.tau_sweep.clone()
    }
}

/// Equilibrium bundle for delay `tau`; `tau = 0` means no lending.
fn equilibrium_bundle(p: &GameParams, dt: f64, cfg: &SimConfig) -> Result<PathBundle> {
    let law = if p.delay == 0.0 {
        p.validate()?;
        FeedbackLaw::no_lending(p, dt)?
    } else {
        feedback_law(&solve_e_system_with(p, dt, E2Storage::Compact)?)
    };
    Ok(simulate_closed_loop(p, &law, cfg)?)
}

pub fn validate(p: &GameParams, _c: &Common) -> Result<Outcome> {
    p.validate()?;
    let n = p.n_players as f64;
    let summary = json!({
        "valid": true,
        "A1": p.a1(),
        "A2": p.a2(),
        "convexity_margin": p.epsilon - p.q * p.q,
        "standing_margin": p.epsilon * (1.0 - 1.0 / n) - (p.q * (1.0 - 0.5 / n)).powi(2),
    });
    Ok(Outcome { dt: None, n_paths: None, artifacts: Vec::new(), summary })
}

pub fn riccati(p: &GameParams, c: &Common) -> Result<Outcome> {
    let sol = solve_riccati(p, c.dt.unwrap_or(1e-3))?;
    let summary = json!({ "phi_0": sol.phi[0], "gain_0": sol.gain_at_node(0), "ode_defect": sol.ode_defect() });
    Ok(Outcome {
        dt: Some(sol.grid.dt),
        n_paths: None,
        artifacts: vec![emit("riccati", &sol.to_table(), c.format)],
        summary,
    })
}

pub fn kernels(p: &GameParams, c: &Common, dump: bool) -> Result<Outcome> {
    let storage = if dump { E2Storage::Full } else { E2Storage::Auto };
    let k = solve_e_system_with(p, c.dt.unwrap_or(1e-2), storage)?;
    let mut artifacts = vec![emit("kernels", &k.to_table(), c.format)];
    if dump {
        std::fs::create_dir_all(&c.output).map_err(GameError::from)?;
        let path = c.output.join("kernels.bin");
        k.write_binary(&path)?;
        artifacts.push(("kernels.bin".into(), std::fs::read(&path).map_err(GameError::from)?));
    }
    let summary = json!({
        "steps": k.steps(),
        "lags": k.lags,
        "E0_0": k.e0[0],
        "liquidity_0": k.liquidity_at_node(0),
        "boundary_residual": k.boundary_residual()?,
    });
    Ok(Outcome { dt: Some(k.dt()), n_paths: None, artifacts, summary })
}

pub fn simulate(p: &GameParams, c: &Common, trajectories: bool) -> Result<Outcome> {
    let dt = c.dt.unwrap_or(1e-3);
    let n_paths = c.n_paths.unwrap_or(10_000);
    let query = SystemicRiskQuery::new(c.default_level.unwrap_or(DEFAULT_LEVEL))?;
    let mut cfg = SimConfig::new(dt, n_paths, c.seed);
    if trajectories {
        cfg = cfg.with_paths();
    }
    let mut summary = Table::new(&["tau", "dt", "n_paths", "seed", "mean_J_per_player", "systemic_prob", "se"]);
    let mut traj = Table::new(&["tau", "path", "t", "player", "x", "alpha"]);
    let mut used_dt = dt;
    let mut clearing: f64 = 0.0;
    for tau in taus(p, c) {
        let pt = p.clone().with_delay(tau);
        let b = equilibrium_bundle(&pt, dt, &cfg)?;
        used_dt = b.grid.dt;
        clearing = clearing.max(b.max_clearing_residual());
        summary.rows.extend(b.summary_table(&query).rows);
        if let Some(tr) = &b.trajectories {
            let np = pt.n_players;
            let m = b.grid.steps;
            for path in 0..b.n_paths {
                for n in 0..=m {
                    for i in 0..np {
                        let k = (path * (m + 1) + n) * np + i;
                        traj.push(vec![tau.into(), path.into(), b.grid.time(n).into(), i.into(), tr.x[k].into(), tr.alpha[k].into()]);
                    }
                }
            }
        }
    }
    let mut artifacts = vec![emit("simulate", &summary, c.format)];
    if trajectories {
        artifacts.push(emit("trajectories", &traj, c.format));
    }
    Ok(Outcome {
        dt: Some(used_dt),
        n_paths: Some(n_paths),
        artifacts,
        summary: json!({ "default_level": query.default_level, "max_clearing_residual": clearing, "runs": summary.to_json() }),
    })
}

pub fn systemic(p: &GameParams, c: &Common) -> Result<Outcome> {
    let level = c
        .default_level
        .ok_or_else(|| GameError::InvalidParam("systemic needs --D".into()))?;
    let query = SystemicRiskQuery::new(level)?;
    let dt = c.dt.unwrap_or(1e-3);
    let n_paths = c.n_paths.unwrap_or(10_000);
    let cfg = SimConfig::new(dt, n_paths, c.seed);
    let closed = systemic_prob_closed_form(p, &query)?;
    let mut t = Table::new(&["tau", "D", "dt", "n_paths", "closed_form", "monte_carlo", "se", "z"]);
    let mut used_dt = dt;
    for tau in taus(p, c) {
        let b = equilibrium_bundle(&p.clone().with_delay(tau), dt, &cfg)?;
        used_dt = b.grid.dt;
        let mc = estimate_systemic_prob(&b, &query);
        let z = if mc.se > 0.0 { Cell::Num(mc.z_score(closed)) } else { Cell::Empty };
        t.push(vec![tau.into(), level.into(), b.grid.dt.into(), n_paths.into(), closed.into(), mc.mean.into(), mc.se.into(), z]);
    }
    Ok(Outcome {
        dt: Some(used_dt),
        n_paths: Some(n_paths),
        artifacts: vec![emit("systemic", &t, c.format)],
        summary: t.to_json(),
    })
}

pub fn liquidity(p: &GameParams, c: &Common) -> Result<Outcome> {
    let dt = c.dt.unwrap_or(1e-2);
    let study = liquidity_study(p, &taus(p, c), dt)?;
    let summary = study.summary_table();
    Ok(Outcome {
        dt: Some(study.curves.iter().map(|cv| cv.times[1] - cv.times[0]).fold(dt, f64::min)),
        n_paths: None,
        artifacts: vec![emit("liquidity", &study.to_table(), c.format), emit("liquidity_summary", &summary, c.format)],
        summary: json!({ "increasing_at_t0": study.increasing_at_start(), "sweep": summary.to_json() }),
    })
}

pub struct FabsdeKnobs {
    pub n_picard: usize,
    pub picard_tol: f64,
    pub homotopy_steps: usize,
    pub damping: f64,
    pub windows: Vec<f64>,
}

pub fn fabsde(p: &GameParams, c: &Common, knobs: &FabsdeKnobs) -> Result<Outcome> {
    let cfg = FabsdeConfig {
        dt: c.dt.unwrap_or(5e-3),
        n_paths: c.n_paths.unwrap_or(10_000),
        n_picard: knobs.n_picard,
        picard_tol: knobs.picard_tol,
        homotopy_steps: knobs.homotopy_steps,
        damping: knobs.damping,
        basis: if knobs.windows.is_empty() {
            Basis::CenteredState
        } else {
            Basis::StateAndHistory { windows: knobs.windows.clone() }
        },
    };
    let mut sol = solve_fabsde(p, &cfg, c.seed)?;
    solve_offdiagonal(&mut sol)?;
    let alpha = openloop_controls(&sol)?;
    let rows = sol.rows();
    let alpha0: Vec<f64> = (0..sol.n_paths).map(|k| alpha[k * p.n_players]).collect();
    let mart = sol.martingale_check();
    let summary = json!({
        "iterations": sol.residuals.len(),
        "final_residual": sol.residuals.last().map(|r| r.residual),
        "clearing_residual": sol.clearing_residual(),
        "anticipation_consistency": sol.anticipation_consistency()?,
        "martingale_mean": mart.mean,
        "martingale_se": mart.se,
        "mean_alpha0_player0": game_lab::model::mean(&alpha0),
        "regression_rows": rows,
    });
    Ok(Outcome {
        dt: Some(sol.grid.dt),
        n_paths: Some(sol.n_paths),
        artifacts: vec![
            emit("fabsde_residuals", &sol.residual_table(), c.format),
            emit("fabsde_summary", &sol.summary_table(), c.format),
        ],
        summary,
    })
}

fn read_table(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(GameError::from)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<f64>().with_context(|| format!("bad table value '{l}'")).map_err(|e| GameError::BadDeviation(e.to_string()).into()))
        .collect()
}

pub fn nashgap(p: &GameParams, c: &Common, player: usize, kind: &str, magnitude: f64, table: Option<&Path>) -> Result<Outcome> {
    let dt = c.dt.unwrap_or(2.5e-3);
    let n_paths = c.n_paths.unwrap_or(10_000);
    let dev = match kind.parse::<DeviationKind>()? {
        DeviationKind::ConstantShift => DeviationSpec::constant_shift(player, magnitude),
        DeviationKind::ScaledFeedback => DeviationSpec::scaled_feedback(player, magnitude),
        DeviationKind::CustomTable => {
            let path = table.ok_or_else(|| GameError::BadDeviation("custom_table needs --table".into()))?;
            DeviationSpec::custom_table(player, read_table(path)?)
        }
    };
    let k = solve_e_system(p, dt)?;
    let r = nash_gap(p, &k, &dev, &SimConfig::new(dt, n_paths, c.seed))?;
    let summary = json!({
        "value0": r.value0,
        "equilibrium_cost": r.equilibrium_cost.mean,
        "equilibrium_cost_se": r.equilibrium_cost.se,
        "equilibrium_cost_cv": r.equilibrium_cost_cv.mean,
        "equilibrium_cost_cv_se": r.equilibrium_cost_cv.se,
        "gap": r.gap.mean,
        "predicted": r.predicted.mean,
        "combined_se": r.combined_se(),
        "paired_se": r.paired_se,
    });
    Ok(Outcome {
        dt: Some(k.dt()),
        n_paths: Some(n_paths),
        artifacts: vec![emit("nashgap", &NashGapReport::to_table(&[r]), c.format)],
        summary,
    })
}
