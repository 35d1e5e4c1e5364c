//! The experiment subcommands. Each reads its parameters from the resolved
//! config, drives the corresponding library routine, and lays down
//! CSV/JSON/binary artifacts plus a manifest in the output directory.
//!
//! Config sections: `[grid]` n/k, `[data]` and `[target]` initial states,
//! `[damping]` profile, `[evolve]`, `[stabilize]`, `[hum]`, `[local]`,
//! `[pipeline]`, `[diagnose]`, `[scan]` per-command knobs. A top-level `cfl`
//! key (the `--cfl` flag) backs every section's own `cfl`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use wmlab::data::{random_scalar_wave, random_state_at_energy, random_state_near};
use wmlab::diagnostics::{
    averaged_map_residual, fit_exponential_decay, linf_l2_velocity, null_coordinate_energies,
    observability_ratio, CutoffSpec, DecayFit,
};
use wmlab::error::Error;
use wmlab::evolver::{evolve, DampingProfile, EvolveParams, RunRecord};
use wmlab::grid::{Grid1D, GridState, Interval, ScalarWaveState};
use wmlab::hum::{fd_replay_report, optimality_trials, HumContext, HumProblem};
use wmlab::io;
use wmlab::linear_wave::Dispersion;
use wmlab::local_control::{
    local_exact_control, local_null_control_in, LocalControlOutcome, LocalLoopParams,
};
use wmlab::pipeline::{
    near_harmonic_family, semi_global_control, stabilize_to_small_energy, threshold_scan,
    PipelineConfig,
};
use wmlab::sphere::SpherePoint;

use crate::config::{field_err, Config, ConfigError};
use crate::output::{write_plot_script, RunDir};

pub enum CliError {
    /// Malformed or inconsistent configuration: exit 2.
    Config(ConfigError),
    /// Any library failure during the run: exit 1.
    Module(Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Module(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Module(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module(_) => 1,
        }
    }

    /// One line of JSON on stderr is the whole error contract.
    pub fn to_json(&self) -> String {
        let v = match self {
            CliError::Config(e) => json!({
                "schema_version": io::SCHEMA_VERSION,
                "category": "config",
                "field": e.field,
                "message": e.message,
            }),
            CliError::Module(e) => json!({
                "schema_version": io::SCHEMA_VERSION,
                "category": "runtime",
                "kind": module_error_kind(e),
                "message": e.to_string(),
            }),
        };
        v.to_string()
    }
}

fn module_error_kind(e: &Error) -> &'static str {
    match e {
        Error::NearZeroVector { .. } => "near-zero-vector",
        Error::AntipodalPair { .. } => "antipodal-pair",
        Error::UnresolvedCurve { .. } => "unresolved-curve",
        Error::BlowUp { .. } => "blow-up",
        Error::ProfileTooWeak { .. } => "profile-too-weak",
        Error::DegenerateProbe { .. } => "degenerate-probe",
        Error::GramianIllConditioned { .. } => "gramian-ill-conditioned",
        Error::TargetUnreachableZeroMode { .. } => "target-unreachable-zero-mode",
        Error::NoContraction { .. } => "no-contraction",
        Error::ReplayMismatch { .. } => "replay-mismatch",
        Error::StallDetected { .. } => "stall-detected",
        Error::ChainHopFailed { .. } => "chain-hop-failed",
        Error::WindingMismatch { .. } => "winding-mismatch",
        Error::WindowNotCovered { .. } => "window-not-covered",
        Error::NonPositiveEnergy { .. } => "non-positive-energy",
        Error::InvalidConfig(_) => "invalid-config",
        Error::Io(_) => "io",
        Error::MalformedFile(_) => "malformed-file",
    }
}

fn build_grid(cfg: &Config) -> Result<(Grid1D, usize), CliError> {
    let n = cfg.usize_or(&["grid.n"], 256)?;
    let k = cfg.usize_or(&["grid.k"], 2)?;
    let grid = Grid1D::new(n).map_err(|e| field_err("grid.n", e.to_string()))?;
    Ok((grid, k))
}

fn build_damping(cfg: &Config, grid: Grid1D) -> Result<Option<DampingProfile>, CliError> {
    let kind = cfg.str_or("damping.kind", "bump")?;
    match kind.as_str() {
        "none" => Ok(None),
        "uniform" => {
            let amp = cfg.f64_or(&["damping.amplitude"], 1.0)?;
            Ok(Some(DampingProfile::uniform(grid, amp)))
        }
        "bump" => {
            let lo = cfg.f64_or(&["damping.lo"], -PI / 2.0)?;
            let hi = cfg.f64_or(&["damping.hi"], PI / 2.0)?;
            let quarter = (hi - lo) / 4.0;
            let core_lo = cfg.f64_or(&["damping.core_lo"], lo + quarter)?;
            let core_hi = cfg.f64_or(&["damping.core_hi"], hi - quarter)?;
            let amp = cfg.f64_or(&["damping.amplitude"], 2.0)?;
            let omega = Interval::new(lo, hi)
                .map_err(|e| field_err("damping.lo", e.to_string()))?;
            let core = Interval::new(core_lo, core_hi)
                .map_err(|e| field_err("damping.core_lo", e.to_string()))?;
            Ok(Some(DampingProfile::bump(grid, omega, core, amp)?))
        }
        other => Err(field_err(
            "damping.kind",
            format!("expected one of bump, uniform, none; got `{other}`"),
        )
        .into()),
    }
}

fn required_damping(cfg: &Config, grid: Grid1D) -> Result<DampingProfile, CliError> {
    build_damping(cfg, grid)?
        .ok_or_else(|| field_err("damping.kind", "this command needs a damping profile").into())
}

/// Initial data from a config section (`data` for the start, `target` for
/// the endpoint). Kinds: constant, harmonic, random (near a point),
/// random-energy (prescribed energy), blend (near-harmonic family member).
fn build_state(
    cfg: &Config,
    section: &str,
    grid: Grid1D,
    k: usize,
    default_seed: u64,
) -> Result<GridState, CliError> {
    let key = |name: &str| format!("{section}.{name}");
    let kind = cfg.str_or(&key("kind"), "random")?;
    let seed = cfg.u64_or(&[&key("seed"), "data.seed"], default_seed)?;
    let cutoff = cfg.usize_or(&[&key("mode_cutoff"), "data.mode_cutoff"], 8)?;
    let p = SpherePoint::axis(k);
    match kind.as_str() {
        "constant" => Ok(GridState::constant(grid, &p)),
        "harmonic" => Ok(GridState::harmonic_map(grid, k)),
        "random" => {
            let eps = cfg.f64_or(&[&key("eps")], 0.1)?;
            Ok(random_state_near(grid, &p, seed, cutoff, eps)?)
        }
        "random-energy" => {
            let energy = cfg.f64_or(&[&key("energy")], 1.0)?;
            Ok(random_state_at_energy(grid, k, seed, cutoff, energy)?)
        }
        "blend" => {
            let energy = cfg.f64_or(&[&key("energy")], PI)?;
            Ok(near_harmonic_family(grid, k, energy)?)
        }
        other => Err(field_err(
            &key("kind"),
            format!(
                "expected one of constant, harmonic, random, random-energy, blend; got `{other}`"
            ),
        )
        .into()),
    }
}

fn local_params(cfg: &Config, default_omega: Interval) -> Result<LocalLoopParams, CliError> {
    let omega = match (cfg.f64_opt("local.omega_lo")?, cfg.f64_opt("local.omega_hi")?) {
        (None, None) => default_omega,
        (lo, hi) => Interval::new(
            lo.unwrap_or(default_omega.lo),
            hi.unwrap_or(default_omega.hi),
        )
        .map_err(|e| field_err("local.omega_lo", e.to_string()))?,
    };
    let mut params = LocalLoopParams::new(omega);
    params.t_horizon = cfg.f64_or(&["local.t_horizon"], params.t_horizon)?;
    if let Some(n_max) = cfg.usize_opt("local.n_max")? {
        params.n_max = Some(n_max);
    }
    params.cfl = cfg.f64_or(&["local.cfl", "cfl"], params.cfl)?;
    params.tol_local = cfg.f64_or(&["local.tol"], params.tol_local)?;
    params.max_iter = cfg.usize_or(&["local.max_iter"], params.max_iter)?;
    Ok(params)
}

fn write_json_value(path: &Path, kind: &str, value: &serde_json::Value) -> Result<(), CliError> {
    io::write_json(path, kind, value)?;
    Ok(())
}

fn decay_fit_json(fit: Result<DecayFit, Error>) -> serde_json::Value {
    match fit {
        Ok(f) => json!({
            "amplitude": f.amplitude,
            "rate": f.rate,
            "r_squared": f.r_squared,
        }),
        Err(e) => json!({ "skipped": e.to_string() }),
    }
}

fn energy_series(record: &RunRecord) -> Vec<(f64, f64)> {
    record.rows.iter().map(|r| (r.t, r.energy)).collect()
}

pub fn simulate(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let u0 = build_state(cfg, "data", grid, k, 7)?;
    let damping = build_damping(cfg, grid)?;
    let forcing = match cfg.str_opt("evolve.control_file")? {
        Some(p) => Some(io::read_control_bin(Path::new(&p))?),
        None => None,
    };
    let t_end = cfg.f64_or(&["evolve.t_end", "t_end"], 2.0 * PI)?;
    let cfl = cfg.f64_or(&["evolve.cfl", "cfl"], 0.5)?;
    let every = cfg.usize_or(&["evolve.record_every"], 4)?;
    let store = cfg.bool_or("evolve.store_trajectory", false)?;

    let mut params = EvolveParams::new(t_end).with_cfl(cfl).with_record_every(every);
    if !store {
        params = params.without_states();
    }
    let run = evolve(&u0, &params, damping.as_ref(), forcing.as_ref())?;

    io::write_record_csv(&out.file("record.csv"), &run.record)?;
    io::write_state_csv(&out.file("final_state.csv"), &run.final_state)?;
    io::write_state_bin(&out.file("final_state.bin"), &run.final_state)?;
    if store {
        io::write_trajectory_bin(&out.file("trajectory.bin"), &run.trajectory)?;
    }
    write_plot_script(&out.file("energy.gp"), "record.csv", "1:2", "t", "energy", false)?;

    let rows = &run.record.rows;
    let summary = json!({
        "t_end": t_end,
        "dt": run.dt,
        "steps": run.steps,
        "energy_start": rows.first().map(|r| r.energy),
        "energy_end": rows.last().map(|r| r.energy),
        "dissipation_cumulative": rows.last().map(|r| r.dissipation_cum),
        "constraint_max": rows.iter().map(|r| r.constraint_max).fold(0.0, f64::max),
        "tangency_max": rows.iter().map(|r| r.tangency_max).fold(0.0, f64::max),
        "damped": damping.is_some(),
        "forced": forcing.is_some(),
    });
    write_json_value(&out.file("simulate.json"), "simulate-summary", &summary)?;

    let seed = cfg.u64_or(&["data.seed"], 7)?;
    out.write_manifest("simulate", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}

pub fn stabilize(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let u0 = build_state(cfg, "data", grid, k, 7)?;
    let damping = required_damping(cfg, grid)?;
    let e_target = cfg.f64_or(&["stabilize.e_target"], 1e-4)?;
    let cfl = cfg.f64_or(&["stabilize.cfl", "cfl"], 0.5)?;
    let max_time = cfg.f64_or(&["stabilize.max_time"], 512.0 * PI)?;

    let outcome = stabilize_to_small_energy(&u0, &damping, e_target, cfl, max_time)?;

    io::write_record_csv(&out.file("record.csv"), &outcome.record)?;
    io::write_state_csv(&out.file("final_state.csv"), &outcome.state)?;
    io::write_state_bin(&out.file("final_state.bin"), &outcome.state)?;
    write_plot_script(&out.file("energy.gp"), "record.csv", "1:2", "t", "energy", true)?;

    let series = energy_series(&outcome.record);
    let report = json!({
        "e_target": e_target,
        "elapsed": outcome.elapsed,
        "energy_start": series.first().map(|r| r.1),
        "energy_end": series.last().map(|r| r.1),
        "decay_fit": decay_fit_json(fit_exponential_decay(&series)),
    });
    write_json_value(&out.file("stabilize.json"), "stabilize-report", &report)?;

    let seed = cfg.u64_or(&["data.seed"], 7)?;
    out.write_manifest("stabilize", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}

pub fn hum(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let omega = Interval::new(
        cfg.f64_or(&["hum.omega_lo"], -PI / 2.0)?,
        cfg.f64_or(&["hum.omega_hi"], PI / 2.0)?,
    )
    .map_err(|e| field_err("hum.omega_lo", e.to_string()))?;
    let t_horizon = cfg.f64_or(&["hum.t_horizon"], 2.0 * PI)?;
    let n_max = cfg.usize_or(&["hum.n_max"], 32)?;
    let cfl = cfg.f64_or(&["hum.cfl", "cfl"], 0.5)?;
    // Control samples tile the horizon exactly on a solver-matched lattice.
    let steps = (t_horizon / (cfl * grid.dx())).ceil().max(1.0);
    let dt_ctrl = t_horizon / steps;
    let dispersion = match cfg.str_or("hum.dispersion", "scheme")?.as_str() {
        "continuum" => Dispersion::Continuum,
        "scheme" => Dispersion::SchemeMatched { dt: dt_ctrl },
        other => {
            return Err(field_err(
                "hum.dispersion",
                format!("expected continuum or scheme, got `{other}`"),
            )
            .into())
        }
    };

    let mut problem = HumProblem::new(grid, omega, t_horizon, n_max, dispersion)?;
    if let Some(ridge) = cfg.f64_opt("hum.ridge")? {
        problem.ridge = ridge;
    }
    let ctx = HumContext::new(problem)?;

    let seed = cfg.u64_or(&["data.seed"], 7)?;
    let cutoff = cfg.usize_or(&["data.mode_cutoff"], n_max)?;
    let y0 = random_scalar_wave(grid, seed, cutoff);
    let target = ScalarWaveState::zero(grid, 1);
    let control = ctx.hum_control(&y0, &target, dt_ctrl)?;
    let replay = fd_replay_report(&control, &y0, &target)?;

    let trials_requested = cfg.usize_or(&["hum.trials"], 0)?;
    let worst_pairing = if trials_requested > 0 {
        let trials = optimality_trials(&ctx, &control, trials_requested, seed)?;
        Some(trials.iter().map(|t| t.normalized_pairing).fold(0.0, f64::max))
    } else {
        None
    };

    io::write_matrix_csv(&out.file("gramian.csv"), ctx.gramian())?;
    io::write_control_bin(&out.file("control.bin"), &control.field)?;

    let g = &ctx.report;
    let report = json!({
        "t_horizon": t_horizon,
        "n_max": n_max,
        "energy_start": y0.e1_energy(),
        "deficit_norm": control.deficit_norm,
        "cost_l2_tx": control.cost_l2_tx,
        "oracle_terminal_residual": control.oracle_terminal_residual,
        "unrepresentable": control.unrepresentable,
        "replay": {
            "measured_deficit": replay.measured_deficit,
            "predicted_deficit": replay.predicted_deficit,
        },
        "gramian": {
            "dim": g.dim,
            "eig_min": g.eig_min,
            "eig_max": g.eig_max,
            "cond": g.cond,
            "symmetry_defect": g.symmetry_defect,
        },
        "optimality_trials": trials_requested,
        "worst_normalized_pairing": worst_pairing,
    });
    write_json_value(&out.file("hum.json"), "hum-report", &report)?;

    out.write_manifest("hum", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}

fn loop_json(outcome: &LocalControlOutcome) -> serde_json::Value {
    json!({
        "residual": outcome.residual,
        "iterations": outcome.iterates.len(),
        "gramian_cond": outcome.gramian.cond,
    })
}

pub fn control_local(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let p = SpherePoint::axis(k);
    let eps = cfg.f64_or(&["local.epsilon"], 1e-2)?;
    let seed = cfg.u64_or(&["data.seed"], 7)?;
    let seed_target = cfg.u64_or(&["target.seed"], seed.wrapping_add(1))?;
    let cutoff = cfg.usize_or(&["data.mode_cutoff"], 8)?;
    let u0 = random_state_near(grid, &p, seed, cutoff, eps)?;
    let u1 = random_state_near(grid, &p, seed_target, cutoff, eps)?;
    let default_omega = Interval::new(-PI / 2.0, PI / 2.0).expect("constant interval");
    let params = local_params(cfg, default_omega)?;

    let outcome = local_exact_control(&u0, &u1, &p, &params)?;

    io::write_iterates_csv(&out.file("iterates_outward.csv"), &outcome.outward.iterates)?;
    io::write_iterates_csv(&out.file("iterates_backward.csv"), &outcome.backward.iterates)?;
    io::write_control_bin(&out.file("control_outward.bin"), &outcome.leg_out)?;
    io::write_control_bin(&out.file("control_backward.bin"), &outcome.leg_back)?;
    write_plot_script(
        &out.file("residuals.gp"),
        "iterates_outward.csv",
        "1:2",
        "iteration",
        "residual",
        true,
    )?;

    let report = json!({
        "epsilon": eps,
        "t_horizon": params.t_horizon,
        "midpoint_residual": outcome.midpoint_residual,
        "replay_error": outcome.replay_error,
        "outward": loop_json(&outcome.outward),
        "backward": loop_json(&outcome.backward),
    });
    write_json_value(&out.file("local.json"), "local-control-report", &report)?;

    out.write_manifest("control-local", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}

pub fn control_global(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let u0 = build_state(cfg, "data", grid, k, 7)?;
    let u1 = build_state(cfg, "target", grid, k, 8)?;
    let damping = required_damping(cfg, grid)?;
    let omega = damping.omega;

    let mut pc = PipelineConfig::new(damping);
    pc.nu = cfg.f64_or(&["pipeline.nu"], pc.nu)?;
    pc.epsilon_tilde = cfg.f64_or(&["pipeline.epsilon_tilde"], pc.epsilon_tilde)?;
    if let Some(e) = cfg.f64_opt("pipeline.e_target")? {
        pc.e_target = Some(e);
    }
    pc.cfl = cfg.f64_or(&["pipeline.cfl", "cfl"], pc.cfl)?;
    pc.tol_global = cfg.f64_or(&["pipeline.tol_global"], pc.tol_global)?;
    pc.max_stabilize_time = cfg.f64_or(&["pipeline.max_stabilize_time"], pc.max_stabilize_time)?;
    pc.local = local_params(cfg, omega)?;

    let outcome = semi_global_control(&u0, &u1, &pc)?;

    for (i, (record, phase)) in
        outcome.phase_records.iter().zip(&outcome.report.phases).enumerate()
    {
        let name = format!("phase_{i:02}_{}.csv", phase.label);
        io::write_record_csv(&out.file(&name), record)?;
    }
    io::write_state_csv(&out.file("final_state.csv"), &outcome.final_state)?;
    io::write_state_bin(&out.file("final_state.bin"), &outcome.final_state)?;
    io::write_json(&out.file("pipeline.json"), "pipeline-report", &outcome.report)?;

    let seed = cfg.u64_or(&["data.seed"], 7)?;
    out.write_manifest("control-global", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}

pub fn diagnose(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let path = cfg
        .str_opt("diagnose.trajectory")?
        .ok_or_else(|| field_err("diagnose.trajectory", "required: path to a stored trajectory"))?;
    let traj = io::read_trajectory_bin(Path::new(&path))?;
    if traj.times.len() < 2 {
        return Err(Error::InvalidConfig("stored trajectory has fewer than two states".into())
            .into());
    }
    let grid = traj.states[0].grid;
    let k = traj.states[0].k;
    let span = (traj.times[0], *traj.times.last().unwrap());
    let window = (
        cfg.f64_or(&["diagnose.window_lo"], span.0)?,
        cfg.f64_or(&["diagnose.window_hi"], span.1)?,
    );

    let nullr = null_coordinate_energies(&traj)?;
    let velocity_linf_l2 = linf_l2_velocity(&traj, window)?;

    let observability = match build_damping(cfg, grid)? {
        None => json!(null),
        Some(damping) => {
            let obs = observability_ratio(&traj, &damping, window)?;
            let mut w = String::from("x,velocity_l2_t\r\n");
            for (j, v) in obs.per_x.iter().enumerate() {
                w.push_str(&format!("{},{}\r\n", grid.x(j), v));
            }
            std::fs::write(out.file("per_x.csv"), w)?;
            json!({ "lhs": obs.lhs, "rhs": obs.rhs, "ratio": obs.ratio })
        }
    };

    let averaged_map = match averaged_map_residual(&traj, &CutoffSpec::averaging_default()) {
        Ok(avg) => json!({ "residual": avg.residual }),
        Err(Error::WindowNotCovered { t0, t1, .. }) => {
            json!({ "skipped": format!("trajectory does not cover the cutoff window [{t0}, {t1}]") })
        }
        Err(e) => return Err(e.into()),
    };

    let report = json!({
        "trajectory": path,
        "states": traj.states.len(),
        "span": [span.0, span.1],
        "window": [window.0, window.1],
        "energy_start": traj.states[0].energy(),
        "energy_end": traj.states.last().unwrap().energy(),
        "velocity_linf_l2": velocity_linf_l2,
        "null_energy": {
            "sup_energy_ratio": nullr.sup_energy_ratio,
            "l2_u_sq": nullr.l2_u_sq,
            "l2_v_sq": nullr.l2_v_sq,
            "linf_l2_u_sq": nullr.linf_l2_u_sq,
            "linf_l2_v_sq": nullr.linf_l2_v_sq,
            "interaction": nullr.interaction,
        },
        "observability": observability,
        "averaged_map": averaged_map,
    });
    write_json_value(&out.file("diagnose.json"), "diagnose-report", &report)?;

    out.write_manifest("diagnose", cfg, None, Some((grid.n(), k)))?;
    Ok(())
}

pub fn scan(cfg: &Config, mut out: RunDir) -> Result<(), CliError> {
    let (grid, k) = build_grid(cfg)?;
    let workers = cfg.usize_or(&["scan.workers"], 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let seed = cfg.u64_or(&["data.seed"], 7)?;
    let kind = cfg.str_or("scan.kind", "threshold")?;

    match kind.as_str() {
        "threshold" => {
            let damping = required_damping(cfg, grid)?;
            let energies = cfg.f64_list_opt("scan.energies")?.unwrap_or_else(|| {
                vec![PI, 1.5 * PI, 1.75 * PI, 1.875 * PI]
            });
            let horizon = cfg.f64_or(&["scan.horizon"], 4.0 * PI)?;
            let cfl = cfg.f64_or(&["scan.cfl", "cfl"], 0.5)?;
            let rows =
                pool.install(|| threshold_scan(grid, k, &damping, &energies, horizon, cfl))?;

            let mut w = String::from("e0_requested,e0_actual,rate,r_squared,stalled\r\n");
            for r in &rows {
                w.push_str(&format!(
                    "{},{},{},{},{}\r\n",
                    r.e0_requested, r.e0_actual, r.rate, r.r_squared, r.stalled
                ));
            }
            std::fs::write(out.file("scan.csv"), w)?;
            io::write_json(&out.file("scan.json"), "threshold-scan", &rows)?;
            write_plot_script(&out.file("scan.gp"), "scan.csv", "2:3", "E(0)", "decay rate", false)?;
        }
        "local-gain" => {
            let epsilons = cfg
                .f64_list_opt("scan.epsilons")?
                .unwrap_or_else(|| vec![4e-2, 2e-2, 1e-2, 5e-3]);
            let cutoff = cfg.usize_or(&["data.mode_cutoff"], 8)?;
            let default_omega = Interval::new(-PI / 2.0, PI / 2.0).expect("constant interval");
            let params = local_params(cfg, default_omega)?;
            let ctx = params.build_context(grid)?;
            let p = SpherePoint::axis(k);

            let rows: Result<Vec<serde_json::Value>, Error> = pool.install(|| {
                epsilons
                    .par_iter()
                    .map(|&eps| {
                        let u0 = random_state_near(grid, &p, seed, cutoff, eps)?;
                        let o = local_null_control_in(&ctx, &u0, &p, &params)?;
                        let step1 = o.iterates.first().map(|r| r.residual);
                        let second = o.iterates.get(1).map(|r| r.residual);
                        Ok(json!({
                            "epsilon": eps,
                            "residual_step1": step1,
                            "residual_step2": second,
                            "iterations": o.iterates.len(),
                            "residual_final": o.residual,
                        }))
                    })
                    .collect()
            });
            let rows = rows?;

            let mut w =
                String::from("epsilon,residual_step1,residual_step2,iterations,residual_final\r\n");
            for r in &rows {
                let cell = |name: &str| match &r[name] {
                    serde_json::Value::Null => String::new(),
                    v => v.to_string(),
                };
                w.push_str(&format!(
                    "{},{},{},{},{}\r\n",
                    r["epsilon"],
                    cell("residual_step1"),
                    cell("residual_step2"),
                    r["iterations"],
                    r["residual_final"]
                ));
            }
            std::fs::write(out.file("scan.csv"), w)?;
            write_json_value(&out.file("scan.json"), "local-gain-scan", &json!(rows))?;
            write_plot_script(
                &out.file("scan.gp"),
                "scan.csv",
                "1:2",
                "epsilon",
                "first residual",
                true,
            )?;
        }
        other => {
            return Err(field_err(
                "scan.kind",
                format!("expected threshold or local-gain, got `{other}`"),
            )
            .into())
        }
    }

    out.write_manifest("scan", cfg, Some(seed), Some((grid.n(), k)))?;
    Ok(())
}
