//! Steering small-energy states exactly onto a constant equilibrium (p, 0),
//! and between two nearby states, by iterating linear exact controls
//! against the nonlinear solver.
//!
//! The loop is a fixed-point scheme. Run the wave-map solver with the
//! current force, measure the terminal miss from (p, 0), synthesize the
//! mode-space control that would cancel that miss if the dynamics were the
//! flat wave equation, project it off the normal direction at p, add it to
//! the force, repeat. Every error the linear model makes — the quadratic
//! geometric terms, the tangent projection of the applied force, the
//! force-insertion quadrature of the stepper — is linear or better in the
//! residual it acts on, so the map contracts with a factor that shrinks
//! with the data size, and the residual floor is set by the solve quality
//! rather than the model.
//!
//! Normal components are never forced: the force increments are projected
//! onto p-perp and the solver projects onto phi-perp at application time.
//! The components of the miss along p are slaved quadratically to the
//! tangential ones through the unit-length constraint, so they converge
//! without being commanded.

use crate::error::{Error, Result};
use crate::evolver::{evolve, ControlField, EvolveParams};
use crate::grid::{deficit_from_equilibrium, GridState, Interval};
use crate::hum::{GramianReport, HumContext, HumProblem};
use crate::linear_wave::Dispersion;
use crate::sphere::SpherePoint;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::time::Instant;

pub const DEFAULT_TOL_LOCAL: f64 = 1e-8;
pub const CONTRACTION_LIMIT: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct LocalLoopParams {
    pub omega: Interval,
    pub t_horizon: f64,
    /// Mode cutoff of the synthesis; `None` means the full band n/2, so the
    /// loop can cancel even the high-mode content its own masked forces
    /// scatter into.
    pub n_max: Option<usize>,
    pub cfl: f64,
    pub tol_local: f64,
    pub max_iter: usize,
    pub contraction_limit: f64,
}

impl LocalLoopParams {
    pub fn new(omega: Interval) -> Self {
        Self {
            omega,
            t_horizon: 2.0 * PI,
            n_max: None,
            cfl: 0.5,
            tol_local: DEFAULT_TOL_LOCAL,
            max_iter: 20,
            contraction_limit: CONTRACTION_LIMIT,
        }
    }

    fn lattice(&self, grid: crate::grid::Grid1D) -> (usize, f64) {
        let steps = (self.t_horizon / (self.cfl * grid.dx()) - 1e-12).ceil() as usize;
        (steps, self.t_horizon / steps as f64)
    }

    /// The synthesis context every iterate (and every caller on the same
    /// geometry) can share: one Gramian factorization serves them all.
    pub fn build_context(&self, grid: crate::grid::Grid1D) -> Result<HumContext> {
        let (_, dt) = self.lattice(grid);
        let n_max = self.n_max.unwrap_or(grid.n() / 2);
        HumContext::new(HumProblem::new(
            grid,
            self.omega,
            self.t_horizon,
            n_max,
            Dispersion::SchemeMatched { dt },
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    /// Number of corrections already applied when the residual was measured.
    pub k: usize,
    /// H^1 x L^2 distance of the terminal state from (p, 0).
    pub residual: f64,
    /// L^inf-in-time L^2-in-space size of the correction computed from this
    /// residual (zero on the final, converged row).
    pub correction_norm: f64,
    /// residual_k / residual_{k-1}.
    pub contraction: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct LocalControlOutcome {
    /// Accumulated force, sampled on the solver's own time lattice.
    pub control: ControlField,
    pub iterates: Vec<IterateRecord>,
    pub residual: f64,
    pub gramian: GramianReport,
}

pub fn local_null_control(
    s0: &GridState,
    p: &SpherePoint,
    params: &LocalLoopParams,
) -> Result<LocalControlOutcome> {
    let ctx = params.build_context(s0.grid)?;
    local_null_control_in(&ctx, s0, p, params)
}

/// Same loop with a caller-provided synthesis context (must match the grid,
/// omega and horizon in `params`).
pub fn local_null_control_in(
    ctx: &HumContext,
    s0: &GridState,
    p: &SpherePoint,
    params: &LocalLoopParams,
) -> Result<LocalControlOutcome> {
    let grid = s0.grid;
    let m = s0.components();
    if p.coords().len() != m {
        return Err(Error::InvalidConfig(format!(
            "equilibrium lives on S^{} but the state maps to S^{}",
            p.k(),
            m - 1
        )));
    }
    if ctx.problem.grid != grid
        || (ctx.problem.t_horizon - params.t_horizon).abs() > 1e-12
        || ctx.problem.omega != params.omega
    {
        return Err(Error::InvalidConfig(
            "synthesis context does not match the loop parameters".into(),
        ));
    }
    let (steps, dt) = params.lattice(grid);
    let run_params = EvolveParams::new(params.t_horizon)
        .with_cfl(params.cfl)
        .with_record_every(usize::MAX)
        .without_states();

    let mut force = ControlField::zero(grid, m, 0.0, dt, steps);
    force.omega = Some(params.omega);
    let mut iterates: Vec<IterateRecord> = Vec::new();
    let mut slow_steps = 0usize;
    let mut prev_ratio = f64::NAN;

    for k in 0..=params.max_iter {
        let clock = Instant::now();
        let out = evolve(s0, &run_params, None, Some(&force))?;
        debug_assert_eq!(out.steps, steps);
        let residual = out.final_state.h1_l2_distance(p);
        let contraction = iterates.last().map(|r| residual / r.residual);

        if residual <= params.tol_local {
            iterates.push(IterateRecord {
                k,
                residual,
                correction_norm: 0.0,
                contraction,
                wall_seconds: clock.elapsed().as_secs_f64(),
            });
            return Ok(LocalControlOutcome {
                control: force,
                iterates,
                residual,
                gramian: ctx.report.clone(),
            });
        }
        if let Some(c) = contraction {
            if c > params.contraction_limit {
                slow_steps += 1;
                if slow_steps >= 2 {
                    return Err(Error::NoContraction { iterate: k, prev_ratio, ratio: c });
                }
                prev_ratio = c;
            }
        }
        if k == params.max_iter {
            return Err(Error::InvalidConfig(format!(
                "control loop used all {} corrections and still sits at residual {residual:.3e} \
                 (tolerance {:.1e})",
                params.max_iter, params.tol_local
            )));
        }

        // Correction: the linear control that would cancel the measured miss,
        // synthesized per ambient component from rest.
        let deficit = deficit_from_equilibrium(&out.final_state, p);
        let mut correction = ControlField::zero(grid, m, 0.0, dt, steps);
        for c in 0..m {
            let (datum, _) = ctx.analyze_pair(&deficit.component(c))?;
            let hc = ctx.control_for_deficit(&(-&datum), dt)?;
            for i in 0..=steps {
                let src = hc.field.row(i);
                let dst = correction.row_mut(i);
                for j in 0..grid.n() {
                    dst[j * m + c] = src[j];
                }
            }
        }
        // Keep the force increment tangent at the equilibrium.
        for i in 0..=steps {
            let row = correction.row_mut(i);
            for j in 0..grid.n() {
                let v = &mut row[j * m..(j + 1) * m];
                let along: f64 = v.iter().zip(p.coords()).map(|(a, b)| a * b).sum();
                for (vc, pc) in v.iter_mut().zip(p.coords()) {
                    *vc -= along * pc;
                }
            }
        }
        let correction_norm = correction.norm_linf_l2();
        correction.omega = Some(params.omega);
        force.add_scaled(&correction, 1.0)?;

        iterates.push(IterateRecord {
            k,
            residual,
            correction_norm,
            contraction,
            wall_seconds: clock.elapsed().as_secs_f64(),
        });
    }
    unreachable!("loop exits by return");
}

#[derive(Debug)]
pub struct ExactControlOutcome {
    /// Force on [0, T] taking u0 to (p, 0).
    pub leg_out: ControlField,
    /// Force on [T, 2T] taking (p, 0) to u1: the time reversal of the force
    /// that steers the time-reversed u1 to (p, 0).
    pub leg_back: ControlField,
    pub outward: LocalControlOutcome,
    pub backward: LocalControlOutcome,
    /// Miss at the junction (p, 0) in the verification replay.
    pub midpoint_residual: f64,
    /// Terminal gap from u1 after replaying both legs end to end.
    pub replay_error: f64,
}

/// Steer u0 to u1 in time 2T through the equilibrium (p, 0).
///
/// Both halves are null controls: the second leg is found by steering the
/// time reversal of u1 onto (p, 0) and replaying that force backwards,
/// which the time-symmetric stepper follows up to a defect cubic in the
/// amplitude. The whole composite is then replayed through the solver and
/// rejected if it misses u1 by more than `10 * tol_local`.
pub fn local_exact_control(
    u0: &GridState,
    u1: &GridState,
    p: &SpherePoint,
    params: &LocalLoopParams,
) -> Result<ExactControlOutcome> {
    let ctx = params.build_context(u0.grid)?;
    local_exact_control_in(&ctx, u0, u1, p, params)
}

/// Same composition with a caller-provided synthesis context.
pub fn local_exact_control_in(
    ctx: &HumContext,
    u0: &GridState,
    u1: &GridState,
    p: &SpherePoint,
    params: &LocalLoopParams,
) -> Result<ExactControlOutcome> {
    let outward = local_null_control_in(ctx, u0, p, params)?;
    let backward = local_null_control_in(ctx, &u1.time_reversed(), p, params)?;
    let leg_back = backward.control.reversed_in_time(params.t_horizon);

    let run_params = EvolveParams::new(params.t_horizon)
        .with_cfl(params.cfl)
        .with_record_every(usize::MAX)
        .without_states();
    let mid = evolve(u0, &run_params, None, Some(&outward.control))?.final_state;
    let midpoint_residual = mid.h1_l2_distance(p);
    let leg_back_local = backward.control.reversed_in_time(0.0);
    let end = evolve(&mid, &run_params, None, Some(&leg_back_local))?.final_state;
    let replay_error = end.h1_l2_gap(u1);
    let tol = 10.0 * params.tol_local;
    if replay_error > tol {
        return Err(Error::ReplayMismatch { error: replay_error, tol });
    }
    let leg_out = outward.control.clone();
    Ok(ExactControlOutcome {
        leg_out,
        leg_back,
        outward,
        backward,
        midpoint_residual,
        replay_error,
    })
}

#[derive(Debug, Clone)]
pub struct EpsilonAttempt {
    pub epsilon: f64,
    pub converged: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct EpsilonProbe {
    /// Largest probed size at which every seed converged.
    pub epsilon_tilde: f64,
    pub attempts: Vec<EpsilonAttempt>,
}

/// Bisect for the size threshold of the convergence basin: the largest
/// perturbation scale (in H^1 x L^2 around p) at which the loop still
/// converges for every seed in the panel.
pub fn epsilon_tilde_probe(
    grid: crate::grid::Grid1D,
    p: &SpherePoint,
    params: &LocalLoopParams,
    seeds: &[u64],
    mode_cutoff: usize,
    mut lo: f64,
    mut hi: f64,
    rounds: usize,
) -> Result<EpsilonProbe> {
    if !(0.0 < lo && lo < hi) || seeds.is_empty() {
        return Err(Error::InvalidConfig("need 0 < lo < hi and at least one seed".into()));
    }
    let ctx = params.build_context(grid)?;
    let mut attempts = Vec::new();
    let try_eps = |eps: f64, attempts: &mut Vec<EpsilonAttempt>| -> Result<bool> {
        let converged = seeds
            .par_iter()
            .map(|&seed| {
                let s0 = crate::data::random_state_near(grid, p, seed, mode_cutoff, eps)?;
                Ok(local_null_control_in(&ctx, &s0, p, params).is_ok())
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .filter(|&ok| ok)
            .count();
        attempts.push(EpsilonAttempt { epsilon: eps, converged, seeds: seeds.len() });
        Ok(converged == seeds.len())
    };

    if !try_eps(lo, &mut attempts)? {
        return Err(Error::InvalidConfig(format!(
            "even the smallest probed size {lo} fails to converge"
        )));
    }
    if try_eps(hi, &mut attempts)? {
        return Ok(EpsilonProbe { epsilon_tilde: hi, attempts });
    }
    for _ in 0..rounds {
        let mid = (lo * hi).sqrt();
        if try_eps(mid, &mut attempts)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonProbe { epsilon_tilde: lo, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;
    use crate::grid::Grid1D;

    fn half_circle() -> Interval {
        Interval::new(-PI / 2.0, PI / 2.0).unwrap()
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s0 = GridState::constant(grid, &p);
        let out = local_null_control(&s0, &p, &LocalLoopParams::new(half_circle())).unwrap();
        assert_eq!(out.iterates.len(), 1);
        assert!(out.residual < 1e-12, "equilibrium drifted: {:.3e}", out.residual);
        assert!(out.control.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_data_converge_quickly() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s0 = data::random_state_near(grid, &p, 7, 3, 5e-3).unwrap();
        let params = LocalLoopParams::new(half_circle());
        let out = local_null_control(&s0, &p, &params).unwrap();
        assert!(out.residual <= params.tol_local);
        let corrections = out.iterates.len() - 1;
        assert!(corrections <= 10, "needed {corrections} corrections");
        let first_ratio = out.iterates[1].contraction.unwrap();
        assert!(first_ratio <= 0.5, "weak first contraction: {first_ratio}");
    }

    /// Every correction the loop requests is bounded by the certified gain
    /// of the synthesis map times the residual that requested it.
    #[test]
    fn corrections_are_bounded_by_the_residual_ledger() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s0 = data::random_state_near(grid, &p, 11, 3, 8e-3).unwrap();
        let params = LocalLoopParams::new(half_circle());
        let ctx = params.build_context(grid).unwrap();
        let (_, dt) = params.lattice(grid);
        let gain = crate::hum::control_cost_report(&ctx, dt, 4, 3).unwrap().certified_gain;
        let out = local_null_control_in(&ctx, &s0, &p, &params).unwrap();
        for row in &out.iterates {
            // sqrt(m) because the certified bound is per ambient component.
            let bound = gain * row.residual * (s0.components() as f64).sqrt();
            assert!(
                row.correction_norm <= bound * (1.0 + 1e-9),
                "correction {:.3e} exceeds ledger bound {:.3e} at k={}",
                row.correction_norm,
                bound,
                row.k
            );
        }
    }

    #[test]
    fn exact_control_connects_two_states() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let u0 = data::random_state_near(grid, &p, 21, 3, 5e-3).unwrap();
        let u1 = data::random_state_near(grid, &p, 22, 3, 5e-3).unwrap();
        let params = LocalLoopParams::new(half_circle());
        let out = local_exact_control(&u0, &u1, &p, &params).unwrap();
        assert!(out.midpoint_residual <= params.tol_local);
        assert!(
            out.replay_error <= 10.0 * params.tol_local,
            "replay error {:.3e}",
            out.replay_error
        );
        assert!((out.leg_back.t0 - params.t_horizon).abs() < 1e-12);
    }

    #[test]
    fn starved_control_region_fails_loudly() {
        // An arc containing one or two grid nodes cannot observe the mode
        // space; the Gramian factorization must refuse, not limp.
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s0 = data::random_state_near(grid, &p, 5, 3, 5e-3).unwrap();
        let mut params = LocalLoopParams::new(Interval::new(1.0, 1.15).unwrap());
        params.max_iter = 3;
        match local_null_control(&s0, &p, &params) {
            Err(Error::GramianIllConditioned { .. }) => {}
            other => panic!("expected an ill-conditioned refusal, got {other:?}"),
        }
    }

    #[test]
    fn iteration_budget_exhaustion_is_an_error() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s0 = data::random_state_near(grid, &p, 9, 3, 1e-2).unwrap();
        let mut params = LocalLoopParams::new(half_circle());
        params.max_iter = 1; // one correction cannot reach 1e-8 from 1e-2
        match local_null_control(&s0, &p, &params) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("corrections")),
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn epsilon_probe_brackets_the_basin() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let params = LocalLoopParams::new(half_circle());
        let probe =
            epsilon_tilde_probe(grid, &p, &params, &[1, 2], 3, 2e-3, 0.9, 2).unwrap();
        assert!(probe.epsilon_tilde >= 2e-3);
        assert!(probe.attempts.len() >= 2);
        for a in &probe.attempts {
            assert_eq!(a.seeds, 2);
        }
    }
}
