//! Measured functionals of recorded trajectories: observability quotients,
//! windowed velocity norms, a smoothed-in-time inverse-derivative norm,
//! null-coordinate energies, the time-averaged map and its harmonic-map ODE
//! residual, and exponential decay fitting.
//!
//! Everything here is a pure function of stored data — no time stepping, no
//! hidden state — so re-running a diagnostic on the same trajectory is
//! bit-identical.

use crate::error::{Error, Result};
use crate::evolver::{DampingProfile, Trajectory};
use crate::grid::centered_diff;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Smooth plateau-with-ramps window in time.
///
/// Equal to 1 on [alpha, beta], supported on (alpha - tau, beta + tau),
/// with the standard exp-profiled smooth step on each ramp: the profile
/// mu(s) is 1 for s <= 1/2 and exp(1 - 1/(1 - r^2)) with r = 2s - 1 on
/// [1/2, 1], so both the plateau and the tails are met to infinite order.
#[derive(Debug, Clone, Copy)]
pub struct CutoffSpec {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

fn mu_profile(s: f64) -> f64 {
    let s = s.abs();
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let r = 2.0 * s - 1.0;
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

impl CutoffSpec {
    pub fn new(alpha: f64, beta: f64, tau: f64) -> Result<Self> {
        if !(alpha < beta) {
            return Err(Error::InvalidConfig(format!(
                "cutoff window [{alpha}, {beta}] is empty"
            )));
        }
        if !(0.0 < tau && tau < 1.0) {
            return Err(Error::InvalidConfig(format!("ramp width {tau} must lie in (0, 1)")));
        }
        Ok(Self { alpha, beta, tau })
    }

    /// The averaging window used for time-averaged maps: unit plateau well
    /// inside (0, 3 pi), ramps closing exactly at the ends.
    pub fn averaging_default() -> Self {
        Self { alpha: 0.9, beta: 3.0 * PI - 0.9, tau: 0.9 }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.alpha - self.tau, self.beta + self.tau)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t >= self.alpha && t <= self.beta {
            1.0
        } else if t > self.beta {
            // map [beta, beta+tau] onto the decaying half s in [1/2, 1]
            mu_profile(0.5 + 0.5 * (t - self.beta) / self.tau)
        } else {
            mu_profile(0.5 + 0.5 * (self.alpha - t) / self.tau)
        }
    }
}

/// Both sides of the internal observability inequality, measured on a run.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    /// Energy at the start of the stored trajectory.
    pub lhs: f64,
    /// int over the window of int a |phi_t|^2 dx dt.
    pub rhs: f64,
    /// rhs / lhs; zero at the harmonic-map obstruction (phi_t = 0) and for
    /// zero-energy data.
    pub ratio: f64,
    pub window: (f64, f64),
    /// Per-node L^2-in-time velocity norms over the window — the raw
    /// material for sup-in-x selections.
    pub per_x: Vec<f64>,
}

fn window_slice(traj: &Trajectory, window: (f64, f64)) -> Result<(usize, usize)> {
    let (t0, t1) = window;
    if traj.times.len() < 2 {
        return Err(Error::InvalidConfig("trajectory has fewer than two stored states".into()));
    }
    let have0 = *traj.times.first().unwrap();
    let have1 = *traj.times.last().unwrap();
    let slack = 1e-9 * (1.0 + t1.abs());
    if have0 > t0 + slack || have1 < t1 - slack {
        return Err(Error::WindowNotCovered { t0, t1, have0, have1 });
    }
    let k0 = traj.times.iter().position(|&t| t >= t0 - slack).unwrap();
    let k1 = traj.times.iter().rposition(|&t| t <= t1 + slack).unwrap();
    if k1 <= k0 {
        return Err(Error::WindowNotCovered { t0, t1, have0, have1 });
    }
    Ok((k0, k1))
}

/// Trapezoid accumulation of per-node, per-time integrands over a window.
/// `f(state, j)` is evaluated at every stored time; returns per-node
/// integrals int f dt.
fn trapezoid_per_node(
    traj: &Trajectory,
    range: (usize, usize),
    f: impl Fn(&crate::grid::GridState, usize) -> f64,
) -> Vec<f64> {
    let n = traj.states[0].grid.n();
    let mut acc = vec![0.0; n];
    let (k0, k1) = range;
    let mut prev: Vec<f64> = (0..n).map(|j| f(&traj.states[k0], j)).collect();
    for k in k0..k1 {
        let dt = traj.times[k + 1] - traj.times[k];
        let next: Vec<f64> = (0..n).map(|j| f(&traj.states[k + 1], j)).collect();
        for j in 0..n {
            acc[j] += 0.5 * dt * (prev[j] + next[j]);
        }
        prev = next;
    }
    acc
}

/// Measure E(0) against the damping observation integral over a window.
/// With per-step storage the rhs reproduces the evolver's dissipation
/// ledger (which accumulates twice this integral) to rounding.
pub fn observability_ratio(
    traj: &Trajectory,
    damping: &DampingProfile,
    window: (f64, f64),
) -> Result<ObservabilityReport> {
    let range = window_slice(traj, window)?;
    let s0 = &traj.states[0];
    if damping.grid != s0.grid {
        return Err(Error::InvalidConfig("damping profile lives on a different grid".into()));
    }
    let m = s0.components();
    let speed_sq = |s: &crate::grid::GridState, j: usize| -> f64 {
        s.phi_t[j * m..(j + 1) * m].iter().map(|v| v * v).sum()
    };
    let weighted = trapezoid_per_node(traj, range, |s, j| damping.a[j] * speed_sq(s, j));
    let plain = trapezoid_per_node(traj, range, speed_sq);
    let dx = s0.grid.dx();
    let rhs: f64 = weighted.iter().sum::<f64>() * dx;
    let lhs = s0.energy();
    let ratio = if lhs > 0.0 { rhs / lhs } else { 0.0 };
    Ok(ObservabilityReport {
        lhs,
        rhs,
        ratio,
        window,
        per_x: plain.iter().map(|v| v.sqrt()).collect(),
    })
}

/// Square of the sup-in-x L^2-in-time velocity norm over the window:
/// max_x int_window |phi_t(t, x)|^2 dt.
pub fn linf_l2_velocity(traj: &Trajectory, window: (f64, f64)) -> Result<f64> {
    let range = window_slice(traj, window)?;
    let m = traj.states[0].components();
    let per_node = trapezoid_per_node(traj, range, |s, j| {
        s.phi_t[j * m..(j + 1) * m].iter().map(|v| v * v).sum()
    });
    Ok(per_node.into_iter().fold(0.0, f64::max))
}

/// Uniformly sampled scalar time series.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.values.len().saturating_sub(1)) as f64
    }
}

/// Smoothed inverse-derivative norm in time: cut the signal off with `eta`,
/// zero-pad to four times the window, Fourier-transform, weight each bin by
/// (1 + lambda^2)^{-1/2}, and take the Parseval norm. The zero-padding
/// keeps the discrete frequencies dense enough that the analytic weight is
/// sampled faithfully; leakage is pinned by the single-frequency test.
pub fn hminus1_window_norm(series: &TimeSeries, eta: &CutoffSpec) -> Result<f64> {
    let (s0, s1) = eta.support();
    let len = series.values.len();
    if len < 2 || series.dt <= 0.0 {
        return Err(Error::InvalidConfig("series needs at least two uniform samples".into()));
    }
    let slack = 1e-9 * (1.0 + s1.abs());
    if series.t0 > s0 + slack || series.t_end() < s1 - slack {
        return Err(Error::WindowNotCovered {
            t0: s0,
            t1: s1,
            have0: series.t0,
            have1: series.t_end(),
        });
    }
    let padded = (4 * len).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); padded];
    for (k, &v) in series.values.iter().enumerate() {
        let t = series.t0 + k as f64 * series.dt;
        buf[k] = Complex64::new(v * eta.eval(t), 0.0);
    }
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let dlambda = 2.0 * PI / (padded as f64 * series.dt);
    let mut total = 0.0;
    for (j, c) in buf.iter().enumerate() {
        let f = if j <= padded / 2 { j as f64 } else { j as f64 - padded as f64 };
        let lambda = f * dlambda;
        total += c.norm_sqr() / (1.0 + lambda * lambda);
    }
    Ok((total * series.dt / padded as f64).sqrt())
}

/// Plain L^2-in-time norm of the cut-off signal, for calibrating the
/// weighted norm against.
pub fn windowed_l2_norm(series: &TimeSeries, eta: &CutoffSpec) -> f64 {
    let mut total = 0.0;
    for (k, &v) in series.values.iter().enumerate() {
        let t = series.t0 + k as f64 * series.dt;
        let w = v * eta.eval(t);
        total += w * w;
    }
    (total * series.dt).sqrt()
}

/// The time-averaged map and its harmonic-map ODE residual.
#[derive(Debug, Clone)]
pub struct AveragedMap {
    /// Spatial curve phi~(x_j), components interleaved.
    pub curve: Vec<f64>,
    pub m: usize,
    /// sup_x |phi~_xx + (E(0)/2pi) phi~| with the three-point second
    /// difference.
    pub residual: f64,
}

/// Average the trajectory against the (discretely normalized) time cutoff
/// psi and measure how far the resulting curve is from solving the
/// constant-coefficient harmonic-map ODE at energy E(0).
pub fn averaged_map_residual(traj: &Trajectory, psi: &CutoffSpec) -> Result<AveragedMap> {
    let (s0sup, s1sup) = psi.support();
    let range = window_slice(traj, (s0sup, s1sup))?;
    let (k0, k1) = range;
    let s0 = &traj.states[0];
    let n = s0.grid.n();
    let m = s0.components();
    let dx = s0.grid.dx();

    // Trapezoid weights against psi, normalized to a discrete partition of
    // unity so a time-constant trajectory is reproduced exactly.
    let mut weights = vec![0.0; k1 - k0 + 1];
    for k in k0..k1 {
        let dt = traj.times[k + 1] - traj.times[k];
        weights[k - k0] += 0.5 * dt * psi.eval(traj.times[k]);
        weights[k + 1 - k0] += 0.5 * dt * psi.eval(traj.times[k + 1]);
    }
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return Err(Error::InvalidConfig("cutoff has no mass on the stored times".into()));
    }
    let mut curve = vec![0.0; n * m];
    for (k, w) in weights.iter().enumerate() {
        let state = &traj.states[k0 + k];
        let w = w / mass;
        for (c, p) in curve.iter_mut().zip(&state.phi) {
            *c += w * p;
        }
    }

    let coeff = s0.energy() / (2.0 * PI);
    let mut residual = 0.0f64;
    for j in 0..n {
        let (jm, jp) = ((j + n - 1) % n, (j + 1) % n);
        for c in 0..m {
            let second = (curve[jp * m + c] - 2.0 * curve[j * m + c] + curve[jm * m + c])
                / (dx * dx);
            residual = residual.max((second + coeff * curve[j * m + c]).abs());
        }
    }
    Ok(AveragedMap { curve, m, residual })
}

/// Quantitative null-coordinate energy measurements, each normalized by
/// E(0) so they are invariant under energy scaling.
#[derive(Debug, Clone)]
pub struct NullEnergyReport {
    /// max_t E(t) / E(0); 1 up to scheme drift for undamped runs.
    pub sup_energy_ratio: f64,
    /// int int |phi_u|^2 dx dt / E(0) and the v analogue.
    pub l2_u_sq: f64,
    pub l2_v_sq: f64,
    /// max_x int |phi_u|^2 dt / E(0) and the v analogue.
    pub linf_l2_u_sq: f64,
    pub linf_l2_v_sq: f64,
    /// || phi_u . phi_v ||_{L^2_{t,x}} / E(0).
    pub interaction: f64,
    /// Time range the measurements cover.
    pub span: (f64, f64),
}

/// Energies along the characteristic directions u = x + t, v = t - x:
/// phi_u = (phi_t + phi_x)/2, phi_v = (phi_t - phi_x)/2.
pub fn null_coordinate_energies(traj: &Trajectory) -> Result<NullEnergyReport> {
    if traj.states.len() < 2 {
        return Err(Error::InvalidConfig("trajectory has fewer than two stored states".into()));
    }
    let s0 = &traj.states[0];
    let n = s0.grid.n();
    let m = s0.components();
    let dx = s0.grid.dx();
    let e0 = s0.energy();
    let span = (*traj.times.first().unwrap(), *traj.times.last().unwrap());
    if e0 <= 0.0 {
        return Ok(NullEnergyReport {
            sup_energy_ratio: 0.0,
            l2_u_sq: 0.0,
            l2_v_sq: 0.0,
            linf_l2_u_sq: 0.0,
            linf_l2_v_sq: 0.0,
            interaction: 0.0,
            span,
        });
    }

    let mut sup_energy = 0.0f64;
    let mut per_node_u = vec![0.0; n];
    let mut per_node_v = vec![0.0; n];
    let mut inter_sq = 0.0;
    let mut dphi = vec![0.0; n * m];
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None; // |u|^2, |v|^2, (u.v)^2
    let mut prev_t = span.0;
    for (k, state) in traj.states.iter().enumerate() {
        sup_energy = sup_energy.max(state.energy());
        centered_diff(&state.phi, n, m, dx, &mut dphi);
        let mut usq = vec![0.0; n];
        let mut vsq = vec![0.0; n];
        let mut uvsq = vec![0.0; n];
        for j in 0..n {
            let mut uu = 0.0;
            let mut vv = 0.0;
            let mut uv = 0.0;
            for c in 0..m {
                let pu = 0.5 * (state.phi_t[j * m + c] + dphi[j * m + c]);
                let pv = 0.5 * (state.phi_t[j * m + c] - dphi[j * m + c]);
                uu += pu * pu;
                vv += pv * pv;
                uv += pu * pv;
            }
            usq[j] = uu;
            vsq[j] = vv;
            uvsq[j] = uv * uv;
        }
        if let Some((pu, pv, puv)) = prev {
            let dt = traj.times[k] - prev_t;
            for j in 0..n {
                per_node_u[j] += 0.5 * dt * (pu[j] + usq[j]);
                per_node_v[j] += 0.5 * dt * (pv[j] + vsq[j]);
                inter_sq += 0.5 * dt * (puv[j] + uvsq[j]) * dx;
            }
        }
        prev_t = traj.times[k];
        prev = Some((usq, vsq, uvsq));
    }
    let l2_u_sq: f64 = per_node_u.iter().sum::<f64>() * dx / e0;
    let l2_v_sq: f64 = per_node_v.iter().sum::<f64>() * dx / e0;
    Ok(NullEnergyReport {
        sup_energy_ratio: sup_energy / e0,
        l2_u_sq,
        l2_v_sq,
        linf_l2_u_sq: per_node_u.into_iter().fold(0.0, f64::max) / e0,
        linf_l2_v_sq: per_node_v.into_iter().fold(0.0, f64::max) / e0,
        interaction: inter_sq.sqrt() / e0,
        span,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// E(t) ~ amplitude * exp(-rate * t) over the fitted tail.
    pub amplitude: f64,
    pub rate: f64,
    pub r_squared: f64,
}

/// Least-squares fit of log E against t over the tail half of the series.
/// The head is excluded because early transients (before the damped modes
/// organize) are not part of the asymptotic rate.
pub fn fit_exponential_decay(series: &[(f64, f64)]) -> Result<DecayFit> {
    if series.len() < 8 {
        return Err(Error::InvalidConfig(format!(
            "decay fit needs at least 8 samples, got {}",
            series.len()
        )));
    }
    for &(t, e) in series {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::NonPositiveEnergy { t, energy: e });
        }
    }
    let tail = &series[series.len() / 2..];
    let n = tail.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &(t, e) in tail {
        let y = e.ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let denom = n * stt - st * st;
    if denom.abs() < 1e-30 {
        return Err(Error::InvalidConfig("degenerate time samples in decay fit".into()));
    }
    let mean_y = sy / n;
    let mut ss_tot = 0.0;
    for &(_, e) in tail {
        let d = e.ln() - mean_y;
        ss_tot += d * d;
    }
    // Log-values constant to rounding: the honest answer is a flat fit, not
    // the rounding-noise slope a least squares would amplify.
    let flat_floor = 1e-14 * mean_y.abs().max(1.0);
    if ss_tot <= n * flat_floor * flat_floor {
        return Ok(DecayFit { amplitude: mean_y.exp(), rate: 0.0, r_squared: 1.0 });
    }
    let slope = (n * sty - st * sy) / denom;
    let intercept = (sy - slope * st) / n;
    let mut ss_res = 0.0;
    for &(t, e) in tail {
        let d = e.ln() - (intercept + slope * t);
        ss_res += d * d;
    }
    Ok(DecayFit { amplitude: intercept.exp(), rate: -slope, r_squared: 1.0 - ss_res / ss_tot })
}
