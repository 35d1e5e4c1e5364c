//! The linearized problem: y_tt = y_xx - a(x) y_t - 1_omega g on the circle.
//!
//! Two views of the free flow live here side by side and must never be
//! conflated:
//!
//! * [`Dispersion::Continuum`] — every Fourier mode m rotates at frequency
//!   m. This is the PDE itself, the reference for oracle tests and for
//!   control synthesis meant to be read against the continuum.
//! * [`Dispersion::SchemeMatched`] — mode m rotates at the Verlet frequency
//!   Omega_m = (2/dt) asin(dt sin(m dx)/(2 dx)), with the velocity living on
//!   an ellipse of aspect s_m = omega_tilde_m cos(Omega_m dt / 2). With this
//!   pair the per-mode rotation reproduces the discrete evolution *exactly*
//!   (the Verlet velocity is the centered difference of positions), which
//!   is what lets mode-space control synthesis hit finite-difference targets
//!   at the solver's own resolution instead of fighting an O(1) phase error
//!   at high modes.

use crate::error::{Error, Result};
use crate::evolver::{ControlField, DampingProfile, EvolveParams};
use crate::grid::{laplacian_wide, Grid1D, ScalarWaveState};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// sin(m dx)/dx: the frequency the wide Laplacian assigns to mode m.
pub fn omega_tilde(m: usize, dx: f64) -> f64 {
    (m as f64 * dx).sin() / dx
}

/// Which free flow a mode-space computation should model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispersion {
    Continuum,
    SchemeMatched { dt: f64 },
}

impl Dispersion {
    /// (Omega, s) for mode m: position phase advances at Omega, and the
    /// conserved mode orbit is q = A cos(Omega t + psi), v = -A s sin(...).
    /// A zero pair means the mode is secular: q ramps linearly with v.
    pub fn frequency_pair(&self, m: usize, dx: f64) -> (f64, f64) {
        match *self {
            Dispersion::Continuum => (m as f64, m as f64),
            Dispersion::SchemeMatched { dt } => {
                let wt = omega_tilde(m, dx);
                if wt.abs() < 1e-13 {
                    (0.0, 0.0)
                } else {
                    let half = 0.5 * dt * wt;
                    debug_assert!(half.abs() < 1.0, "time step outside the stability region");
                    let omega = 2.0 / dt * half.asin();
                    let s = wt * (1.0 - half * half).sqrt();
                    (omega, s)
                }
            }
        }
    }
}

/// Rotate one mode's (position, velocity) pair forward by time t.
pub fn rotate_mode(q: &mut Complex64, p: &mut Complex64, t: f64, omega: f64, s: f64) {
    if s == 0.0 {
        *q += t * *p;
        return;
    }
    let (sin, cos) = (omega * t).sin_cos();
    let q1 = *q * cos + *p * (sin / s);
    let p1 = -*q * (s * sin) + *p * cos;
    *q = q1;
    *p = p1;
}

/// Half-spectrum Fourier data of a single-component (y, y_t) pair:
/// y(x) = Re sum_{m=0}^{n/2} c_m e^{imx} with the conjugate mirror implied.
#[derive(Debug, Clone)]
pub struct ModeCoeffs {
    pub n: usize,
    pub q: Vec<Complex64>,
    pub p: Vec<Complex64>,
}

fn fft_forward(y: &[f64]) -> Vec<Complex64> {
    let n = y.len();
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

fn fft_inverse_real(half: &[Complex64], n: usize) -> Vec<f64> {
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[0] = half[0];
    for m in 1..n / 2 {
        full[m] = half[m];
        full[n - m] = half[m].conj();
    }
    full[n / 2] = half[n / 2];
    FftPlanner::new().plan_fft_inverse(n).process(&mut full);
    full.iter().map(|c| c.re).collect()
}

impl ModeCoeffs {
    /// Requires a single-component state.
    pub fn analyze(state: &ScalarWaveState) -> Result<Self> {
        if state.m != 1 {
            return Err(Error::InvalidConfig(
                "mode analysis expects a single-component scalar state".into(),
            ));
        }
        let n = state.grid.n();
        let q = fft_forward(&state.y);
        let p = fft_forward(&state.y_t);
        Ok(Self { n, q: q[..=n / 2].to_vec(), p: p[..=n / 2].to_vec() })
    }

    pub fn synthesize(&self, grid: Grid1D) -> Result<ScalarWaveState> {
        if grid.n() != self.n {
            return Err(Error::InvalidConfig("mode data from a different grid".into()));
        }
        let y = fft_inverse_real(&self.q, self.n);
        let y_t = fft_inverse_real(&self.p, self.n);
        ScalarWaveState::new(grid, 1, y, y_t)
    }

    /// Rotate every mode forward by t under the given dispersion model.
    pub fn free_evolution(&self, t: f64, dx: f64, dispersion: Dispersion) -> Self {
        let mut out = self.clone();
        for m in 0..=self.n / 2 {
            let (omega, s) = dispersion.frequency_pair(m, dx);
            rotate_mode(&mut out.q[m], &mut out.p[m], t, omega, s);
        }
        out
    }

    /// Continuum energy int y_t^2 + y_x^2 dx of the represented pair.
    /// (Distinct from [`ScalarWaveState::e1_energy`], which uses the grid
    /// derivative; the two agree to O(dx^2) on band-limited data.)
    pub fn energy(&self) -> f64 {
        let mut e = 0.0;
        for m in 0..=self.n / 2 {
            // Modes 0 < m < n/2 appear twice (conjugate mirror).
            let mult = if m == 0 || m == self.n / 2 { 1.0 } else { 2.0 };
            let w = m as f64;
            e += mult * (self.p[m].norm_sqr() + w * w * self.q[m].norm_sqr());
        }
        2.0 * PI * e
    }

    /// Fraction of the pair's energy carried by modes above `n_max`
    /// (position modes weighted by m as in the energy). Zero-energy data
    /// reports zero.
    pub fn energy_fraction_above(&self, n_max: usize) -> f64 {
        let total = self.energy();
        if total <= 0.0 {
            return 0.0;
        }
        let mut high = 0.0;
        for m in (n_max + 1)..=self.n / 2 {
            let mult = if m == self.n / 2 { 1.0 } else { 2.0 };
            let w = m as f64;
            high += mult * (self.p[m].norm_sqr() + w * w * self.q[m].norm_sqr());
        }
        2.0 * PI * high / total
    }
}

/// Closed-form free evolution of a (single-component) state: analyze,
/// rotate, synthesize. Exact for the chosen dispersion model.
pub fn free_evolution(
    state: &ScalarWaveState,
    t: f64,
    dispersion: Dispersion,
) -> Result<ScalarWaveState> {
    let modes = ModeCoeffs::analyze(state)?;
    modes
        .free_evolution(t, state.grid.dx(), dispersion)
        .synthesize(state.grid)
}

#[derive(Debug, Clone)]
pub struct LinearEvolveOutput {
    pub final_state: ScalarWaveState,
    /// (t, energy) at record times.
    pub energies: Vec<(f64, f64)>,
    pub dt: f64,
    pub steps: usize,
}

/// Verlet integration of the linear flow, sharing the wave-map solver's
/// stencil, step-size rule and damping/forcing insertion pattern (minus the
/// constraint machinery, which has no linear counterpart).
pub fn evolve_linear(
    s0: &ScalarWaveState,
    params: &EvolveParams,
    damping: Option<&DampingProfile>,
    forcing: Option<&ControlField>,
) -> Result<LinearEvolveOutput> {
    if let Some(d) = damping {
        if d.grid != s0.grid {
            return Err(Error::InvalidConfig("damping profile on a different grid".into()));
        }
    }
    if let Some(f) = forcing {
        if f.grid != s0.grid || f.m != s0.m {
            return Err(Error::InvalidConfig("control field shape mismatch".into()));
        }
    }
    if !(params.cfl > 0.0 && params.cfl <= 1.0) {
        return Err(Error::InvalidConfig(format!("cfl must lie in (0, 1], got {}", params.cfl)));
    }
    let n = s0.grid.n();
    let m = s0.m;
    let dx = s0.grid.dx();
    let (steps, dt) = if params.t_end == 0.0 {
        (0, 0.0)
    } else {
        let target = params.cfl * dx;
        let steps = (params.t_end / target - 1e-12).ceil().max(1.0) as usize;
        (steps, params.t_end / steps as f64)
    };

    let mask = forcing.and_then(|f| f.omega.map(|w| w.mask(&s0.grid)));
    let a = damping.map(|d| d.a.as_slice());
    let mut y = s0.y.clone();
    let mut v = s0.y_t.clone();
    let mut lap = vec![0.0; n * m];
    let mut g0 = vec![0.0; n * m];
    let mut g1 = vec![0.0; n * m];
    let mut vhalf = vec![0.0; n * m];

    let energy_of = |y: &[f64], v: &[f64]| {
        ScalarWaveState { grid: s0.grid, m, y: y.to_vec(), y_t: v.to_vec() }.e1_energy()
    };
    let mut energies = vec![(0.0, energy_of(&y, &v))];

    let apply_mask = |g: &mut [f64], mask: Option<&[bool]>| {
        if let Some(mask) = mask {
            for j in 0..n {
                if !mask[j] {
                    g[j * m..(j + 1) * m].fill(0.0);
                }
            }
        }
    };

    for step in 0..steps {
        let t = step as f64 * dt;
        if let Some(f) = forcing {
            f.sample_into(t, &mut g0);
            apply_mask(&mut g0, mask.as_deref());
        }
        laplacian_wide(&y, n, m, dx, &mut lap);
        let half = 0.5 * dt;
        for j in 0..n {
            for c in 0..m {
                let i = j * m + c;
                let mut acc = lap[i];
                if let Some(a) = a {
                    acc -= a[j] * v[i];
                }
                if forcing.is_some() {
                    acc -= g0[i];
                }
                vhalf[i] = v[i] + half * acc;
                y[i] += dt * vhalf[i];
            }
        }
        if let Some(f) = forcing {
            f.sample_into(t + dt, &mut g1);
            apply_mask(&mut g1, mask.as_deref());
        }
        laplacian_wide(&y, n, m, dx, &mut lap);
        for j in 0..n {
            let div = 1.0 + a.map_or(0.0, |a| half * a[j]);
            for c in 0..m {
                let i = j * m + c;
                let mut acc = lap[i];
                if forcing.is_some() {
                    acc -= g1[i];
                }
                v[i] = (vhalf[i] + half * acc) / div;
            }
        }
        if (step + 1) % params.record_every == 0 || step + 1 == steps {
            energies.push(((step + 1) as f64 * dt, energy_of(&y, &v)));
        }
    }

    Ok(LinearEvolveOutput {
        final_state: ScalarWaveState { grid: s0.grid, m, y, y_t: v },
        energies,
        dt,
        steps,
    })
}

#[derive(Debug, Clone)]
pub struct DecayProbeReport {
    /// Worst-case fraction of energy shed over the horizon, over all probes.
    pub min_fraction: f64,
    /// Exponential rate implied by the worst probe: E(T) <= e^{-2 gamma T} E(0).
    pub gamma: f64,
    pub t_horizon: f64,
    pub probes: usize,
}

/// Empirical damped-decay constant for the linear flow: run random probes
/// through the damped evolution and take the worst energy fraction shed.
/// A positive result certifies that the damping sees every probe within
/// the horizon.
pub fn decay_rate_damped(
    grid: Grid1D,
    damping: &DampingProfile,
    t_horizon: f64,
    probes: usize,
    mode_cutoff: usize,
    seed: u64,
) -> Result<DecayProbeReport> {
    if probes == 0 {
        return Err(Error::InvalidConfig("need at least one decay probe".into()));
    }
    if !(damping.max() > 0.0) {
        return Err(Error::InvalidConfig(
            "decay probe needs a nonvanishing damping profile".into(),
        ));
    }
    let mut min_fraction = f64::INFINITY;
    for i in 0..probes {
        let probe_seed = seed.wrapping_add(i as u64);
        let s0 = crate::data::random_scalar_wave(grid, probe_seed, mode_cutoff);
        let e0 = s0.e1_energy();
        if !(e0 > 1e-12) {
            return Err(Error::DegenerateProbe {
                seed: probe_seed,
                reason: format!("probe energy {e0} too small to measure decay"),
            });
        }
        let out = evolve_linear(
            &s0,
            &EvolveParams::new(t_horizon).with_record_every(usize::MAX).without_states(),
            Some(damping),
            None,
        )?;
        let et = out.final_state.e1_energy();
        if !et.is_finite() {
            return Err(Error::DegenerateProbe {
                seed: probe_seed,
                reason: "probe energy diverged".into(),
            });
        }
        min_fraction = min_fraction.min(1.0 - et / e0);
    }
    if !(min_fraction > 0.0) {
        return Err(Error::DegenerateProbe {
            seed,
            reason: format!("no decay over the horizon: worst fraction {min_fraction}"),
        });
    }
    let gamma = -(1.0 - min_fraction).ln() / (2.0 * t_horizon);
    Ok(DecayProbeReport { min_fraction, gamma, t_horizon, probes })
}
