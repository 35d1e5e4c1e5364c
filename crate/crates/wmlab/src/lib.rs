//! Numerical laboratory for (1+1)-dimensional wave maps into spheres:
//! damped evolution, internal (distributed) control synthesis by duality,
//! an iterative exact-control loop near equilibria, and the damp-then-steer
//! pipeline that moves arbitrary below-threshold states between each other.
//!
//! Conventions, fixed once here:
//!
//! * space is the circle [0, 2pi) with periodic wrap; time steps are
//!   dt = cfl * dx;
//! * the d'Alembertian is `box = -d_tt + d_xx`, so the wave-map equation
//!   `box phi = (|phi_t|^2 - |phi_x|^2) phi` reads, solved for phi_tt,
//!   `phi_tt = phi_xx - (|phi_t|^2 - |phi_x|^2) phi`, and damping/forcing
//!   enter as `... - a(x) phi_t - 1_omega f` on the right-hand side;
//! * energy is E = int |phi_t|^2 + |phi_x|^2 dx, conserved when undamped,
//!   and E(T) - E(0) = -2 int_0^T int a |phi_t|^2 when damped.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evolver;
pub mod grid;
pub mod hum;
pub mod io;
pub mod linear_wave;
pub mod local_control;
pub mod pipeline;
pub mod sphere;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
