//! Periodic spatial grid on [0, 2pi), the two state types that live on it
//! (sphere-valued wave-map states and flat scalar/vector wave states), and the
//! discrete norms and energies used everywhere else.
//!
//! All first derivatives are centered differences. The evolver's Laplacian is
//! the centered difference applied twice, `(u[j+2] - 2u[j] + u[j-2])/(4 dx^2)`,
//! so that summation by parts `sum D_c u . D_c v = -sum (D_c^2 u) . v` holds
//! exactly on the periodic grid and the semi-discrete energy bookkeeping
//! closes without an O(dx^2) remainder.

use crate::error::{Error, Result};
use crate::sphere::{self, SpherePoint};
use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Uniform periodic grid with n nodes x_j = j * dx, dx = 2pi/n.
///
/// n must be a power of two (>= 64) so every state has an exact FFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid1D {
    n: usize,
}

impl Grid1D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 64 || !n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "grid size must be a power of two >= 64, got {n}"
            )));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.x(j))
    }

    /// Grid refined by a factor of two (for convergence studies).
    pub fn refined(&self) -> Result<Self> {
        Grid1D::new(self.n * 2)
    }
}

/// A closed arc [lo, hi] of the circle, possibly wrapping through 2pi.
///
/// `lo` may be negative (e.g. (-pi/2, pi/2)); containment is modular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || hi - lo > TWO_PI + 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "interval must satisfy lo < hi <= lo + 2pi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn full_circle() -> Self {
        Self { lo: 0.0, hi: TWO_PI }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        if self.length() >= TWO_PI {
            return true;
        }
        let mut d = (x - self.lo) % TWO_PI;
        if d < 0.0 {
            d += TWO_PI;
        }
        d <= self.length() + 1e-14
    }

    /// Indicator sampled at the grid nodes.
    pub fn mask(&self, grid: &Grid1D) -> Vec<bool> {
        (0..grid.n()).map(|j| self.contains(grid.x(j))).collect()
    }
}

/// Centered first difference of a (possibly vector-valued) periodic field.
/// `u` is flattened row-major: node j, component c at `u[j*m + c]`.
pub fn centered_diff(u: &[f64], n: usize, m: usize, dx: f64, out: &mut [f64]) {
    debug_assert_eq!(u.len(), n * m);
    debug_assert_eq!(out.len(), n * m);
    let inv = 1.0 / (2.0 * dx);
    for j in 0..n {
        let jp = if j + 1 == n { 0 } else { j + 1 };
        let jm = if j == 0 { n - 1 } else { j - 1 };
        for c in 0..m {
            out[j * m + c] = (u[jp * m + c] - u[jm * m + c]) * inv;
        }
    }
}

/// The wide five-point Laplacian D_c(D_c u) matching `centered_diff`.
pub fn laplacian_wide(u: &[f64], n: usize, m: usize, dx: f64, out: &mut [f64]) {
    debug_assert_eq!(u.len(), n * m);
    debug_assert_eq!(out.len(), n * m);
    let inv = 1.0 / (4.0 * dx * dx);
    for j in 0..n {
        let jp = (j + 2) % n;
        let jm = (j + n - 2) % n;
        for c in 0..m {
            out[j * m + c] = (u[jp * m + c] - 2.0 * u[j * m + c] + u[jm * m + c]) * inv;
        }
    }
}

/// State (phi, phi_t) of a wave map S^1 -> S^k sampled on the grid.
///
/// Both fields are flattened row-major with k+1 components per node.
/// Away from construction sites the rows satisfy | |phi_j| - 1 | <= 1e-8 and
/// |<phi_t,j, phi_j>| <= 1e-8 (the evolver re-projects every step, so recorded
/// states are at rounding level).
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub grid: Grid1D,
    pub k: usize,
    pub phi: Vec<f64>,
    pub phi_t: Vec<f64>,
}

/// Validation tolerance for stored states.
pub const STATE_TOL: f64 = 1e-8;

impl GridState {
    pub fn new(grid: Grid1D, k: usize, phi: Vec<f64>, phi_t: Vec<f64>) -> Result<Self> {
        let len = grid.n() * (k + 1);
        if phi.len() != len || phi_t.len() != len {
            return Err(Error::InvalidConfig(format!(
                "state arrays must have length n*(k+1) = {len}, got {} and {}",
                phi.len(),
                phi_t.len()
            )));
        }
        let s = Self { grid, k, phi, phi_t };
        let (unit, tang) = s.constraint_violations();
        if unit > STATE_TOL || tang > STATE_TOL {
            return Err(Error::InvalidConfig(format!(
                "state violates constraints: | |phi|-1 | = {unit:.3e}, |<phi_t,phi>| = {tang:.3e}"
            )));
        }
        Ok(s)
    }

    /// The constant state (p, 0).
    pub fn constant(grid: Grid1D, p: &SpherePoint) -> Self {
        let n = grid.n();
        let m = p.coords().len();
        let mut phi = vec![0.0; n * m];
        for j in 0..n {
            phi[j * m..(j + 1) * m].copy_from_slice(p.coords());
        }
        Self { grid, k: m - 1, phi, phi_t: vec![0.0; n * m] }
    }

    /// The harmonic-map state (Q, 0), Q(x) = (cos x, sin x, 0, ...).
    pub fn harmonic_map(grid: Grid1D, k: usize) -> Self {
        let n = grid.n();
        let m = k + 1;
        let mut phi = vec![0.0; n * m];
        for j in 0..n {
            let x = grid.x(j);
            phi[j * m] = x.cos();
            phi[j * m + 1] = x.sin();
        }
        Self { grid, k, phi, phi_t: vec![0.0; n * m] }
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.k + 1
    }

    pub fn node(&self, j: usize) -> &[f64] {
        let m = self.components();
        &self.phi[j * m..(j + 1) * m]
    }

    pub fn node_velocity(&self, j: usize) -> &[f64] {
        let m = self.components();
        &self.phi_t[j * m..(j + 1) * m]
    }

    /// (max_j | |phi_j| - 1 |, max_j |<phi_t,j, phi_j>|).
    pub fn constraint_violations(&self) -> (f64, f64) {
        let m = self.components();
        let mut unit: f64 = 0.0;
        let mut tang: f64 = 0.0;
        for j in 0..self.grid.n() {
            let p = &self.phi[j * m..(j + 1) * m];
            let v = &self.phi_t[j * m..(j + 1) * m];
            unit = unit.max((sphere::norm(p) - 1.0).abs());
            tang = tang.max(sphere::dot(p, v).abs());
        }
        (unit, tang)
    }

    /// Normalize every node and project every velocity tangent.
    pub fn enforce_constraints(&mut self) -> Result<()> {
        let m = self.components();
        for j in 0..self.grid.n() {
            let row = &mut self.phi[j * m..(j + 1) * m];
            let n = sphere::norm(row);
            if n < sphere::RENORMALIZE_THRESHOLD {
                return Err(Error::NearZeroVector { norm: n });
            }
            for x in row.iter_mut() {
                *x /= n;
            }
            let p = &self.phi[j * m..(j + 1) * m];
            let c = sphere::dot(&self.phi_t[j * m..(j + 1) * m], p);
            for (vi, pi) in self.phi_t[j * m..(j + 1) * m].iter_mut().zip(p) {
                *vi -= c * pi;
            }
        }
        Ok(())
    }

    /// Conserved energy E = int |phi_t|^2 + |phi_x|^2 dx (rectangle rule,
    /// centered difference; the rectangle rule is the trapezoid rule on a
    /// periodic grid).
    pub fn energy(&self) -> f64 {
        let n = self.grid.n();
        let m = self.components();
        let dx = self.grid.dx();
        let mut dphi = vec![0.0; n * m];
        centered_diff(&self.phi, n, m, dx, &mut dphi);
        let mut e = 0.0;
        for (vt, vx) in self.phi_t.iter().zip(&dphi) {
            e += vt * vt + vx * vx;
        }
        e * dx
    }

    /// Full H^1 x L^2 distance to the equilibrium (p, 0):
    /// sqrt( ||phi - p||_{L^2}^2 + ||D_c phi||_{L^2}^2 + ||phi_t||_{L^2}^2 ).
    pub fn h1_l2_distance(&self, p: &SpherePoint) -> f64 {
        let (l2, hdot) = self.distance_parts(p);
        (l2 + hdot).sqrt()
    }

    /// Homogeneous variant: sqrt( ||D_c phi||^2 + ||phi_t||^2 ) = sqrt(E).
    pub fn hdot1_l2_distance(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Same H^1 x L^2 norm applied to the difference of two states.
    pub fn h1_l2_gap(&self, other: &GridState) -> f64 {
        let n = self.grid.n();
        let m = self.components();
        assert_eq!(self.grid, other.grid, "states live on different grids");
        assert_eq!(m, other.components(), "states have different target spheres");
        let dx = self.grid.dx();
        let diff: Vec<f64> = self.phi.iter().zip(&other.phi).map(|(a, b)| a - b).collect();
        let mut ddiff = vec![0.0; n * m];
        centered_diff(&diff, n, m, dx, &mut ddiff);
        let mut total = 0.0;
        for j in 0..n * m {
            let dv = self.phi_t[j] - other.phi_t[j];
            total += diff[j] * diff[j] + ddiff[j] * ddiff[j] + dv * dv;
        }
        (total * dx).sqrt()
    }

    fn distance_parts(&self, p: &SpherePoint) -> (f64, f64) {
        let n = self.grid.n();
        let m = self.components();
        let dx = self.grid.dx();
        assert_eq!(p.coords().len(), m, "equilibrium dimension mismatch");
        let mut l2 = 0.0;
        for j in 0..n {
            for c in 0..m {
                let d = self.phi[j * m + c] - p.coords()[c];
                l2 += d * d;
            }
        }
        (l2 * dx, self.energy())
    }

    /// max_j |phi(x_j) - p|: the radius of the smallest ambient ball around p
    /// containing the whole curve.
    pub fn concentration_radius(&self, p: &SpherePoint) -> f64 {
        let m = self.components();
        let mut r: f64 = 0.0;
        for j in 0..self.grid.n() {
            let d: f64 = self.phi[j * m..(j + 1) * m]
                .iter()
                .zip(p.coords())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            r = r.max(d.sqrt());
        }
        r
    }

    /// Winding number of phi around the circle (k = 1 only).
    pub fn winding(&self) -> Result<i64> {
        if self.k != 1 {
            return Err(Error::InvalidConfig(format!(
                "winding number needs a circle target (k=1), state has k={}",
                self.k
            )));
        }
        let samples: Vec<[f64; 2]> = (0..self.grid.n())
            .map(|j| [self.phi[2 * j], self.phi[2 * j + 1]])
            .collect();
        sphere::winding_number(&samples)
    }

    /// Spatial mean of phi, renormalized — the nearest constant equilibrium
    /// direction for a near-flat state.
    pub fn mean_direction(&self) -> Result<SpherePoint> {
        let n = self.grid.n();
        let m = self.components();
        let mut mean = vec![0.0; m];
        for j in 0..n {
            for c in 0..m {
                mean[c] += self.phi[j * m + c];
            }
        }
        for c in mean.iter_mut() {
            *c /= n as f64;
        }
        sphere::renormalize(&mean)
    }

    /// (phi, -phi_t): time reversal.
    pub fn time_reversed(&self) -> Self {
        Self {
            grid: self.grid,
            k: self.k,
            phi: self.phi.clone(),
            phi_t: self.phi_t.iter().map(|v| -v).collect(),
        }
    }
}

/// State (y, y_t) of the flat (scalar or R^m-valued) wave equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarWaveState {
    pub grid: Grid1D,
    /// Components per node: 1 for a scalar field, k+1 for ambient-valued fields.
    pub m: usize,
    pub y: Vec<f64>,
    pub y_t: Vec<f64>,
}

impl ScalarWaveState {
    pub fn zero(grid: Grid1D, m: usize) -> Self {
        let len = grid.n() * m;
        Self { grid, m, y: vec![0.0; len], y_t: vec![0.0; len] }
    }

    pub fn new(grid: Grid1D, m: usize, y: Vec<f64>, y_t: Vec<f64>) -> Result<Self> {
        let len = grid.n() * m;
        if y.len() != len || y_t.len() != len {
            return Err(Error::InvalidConfig(format!(
                "wave state arrays must have length n*m = {len}, got {} and {}",
                y.len(),
                y_t.len()
            )));
        }
        Ok(Self { grid, m, y, y_t })
    }

    /// From a scalar profile and velocity given as closures.
    pub fn from_profile(grid: Grid1D, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> Self {
        let y = grid.points().map(&f).collect();
        let y_t = grid.points().map(&g).collect();
        Self { grid, m: 1, y, y_t }
    }

    /// First-order energy E_1 = int |y_x|^2 + |y_t|^2 dx.
    pub fn e1_energy(&self) -> f64 {
        let n = self.grid.n();
        let dx = self.grid.dx();
        let mut dy = vec![0.0; n * self.m];
        centered_diff(&self.y, n, self.m, dx, &mut dy);
        let mut e = 0.0;
        for (vt, vx) in self.y_t.iter().zip(&dy) {
            e += vt * vt + vx * vx;
        }
        e * dx
    }

    /// L^2 x L^2 norm of the pair (used for deficit bookkeeping).
    pub fn l2_pair_norm(&self) -> f64 {
        let dx = self.grid.dx();
        let s: f64 = self.y.iter().map(|v| v * v).sum::<f64>()
            + self.y_t.iter().map(|v| v * v).sum::<f64>();
        (s * dx).sqrt()
    }

    /// Energy-type norm on the pair: sqrt(||y||^2 + ||D_c y||^2 + ||y_t||^2).
    pub fn h1_l2_norm(&self) -> f64 {
        let n = self.grid.n();
        let dx = self.grid.dx();
        let mut dy = vec![0.0; n * self.m];
        centered_diff(&self.y, n, self.m, dx, &mut dy);
        let mut s = 0.0;
        for ((a, b), c) in self.y.iter().zip(&dy).zip(&self.y_t) {
            s += a * a + b * b + c * c;
        }
        (s * dx).sqrt()
    }

    pub fn component(&self, c: usize) -> ScalarWaveState {
        assert!(c < self.m);
        let n = self.grid.n();
        let mut y = vec![0.0; n];
        let mut y_t = vec![0.0; n];
        for j in 0..n {
            y[j] = self.y[j * self.m + c];
            y_t[j] = self.y_t[j * self.m + c];
        }
        ScalarWaveState { grid: self.grid, m: 1, y, y_t }
    }
}

/// Difference u - (p, 0) of a sphere state from a constant equilibrium,
/// viewed as a flat ambient-valued wave state (the deficit the linear
/// control machinery steers).
pub fn deficit_from_equilibrium(s: &GridState, p: &SpherePoint) -> ScalarWaveState {
    let n = s.grid.n();
    let m = s.components();
    let mut y = vec![0.0; n * m];
    for j in 0..n {
        for c in 0..m {
            y[j * m + c] = s.phi[j * m + c] - p.coords()[c];
        }
    }
    ScalarWaveState { grid: s.grid, m, y, y_t: s.phi_t.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_rejects_bad_sizes() {
        assert!(Grid1D::new(63).is_err());
        assert!(Grid1D::new(96).is_err());
        assert!(Grid1D::new(32).is_err());
        assert!(Grid1D::new(64).is_ok());
        assert!(Grid1D::new(1024).is_ok());
    }

    #[test]
    fn interval_wrapping_contains() {
        let w = Interval::new(-PI / 2.0, PI / 2.0).unwrap();
        assert!(w.contains(0.0));
        assert!(w.contains(TWO_PI - 0.1)); // == -0.1 mod 2pi
        assert!(!w.contains(PI));
        let full = Interval::full_circle();
        assert!(full.contains(3.0));
    }

    #[test]
    fn interval_mask_counts_nodes() {
        let grid = Grid1D::new(64).unwrap();
        let w = Interval::new(0.0, PI).unwrap();
        let mask = w.mask(&grid);
        let count = mask.iter().filter(|&&b| b).count();
        // [0, pi] contains nodes j = 0..=32.
        assert_eq!(count, 33);
    }

    /// Energy of (Q, 0) on the grid: the centered difference of (cos, sin) has
    /// squared magnitude (sin dx / dx)^2 exactly, so E = 2pi (sin dx / dx)^2.
    #[test]
    fn harmonic_map_energy_closed_form() {
        for n in [64usize, 512] {
            let grid = Grid1D::new(n).unwrap();
            let s = GridState::harmonic_map(grid, 2);
            let dx = grid.dx();
            let expected = TWO_PI * (dx.sin() / dx).powi(2);
            assert_relative_eq!(s.energy(), expected, max_relative = 1e-13);
            // And the continuum value 2pi within O(dx^2).
            assert!((s.energy() - TWO_PI).abs() <= TWO_PI * dx * dx);
        }
    }

    /// Quadrature oracle: for phi = (cos 2x, sin 2x) the continuum energy is
    /// int |phi_x|^2 = 4 * 2pi = 8pi; the discrete value must converge at
    /// second order. Expected discrete value is 2pi (sin(2dx)/dx/... ) — we
    /// freeze the continuum target and check the O(dx^2) envelope.
    #[test]
    fn energy_quadrature_oracle_double_winding() {
        let grid = Grid1D::new(512).unwrap();
        let n = grid.n();
        let mut phi = vec![0.0; n * 2];
        for j in 0..n {
            let x = grid.x(j);
            phi[2 * j] = (2.0 * x).cos();
            phi[2 * j + 1] = (2.0 * x).sin();
        }
        let s = GridState::new(grid, 1, phi, vec![0.0; n * 2]).unwrap();
        let e = s.energy();
        assert!((e - 8.0 * PI).abs() <= 8.0 * PI * 4.0 * grid.dx() * grid.dx());
    }

    /// Refinement halves dx; the quadrature error must drop ~4x.
    #[test]
    fn energy_second_order_convergence() {
        let exact = 8.0 * PI;
        let mut errs = Vec::new();
        for n in [128usize, 256, 512] {
            let grid = Grid1D::new(n).unwrap();
            let nn = grid.n();
            let mut phi = vec![0.0; nn * 2];
            let mut phi_t = vec![0.0; nn * 2];
            for j in 0..nn {
                let x = grid.x(j);
                phi[2 * j] = (2.0 * x).cos();
                phi[2 * j + 1] = (2.0 * x).sin();
                // tangent velocity along the curve
                phi_t[2 * j] = -(2.0 * x).sin() * 0.3;
                phi_t[2 * j + 1] = (2.0 * x).cos() * 0.3;
            }
            let s = GridState::new(grid, 1, phi, phi_t).unwrap();
            let exact_full = exact + 0.09 * TWO_PI; // + int |phi_t|^2
            errs.push((s.energy() - exact_full).abs());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1.log2() >= 1.9, "order {} too low", r1.log2());
        assert!(r2.log2() >= 1.9, "order {} too low", r2.log2());
    }

    #[test]
    fn distances_vanish_only_at_equilibrium() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let s = GridState::constant(grid, &p);
        assert_eq!(s.h1_l2_distance(&p), 0.0);
        assert_eq!(s.hdot1_l2_distance(), 0.0);
        assert_eq!(s.concentration_radius(&p), 0.0);

        let q = GridState::harmonic_map(grid, 2);
        assert!(q.h1_l2_distance(&p) > 1.0);
        // Q passes through the antipode of (1,0,0), so the radius reaches 2.
        assert_relative_eq!(q.concentration_radius(&p), 2.0, max_relative = 1e-3);
    }

    #[test]
    fn h1_distance_dominates_homogeneous_part() {
        let grid = Grid1D::new(128).unwrap();
        let s = GridState::harmonic_map(grid, 2);
        let p = SpherePoint::axis(2);
        assert!(s.h1_l2_distance(&p) >= s.hdot1_l2_distance());
    }

    #[test]
    fn winding_of_harmonic_map_is_one() {
        let grid = Grid1D::new(256).unwrap();
        let s = GridState::harmonic_map(grid, 1);
        assert_eq!(s.winding().unwrap(), 1);
        let c = GridState::constant(grid, &SpherePoint::axis(1));
        assert_eq!(c.winding().unwrap(), 0);
    }

    #[test]
    fn winding_requires_circle_target() {
        let grid = Grid1D::new(64).unwrap();
        let s = GridState::harmonic_map(grid, 2);
        assert!(s.winding().is_err());
    }

    #[test]
    fn state_constructor_validates() {
        let grid = Grid1D::new(64).unwrap();
        let n = grid.n();
        // Non-unit rows rejected.
        let bad = vec![0.5; n * 2];
        assert!(GridState::new(grid, 1, bad, vec![0.0; n * 2]).is_err());
        // Non-tangent velocity rejected.
        let s = GridState::harmonic_map(grid, 1);
        let mut vt = vec![0.0; n * 2];
        vt[0] = 1.0; // radial at x=0 where phi=(1,0)
        assert!(GridState::new(grid, 1, s.phi.clone(), vt).is_err());
    }

    #[test]
    fn mean_direction_of_constant_state() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::new(vec![0.6, 0.8, 0.0]).unwrap();
        let s = GridState::constant(grid, &p);
        let m = s.mean_direction().unwrap();
        assert!(m.chord(&p) < 1e-14);
    }

    #[test]
    fn summation_by_parts_is_exact() {
        // sum D_c u . D_c v = -sum (D_c^2 u) . v on the periodic grid.
        let grid = Grid1D::new(128).unwrap();
        let n = grid.n();
        let dx = grid.dx();
        // u and v must share Fourier content or both sums vanish by
        // orthogonality and the comparison degenerates.
        let u: Vec<f64> = (0..n)
            .map(|j| (3.0 * grid.x(j)).sin() + 0.2 * (grid.x(j)).cos() - 0.4 * (2.0 * grid.x(j)).cos())
            .collect();
        let v: Vec<f64> = (0..n)
            .map(|j| 0.7 * (3.0 * grid.x(j)).sin() + (2.0 * grid.x(j)).cos() + 0.5 * (grid.x(j)).cos())
            .collect();
        let mut du = vec![0.0; n];
        let mut dv = vec![0.0; n];
        let mut lu = vec![0.0; n];
        centered_diff(&u, n, 1, dx, &mut du);
        centered_diff(&v, n, 1, dx, &mut dv);
        laplacian_wide(&u, n, 1, dx, &mut lu);
        let lhs: f64 = du.iter().zip(&dv).map(|(a, b)| a * b).sum();
        let rhs: f64 = -lu.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        assert!(lhs.abs() > 1.0, "test data degenerate: lhs = {lhs}");
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn deficit_of_equilibrium_is_zero() {
        let grid = Grid1D::new(64).unwrap();
        let p = SpherePoint::axis(2);
        let d = deficit_from_equilibrium(&GridState::constant(grid, &p), &p);
        assert_eq!(d.l2_pair_norm(), 0.0);
        assert_eq!(d.h1_l2_norm(), 0.0);
    }
}
