//! Points and tangent vectors on the unit sphere S^k in R^{k+1}, plus the
//! small amount of spherical geometry the lab needs: tangent projection,
//! renormalization, geodesic chains, and winding numbers of plane curves.

use crate::error::{Error, Result};

/// Constructor tolerance on |coords| - 1.
pub const UNIT_TOL: f64 = 1e-12;
/// Constructor tolerance on <vec, base> for tangent vectors.
pub const TANGENT_TOL: f64 = 1e-10;
/// Below this norm a vector has no trustworthy direction.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-8;

/// A point of S^k, stored as its k+1 ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    /// Wraps coordinates that are already unit length (within `UNIT_TOL`).
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidConfig(
                "a sphere point needs at least 2 ambient coordinates".into(),
            ));
        }
        let norm = norm(&coords);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidConfig(format!(
                "coordinates are not unit length: |v| = {norm:.15}"
            )));
        }
        Ok(Self { coords })
    }

    /// Sphere dimension k (ambient dimension minus one).
    pub fn k(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// The "first axis" base point (1, 0, ..., 0), a convenient equilibrium.
    pub fn axis(k: usize) -> Self {
        let mut coords = vec![0.0; k + 1];
        coords[0] = 1.0;
        Self { coords }
    }

    pub fn inner(&self, other: &Self) -> f64 {
        dot(&self.coords, &other.coords)
    }

    /// Chordal (ambient) distance.
    pub fn chord(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// A vector attached to a base point and orthogonal to it.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub vec: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: SpherePoint, vec: Vec<f64>) -> Result<Self> {
        if vec.len() != base.coords().len() {
            return Err(Error::InvalidConfig(
                "tangent vector dimension differs from base point".into(),
            ));
        }
        let inner = dot(&vec, base.coords());
        if inner.abs() > TANGENT_TOL {
            return Err(Error::InvalidConfig(format!(
                "vector is not tangent: <v, base> = {inner:.3e}"
            )));
        }
        Ok(Self { base, vec })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal projection of `f` onto the tangent space at `phi`:
/// `f - <f, phi> phi`. `phi` is assumed unit length. Idempotent, self-adjoint,
/// and a contraction; these are checked by tests rather than at runtime since
/// this sits in the evolver's hot loop.
pub fn project_tangent(f: &[f64], phi: &[f64]) -> Vec<f64> {
    let mut out = f.to_vec();
    project_tangent_in_place(&mut out, phi);
    out
}

/// In-place variant used by the stepper.
#[inline]
pub fn project_tangent_in_place(f: &mut [f64], phi: &[f64]) {
    let c = dot(f, phi);
    for (fi, pi) in f.iter_mut().zip(phi) {
        *fi -= c * pi;
    }
}

/// `v / |v|` as a sphere point; refuses directionless input.
pub fn renormalize(v: &[f64]) -> Result<SpherePoint> {
    let n = norm(v);
    if n < RENORMALIZE_THRESHOLD {
        return Err(Error::NearZeroVector { norm: n });
    }
    let coords = v.iter().map(|x| x / n).collect();
    Ok(SpherePoint { coords })
}

/// The degree-one harmonic map x -> (cos x, sin x, 0, ..., 0) evaluated at `x`.
///
/// As a map S^1 -> S^k it wraps the equatorial circle once; its Dirichlet
/// energy is 2*pi, the ground-state obstruction for stabilization.
pub fn harmonic_map_q(x: f64, k: usize) -> SpherePoint {
    let mut coords = vec![0.0; k + 1];
    coords[0] = x.cos();
    coords[1] = x.sin();
    SpherePoint { coords }
}

/// Points p = p_0, p_1, ..., p_N = q spaced along the minimizing geodesic with
/// every chord |p_{i+1} - p_i| <= step.
///
/// Errors with [`Error::AntipodalPair`] when <p,q> <= -1 + 1e-10: antipodal
/// endpoints have no unique minimizing geodesic.
pub fn geodesic_chain(p: &SpherePoint, q: &SpherePoint, step: f64) -> Result<Vec<SpherePoint>> {
    if p.k() != q.k() {
        return Err(Error::InvalidConfig("chain endpoints on different spheres".into()));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("chain step must be positive, got {step}")));
    }
    let inner = p.inner(q);
    if inner <= -1.0 + 1e-10 {
        return Err(Error::AntipodalPair { inner });
    }
    let theta = inner.clamp(-1.0, 1.0).acos();
    if theta == 0.0 {
        return Ok(vec![p.clone(), q.clone()]);
    }
    // A hop of angle alpha has chord 2 sin(alpha/2); cap the chord at `step`
    // (and at the diameter 2, so huge steps still give one hop).
    let max_hop_angle = 2.0 * (step.min(2.0) / 2.0).asin();
    let hops = (theta / max_hop_angle).ceil().max(1.0) as usize;
    let sin_theta = theta.sin();
    let mut chain = Vec::with_capacity(hops + 1);
    chain.push(p.clone());
    for i in 1..hops {
        let s = i as f64 / hops as f64;
        let (a, b) = (
            ((1.0 - s) * theta).sin() / sin_theta,
            (s * theta).sin() / sin_theta,
        );
        let v: Vec<f64> = p
            .coords()
            .iter()
            .zip(q.coords())
            .map(|(pc, qc)| a * pc + b * qc)
            .collect();
        // Slerp output is unit up to rounding; renormalize to pin it down.
        chain.push(renormalize(&v)?);
    }
    chain.push(q.clone());
    Ok(chain)
}

/// Winding number of a closed plane curve given by samples (the segment from
/// the last sample back to the first is included).
///
/// Computed by summing atan2 increments. Any consecutive angular jump of
/// pi/2 or more means samples cannot distinguish the short way around from
/// the long way, and the curve is rejected as under-resolved.
pub fn winding_number(samples: &[[f64; 2]]) -> Result<i64> {
    if samples.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "winding number needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let mut total = 0.0_f64;
    for i in 0..samples.len() {
        let [x0, y0] = samples[i];
        let [x1, y1] = samples[(i + 1) % samples.len()];
        let a0 = y0.atan2(x0);
        let a1 = y1.atan2(x1);
        let mut jump = a1 - a0;
        if jump > std::f64::consts::PI {
            jump -= 2.0 * std::f64::consts::PI;
        } else if jump < -std::f64::consts::PI {
            jump += 2.0 * std::f64::consts::PI;
        }
        if jump.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::UnresolvedCurve { index: i, jump });
        }
        total += jump;
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
}
