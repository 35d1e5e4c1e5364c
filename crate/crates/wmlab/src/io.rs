//! On-disk formats: CSV tables, raw little-endian binary snapshots, and a
//! JSON envelope for reports.
//!
//! Binary formats carry a 16-byte header (4-byte magic, then three u32
//! fields) followed by little-endian f64 payloads, and round-trip exactly —
//! every bit of a stored state or control survives write/read. CSV output is
//! RFC-4180 (CRLF rows) with floats printed in Rust's shortest round-trip
//! form, so identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolver::{ControlField, RunRecord, Trajectory};
use crate::grid::{Grid1D, GridState, Interval};
use crate::local_control::IterateRecord;

/// Bumped when any emitted JSON/CSV schema changes shape.
pub const SCHEMA_VERSION: u32 = 1;

const STATE_MAGIC: &[u8; 4] = b"WMS1";
const CONTROL_MAGIC: &[u8; 4] = b"WMC1";
const TRAJECTORY_MAGIC: &[u8; 4] = b"WMT1";

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], a: u32, b: u32, c: u32) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&a.to_le_bytes())?;
    w.write_all(&b.to_le_bytes())?;
    w.write_all(&c.to_le_bytes())?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(u32, u32, u32)> {
    let mut buf = [0u8; 16];
    r.read_exact(&mut buf)?;
    if &buf[0..4] != magic {
        return Err(Error::MalformedFile(format!(
            "bad magic: expected {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    Ok((word(4), word(8), word(12)))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Snapshot of a state: header (magic, n, k, flags=0), then phi and phi_t.
pub fn write_state_bin(path: &Path, state: &GridState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, STATE_MAGIC, state.grid.n() as u32, state.k as u32, 0)?;
    write_f64s(&mut w, &state.phi)?;
    write_f64s(&mut w, &state.phi_t)?;
    w.flush()?;
    Ok(())
}

pub fn read_state_bin(path: &Path) -> Result<GridState> {
    let mut r = BufReader::new(File::open(path)?);
    let (n, k, flags) = read_header(&mut r, STATE_MAGIC)?;
    if flags != 0 {
        return Err(Error::MalformedFile(format!("unknown state flags {flags:#x}")));
    }
    let grid = Grid1D::new(n as usize)?;
    let len = n as usize * (k as usize + 1);
    let phi = read_f64s(&mut r, len)?;
    let phi_t = read_f64s(&mut r, len)?;
    GridState::new(grid, k as usize, phi, phi_t)
}

/// One row per node: x, the map components, then the velocity components.
pub fn write_state_csv(path: &Path, state: &GridState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let m = state.components();
    let mut header = String::from("x");
    for c in 0..m {
        header.push_str(&format!(",phi_{c}"));
    }
    for c in 0..m {
        header.push_str(&format!(",phi_t_{c}"));
    }
    w.write_all(header.as_bytes())?;
    w.write_all(b"\r\n")?;
    for j in 0..state.grid.n() {
        let mut row = format!("{}", state.grid.x(j));
        for c in 0..m {
            row.push_str(&format!(",{}", state.phi[j * m + c]));
        }
        for c in 0..m {
            row.push_str(&format!(",{}", state.phi_t[j * m + c]));
        }
        w.write_all(row.as_bytes())?;
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Run history: the winding column is left empty for non-circle targets.
pub fn write_record_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(
        b"t,energy,dissipation_cumulative,constraint_violation_max,tangency_violation_max,winding\r\n",
    )?;
    for row in &record.rows {
        let winding = row.winding.map(|v| v.to_string()).unwrap_or_default();
        let line = format!(
            "{},{},{},{},{},{}",
            row.t, row.energy, row.dissipation_cum, row.constraint_max, row.tangency_max, winding
        );
        w.write_all(line.as_bytes())?;
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Header (magic, n, m, steps), then t0, dt, the support interval (flag plus
/// both ends, zeros when absent), then the (steps+1) sample rows.
pub fn write_control_bin(path: &Path, field: &ControlField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        CONTROL_MAGIC,
        field.grid.n() as u32,
        field.m as u32,
        field.steps as u32,
    )?;
    let (flag, lo, hi) = match field.omega {
        Some(iv) => (1.0, iv.lo, iv.hi),
        None => (0.0, 0.0, 0.0),
    };
    write_f64s(&mut w, &[field.t0, field.dt_ctrl, flag, lo, hi])?;
    write_f64s(&mut w, &field.samples)?;
    w.flush()?;
    Ok(())
}

pub fn read_control_bin(path: &Path) -> Result<ControlField> {
    let mut r = BufReader::new(File::open(path)?);
    let (n, m, steps) = read_header(&mut r, CONTROL_MAGIC)?;
    let grid = Grid1D::new(n as usize)?;
    let meta = read_f64s(&mut r, 5)?;
    let omega = match meta[2] {
        f if f == 0.0 => None,
        f if f == 1.0 => Some(Interval::new(meta[3], meta[4])?),
        f => return Err(Error::MalformedFile(format!("bad support flag {f}"))),
    };
    let samples = read_f64s(&mut r, (steps as usize + 1) * n as usize * m as usize)?;
    Ok(ControlField {
        grid,
        m: m as usize,
        t0: meta[0],
        dt_ctrl: meta[1],
        steps: steps as usize,
        samples,
        omega,
    })
}

/// Header (magic, n, k, count), then count blocks of (t, phi, phi_t).
pub fn write_trajectory_bin(path: &Path, traj: &Trajectory) -> Result<()> {
    let Some(first) = traj.states.first() else {
        return Err(Error::InvalidConfig("refusing to store an empty trajectory".into()));
    };
    if traj.times.len() != traj.states.len() {
        return Err(Error::InvalidConfig("trajectory times and states disagree".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        TRAJECTORY_MAGIC,
        first.grid.n() as u32,
        first.k as u32,
        traj.states.len() as u32,
    )?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        write_f64s(&mut w, &[*t])?;
        write_f64s(&mut w, &s.phi)?;
        write_f64s(&mut w, &s.phi_t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_bin(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path)?);
    let (n, k, count) = read_header(&mut r, TRAJECTORY_MAGIC)?;
    let grid = Grid1D::new(n as usize)?;
    let len = n as usize * (k as usize + 1);
    let mut times = Vec::with_capacity(count as usize);
    let mut states = Vec::with_capacity(count as usize);
    for _ in 0..count {
        times.push(read_f64s(&mut r, 1)?[0]);
        let phi = read_f64s(&mut r, len)?;
        let phi_t = read_f64s(&mut r, len)?;
        states.push(GridState::new(grid, k as usize, phi, phi_t)?);
    }
    Ok(Trajectory { times, states })
}

/// Correction-loop history for convergence tables.
pub fn write_iterates_csv(path: &Path, iterates: &[IterateRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"k,residual,contraction,control_norm\r\n")?;
    for it in iterates {
        let contraction = it.contraction.map(|v| v.to_string()).unwrap_or_default();
        let line = format!("{},{},{},{}", it.k, it.residual, contraction, it.correction_norm);
        w.write_all(line.as_bytes())?;
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Dense matrix dump (one CSV row per matrix row), for conditioning studies.
pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..matrix.nrows() {
        let mut row = String::new();
        for j in 0..matrix.ncols() {
            if j > 0 {
                row.push(',');
            }
            row.push_str(&format!("{}", matrix[(i, j)]));
        }
        w.write_all(row.as_bytes())?;
        w.write_all(b"\r\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    data: &'a T,
}

/// Serialize a report under the versioned envelope, pretty-printed with a
/// trailing newline.
pub fn write_json<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    let envelope = Envelope { schema_version: SCHEMA_VERSION, kind, data };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Error::InvalidConfig(format!("report not serializable: {e}")))?;
    text.push('\n');
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random_state_near;
    use crate::evolver::{evolve, DampingProfile, EvolveParams};
    use crate::sphere::SpherePoint;
    use tempfile::tempdir;

    #[test]
    fn state_binary_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let grid = Grid1D::new(64).unwrap();
        let state = random_state_near(grid, &SpherePoint::axis(2), 7, 10, 0.3).unwrap();
        let path = dir.path().join("state.bin");
        write_state_bin(&path, &state).unwrap();
        let back = read_state_bin(&path).unwrap();
        assert_eq!(state.phi, back.phi);
        assert_eq!(state.phi_t, back.phi_t);
        assert_eq!(state.k, back.k);
    }

    #[test]
    fn control_binary_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let grid = Grid1D::new(64).unwrap();
        let mut field = ControlField::zero(grid, 3, 0.0, 0.01, 17);
        field.omega = Some(Interval::new(-1.0, 1.0).unwrap());
        for (i, v) in field.samples.iter_mut().enumerate() {
            *v = (i as f64).sin();
        }
        let path = dir.path().join("field.bin");
        write_control_bin(&path, &field).unwrap();
        let back = read_control_bin(&path).unwrap();
        assert_eq!(field.samples, back.samples);
        assert_eq!(field.dt_ctrl, back.dt_ctrl);
        assert_eq!(field.omega, back.omega);
        assert_eq!(field.steps, back.steps);
    }

    #[test]
    fn trajectory_round_trip_preserves_every_snapshot() {
        let dir = tempdir().unwrap();
        let grid = Grid1D::new(64).unwrap();
        let u0 = random_state_near(grid, &SpherePoint::axis(2), 3, 6, 0.1).unwrap();
        let damping = DampingProfile::default_bump(grid).unwrap();
        let params = EvolveParams::new(2.0).with_record_every(16);
        let out = evolve(&u0, &params, Some(&damping), None).unwrap();
        let path = dir.path().join("run.traj");
        write_trajectory_bin(&path, &out.trajectory).unwrap();
        let back = read_trajectory_bin(&path).unwrap();
        assert_eq!(back.times, out.trajectory.times);
        for (a, b) in back.states.iter().zip(&out.trajectory.states) {
            assert_eq!(a.phi, b.phi);
            assert_eq!(a.phi_t, b.phi_t);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let grid = Grid1D::new(64).unwrap();
        let state = GridState::constant(grid, &SpherePoint::axis(2));
        let spath = dir.path().join("state.bin");
        write_state_bin(&spath, &state).unwrap();
        assert!(matches!(read_control_bin(&spath), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn csv_tables_have_stable_shape() {
        let dir = tempdir().unwrap();
        let grid = Grid1D::new(64).unwrap();
        let u0 = GridState::harmonic_map(grid, 1);
        let params = EvolveParams::new(1.0).with_record_every(8).without_states();
        let out = evolve(&u0, &params, None, None).unwrap();

        let spath = dir.path().join("state.csv");
        write_state_csv(&spath, &u0).unwrap();
        let text = std::fs::read_to_string(&spath).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,phi_0,phi_1,phi_t_0,phi_t_1");
        assert_eq!(lines.count(), 64);

        let rpath = dir.path().join("record.csv");
        write_record_csv(&rpath, &out.record).unwrap();
        let text = std::fs::read_to_string(&rpath).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,energy,dissipation_cumulative"));
        // circle target: winding column populated
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));

        // identical writes produce identical bytes
        let rpath2 = dir.path().join("record2.csv");
        write_record_csv(&rpath2, &out.record).unwrap();
        assert_eq!(std::fs::read(&rpath).unwrap(), std::fs::read(&rpath2).unwrap());
    }
}
