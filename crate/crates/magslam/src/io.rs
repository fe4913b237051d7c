//! File formats: CSV readers/writers for IMU logs, odometry increments,
//! ground truth and filter trajectories, plus structured JSON exports of the
//! learned maps.
//!
//! Floats are written with Rust's shortest round-trip formatting, so writes
//! are deterministic and re-reading reproduces the values exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexgrid::{HexGridSpec, HexIndex};
use crate::magmap::MagMap;
use crate::motionmap::MotionMap;
use crate::pdr::{ImuSample, OdometryIncrement};
use crate::posemath::{self, Pose, Quat};
use crate::rbpf::StepRecord;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Split a CSV line and parse every field as f64.
fn parse_floats(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>, IoError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != expected {
        return Err(parse_err(
            lineno,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("invalid number {f:?}")))
        })
        .collect()
}

fn check_header(line: &str, expected: &str) -> Result<(), IoError> {
    if line.trim() != expected {
        return Err(parse_err(1, format!("expected header {expected:?}")));
    }
    Ok(())
}

fn quat_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Quat {
    posemath::canonicalize(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
}

pub const IMU_HEADER: &str = "t,fx,fy,fz,wx,wy,wz,mx,my,mz";
pub const INCREMENT_HEADER: &str = "t,dpx,dpy,dpz,dqw,dqx,dqy,dqz,mx,my,mz";
pub const TRUTH_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz";
pub const TRAJECTORY_HEADER: &str = "step,t,px,py,pz,qw,qx,qy,qz,ess,resampled";
pub const HEATMAP_HEADER: &str = "x,y,norm";

pub fn imu_to_csv(samples: &[ImuSample]) -> String {
    let mut out = String::from(IMU_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.t, s.f.x, s.f.y, s.f.z, s.w.x, s.w.y, s.w.z, s.m.x, s.m.y, s.m.z
        );
    }
    out
}

pub fn imu_from_csv(text: &str) -> Result<Vec<ImuSample>, IoError> {
    let mut lines = text.lines();
    check_header(lines.next().unwrap_or(""), IMU_HEADER)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, i + 2, 10)?;
        out.push(ImuSample {
            t: v[0],
            f: Vector3::new(v[1], v[2], v[3]),
            w: Vector3::new(v[4], v[5], v[6]),
            m: Vector3::new(v[7], v[8], v[9]),
        });
    }
    Ok(out)
}

pub fn increments_to_csv(incs: &[OdometryIncrement]) -> String {
    let mut out = String::from(INCREMENT_HEADER);
    out.push('\n');
    for u in incs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            u.t,
            u.dp.x,
            u.dp.y,
            u.dp.z,
            u.dq.w,
            u.dq.i,
            u.dq.j,
            u.dq.k,
            u.z_m.x,
            u.z_m.y,
            u.z_m.z
        );
    }
    out
}

pub fn increments_from_csv(text: &str) -> Result<Vec<OdometryIncrement>, IoError> {
    let mut lines = text.lines();
    check_header(lines.next().unwrap_or(""), INCREMENT_HEADER)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, i + 2, 11)?;
        out.push(OdometryIncrement {
            t: v[0],
            dp: Vector3::new(v[1], v[2], v[3]),
            dq: quat_from_wxyz(v[4], v[5], v[6], v[7]),
            z_m: Vector3::new(v[8], v[9], v[10]),
        });
    }
    Ok(out)
}

pub fn truth_to_csv(poses: &[(f64, Pose)]) -> String {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for (t, pose) in poses {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t, pose.p.x, pose.p.y, pose.p.z, pose.q.w, pose.q.i, pose.q.j, pose.q.k
        );
    }
    out
}

pub fn truth_from_csv(text: &str) -> Result<Vec<(f64, Pose)>, IoError> {
    let mut lines = text.lines();
    check_header(lines.next().unwrap_or(""), TRUTH_HEADER)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, i + 2, 8)?;
        out.push((
            v[0],
            Pose::new(
                Vector3::new(v[1], v[2], v[3]),
                quat_from_wxyz(v[4], v[5], v[6], v[7]),
            ),
        ));
    }
    Ok(out)
}

pub fn trajectory_to_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.t,
            r.pose.p.x,
            r.pose.p.y,
            r.pose.p.z,
            r.pose.q.w,
            r.pose.q.i,
            r.pose.q.j,
            r.pose.q.k,
            r.ess,
            u8::from(r.resampled)
        );
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Vec<StepRecord>, IoError> {
    let mut lines = text.lines();
    check_header(lines.next().unwrap_or(""), TRAJECTORY_HEADER)?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(line, i + 2, 11)?;
        if v[0] < 0.0 || v[0].fract() != 0.0 {
            return Err(parse_err(i + 2, "step must be a nonnegative integer"));
        }
        if v[10] != 0.0 && v[10] != 1.0 {
            return Err(parse_err(i + 2, "resampled must be 0 or 1"));
        }
        out.push(StepRecord {
            step: v[0] as usize,
            t: v[1],
            pose: Pose::new(
                Vector3::new(v[2], v[3], v[4]),
                quat_from_wxyz(v[5], v[6], v[7], v[8]),
            ),
            ess: v[9],
            resampled: v[10] == 1.0,
        });
    }
    Ok(out)
}

/// Magnetic field magnitude samples on a horizontal plane.
pub fn heatmap_to_csv(points: &[(f64, f64, f64)]) -> String {
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for (x, y, norm) in points {
        let _ = writeln!(out, "{x},{y},{norm}");
    }
    out
}

/// Serialized magnetic map: shared grid plus per-tile coefficient means and
/// covariance diagonals, sorted by tile index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagMapExport {
    pub grid: HexGridSpec,
    pub basis_size: usize,
    pub tiles: Vec<MagTileExport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MagTileExport {
    pub index: HexIndex,
    pub center: [f64; 3],
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

pub fn export_mag_map(map: &MagMap) -> MagMapExport {
    let mut tiles: Vec<MagTileExport> = map
        .tiles()
        .map(|t| MagTileExport {
            index: t.idx,
            center: [t.center.x, t.center.y, t.center.z],
            mean: t.mean.iter().copied().collect(),
            cov_diag: t.cov.diagonal().iter().copied().collect(),
        })
        .collect();
    tiles.sort_by_key(|t| t.index);
    MagMapExport {
        grid: map.grid,
        basis_size: tiles.first().map_or(0, |t| t.mean.len().saturating_sub(3)),
        tiles,
    }
}

/// Rebuild a magnetic map from an export. Off-diagonal covariance is not
/// stored, so the imported posterior carries the exported diagonal only;
/// posterior-mean field prediction is unaffected.
pub fn import_mag_map(
    export: &MagMapExport,
    hp: &crate::magmap::MagHyperparams,
) -> Result<MagMap, IoError> {
    let mut map = MagMap::new(export.grid, hp);
    for tile in &export.tiles {
        let mean = nalgebra::DVector::from_column_slice(&tile.mean);
        let cov = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            &tile.cov_diag,
        ));
        map.set_tile_state(tile.index, mean, cov)
            .map_err(|e| parse_err(0, e.to_string()))?;
    }
    Ok(map)
}

/// Serialized motion map: per-tile lateral transition counts, sorted by tile
/// index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionMapExport {
    pub tiles: Vec<MotionTileExport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionTileExport {
    pub index: HexIndex,
    pub counts: [u64; 6],
}

pub fn export_motion_map(map: &MotionMap) -> MotionMapExport {
    let mut tiles: Vec<MotionTileExport> = map
        .tiles()
        .map(|t| MotionTileExport {
            index: t.idx,
            counts: t.counts,
        })
        .collect();
    tiles.sort_by_key(|t| t.index);
    MotionMapExport { tiles }
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents)?;
    Ok(())
}

pub fn read_string(path: &Path) -> Result<String, IoError> {
    Ok(fs::read_to_string(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_string(path, &text)
}
