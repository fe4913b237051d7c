//! Indoor pedestrian SLAM from a foot-mounted IMU with a magnetometer:
//! ZUPT-aided dead reckoning, an online reduced-rank Gaussian-process
//! magnetic field map, a hexagonal motion map, and a Rao-Blackwellized
//! particle filter tying them together. Includes a synthetic world
//! generator and an evaluation harness.

pub mod eval;
pub mod hexgrid;
pub mod io;
pub mod magmap;
pub mod motionmap;
pub mod pdr;
pub mod posemath;
pub mod rbpf;
pub mod sim;

pub use posemath::{Pose, Quat};
