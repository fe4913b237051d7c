//! ZUPT-aided EKF dead reckoning on raw IMU data.
//!
//! A 9-state error EKF (position, velocity, attitude error; no bias states)
//! runs a strapdown mechanization and applies zero-velocity pseudo-
//! measurements whenever a GLRT stance detector fires. Stride-wise odometry
//! increments are extracted midpoint-to-midpoint between consecutive stance
//! phases, each carrying the stance-phase magnetometer sample.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::posemath::{self, Pose, Quat};

/// One raw IMU sample: specific force and angular rate in the sensor frame,
/// plus a magnetometer reading in normalized field units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    pub f: Vector3<f64>,
    pub w: Vector3<f64>,
    pub m: Vector3<f64>,
}

/// Stride-wise motion increment with the stance-phase magnetometer sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryIncrement {
    pub t: f64,
    /// Position increment in the world frame of the dead-reckoning solution.
    pub dp: Vector3<f64>,
    /// Relative rotation `q_k * q_{k-1}^-1`.
    #[serde(with = "dq_serde")]
    pub dq: Quat,
    /// Magnetometer sample at the stance midpoint, sensor frame.
    pub z_m: Vector3<f64>,
}

mod dq_serde {
    use super::*;
    use nalgebra::Quaternion;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Ok(posemath::canonicalize(nalgebra::UnitQuaternion::from_quaternion(
            Quaternion::new(w, x, y, z),
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdrConfig {
    /// Gravity magnitude, m/s^2.
    pub gravity: f64,
    /// Accelerometer noise scale, m/s^2.
    pub sigma_a: f64,
    /// Gyroscope noise scale, rad/s.
    pub sigma_w: f64,
    /// GLRT window length in samples.
    pub window: usize,
    /// GLRT detection threshold.
    pub glrt_threshold: f64,
    /// ZUPT pseudo-measurement noise variance, (m/s)^2.
    pub r_zupt: f64,
}

impl Default for PdrConfig {
    fn default() -> Self {
        PdrConfig {
            gravity: 9.81,
            sigma_a: 0.01,
            sigma_w: 0.01,
            window: 5,
            glrt_threshold: 3e5,
            r_zupt: 1e-4,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PdrError {
    #[error("GLRT window too short: {0} samples (need >= 3)")]
    WindowTooShort(usize),
    #[error("empty IMU log")]
    EmptyLog,
    #[error("no stance phases detected")]
    NoStanceDetected,
    #[error("non-monotone timestamps at sample {0}")]
    NonMonotoneTime(usize),
}

/// Navigation state with 9x9 error covariance over (dp, dv, dtheta).
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: Quat,
    pub p_err: SMatrix<f64, 9, 9>,
}

impl NavState {
    pub fn new(q: Quat) -> Self {
        NavState {
            p: Vector3::zeros(),
            v: Vector3::zeros(),
            q,
            p_err: SMatrix::identity() * 1e-6,
        }
    }

    fn symmetrize(&mut self) {
        self.p_err = (self.p_err + self.p_err.transpose()) / 2.0;
    }
}

/// GLRT zero-velocity test statistic
/// `T = 1/N sum( |w|^2/sigma_w^2 + |f - g*fbar/|fbar||^2/sigma_a^2 )`.
pub fn glrt_statistic(
    window: &[ImuSample],
    g: f64,
    sigma_a: f64,
    sigma_w: f64,
) -> Result<f64, PdrError> {
    let n = window.len();
    if n < 3 {
        return Err(PdrError::WindowTooShort(n));
    }
    let fbar: Vector3<f64> = window.iter().map(|s| s.f).sum::<Vector3<f64>>() / n as f64;
    let fdir = if fbar.norm() > 1e-12 {
        fbar / fbar.norm()
    } else {
        Vector3::z()
    };
    let mut t = 0.0;
    for s in window {
        t += s.w.norm_squared() / (sigma_w * sigma_w);
        t += (s.f - g * fdir).norm_squared() / (sigma_a * sigma_a);
    }
    Ok(t / n as f64)
}

/// True iff the GLRT statistic of the window falls below the threshold.
pub fn glrt_detect(
    window: &[ImuSample],
    g: f64,
    sigma_a: f64,
    sigma_w: f64,
    gamma: f64,
) -> Result<bool, PdrError> {
    Ok(glrt_statistic(window, g, sigma_a, sigma_w)? < gamma)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Strapdown mechanization step with covariance propagation.
pub fn ekf_predict(s: &mut NavState, sample: &ImuSample, dt: f64, cfg: &PdrConfig) {
    assert!(dt > 0.0);
    // nominal state
    let f_world = posemath::to_rotation(s.q) * sample.f;
    let acc = f_world + Vector3::new(0.0, 0.0, -cfg.gravity);
    s.q = posemath::quat_mul(s.q, posemath::exp_map(sample.w * dt));
    s.v += acc * dt;
    s.p += s.v * dt;

    // error covariance: states (dp, dv, dtheta), world-frame attitude error
    let mut f_mat = SMatrix::<f64, 9, 9>::identity();
    f_mat.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * dt));
    f_mat.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-skew(&f_world) * dt));

    let mut q_proc = SMatrix::<f64, 9, 9>::zeros();
    let sa = cfg.sigma_a * dt;
    let sw = cfg.sigma_w * dt;
    for i in 0..3 {
        q_proc[(3 + i, 3 + i)] = sa * sa;
        q_proc[(6 + i, 6 + i)] = sw * sw;
    }
    s.p_err = f_mat * s.p_err * f_mat.transpose() + q_proc;
    s.symmetrize();
}

/// Zero-velocity EKF update (`H = [0 I 0]`).
pub fn zupt_update(s: &mut NavState, cfg: &PdrConfig) {
    let p_vv = s.p_err.fixed_view::<3, 3>(3, 3).into_owned();
    let s_mat = p_vv + Matrix3::identity() * cfg.r_zupt;
    let s_inv = s_mat.try_inverse().expect("ZUPT innovation invertible");
    // K = P H^T S^-1: columns 3..6 of P times S^-1
    let ph_t = s.p_err.fixed_view::<9, 3>(0, 3).into_owned();
    let k = ph_t * s_inv;
    let innov = -s.v;
    let dx: SVector<f64, 9> = k * innov;
    s.p += dx.fixed_rows::<3>(0).into_owned();
    s.v += dx.fixed_rows::<3>(3).into_owned();
    s.q = posemath::quat_mul(posemath::exp_map(dx.fixed_rows::<3>(6).into_owned()), s.q);
    let mut ikh = SMatrix::<f64, 9, 9>::identity();
    let block = ikh.fixed_view::<9, 3>(0, 3) - k;
    ikh.fixed_view_mut::<9, 3>(0, 3).copy_from(&block);
    // Joseph-free form; re-symmetrize to keep PSD
    s.p_err = ikh * s.p_err;
    s.symmetrize();
}

/// Output of the dead-reckoning front end.
#[derive(Debug, Clone)]
pub struct PdrOutput {
    /// Pose at the first stance midpoint (the stride-sequence anchor).
    pub anchor: Pose,
    /// One increment per subsequent stance phase.
    pub increments: Vec<OdometryIncrement>,
    /// Final filter pose.
    pub final_pose: Pose,
    /// Full-rate pose history (t, pose).
    pub poses: Vec<(f64, Pose)>,
}

/// Run predict/detect/update over the log and emit stride increments
/// midpoint-to-midpoint between consecutive stance phases.
pub fn extract_increments(log: &[ImuSample], cfg: &PdrConfig) -> Result<PdrOutput, PdrError> {
    if log.is_empty() {
        return Err(PdrError::EmptyLog);
    }
    for (i, pair) in log.windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(PdrError::NonMonotoneTime(i + 1));
        }
    }
    let n = log.len();
    let win = cfg.window.max(3);

    // initial leveling from the first window's mean specific force
    let lead = &log[..win.min(n)];
    let fbar: Vector3<f64> = lead.iter().map(|s| s.f).sum::<Vector3<f64>>() / lead.len() as f64;
    let q0 = if fbar.norm() > 1e-9 {
        // q maps sensor to world; want R(q) * fbar ~ [0, 0, g]
        Quat::rotation_between(&fbar, &Vector3::z()).unwrap_or_else(Quat::identity)
    } else {
        Quat::identity()
    };
    let mut state = NavState::new(posemath::canonicalize(q0));

    let mut poses: Vec<(f64, Pose)> = Vec::with_capacity(n);
    let mut stance_flags = vec![false; n];
    poses.push((log[0].t, Pose::new(state.p, state.q)));
    for i in 1..n {
        let dt = log[i].t - log[i - 1].t;
        ekf_predict(&mut state, &log[i], dt, cfg);
        if i + 1 >= win {
            let window = &log[i + 1 - win..=i];
            if glrt_detect(window, cfg.gravity, cfg.sigma_a, cfg.sigma_w, cfg.glrt_threshold)? {
                stance_flags[i] = true;
                zupt_update(&mut state, cfg);
            }
        }
        poses.push((log[i].t, Pose::new(state.p, state.q)));
    }

    // stance phases: contiguous runs of detections; stride reference at the
    // midpoint sample of each phase
    let mut midpoints = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=n {
        let flag = i < n && stance_flags[i];
        match (flag, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s0)) => {
                midpoints.push((s0 + i - 1) / 2);
                run_start = None;
            }
            _ => {}
        }
    }
    if midpoints.is_empty() {
        return Err(PdrError::NoStanceDetected);
    }

    let anchor = poses[midpoints[0]].1;
    let mut increments = Vec::new();
    for pair in midpoints.windows(2) {
        let (prev, curr) = (pair[0], pair[1]);
        let (t, pose_c) = poses[curr];
        let pose_p = poses[prev].1;
        increments.push(OdometryIncrement {
            t,
            dp: pose_c.p - pose_p.p,
            dq: posemath::quat_mul(pose_c.q, posemath::conjugate(pose_p.q)),
            z_m: log[curr].m,
        });
    }
    Ok(PdrOutput {
        anchor,
        increments,
        final_pose: poses[*midpoints.last().unwrap()].1,
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const G: f64 = 9.81;

    fn static_sample(t: f64) -> ImuSample {
        ImuSample {
            t,
            f: Vector3::new(0.0, 0.0, G),
            w: Vector3::zeros(),
            m: Vector3::zeros(),
        }
    }

    #[test]
    fn glrt_static_window_detects_stance() {
        let window: Vec<ImuSample> = (0..5).map(|i| static_sample(i as f64 * 0.01)).collect();
        assert!(glrt_detect(&window, G, 0.01, 0.01, 1e-6).unwrap());
        assert_abs_diff_eq!(glrt_statistic(&window, G, 0.01, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn glrt_swing_window_rejected() {
        // swing phase: |w| = 5 rad/s plus accelerations well away from the
        // gravity direction
        let window: Vec<ImuSample> = (0..5)
            .map(|i| ImuSample {
                t: i as f64 * 0.01,
                f: Vector3::new(4.0 * (-1f64).powi(i), 1.0, G - 3.0),
                w: Vector3::new(3.0, 4.0, 0.0),
                m: Vector3::zeros(),
            })
            .collect();
        assert!(!glrt_detect(&window, G, 0.01, 0.01, 3e5).unwrap());
    }

    #[test]
    fn glrt_window_too_short() {
        let window = vec![static_sample(0.0), static_sample(0.01)];
        assert_eq!(
            glrt_detect(&window, G, 0.01, 0.01, 3e5),
            Err(PdrError::WindowTooShort(2))
        );
    }

    #[test]
    fn glrt_statistic_matches_formula_oracle() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100 {
            let window: Vec<ImuSample> = (0..7)
                .map(|i| ImuSample {
                    t: i as f64 * 0.01,
                    f: Vector3::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(0.0..15.0),
                    ),
                    w: Vector3::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    ),
                    m: Vector3::zeros(),
                })
                .collect();
            let (sa, sw) = (0.013, 0.007);
            // direct re-implementation of the statistic
            let fbar: Vector3<f64> =
                window.iter().map(|s| s.f).sum::<Vector3<f64>>() / window.len() as f64;
            let mut expected = 0.0;
            for s in &window {
                expected += s.w.norm_squared() / (sw * sw)
                    + (s.f - G * fbar / fbar.norm()).norm_squared() / (sa * sa);
            }
            expected /= window.len() as f64;
            let got = glrt_statistic(&window, G, sa, sw).unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn predict_static_input_holds_position() {
        let cfg = PdrConfig::default();
        let mut s = NavState::new(Quat::identity());
        for i in 1..=100 {
            ekf_predict(&mut s, &static_sample(i as f64 * 0.01), 0.01, &cfg);
        }
        assert!(s.p.norm() < 1e-9);
        assert!(s.v.norm() < 1e-9);
    }

    #[test]
    fn predict_constant_yaw_rate() {
        let cfg = PdrConfig::default();
        let mut s = NavState::new(Quat::identity());
        let rate = std::f64::consts::FRAC_PI_2;
        for i in 1..=100 {
            let sample = ImuSample {
                t: i as f64 * 0.01,
                f: Vector3::new(0.0, 0.0, G),
                w: Vector3::new(0.0, 0.0, rate),
                m: Vector3::zeros(),
            };
            ekf_predict(&mut s, &sample, 0.01, &cfg);
        }
        let (_, _, yaw) = posemath::to_euler(s.q);
        assert_abs_diff_eq!(yaw, rate, epsilon = 1e-3);
    }

    #[test]
    fn predict_grows_covariance() {
        let cfg = PdrConfig::default();
        let mut s = NavState::new(Quat::identity());
        let mut prev = s.p_err.trace();
        for i in 1..=20 {
            ekf_predict(&mut s, &static_sample(i as f64 * 0.01), 0.01, &cfg);
            let tr = s.p_err.trace();
            assert!(tr > prev);
            prev = tr;
        }
    }

    #[test]
    fn zupt_zero_velocity_is_noop() {
        let cfg = PdrConfig::default();
        let mut s = NavState::new(Quat::identity());
        s.p = Vector3::new(1.0, 2.0, 3.0);
        let before = s.clone();
        zupt_update(&mut s, &cfg);
        assert!((s.p - before.p).norm() < 1e-12);
        assert!((s.v - before.v).norm() < 1e-12);
        assert!(s.q.angle_to(&before.q) < 1e-12);
    }

    #[test]
    fn zupt_kills_velocity_with_unit_covariance() {
        let cfg = PdrConfig {
            r_zupt: 1e-4,
            ..PdrConfig::default()
        };
        let mut s = NavState::new(Quat::identity());
        s.v = Vector3::new(1.0, 0.0, 0.0);
        s.p_err = SMatrix::identity();
        zupt_update(&mut s, &cfg);
        // scalar Kalman: v_after = v * R/(P+R) ~ 1e-4
        assert_abs_diff_eq!(s.v.norm(), 1e-4, epsilon = 1e-6);
    }

    #[test]
    fn zupt_contracts_covariance_loewner() {
        let cfg = PdrConfig::default();
        let mut s = NavState::new(Quat::identity());
        s.p_err = SMatrix::identity() * 0.5;
        let before = s.p_err;
        s.v = Vector3::new(0.3, -0.1, 0.2);
        zupt_update(&mut s, &cfg);
        let diff = before - s.p_err;
        let eig = diff.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-10));
        let eig_post = s.p_err.symmetric_eigenvalues();
        assert!(eig_post.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn static_log_produces_no_motion() {
        let cfg = PdrConfig::default();
        let log: Vec<ImuSample> = (0..500).map(|i| static_sample(i as f64 * 0.01)).collect();
        let out = extract_increments(&log, &cfg).unwrap();
        for inc in &out.increments {
            assert!(inc.dp.norm() < 1e-3);
        }
        assert!(out.final_pose.p.norm() < 1e-3);
    }

    #[test]
    fn empty_and_nonmonotone_logs_error() {
        let cfg = PdrConfig::default();
        assert_eq!(extract_increments(&[], &cfg).unwrap_err(), PdrError::EmptyLog);
        let log = vec![static_sample(0.0), static_sample(0.0)];
        assert_eq!(
            extract_increments(&log, &cfg).unwrap_err(),
            PdrError::NonMonotoneTime(1)
        );
    }

    #[test]
    fn increments_telescope_to_final_pose() {
        // noisy-ish walking-like log: alternating stance and swing
        let cfg = PdrConfig::default();
        let mut log = Vec::new();
        let mut t = 0.0;
        let mut rng = StdRng::seed_from_u64(2);
        for _stride in 0..6 {
            for _ in 0..40 {
                log.push(static_sample(t));
                t += 0.01;
            }
            for k in 0..60 {
                let phase = k as f64 / 60.0 * std::f64::consts::PI;
                log.push(ImuSample {
                    t,
                    f: Vector3::new(
                        8.0 * phase.sin() + rng.random_range(-0.01..0.01),
                        0.0,
                        G + rng.random_range(-0.01..0.01),
                    ),
                    w: Vector3::new(0.0, 6.0 * (2.0 * phase).sin(), 0.0),
                    m: Vector3::zeros(),
                });
                t += 0.01;
            }
        }
        for _ in 0..40 {
            log.push(static_sample(t));
            t += 0.01;
        }
        let out = extract_increments(&log, &cfg).unwrap();
        assert!(!out.increments.is_empty());
        let sum_dp: Vector3<f64> = out.increments.iter().map(|i| i.dp).sum();
        assert_abs_diff_eq!(sum_dp, out.final_pose.p - out.anchor.p, epsilon = 1e-12);
        let mut q = out.anchor.q;
        for inc in &out.increments {
            q = posemath::quat_mul(inc.dq, q);
        }
        assert!(q.angle_to(&out.final_pose.q) < 1e-9);
    }
}
