//! Rao-Blackwellized particle filter: bootstrap propagation, joint magnetic
//! and motion weighting, per-particle conditional maps, ESS-gated systematic
//! resampling and estimate extraction.
//!
//! Weights are kept in log space and normalized by max-shift after every
//! step. Per-particle RNG streams are derived from (seed, particle slot,
//! step) so results do not depend on evaluation order.

use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexgrid::{self, HexGridSpec};
use crate::magmap::{MagHyperparams, MagMap, MagMapError};
use crate::motionmap::MotionMap;
use crate::pdr::OdometryIncrement;
use crate::posemath::{self, Pose, Quat};

/// Diagonal per-stride process noise: 3 position variances (m^2) followed by
/// 3 orientation rotation-vector variances (rad^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub diag: [f64; 6],
}

impl ProcessNoise {
    pub fn zero() -> Self {
        ProcessNoise { diag: [0.0; 6] }
    }

    /// Default per-stride noise: more drift vertically than horizontally,
    /// small orientation noise.
    pub fn default_walking() -> Self {
        ProcessNoise {
            diag: [0.001, 0.001, 0.01, 2e-6, 2e-6, 2e-6],
        }
    }

    fn stds(&self) -> SVector<f64, 6> {
        SVector::from_iterator(self.diag.iter().map(|v| v.sqrt()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub num_particles: usize,
    pub process_noise: ProcessNoise,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_fraction: f64,
    pub rng_seed: u64,
    pub mag: MagHyperparams,
    /// Vertical-face transition probability of the motion map.
    pub p_v: f64,
    pub mag_grid: HexGridSpec,
    pub motion_grid: HexGridSpec,
    /// Rotate each position increment by the particle's heading deviation
    /// from the dead-reckoned orientation. Off by default: increments are
    /// applied in the odometry world frame as-is.
    pub rotate_increments: bool,
    /// Ablations: force the magnetic / motion weight to 1. Map building
    /// still runs so maps can be exported.
    pub use_mag_weight: bool,
    pub use_motion_weight: bool,
}

impl FilterConfig {
    /// Paper-scale defaults on the shared grids.
    pub fn default_with_seed(seed: u64) -> Self {
        let origin = Vector3::zeros();
        FilterConfig {
            num_particles: 100,
            process_noise: ProcessNoise::default_walking(),
            resample_fraction: 0.75,
            rng_seed: seed,
            mag: MagHyperparams {
                length_scale: 0.3,
                sigma_se: 1.0,
                sigma_lin: 0.5,
                r_m: nalgebra::Matrix3::identity() * 0.1,
                basis_size: 256,
                margin: 1.3,
            },
            p_v: 0.001,
            mag_grid: HexGridSpec::new(5.0, 2.0, origin),
            motion_grid: HexGridSpec::new(0.5, 0.125, origin),
            rotate_increments: false,
            use_mag_weight: true,
            use_motion_weight: true,
        }
    }

    pub fn validate(&self) -> Result<(), RbpfError> {
        if self.num_particles < 1 {
            return Err(RbpfError::InvalidConfig("num_particles >= 1".into()));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(RbpfError::InvalidConfig("resample_fraction in (0, 1]".into()));
        }
        if !(self.p_v > 0.0 && self.p_v < 1.0) {
            return Err(RbpfError::InvalidConfig("p_v in (0, 1)".into()));
        }
        self.mag
            .validate()
            .map_err(|e| RbpfError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RbpfError {
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("importance weights degenerate (all zero / non-finite)")]
    DegenerateWeights,
    #[error("weights not normalized")]
    UnnormalizedWeights,
    #[error(transparent)]
    MagMap(#[from] MagMapError),
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub pose: Pose,
    /// Normalized log-weight (logsumexp over the ensemble = 0).
    pub log_weight: f64,
    pub mag_map: MagMap,
    pub motion_map: MotionMap,
}

/// Per-step output record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub pose: Pose,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub cfg: FilterConfig,
    pub particles: Vec<Particle>,
    step: usize,
    /// Composed odometry orientation, for the optional increment-rotation
    /// mode.
    q_odom: Quat,
}

/// Effective sample size `1 / sum(w^2)` of normalized weights.
pub fn ess(weights: &[f64]) -> Result<f64, RbpfError> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(RbpfError::UnnormalizedWeights);
    }
    Ok(1.0 / weights.iter().map(|w| w * w).sum::<f64>())
}

/// Systematic resampling: offspring slot -> parent index, using a single
/// uniform offset and stratified positions.
pub fn systematic_resample(weights: &[f64], rng: &mut ChaCha12Rng) -> Vec<usize> {
    let n = weights.len();
    let u0: f64 = rng.random_range(0.0..1.0) / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut parent = 0usize;
    let mut cum_next = weights[0];
    for j in 0..n {
        let u = u0 + j as f64 / n as f64;
        while u >= cum_next && parent + 1 < n {
            parent += 1;
            cum += weights[parent - 1];
            cum_next = cum + weights[parent];
        }
        out.push(parent);
    }
    out
}

fn stream_rng(seed: u64, slot: u64, step: u64) -> ChaCha12Rng {
    // splitmix-style mixing of (seed, slot, step) into one stream key
    let mut x = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(slot.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(step.wrapping_mul(0x94D0_49BB_1331_11EB));
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    ChaCha12Rng::seed_from_u64(x)
}

impl Ensemble {
    /// All particles at the origin pose with identity orientation, uniform
    /// weights, maps holding only the origin tiles.
    pub fn init(cfg: FilterConfig) -> Result<Self, RbpfError> {
        cfg.validate()?;
        let n = cfg.num_particles;
        let template_mag = {
            let mut m = MagMap::new(cfg.mag_grid, &cfg.mag);
            m.ensure(hexgrid::locate(&Vector3::zeros(), &cfg.mag_grid));
            m
        };
        let template_motion = {
            let mut m = MotionMap::new();
            m.ensure(hexgrid::locate(&Vector3::zeros(), &cfg.motion_grid));
            m
        };
        let log_w = -(n as f64).ln();
        let particles = (0..n)
            .map(|_| Particle {
                pose: Pose::identity(),
                log_weight: log_w,
                mag_map: template_mag.clone(),
                motion_map: template_motion.clone(),
            })
            .collect();
        Ok(Ensemble {
            cfg,
            particles,
            step: 0,
            q_odom: Quat::identity(),
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    /// Propagate one particle through the motion model.
    fn propagate(&self, particle: &mut Particle, u: &OdometryIncrement, rng: &mut ChaCha12Rng) {
        let stds = self.cfg.process_noise.stds();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut eps = [0.0f64; 6];
        for (e, s) in eps.iter_mut().zip(stds.iter()) {
            *e = if *s > 0.0 { s * normal.sample(rng) } else { 0.0 };
        }
        let dp = if self.cfg.rotate_increments {
            let (_, _, dyaw) = posemath::to_euler(posemath::quat_mul(
                particle.pose.q,
                posemath::conjugate(self.q_odom),
            ));
            posemath::to_rotation(posemath::exp_map(Vector3::new(0.0, 0.0, dyaw))) * u.dp
        } else {
            u.dp
        };
        particle.pose.p += dp + Vector3::new(eps[0], eps[1], eps[2]);
        particle.pose.q = posemath::quat_mul(
            u.dq,
            posemath::quat_mul(
                particle.pose.q,
                posemath::exp_map(Vector3::new(eps[3], eps[4], eps[5])),
            ),
        );
    }

    /// One filter step: propagate, weigh, update maps, normalize, resample
    /// if the ESS gate fires, and return the highest-weight particle's pose.
    pub fn step(&mut self, u: &OdometryIncrement) -> Result<StepRecord, RbpfError> {
        self.step += 1;
        let step = self.step;
        let cfg_seed = self.cfg.rng_seed;

        for i in 0..self.particles.len() {
            let mut rng = stream_rng(cfg_seed, i as u64, step as u64);
            let mut particle = std::mem::replace(
                &mut self.particles[i],
                Particle {
                    pose: Pose::identity(),
                    log_weight: 0.0,
                    mag_map: MagMap::new(self.cfg.mag_grid, &self.cfg.mag),
                    motion_map: MotionMap::new(),
                },
            );
            let prev_p = particle.pose.p;
            self.propagate(&mut particle, u, &mut rng);

            let crossings =
                hexgrid::face_crossings(&prev_p, &particle.pose.p, &self.cfg.motion_grid);

            // weigh with the pre-step maps, then update them
            let log_wu = {
                let lw = particle
                    .motion_map
                    .log_motion_weight(&crossings, self.cfg.p_v);
                if self.cfg.use_motion_weight {
                    lw
                } else {
                    0.0
                }
            };
            let log_wm = {
                let lw = particle
                    .mag_map
                    .log_likelihood(&particle.pose, &u.z_m, &self.cfg.mag)?;
                if self.cfg.use_mag_weight {
                    lw
                } else {
                    0.0
                }
            };
            particle.log_weight += log_wu + log_wm;

            particle
                .mag_map
                .update(&particle.pose, &u.z_m, &self.cfg.mag)?;
            particle.motion_map.record_crossings(&crossings);

            self.particles[i] = particle;
        }
        self.q_odom = posemath::quat_mul(u.dq, self.q_odom);

        self.normalize()?;
        let weights = self.weights();
        let ess_val = ess(&weights)?;
        let threshold = self.cfg.resample_fraction * self.particles.len() as f64;
        let best_pose = self.best_particle().pose;
        let resampled = ess_val < threshold;
        if resampled {
            let mut rng = stream_rng(cfg_seed, u64::MAX, step as u64);
            let parents = systematic_resample(&weights, &mut rng);
            let mut new_particles = Vec::with_capacity(parents.len());
            let log_uniform = -(parents.len() as f64).ln();
            for parent in parents {
                let mut p = self.particles[parent].clone();
                p.log_weight = log_uniform;
                new_particles.push(p);
            }
            self.particles = new_particles;
        }

        Ok(StepRecord {
            step,
            t: u.t,
            pose: best_pose,
            ess: ess_val,
            resampled,
        })
    }

    /// Normalize log-weights so that logsumexp = 0.
    fn normalize(&mut self) -> Result<(), RbpfError> {
        let max = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(RbpfError::DegenerateWeights);
        }
        let lse = max
            + self
                .particles
                .iter()
                .map(|p| (p.log_weight - max).exp())
                .sum::<f64>()
                .ln();
        for p in &mut self.particles {
            p.log_weight -= lse;
        }
        Ok(())
    }

    /// Highest-weight particle (lowest index on ties).
    pub fn best_particle(&self) -> &Particle {
        self.particles
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.log_weight
                    .total_cmp(&b.log_weight)
                    .then(ib.cmp(ia))
            })
            .map(|(_, p)| p)
            .expect("ensemble nonempty")
    }

    pub fn step_index(&self) -> usize {
        self.step
    }
}

/// Run the filter over a full increment sequence.
pub fn run_filter(
    cfg: FilterConfig,
    increments: &[OdometryIncrement],
) -> Result<(Ensemble, Vec<StepRecord>), RbpfError> {
    let mut ensemble = Ensemble::init(cfg)?;
    let mut records = Vec::with_capacity(increments.len());
    for u in increments {
        records.push(ensemble.step(u)?);
    }
    Ok((ensemble, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg(seed: u64) -> FilterConfig {
        let mut cfg = FilterConfig::default_with_seed(seed);
        cfg.num_particles = 20;
        cfg.mag.basis_size = 16;
        cfg.mag_grid = HexGridSpec::new(2.0, 1.0, Vector3::zeros());
        cfg
    }

    fn increment(dp: Vector3<f64>, z_m: Vector3<f64>) -> OdometryIncrement {
        OdometryIncrement {
            t: 1.0,
            dp,
            dq: Quat::identity(),
            z_m,
        }
    }

    #[test]
    fn init_uniform_weights_origin_poses() {
        let cfg = small_cfg(0);
        let n = cfg.num_particles;
        let e = Ensemble::init(cfg).unwrap();
        for p in &e.particles {
            assert_abs_diff_eq!(p.log_weight.exp(), 1.0 / n as f64, epsilon = 1e-12);
            assert_eq!(p.pose.p, Vector3::zeros());
            assert_eq!(p.pose.q, Quat::identity());
            assert_eq!(p.mag_map.len(), 1);
            assert_eq!(p.motion_map.len(), 1);
        }
        assert_abs_diff_eq!(ess(&e.weights()).unwrap(), n as f64, epsilon = 1e-9);
    }

    #[test]
    fn ess_examples() {
        let n = 10;
        let uniform = vec![1.0 / n as f64; n];
        assert_abs_diff_eq!(ess(&uniform).unwrap(), n as f64, epsilon = 1e-12);
        let mut onehot = vec![0.0; n];
        onehot[3] = 1.0;
        assert_abs_diff_eq!(ess(&onehot).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ess(&[0.5, 0.25, 0.25]).unwrap(), 8.0 / 3.0, epsilon = 1e-12);
        assert!(matches!(
            ess(&[0.5, 0.2]),
            Err(RbpfError::UnnormalizedWeights)
        ));
    }

    #[test]
    fn systematic_resample_uniform_is_permutation() {
        let n = 16;
        let weights = vec![1.0 / n as f64; n];
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..20 {
            let mut parents = systematic_resample(&weights, &mut rng);
            parents.sort_unstable();
            assert_eq!(parents, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn systematic_resample_quarter_three_quarters() {
        let weights = vec![0.75, 0.25];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let parents = systematic_resample(&weights, &mut rng);
            assert_eq!(parents.len(), 2);
            // n = 2 slots over [0.75, 0.25]: counts (2,0) or (1,1) depending
            // on the offset; with 4 slots the spec case below is exact.
        }
        let weights4 = vec![0.75, 0.25, 0.0, 0.0];
        for _ in 0..50 {
            let parents = systematic_resample(&weights4, &mut rng);
            let c0 = parents.iter().filter(|&&p| p == 0).count();
            let c1 = parents.iter().filter(|&&p| p == 1).count();
            assert_eq!((c0, c1), (3, 1));
        }
    }

    #[test]
    fn systematic_resample_offspring_counts_within_floor_ceil() {
        let weights = vec![0.11, 0.42, 0.05, 0.22, 0.2];
        let n = weights.len();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let parents = systematic_resample(&weights, &mut rng);
            for (i, w) in weights.iter().enumerate() {
                let c = parents.iter().filter(|&&p| p == i).count();
                let expect = n as f64 * w;
                assert!(c >= expect.floor() as usize && c <= expect.ceil() as usize);
            }
        }
    }

    #[test]
    fn systematic_resample_frequencies_match_weights() {
        let weights = vec![0.5, 0.3, 0.2];
        let mut counts = [0usize; 3];
        let trials = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..trials {
            for p in systematic_resample(&weights, &mut rng) {
                counts[p] += 1;
            }
        }
        let total = (3 * trials) as f64;
        for (i, w) in weights.iter().enumerate() {
            let freq = counts[i] as f64 / total;
            let sigma = (w * (1.0 - w) / total).sqrt();
            assert!((freq - w).abs() < 3.0 * sigma + 1e-3, "freq {freq} vs {w}");
        }
    }

    #[test]
    fn single_particle_zero_noise_is_dead_reckoning() {
        let mut cfg = small_cfg(0);
        cfg.num_particles = 1;
        cfg.process_noise = ProcessNoise::zero();
        let mut e = Ensemble::init(cfg).unwrap();
        let mut expected = Vector3::zeros();
        for k in 0..10 {
            let dp = Vector3::new(0.3, 0.1 * k as f64, 0.0);
            expected += dp;
            let rec = e.step(&increment(dp, Vector3::new(0.3, 0.0, -0.5))).unwrap();
            assert_abs_diff_eq!(rec.pose.p, expected, epsilon = 1e-12);
            assert_eq!(rec.pose.q, Quat::identity());
        }
        // maps were built along the way
        assert!(e.particles[0].motion_map.len() > 1);
    }

    #[test]
    fn propagation_ensemble_mean_matches_increment() {
        let mut cfg = small_cfg(4);
        cfg.num_particles = 10_000;
        cfg.mag.basis_size = 4;
        cfg.use_mag_weight = false;
        cfg.use_motion_weight = false;
        let e = Ensemble::init(cfg.clone()).unwrap();
        let dp = Vector3::new(0.5, -0.2, 0.1);
        let mut mean = Vector3::zeros();
        let mut particles = e.particles.clone();
        for (i, p) in particles.iter_mut().enumerate() {
            let mut rng = stream_rng(cfg.rng_seed, i as u64, 1);
            e.propagate(p, &increment(dp, Vector3::zeros()), &mut rng);
            mean += p.pose.p;
        }
        mean /= cfg.num_particles as f64;
        let sigma = cfg.process_noise.diag[0].sqrt() / (cfg.num_particles as f64).sqrt();
        for i in 0..2 {
            assert!((mean[i] - dp[i]).abs() < 4.0 * sigma, "axis {i}");
        }
        let sigma_z = cfg.process_noise.diag[2].sqrt() / (cfg.num_particles as f64).sqrt();
        assert!((mean.z - dp.z).abs() < 4.0 * sigma_z);
    }

    #[test]
    fn orientation_perturbation_magnitude_statistics() {
        let mut cfg = small_cfg(5);
        cfg.num_particles = 5000;
        cfg.mag.basis_size = 4;
        let q_noise = 1e-4;
        cfg.process_noise = ProcessNoise {
            diag: [0.0, 0.0, 0.0, q_noise, q_noise, q_noise],
        };
        let e = Ensemble::init(cfg.clone()).unwrap();
        let mut particles = e.particles.clone();
        let mut total_angle = 0.0;
        for (i, p) in particles.iter_mut().enumerate() {
            let mut rng = stream_rng(cfg.rng_seed, i as u64, 1);
            e.propagate(p, &increment(Vector3::zeros(), Vector3::zeros()), &mut rng);
            total_angle += p.pose.q.angle_to(&Quat::identity());
        }
        let mean_angle = total_angle / cfg.num_particles as f64;
        // E|eps| for isotropic 3D normal with per-axis std s: s*sqrt(8/pi)
        let expected = q_noise.sqrt() * (8.0 / std::f64::consts::PI).sqrt();
        assert!((mean_angle - expected).abs() < 0.05 * expected, "{mean_angle} vs {expected}");
    }

    #[test]
    fn log_weight_bookkeeping_per_step() {
        // without resampling, new - old normalized log-weights differ from
        // log w_m + log w_u by a common normalization constant
        let mut cfg = small_cfg(6);
        cfg.resample_fraction = 1e-9; // never resample (ESS >= 1 always)
        let mut e = Ensemble::init(cfg.clone()).unwrap();
        let u = increment(Vector3::new(0.6, 0.0, 0.0), Vector3::new(0.3, 0.0, -0.5));
        // replicate the per-particle weight increments
        let mut deltas = Vec::new();
        {
            let mut shadow = e.clone();
            for i in 0..shadow.particles.len() {
                let mut rng = stream_rng(cfg.rng_seed, i as u64, 1);
                let mut p = shadow.particles[i].clone();
                let prev = p.pose.p;
                shadow.propagate(&mut p, &u, &mut rng);
                let crossings = hexgrid::face_crossings(&prev, &p.pose.p, &cfg.motion_grid);
                let lwu = p.motion_map.log_motion_weight(&crossings, cfg.p_v);
                let lwm = p.mag_map.log_likelihood(&p.pose, &u.z_m, &cfg.mag).unwrap();
                deltas.push(lwu + lwm);
                shadow.particles[i] = p;
            }
        }
        let before: Vec<f64> = e.particles.iter().map(|p| p.log_weight).collect();
        let rec = e.step(&u).unwrap();
        assert!(!rec.resampled);
        let after: Vec<f64> = e.particles.iter().map(|p| p.log_weight).collect();
        let shift = after[0] - before[0] - deltas[0];
        for i in 1..after.len() {
            assert_abs_diff_eq!(after[i] - before[i] - deltas[i], shift, epsilon = 1e-9);
        }
    }

    #[test]
    fn resampling_occurs_iff_ess_below_threshold() {
        let mut cfg = small_cfg(7);
        cfg.num_particles = 30;
        let mut e = Ensemble::init(cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for k in 0..25 {
            let dp = Vector3::new(
                0.5 * (k as f64 * 0.7).cos(),
                0.5 * (k as f64 * 0.7).sin(),
                0.0,
            );
            let z = Vector3::new(
                0.3 + rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                -0.5 + rng.random_range(-0.2..0.2),
            );
            let rec = e.step(&increment(dp, z)).unwrap();
            let threshold = e.cfg.resample_fraction * e.cfg.num_particles as f64;
            assert_eq!(rec.resampled, rec.ess < threshold);
            if rec.resampled {
                // weights reset uniform after resampling
                let w = e.weights();
                assert_abs_diff_eq!(ess(&w).unwrap(), e.cfg.num_particles as f64, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let cfg = small_cfg(42);
        let world_z = Vector3::new(0.3, 0.0, -0.5);
        let run = || {
            let mut e = Ensemble::init(cfg.clone()).unwrap();
            let mut out = Vec::new();
            for k in 0..15 {
                let dp = Vector3::new(0.4, 0.1 * (k % 3) as f64, 0.01);
                out.push(e.step(&increment(dp, world_z)).unwrap());
            }
            out
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.pose.p, rb.pose.p);
            assert_eq!(ra.pose.q, rb.pose.q);
            assert_eq!(ra.ess, rb.ess);
            assert_eq!(ra.resampled, rb.resampled);
        }
    }

    #[test]
    fn weighting_contracts_posterior_spread() {
        // informative pre-trained magnetic map: spread after weighting is no
        // larger than before
        let mut cfg = small_cfg(11);
        cfg.num_particles = 200;
        cfg.mag.basis_size = 32;
        cfg.mag.r_m = nalgebra::Matrix3::identity() * 0.01;
        cfg.use_motion_weight = false;
        let mut e = Ensemble::init(cfg.clone()).unwrap();
        // pre-train all (identical) maps on a linear field with gradient in x
        let field = |p: &Vector3<f64>| Vector3::new(0.3 + 1.5 * p.x, 0.0, -0.5 - 0.8 * p.x);
        let template = {
            let mut m = e.particles[0].mag_map.clone();
            for i in -10..=10 {
                let p = Vector3::new(i as f64 * 0.15, 0.0, 0.0);
                let pose = Pose::new(p, Quat::identity());
                m.update(&pose, &field(&p), &cfg.mag).unwrap();
            }
            m
        };
        for p in &mut e.particles {
            p.mag_map = template.clone();
        }
        // one step with an informative measurement at the true new position
        let dp = Vector3::new(0.5, 0.0, 0.0);
        let z = field(&Vector3::new(0.5, 0.0, 0.0));
        // spread before weighting: propagate only
        let mut props = Vec::new();
        for (i, p) in e.particles.iter().enumerate() {
            let mut rng = stream_rng(cfg.rng_seed, i as u64, 1);
            let mut q = p.clone();
            e.propagate(&mut q, &increment(dp, z), &mut rng);
            props.push(q.pose.p);
        }
        let mean_before: Vector3<f64> = props.iter().sum::<Vector3<f64>>() / props.len() as f64;
        let spread_before: f64 = props
            .iter()
            .map(|p| (p - mean_before).norm_squared())
            .sum::<f64>()
            / props.len() as f64;
        let _ = e.step(&increment(dp, z)).unwrap();
        let w = e.weights();
        let mean_after: Vector3<f64> = e
            .particles
            .iter()
            .zip(&w)
            .map(|(p, wi)| p.pose.p * *wi)
            .sum();
        let spread_after: f64 = e
            .particles
            .iter()
            .zip(&w)
            .map(|(p, wi)| wi * (p.pose.p - mean_after).norm_squared())
            .sum();
        assert!(
            spread_after <= spread_before,
            "after {spread_after} before {spread_before}"
        );
    }

    #[test]
    fn disabled_likelihoods_track_dead_reckoning() {
        let mut cfg = small_cfg(13);
        cfg.use_mag_weight = false;
        cfg.use_motion_weight = false;
        cfg.num_particles = 50;
        let mut e = Ensemble::init(cfg.clone()).unwrap();
        let mut dr = Vector3::zeros();
        let steps = 30;
        for _ in 0..steps {
            let dp = Vector3::new(0.5, 0.0, 0.0);
            dr += dp;
            e.step(&increment(dp, Vector3::new(0.3, 0.0, -0.5))).unwrap();
        }
        let w = e.weights();
        let mean: Vector3<f64> = e
            .particles
            .iter()
            .zip(&w)
            .map(|(p, wi)| p.pose.p * *wi)
            .sum();
        // within the propagation-noise envelope (random-walk std * slack)
        let sigma_h = (cfg.process_noise.diag[0] * steps as f64).sqrt();
        let sigma_v = (cfg.process_noise.diag[2] * steps as f64).sqrt();
        assert!((mean.x - dr.x).abs() < 5.0 * sigma_h);
        assert!((mean.y - dr.y).abs() < 5.0 * sigma_h);
        assert!((mean.z - dr.z).abs() < 5.0 * sigma_v);
    }

    #[test]
    fn map_trajectory_consistency() {
        // every motion tile in a particle's map was entered by its own
        // (ancestral) trajectory: check that maps only contain tiles near
        // the traveled corridor
        let mut cfg = small_cfg(17);
        cfg.num_particles = 10;
        let mut e = Ensemble::init(cfg.clone()).unwrap();
        for k in 0..20 {
            let dp = Vector3::new(0.5, 0.0, 0.0);
            let z = Vector3::new(0.3 + 0.05 * (k as f64).sin(), 0.0, -0.5);
            e.step(&increment(dp, z)).unwrap();
        }
        for p in &e.particles {
            for tile in p.motion_map.tiles() {
                let c = hexgrid::center(tile.idx, &cfg.motion_grid);
                // corridor from (0,0,0) to (10,0,0) plus noise slack
                assert!(c.x > -2.0 && c.x < 12.0, "tile at {c:?}");
                assert!(c.y.abs() < 2.5);
            }
        }
    }
}
