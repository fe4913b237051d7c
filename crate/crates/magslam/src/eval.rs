//! Multi-run evaluation harness: start-aligned RMSE metrics, the four-row
//! benchmark (full filter, both single-map ablations, dead reckoning) and
//! aggregate reporting.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pdr::OdometryIncrement;
use crate::posemath::{self, Pose};
use crate::rbpf::{self, FilterConfig, RbpfError};
use crate::sim::{self, DriftSpec, SimError, TrajectorySpec, World, WorldSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate/truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] RbpfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationRmse {
    pub horizontal: f64,
    pub vertical: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationRmse {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Per-run metrics of one estimator against the start-aligned truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub translation: TranslationRmse,
    pub orientation: OrientationRmse,
    /// Distance between estimated and true final position, meters.
    pub endpoint_deviation: f64,
}

/// RMSE of an estimated pose sequence against the time-aligned truth.
/// Horizontal covers (x, y), vertical covers z; orientation errors are the
/// per-axis Euler angles of the relative rotation.
pub fn rmse(est: &[Pose], truth: &[Pose]) -> Result<RunMetrics, EvalError> {
    if est.len() != truth.len() {
        return Err(EvalError::LengthMismatch(est.len(), truth.len()));
    }
    let n = est.len().max(1) as f64;
    let mut sq_h = 0.0;
    let mut sq_v = 0.0;
    let mut sq_t = 0.0;
    let mut sq_e = [0.0f64; 3];
    for (e, t) in est.iter().zip(truth) {
        let d = e.p - t.p;
        sq_h += d.x * d.x + d.y * d.y;
        sq_v += d.z * d.z;
        sq_t += d.norm_squared();
        let rel = posemath::quat_mul(e.q, posemath::conjugate(t.q));
        let (roll, pitch, yaw) = posemath::to_euler(rel);
        sq_e[0] += roll * roll;
        sq_e[1] += pitch * pitch;
        sq_e[2] += yaw * yaw;
    }
    let endpoint = match (est.last(), truth.last()) {
        (Some(e), Some(t)) => (e.p - t.p).norm(),
        _ => 0.0,
    };
    Ok(RunMetrics {
        translation: TranslationRmse {
            horizontal: (sq_h / n).sqrt(),
            vertical: (sq_v / n).sqrt(),
            total: (sq_t / n).sqrt(),
        },
        orientation: OrientationRmse {
            roll: (sq_e[0] / n).sqrt(),
            pitch: (sq_e[1] / n).sqrt(),
            yaw: (sq_e[2] / n).sqrt(),
        },
        endpoint_deviation: endpoint,
    })
}

/// Truth poses expressed in the start-aligned odometry frame: positions
/// relative to the first pose, orientations relative to the first
/// orientation. One entry per stride increment.
pub fn align_truth(truth: &[Pose]) -> Vec<Pose> {
    let p0 = truth.first().map_or(Vector3::zeros(), |t| t.p);
    let q0_inv = truth
        .first()
        .map_or_else(crate::posemath::Quat::identity, |t| {
            posemath::conjugate(t.q)
        });
    truth
        .iter()
        .skip(1)
        .map(|t| Pose::new(t.p - p0, posemath::quat_mul(t.q, q0_inv)))
        .collect()
}

/// Dead-reckoning pose sequence: cumulative composition of the increments
/// from the identity start pose.
pub fn dead_reckon(increments: &[OdometryIncrement]) -> Vec<Pose> {
    let mut pose = Pose::identity();
    increments
        .iter()
        .map(|u| {
            pose.p += u.dp;
            pose.q = posemath::quat_mul(u.dq, pose.q);
            pose
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoMagMap,
    NoMotionMap,
    DeadReckoning,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoMagMap,
        Variant::NoMotionMap,
        Variant::DeadReckoning,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMagMap => "no-mag-map",
            Variant::NoMotionMap => "no-motion-map",
            Variant::DeadReckoning => "dead-reckoning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub runs: usize,
    pub filter: FilterConfig,
    pub world: WorldSpec,
    pub trajectory: TrajectorySpec,
    pub drift: DriftSpec,
}

impl BenchmarkConfig {
    /// Benchmark defaults: the two-loop sloped trajectory in the dipole
    /// world, drift calibrated so dead-reckoning total RMSE lands near
    /// 0.6 m.
    pub fn default_with_seed(seed: u64) -> Self {
        BenchmarkConfig {
            seed,
            runs: 10,
            filter: FilterConfig::default_with_seed(seed),
            world: WorldSpec::default_benchmark(seed),
            trajectory: {
                let mut t = TrajectorySpec::two_loop_sloped(9.0, 6.0, 0.4, 0.7);
                t.loop_count = 1;
                t
            },
            drift: DriftSpec::default_walking(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std }
}

/// Mean and std of every metric over the runs of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub horizontal: Aggregate,
    pub vertical: Aggregate,
    pub total: Aggregate,
    pub roll: Aggregate,
    pub pitch: Aggregate,
    pub yaw: Aggregate,
    pub endpoint_deviation: Aggregate,
}

fn aggregate_metrics(runs: &[RunMetrics]) -> AggregateMetrics {
    let pick = |f: fn(&RunMetrics) -> f64| aggregate(&runs.iter().map(f).collect::<Vec<_>>());
    AggregateMetrics {
        horizontal: pick(|r| r.translation.horizontal),
        vertical: pick(|r| r.translation.vertical),
        total: pick(|r| r.translation.total),
        roll: pick(|r| r.orientation.roll),
        pitch: pick(|r| r.orientation.pitch),
        yaw: pick(|r| r.orientation.yaw),
        endpoint_deviation: pick(|r| r.endpoint_deviation),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub runs: Vec<RunMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Published hardware-experiment total-RMSE results, embedded so reports
/// carry a fixed comparison column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResults {
    pub full_total: Aggregate,
    pub no_motion_map_total: Aggregate,
    pub no_mag_map_total: Aggregate,
}

impl Default for ReferenceResults {
    fn default() -> Self {
        ReferenceResults {
            full_total: Aggregate {
                mean: 0.41,
                std: 0.06,
            },
            no_motion_map_total: Aggregate {
                mean: 1.57,
                std: 0.33,
            },
            no_mag_map_total: Aggregate {
                mean: 0.66,
                std: 0.19,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Complete effective configuration, defaults resolved.
    pub config: BenchmarkConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantReport>,
    pub reference: ReferenceResults,
}

impl RunReport {
    pub fn variant(&self, v: Variant) -> &VariantReport {
        self.variants
            .iter()
            .find(|r| r.variant == v)
            .expect("all variants present")
    }
}

fn filter_for(variant: Variant, base: &FilterConfig, seed: u64) -> FilterConfig {
    let mut cfg = base.clone();
    cfg.rng_seed = seed;
    match variant {
        Variant::Full | Variant::DeadReckoning => {}
        Variant::NoMagMap => cfg.use_mag_weight = false,
        Variant::NoMotionMap => cfg.use_motion_weight = false,
    }
    cfg
}

/// Execute `runs` seeded runs of the four estimator variants on identical
/// inputs and aggregate the metrics.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<RunReport, EvalError> {
    let world = World::new(config.world.clone());
    let truth = sim::gen_truth(&config.trajectory)?;
    let truth_aligned = align_truth(&truth);
    let seeds: Vec<u64> = (0..config.runs as u64).map(|r| config.seed + r).collect();

    let mut per_variant: Vec<Vec<RunMetrics>> = vec![Vec::new(); Variant::ALL.len()];
    for &seed in &seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let increments = sim::corrupt(
            &truth,
            &world,
            &config.drift,
            &config.filter.mag.r_m,
            &mut rng,
        )?;
        for (vi, &variant) in Variant::ALL.iter().enumerate() {
            let est = match variant {
                Variant::DeadReckoning => dead_reckon(&increments),
                _ => {
                    let cfg = filter_for(variant, &config.filter, seed);
                    let (_, records) = rbpf::run_filter(cfg, &increments)?;
                    records.iter().map(|r| r.pose).collect()
                }
            };
            per_variant[vi].push(rmse(&est, &truth_aligned)?);
        }
    }

    let variants = Variant::ALL
        .iter()
        .zip(per_variant)
        .map(|(&variant, runs)| VariantReport {
            variant,
            aggregate: aggregate_metrics(&runs),
            runs,
        })
        .collect();

    Ok(RunReport {
        config: config.clone(),
        seeds,
        variants,
        reference: ReferenceResults::default(),
    })
}
