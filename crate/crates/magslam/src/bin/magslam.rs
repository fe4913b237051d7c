use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use magslam::eval::{self, BenchmarkConfig, Variant};
use magslam::hexgrid::HexGridSpec;
use magslam::io;
use magslam::magmap::MagHyperparams;
use magslam::pdr::{self, PdrConfig};
use magslam::rbpf::{self, FilterConfig, ProcessNoise};
use magslam::sim::{self, DriftSpec, ImuSynthSpec, TrajectorySpec, World, WorldSpec};

#[derive(Parser)]
#[command(
    name = "magslam",
    about = "Indoor pedestrian SLAM with magnetic-field and motion maps",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dead-reckon a raw IMU log into stride increments
    Pdr(PdrCmd),
    /// Run the particle filter over stride increments
    Slam(SlamCmd),
    /// Generate a synthetic world, trajectory and sensor logs
    Simulate(SimulateCmd),
    /// Multi-run benchmark over the four estimator variants
    Bench(BenchCmd),
    /// Sample field magnitudes on a horizontal grid
    ExportHeatmap(HeatmapCmd),
}

#[derive(Args)]
struct PdrArgs {
    /// Gravity magnitude, m/s^2
    #[arg(long, default_value_t = 9.81)]
    gravity: f64,
    /// Accelerometer noise scale for the stance detector, m/s^2
    #[arg(long, default_value_t = 0.01)]
    sigma_a: f64,
    /// Gyroscope noise scale for the stance detector, rad/s
    #[arg(long, default_value_t = 0.01)]
    sigma_w: f64,
    /// Stance detector window, samples
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Stance detector threshold
    #[arg(long, default_value_t = 3e5)]
    glrt_threshold: f64,
    /// Zero-velocity pseudo-measurement variance, (m/s)^2
    #[arg(long, default_value_t = 1e-4)]
    r_zupt: f64,
}

impl PdrArgs {
    fn to_config(&self) -> PdrConfig {
        PdrConfig {
            gravity: self.gravity,
            sigma_a: self.sigma_a,
            sigma_w: self.sigma_w,
            window: self.window,
            glrt_threshold: self.glrt_threshold,
            r_zupt: self.r_zupt,
        }
    }
}

#[derive(Args)]
struct FilterArgs {
    /// Particle count
    #[arg(long, default_value_t = 100)]
    num_particles: usize,
    /// Process noise variances: px,py,pz,qx,qy,qz
    #[arg(long, value_delimiter = ',', num_args = 6,
          default_values_t = [0.001, 0.001, 0.01, 2e-6, 2e-6, 2e-6])]
    process_noise: Vec<f64>,
    /// Resample when ESS falls below this fraction of the particle count
    #[arg(long, default_value_t = 0.75)]
    resample_fraction: f64,
    /// Vertical-face transition probability of the motion map
    #[arg(long, default_value_t = 0.001)]
    p_v: f64,
    /// SE kernel length scale, m
    #[arg(long, default_value_t = 0.3)]
    length_scale: f64,
    /// SE kernel magnitude scale
    #[arg(long, default_value_t = 1.0)]
    sigma_se: f64,
    /// Linear kernel magnitude scale
    #[arg(long, default_value_t = 0.5)]
    sigma_lin: f64,
    /// Magnetometer noise variance (isotropic)
    #[arg(long, default_value_t = 0.1)]
    r_m: f64,
    /// SE basis functions per magnetic tile
    #[arg(long, default_value_t = 256)]
    basis_size: usize,
    /// Magnetic tile domain extension factor
    #[arg(long, default_value_t = 1.3)]
    margin: f64,
    /// Magnetic tile circumradius, m
    #[arg(long, default_value_t = 5.0)]
    mag_radius: f64,
    /// Magnetic tile half-height, m
    #[arg(long, default_value_t = 2.0)]
    mag_half_height: f64,
    /// Motion tile circumradius, m
    #[arg(long, default_value_t = 0.5)]
    motion_radius: f64,
    /// Motion tile half-height, m
    #[arg(long, default_value_t = 0.125)]
    motion_half_height: f64,
    /// Rotate position increments by each particle's heading deviation
    #[arg(long)]
    rotate_increments: bool,
    /// Force the magnetic weight to 1 (map building still runs)
    #[arg(long)]
    no_mag_weight: bool,
    /// Force the motion weight to 1 (map building still runs)
    #[arg(long)]
    no_motion_weight: bool,
}

impl FilterArgs {
    fn to_config(&self, seed: u64) -> FilterConfig {
        let origin = Vector3::zeros();
        FilterConfig {
            num_particles: self.num_particles,
            process_noise: ProcessNoise {
                diag: [
                    self.process_noise[0],
                    self.process_noise[1],
                    self.process_noise[2],
                    self.process_noise[3],
                    self.process_noise[4],
                    self.process_noise[5],
                ],
            },
            resample_fraction: self.resample_fraction,
            rng_seed: seed,
            mag: MagHyperparams {
                length_scale: self.length_scale,
                sigma_se: self.sigma_se,
                sigma_lin: self.sigma_lin,
                r_m: Matrix3::identity() * self.r_m,
                basis_size: self.basis_size,
                margin: self.margin,
            },
            p_v: self.p_v,
            mag_grid: HexGridSpec::new(self.mag_radius, self.mag_half_height, origin),
            motion_grid: HexGridSpec::new(self.motion_radius, self.motion_half_height, origin),
            rotate_increments: self.rotate_increments,
            use_mag_weight: !self.no_mag_weight,
            use_motion_weight: !self.no_motion_weight,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Benchmark loop width, m
    #[arg(long, default_value_t = 9.0)]
    width: f64,
    /// Benchmark loop depth, m
    #[arg(long, default_value_t = 6.0)]
    depth: f64,
    /// Height of the sloped turn, m
    #[arg(long, default_value_t = 0.4)]
    slope_height: f64,
    /// Stride length, m
    #[arg(long, default_value_t = 0.7)]
    stride: f64,
    /// Repetitions of the waypoint loop
    #[arg(long, default_value_t = 1)]
    loops: usize,
    /// Per-stride position noise std: x,y,z (m)
    #[arg(long, value_delimiter = ',', num_args = 3,
          default_values_t = [0.01, 0.01, 0.002])]
    drift_dp_std: Vec<f64>,
    /// Per-stride orientation noise std: x,y,z (rad)
    #[arg(long, value_delimiter = ',', num_args = 3,
          default_values_t = [2e-4, 2e-4, 5e-4])]
    drift_dtheta_std: Vec<f64>,
    /// Heading random-walk rate, rad per sqrt(stride)
    #[arg(long, default_value_t = 0.002)]
    heading_walk: f64,
    /// Constant heading-rate magnitude (sign drawn per run), rad per stride
    #[arg(long, default_value_t = 8e-5)]
    heading_rate: f64,
    /// Deterministic vertical bias, m per stride
    #[arg(long, default_value_t = 0.0085)]
    vertical_bias: f64,
}

impl ScenarioArgs {
    fn trajectory(&self) -> TrajectorySpec {
        let mut t =
            TrajectorySpec::two_loop_sloped(self.width, self.depth, self.slope_height, self.stride);
        t.loop_count = self.loops;
        t
    }

    fn drift(&self) -> DriftSpec {
        DriftSpec {
            dp_std: Vector3::new(
                self.drift_dp_std[0],
                self.drift_dp_std[1],
                self.drift_dp_std[2],
            ),
            dtheta_std: Vector3::new(
                self.drift_dtheta_std[0],
                self.drift_dtheta_std[1],
                self.drift_dtheta_std[2],
            ),
            heading_walk: self.heading_walk,
            heading_rate: self.heading_rate,
            vertical_bias: self.vertical_bias,
        }
    }
}

#[derive(Args)]
struct PdrCmd {
    /// Raw IMU CSV (t,fx,fy,fz,wx,wy,wz,mx,my,mz)
    #[arg(long)]
    input: PathBuf,
    /// Output increment CSV
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    pdr: PdrArgs,
}

#[derive(Args)]
struct SlamCmd {
    /// Increment CSV (t,dpx,dpy,dpz,dqw,dqx,dqy,dqz,mx,my,mz)
    #[arg(long)]
    input: PathBuf,
    /// Output trajectory CSV
    #[arg(long)]
    output: PathBuf,
    /// Optional magnetic map export (JSON)
    #[arg(long)]
    mag_map: Option<PathBuf>,
    /// Optional motion map export (JSON)
    #[arg(long)]
    motion_map: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct SimulateCmd {
    /// Output directory
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also synthesize a raw IMU log (imu.csv)
    #[arg(long)]
    imu: bool,
    /// Magnetometer noise variance applied to increment samples
    #[arg(long, default_value_t = 0.1)]
    r_m: f64,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Args)]
struct BenchCmd {
    /// Report output path (JSON)
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeded runs
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Args)]
struct HeatmapCmd {
    /// Output CSV (x,y,norm)
    #[arg(long)]
    output: PathBuf,
    /// Sample the true field of the seeded benchmark world
    #[arg(long)]
    world_seed: Option<u64>,
    /// Sample the posterior mean of an exported magnetic map
    #[arg(long)]
    map: Option<PathBuf>,
    /// Grid spacing, m
    #[arg(long, default_value_t = 0.5)]
    spacing: f64,
    /// Horizontal extent, m (grid covers [-extent, extent]^2)
    #[arg(long, default_value_t = 15.0)]
    extent: f64,
    /// Height of the sampling plane, m
    #[arg(long, default_value_t = 0.0)]
    z: f64,
    #[command(flatten)]
    filter: FilterArgs,
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Pdr(cmd) => run_pdr(cmd),
        Command::Slam(cmd) => run_slam(cmd),
        Command::Simulate(cmd) => run_simulate(cmd),
        Command::Bench(cmd) => run_bench(cmd),
        Command::ExportHeatmap(cmd) => run_heatmap(cmd),
    }
}

fn run_pdr(cmd: PdrCmd) -> Result<(), String> {
    let text = io::read_string(&cmd.input).map_err(|e| e.to_string())?;
    let samples = io::imu_from_csv(&text).map_err(|e| e.to_string())?;
    let out = pdr::extract_increments(&samples, &cmd.pdr.to_config()).map_err(|e| e.to_string())?;
    io::write_string(&cmd.output, &io::increments_to_csv(&out.increments))
        .map_err(|e| e.to_string())?;
    println!(
        "{} samples -> {} stride increments",
        samples.len(),
        out.increments.len()
    );
    Ok(())
}

fn run_slam(cmd: SlamCmd) -> Result<(), String> {
    let text = io::read_string(&cmd.input).map_err(|e| e.to_string())?;
    let increments = io::increments_from_csv(&text).map_err(|e| e.to_string())?;
    let cfg = cmd.filter.to_config(cmd.seed);
    let (ensemble, records) = rbpf::run_filter(cfg, &increments).map_err(|e| e.to_string())?;
    io::write_string(&cmd.output, &io::trajectory_to_csv(&records)).map_err(|e| e.to_string())?;
    let best = ensemble.best_particle();
    if let Some(path) = &cmd.mag_map {
        io::write_json(path, &io::export_mag_map(&best.mag_map)).map_err(|e| e.to_string())?;
    }
    if let Some(path) = &cmd.motion_map {
        io::write_json(path, &io::export_motion_map(&best.motion_map))
            .map_err(|e| e.to_string())?;
    }
    println!(
        "{} steps, final position [{:.3}, {:.3}, {:.3}]",
        records.len(),
        best.pose.p.x,
        best.pose.p.y,
        best.pose.p.z
    );
    Ok(())
}

fn run_simulate(cmd: SimulateCmd) -> Result<(), String> {
    std::fs::create_dir_all(&cmd.out_dir).map_err(|e| e.to_string())?;
    let world = World::new(WorldSpec::default_benchmark(cmd.seed));
    let truth = sim::gen_truth(&cmd.scenario.trajectory()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(cmd.seed);
    let increments = sim::corrupt(
        &truth,
        &world,
        &cmd.scenario.drift(),
        &(Matrix3::identity() * cmd.r_m),
        &mut rng,
    )
    .map_err(|e| e.to_string())?;

    let truth_rows: Vec<(f64, magslam::Pose)> = truth
        .iter()
        .enumerate()
        .map(|(k, pose)| (k as f64, *pose))
        .collect();
    io::write_string(&cmd.out_dir.join("truth.csv"), &io::truth_to_csv(&truth_rows))
        .map_err(|e| e.to_string())?;
    io::write_string(
        &cmd.out_dir.join("increments.csv"),
        &io::increments_to_csv(&increments),
    )
    .map_err(|e| e.to_string())?;
    if cmd.imu {
        let spec = ImuSynthSpec::default();
        let log = sim::synth_imu(&truth, Some(&world), &spec, &mut rng)
            .map_err(|e| e.to_string())?;
        io::write_string(&cmd.out_dir.join("imu.csv"), &io::imu_to_csv(&log))
            .map_err(|e| e.to_string())?;
    }
    println!(
        "{} stride poses, {} increments -> {}",
        truth.len(),
        increments.len(),
        cmd.out_dir.display()
    );
    Ok(())
}

fn run_bench(cmd: BenchCmd) -> Result<(), String> {
    let config = BenchmarkConfig {
        seed: cmd.seed,
        runs: cmd.runs,
        filter: cmd.filter.to_config(cmd.seed),
        world: WorldSpec::default_benchmark(cmd.seed),
        trajectory: cmd.scenario.trajectory(),
        drift: cmd.scenario.drift(),
    };
    let report = eval::run_benchmark(&config).map_err(|e| e.to_string())?;
    io::write_json(&cmd.output, &report).map_err(|e| e.to_string())?;
    println!("variant          total RMSE (m)    horizontal    vertical    endpoint (m)");
    for v in Variant::ALL {
        let a = report.variant(v).aggregate;
        println!(
            "{:<16} {:.3} +- {:.3}    {:.3}         {:.3}       {:.3}",
            v.label(),
            a.total.mean,
            a.total.std,
            a.horizontal.mean,
            a.vertical.mean,
            a.endpoint_deviation.mean
        );
    }
    println!("report written to {}", cmd.output.display());
    Ok(())
}

fn run_heatmap(cmd: HeatmapCmd) -> Result<(), String> {
    let mut points = Vec::new();
    let steps = (2.0 * cmd.extent / cmd.spacing).floor() as i64;
    if cmd.spacing <= 0.0 {
        return Err("spacing must be positive".into());
    }
    let sample: Box<dyn Fn(f64, f64) -> Option<f64>> = match (&cmd.map, cmd.world_seed) {
        (Some(path), _) => {
            let text = io::read_string(path).map_err(|e| e.to_string())?;
            let export: io::MagMapExport =
                serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let hp = {
                let mut args_hp = cmd.filter.to_config(0).mag;
                args_hp.basis_size = export.basis_size.max(1);
                args_hp
            };
            let map = io::import_mag_map(&export, &hp).map_err(|e| e.to_string())?;
            let z = cmd.z;
            Box::new(move |x, y| {
                map.predict_field(&Vector3::new(x, y, z), &hp).map(|b| b.norm())
            })
        }
        (None, seed) => {
            let world = World::new(WorldSpec::default_benchmark(seed.unwrap_or(0)));
            let z = cmd.z;
            Box::new(move |x, y| world.field_at(&Vector3::new(x, y, z)).ok().map(|b| b.norm()))
        }
    };
    for i in 0..=steps {
        for j in 0..=steps {
            let x = -cmd.extent + i as f64 * cmd.spacing;
            let y = -cmd.extent + j as f64 * cmd.spacing;
            if let Some(norm) = sample(x, y) {
                points.push((x, y, norm));
            }
        }
    }
    io::write_string(&cmd.output, &io::heatmap_to_csv(&points)).map_err(|e| e.to_string())?;
    println!("{} grid points -> {}", points.len(), cmd.output.display());
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
