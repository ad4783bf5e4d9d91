use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dock_core::dqn::run_curriculum;
use dock_core::env::DockingEnv;
use dock_core::eval::{self, EvalGrid};
use dock_core::neural::{load_checkpoint, save_checkpoint};
use dock_core::sim::Pose;
use dock_core::vision::{self, Camera, DetectorNoise};
use dock_core::DockConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "dockctl",
    version,
    about = "Train, evaluate and inspect the mower docking controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the four-phase curriculum and write checkpoints plus training_log.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the 90-run grid.
    Eval(EvalArgs),
    /// Render the simulated camera view at a pose as a PPM image.
    Render(RenderArgs),
}

#[derive(Args)]
struct SimOverrides {
    /// TOML configuration file; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Control period (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Stop line on the approach axis (m).
    #[arg(long)]
    y_goal: Option<f64>,
    /// Maximum linear velocity (m/s).
    #[arg(long)]
    v_max: Option<f64>,
    /// Maximum steering rate (rad/s).
    #[arg(long)]
    omega_max: Option<f64>,
}

impl SimOverrides {
    fn load(&self) -> Result<DockConfig> {
        let mut cfg = match &self.config {
            Some(path) => DockConfig::load(path)?,
            None => DockConfig::default(),
        };
        if let Some(v) = self.dt {
            cfg.sim.dt = v;
        }
        if let Some(v) = self.y_goal {
            cfg.sim.y_goal = v;
        }
        if let Some(v) = self.v_max {
            cfg.sim.v_max = v;
        }
        if let Some(v) = self.omega_max {
            cfg.sim.omega_max = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    sim: SimOverrides,
    /// Overrides the trainer seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Print a progress line every this many episodes (0 = quiet).
    #[arg(long, default_value_t = 250)]
    progress: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    sim: SimOverrides,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Detector jitter in pixels; 0 makes the two repeats identical.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    sim: SimOverrides,
    /// Rear-axle pose as `x,y,theta` with x, y in meters and theta in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pose: String,
    #[arg(long, default_value = "frame.ppm")]
    out: PathBuf,
}

fn train(args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = args.sim.load()?;
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("config_used.toml"), cfg.to_toml_string())?;

    let mut env = DockingEnv::new(cfg.env_settings(), cfg.phases[0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
    let started = Instant::now();
    let progress = args.progress;
    let window = cfg.trainer.window;
    let mut recent: Vec<f64> = Vec::new();
    let run = run_curriculum(&mut env, &cfg.phases, &cfg.trainer, &mut rng, |row| {
        recent.push(row.episode_return);
        if progress > 0 && row.episode % progress == 0 {
            let tail = &recent[recent.len().saturating_sub(window)..];
            eprintln!(
                "episode {:>6}  phase {}  eps {:.3}  return(last {}) {:>9.3}  loss {:>10.4}  {:.0}s",
                row.episode,
                row.phase,
                row.epsilon,
                tail.len(),
                tail.iter().sum::<f64>() / tail.len() as f64,
                row.loss_mean.unwrap_or(f64::NAN),
                started.elapsed().as_secs_f64()
            );
        }
    })?;

    run.log.write_csv(&args.out.join("training_log.csv"))?;
    for (i, (net, ret)) in run.phase_checkpoints.iter().zip(&run.phase_final_returns).enumerate() {
        save_checkpoint(net, &args.out.join(format!("phase{}.bin", i + 1)))?;
        eprintln!("phase {} complete: trailing return {ret:.3}", i + 1);
    }
    save_checkpoint(&run.primary, &args.out.join("policy.bin"))?;
    eprintln!(
        "{} episodes in {:.1}s; outputs in {}",
        run.log.rows.len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    run.ensure_completed()?;
    Ok(ExitCode::SUCCESS)
}

fn evaluate(args: &EvalArgs) -> Result<ExitCode> {
    let cfg = args.sim.load()?;
    let policy = load_checkpoint(&args.checkpoint)?;
    let noise = DetectorNoise::jitter(args.noise.unwrap_or(cfg.eval.sigma_px));
    noise.validate()?;
    let seed = args.seed.unwrap_or(cfg.eval.seed);
    let runs = eval::run_grid(&policy, &EvalGrid::default(), &cfg.env_settings(), noise, seed)?;
    let results: Vec<_> = runs.iter().map(|r| r.result).collect();
    let summary = eval::summarize(&results)?;
    eval::report(&summary, &runs, &noise, &args.out)?;
    print!("{}", eval::summary_text(&summary, &results, &noise));
    let failed = results.iter().filter(|r| !r.docked()).count();
    if failed > 0 {
        eprintln!("{failed} run(s) did not reach the stop line");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_pose(text: &str) -> Result<Pose> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing pose {text:?}"))?;
    let [x, y, theta_deg] = parts[..] else {
        bail!("pose must be x,y,theta; got {text:?}");
    };
    Ok(Pose::new(x, y, theta_deg.to_radians()))
}

fn render(args: &RenderArgs) -> Result<ExitCode> {
    let cfg = args.sim.load()?;
    let pose = parse_pose(&args.pose)?;
    let cam = Camera::new(cfg.camera, &cfg.markers, &cfg.sim)?;
    let frame = vision::render_frame(&pose, &cfg.markers, &cam);
    frame.write_ppm(Path::new(&args.out))?;
    let obs = vision::project_markers(&pose, &cfg.markers, &cam);
    println!(
        "u1 {:.5} v1 {:.5} u2 {:.5} v2 {:.5} in_view {:?} -> {}",
        obs.u1,
        obs.v1,
        obs.u2,
        obs.v2,
        obs.in_view,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Render(a) => render(a),
    }
}
