//! Grid evaluation of a greedy policy and the error report.
//!
//! `results.csv` columns:
//! `run,repeat,x0_m,y0_m,theta0_deg,final_x_cm,final_y_cm,final_theta_deg,steps,termination`
//! where the final Y offset is the overshoot past the stop line.
//!
//! `trajectories.csv` columns: `run,step,x_m,y_m,theta_deg`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{DockingEnv, EnvSettings, PhaseConfig, Termination};
use crate::error::{DockError, Result};
use crate::neural::{argmax_action, QNetwork};
use crate::sim::Pose;
use crate::vision::DetectorNoise;

pub const RESULTS_HEADER: &str =
    "run,repeat,x0_m,y0_m,theta0_deg,final_x_cm,final_y_cm,final_theta_deg,steps,termination";
pub const TRAJECTORY_HEADER: &str = "run,step,x_m,y_m,theta_deg";

/// Hardware results the controller achieved on the physical mower
/// (max abs / mean abs / RMSE), for side-by-side display only.
pub const HARDWARE_REFERENCE: MetricsSummary = MetricsSummary {
    x_cm: ErrorStats {
        max_abs: 3.800,
        mae: 0.822,
        rmse: 0.896,
    },
    y_cm: ErrorStats {
        max_abs: 3.642,
        mae: 0.934,
        rmse: 1.182,
    },
    theta_deg: ErrorStats {
        max_abs: 6.200,
        mae: 1.533,
        rmse: 1.661,
    },
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub thetas_deg: Vec<f64>,
    pub repeats: usize,
}

impl Default for EvalGrid {
    fn default() -> Self {
        EvalGrid {
            xs: vec![-0.2, 0.0, 0.2],
            ys: vec![-0.2, 0.0, 0.2],
            thetas_deg: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            repeats: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRun {
    pub index: usize,
    pub repeat: usize,
    pub x: f64,
    pub y: f64,
    pub theta_deg: f64,
}

impl EvalGrid {
    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len() * self.thetas_deg.len() * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs in canonical order: X slowest, then Y, then theta, then repeat.
    pub fn runs(&self) -> Vec<GridRun> {
        let mut out = Vec::with_capacity(self.len());
        for &x in &self.xs {
            for &y in &self.ys {
                for &theta_deg in &self.thetas_deg {
                    for repeat in 0..self.repeats {
                        out.push(GridRun {
                            index: out.len(),
                            repeat,
                            x,
                            y,
                            theta_deg,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub run: usize,
    pub repeat: usize,
    pub x0_m: f64,
    pub y0_m: f64,
    pub theta0_deg: f64,
    pub final_x_cm: f64,
    pub final_y_cm: f64,
    pub final_theta_deg: f64,
    pub steps: usize,
    pub termination: Termination,
}

impl EvalResult {
    pub fn docked(&self) -> bool {
        self.termination == Termination::Docked
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub result: EvalResult,
    /// Poses from the initial pose to the final one.
    pub trajectory: Vec<Pose>,
}

/// Runs one greedy episode from `start`.
pub fn run_episode(
    policy: &QNetwork,
    env: &mut DockingEnv,
    start: Pose,
    rng: &mut ChaCha8Rng,
) -> Result<(Termination, Vec<Pose>)> {
    let actions = env.encoded_actions().to_vec();
    let mut stack = env.reset_to(start, rng)?;
    let mut trajectory = vec![start];
    loop {
        let a = argmax_action(policy, &stack.0, &actions);
        let out = env.step(a, rng)?;
        trajectory.push(env.pose());
        stack = out.stack;
        if let Some(t) = out.termination {
            return Ok((t, trajectory));
        }
    }
}

/// Evaluates the greedy policy on every grid configuration. Run `i` draws
/// detector noise from stream `i` of a generator seeded with `seed`, so
/// results do not depend on execution order.
pub fn run_grid(
    policy: &QNetwork,
    grid: &EvalGrid,
    settings: &EnvSettings,
    noise: DetectorNoise,
    seed: u64,
) -> Result<Vec<EvalRun>> {
    policy.check_shape()?;
    let mut settings = settings.clone();
    settings.noise = noise;
    let template = DockingEnv::new(settings, PhaseConfig::curriculum(4))?;
    let y_goal = template.settings().sim.y_goal;
    grid.runs()
        .par_iter()
        .map(|run| {
            let mut env = template.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(run.index as u64);
            let start = Pose::new(run.x, run.y, run.theta_deg.to_radians());
            let (termination, trajectory) = run_episode(policy, &mut env, start, &mut rng)?;
            let end = *trajectory.last().expect("trajectory holds the start pose");
            Ok(EvalRun {
                result: EvalResult {
                    run: run.index,
                    repeat: run.repeat,
                    x0_m: run.x,
                    y0_m: run.y,
                    theta0_deg: run.theta_deg,
                    final_x_cm: 100.0 * end.x,
                    final_y_cm: 100.0 * (end.y - y_goal),
                    final_theta_deg: end.theta.to_degrees(),
                    steps: trajectory.len() - 1,
                    termination,
                },
                trajectory,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub max_abs: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(DockError::InvalidInput("no values to summarize".into()));
        }
        let n = values.len() as f64;
        Ok(ErrorStats {
            max_abs: values.iter().fold(0.0, |m, v| m.max(v.abs())),
            mae: values.iter().map(|v| v.abs()).sum::<f64>() / n,
            rmse: (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        })
    }

    /// `MAE <= RMSE <= MaxAE`, with rounding slack.
    pub fn is_ordered(&self) -> bool {
        let slack = 1e-12 * self.max_abs.max(1.0);
        self.mae <= self.rmse + slack && self.rmse <= self.max_abs + slack
    }
}

/// Per-dimension error statistics in the hardware table's layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub x_cm: ErrorStats,
    pub y_cm: ErrorStats,
    pub theta_deg: ErrorStats,
}

pub fn summarize(results: &[EvalResult]) -> Result<MetricsSummary> {
    let col = |f: fn(&EvalResult) -> f64| results.iter().map(f).collect::<Vec<_>>();
    Ok(MetricsSummary {
        x_cm: ErrorStats::of(&col(|r| r.final_x_cm))?,
        y_cm: ErrorStats::of(&col(|r| r.final_y_cm))?,
        theta_deg: ErrorStats::of(&col(|r| r.final_theta_deg))?,
    })
}

/// Table of the three statistics per dimension, three decimals.
pub fn metrics_table(summary: &MetricsSummary, reference: Option<&MetricsSummary>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:>14} {:>14} {:>18}",
        "Error Measure", "X Offset (cm)", "Y Offset (cm)", "theta Offset (deg)"
    );
    type Column = fn(&ErrorStats) -> f64;
    let rows: [(&str, Column); 3] = [
        ("Max Abs. Error", |e| e.max_abs),
        ("Mean Abs. Error", |e| e.mae),
        ("RMSE", |e| e.rmse),
    ];
    for (name, get) in rows {
        let _ = writeln!(
            s,
            "{:<22} {:>14.3} {:>14.3} {:>18.3}",
            name,
            get(&summary.x_cm),
            get(&summary.y_cm),
            get(&summary.theta_deg)
        );
        if let Some(r) = reference {
            let _ = writeln!(
                s,
                "{:<22} {:>14.3} {:>14.3} {:>18.3}",
                format!("  {name} (hw)"),
                get(&r.x_cm),
                get(&r.y_cm),
                get(&r.theta_deg)
            );
        }
    }
    s
}

/// Pairs of runs that mirror each other about the centerline, `(X, theta)`
/// to `(-X, -theta)` with the same `Y` and repeat, and the sum of their
/// final X offsets (zero for a perfectly symmetric policy).
pub fn mirror_pairs(results: &[EvalResult]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for a in results {
        if a.x0_m < 0.0 || (a.x0_m == 0.0 && a.theta0_deg <= 0.0) {
            continue;
        }
        if let Some(b) = results
            .iter()
            .find(|b| b.x0_m == -a.x0_m && b.theta0_deg == -a.theta0_deg && b.y0_m == a.y0_m && b.repeat == a.repeat)
        {
            out.push((a.run, b.run, a.final_x_cm + b.final_x_cm));
        }
    }
    out
}

pub fn results_csv(results: &[EvalResult]) -> String {
    let mut s = String::new();
    s.push_str(RESULTS_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run,
            r.repeat,
            r.x0_m,
            r.y0_m,
            r.theta0_deg,
            r.final_x_cm,
            r.final_y_cm,
            r.final_theta_deg,
            r.steps,
            r.termination.as_str()
        );
    }
    s
}

pub fn parse_results_csv(text: &str) -> std::result::Result<Vec<EvalResult>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err("missing or unexpected results header".into());
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(format!("line {}: expected 10 fields, found {}", i + 2, f.len()));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            let int = |k: usize| f[k].parse::<usize>().map_err(|e| format!("line {}: {e}", i + 2));
            let termination = match f[9] {
                "docked" => Termination::Docked,
                "timeout" => Termination::Timeout,
                "markers_lost" => Termination::MarkersLost,
                other => return Err(format!("line {}: unknown termination {other}", i + 2)),
            };
            Ok(EvalResult {
                run: int(0)?,
                repeat: int(1)?,
                x0_m: num(2)?,
                y0_m: num(3)?,
                theta0_deg: num(4)?,
                final_x_cm: num(5)?,
                final_y_cm: num(6)?,
                final_theta_deg: num(7)?,
                steps: int(8)?,
                termination,
            })
        })
        .collect()
}

pub fn load_results_csv(path: &Path) -> Result<Vec<EvalResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| DockError::io(path, e))?;
    parse_results_csv(&text).map_err(|message| DockError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn trajectories_csv(runs: &[EvalRun]) -> String {
    let mut s = String::new();
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    for run in runs {
        for (step, p) in run.trajectory.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                run.result.run,
                step,
                p.x,
                p.y,
                p.theta.to_degrees()
            );
        }
    }
    s
}

/// Text of `summary.txt`.
pub fn summary_text(summary: &MetricsSummary, results: &[EvalResult], noise: &DetectorNoise) -> String {
    let docked = results.iter().filter(|r| r.docked()).count();
    let mut s = String::new();
    let _ = writeln!(s, "runs: {}", results.len());
    let _ = writeln!(s, "docked at stop line: {docked}/{}", results.len());
    let _ = writeln!(
        s,
        "detector noise: sigma_px = {}, dropout = {}",
        noise.sigma_px, noise.dropout_prob
    );
    if noise.is_zero() {
        let unique = results.iter().filter(|r| r.repeat == 0).count();
        let _ = writeln!(
            s,
            "note: zero detector noise, repeats are identical ({unique} unique runs)"
        );
    }
    for r in results.iter().filter(|r| !r.docked()) {
        let _ = writeln!(
            s,
            "failed run {}: start ({}, {}, {} deg) ended by {} after {} steps",
            r.run,
            r.x0_m,
            r.y0_m,
            r.theta0_deg,
            r.termination.as_str(),
            r.steps
        );
    }
    let pairs = mirror_pairs(results);
    if !pairs.is_empty() {
        let worst = pairs.iter().fold(0.0f64, |m, p| m.max(p.2.abs()));
        let outside = pairs.iter().filter(|p| p.2.abs() > 1.0).count();
        let _ = writeln!(
            s,
            "mirror symmetry: {} pairs, worst |x(a) + x(b)| = {worst:.3} cm, {outside} beyond 1 cm",
            pairs.len()
        );
    }
    s.push('\n');
    s.push_str(&metrics_table(summary, Some(&HARDWARE_REFERENCE)));
    s.push_str("(hw): physical mower reference, not an acceptance target\n");
    s
}

/// Writes `results.csv`, `summary.txt` and `trajectories.csv` into `out_dir`.
pub fn report(
    summary: &MetricsSummary,
    runs: &[EvalRun],
    noise: &DetectorNoise,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| DockError::io(out_dir, e))?;
    let results: Vec<EvalResult> = runs.iter().map(|r| r.result).collect();
    let files = [
        ("results.csv", results_csv(&results)),
        ("summary.txt", summary_text(summary, &results, noise)),
        ("trajectories.csv", trajectories_csv(runs)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| DockError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
