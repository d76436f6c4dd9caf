//! Training loop, evaluation suites and their CSV outputs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::QuadParams;
use crate::env::{
    random_action, target_position, EnvConfig, EnvError, GoToTarget, InitPose, Mode, PathKind, TargetPath, ACT_DIM,
    OBS_DIM,
};
use crate::sac::{ReplayBuffer, SacAgent, SacConfig, SacError, Transition, UpdateStats};

pub const CURVE_FILE: &str = "learning_curve.csv";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.json";
pub const LATEST_CHECKPOINT: &str = "checkpoint_latest.json";
pub const ROBUSTNESS_FILE: &str = "robustness.csv";

/// Stream separation so that resets, evaluation poses and network init never share draws.
const ENV_STREAM: u64 = 0x656e_765f_7374_7265;
const EVAL_STREAM: u64 = 0x6576_616c_5f73_6565;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sac(#[from] SacError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

fn csv_err(context: impl Into<String>) -> impl FnOnce(csv::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Csv { context, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub total_env_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Steps per learning-curve evaluation episode.
    pub eval_episode_len: usize,
    /// Write `checkpoint_latest.json` every this many env steps (0 disables).
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            total_env_steps: 1_000_000,
            eval_interval: 10_000,
            eval_episodes: 5,
            eval_episode_len: 500,
            checkpoint_interval: 50_000,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Whole experiment configuration; one TOML file with `[quad]`, `[env]`, `[sac]`, `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub quad: QuadParams,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub train: TrainSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| HarnessError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.quad.validate().map_err(EnvError::from)?;
        self.env.validate()?;
        self.sac.validate()?;
        if self.train.eval_interval == 0 {
            return Err(HarnessError::InvalidRequest("eval_interval must be >= 1".into()));
        }
        if self.train.eval_episode_len == 0 {
            return Err(HarnessError::InvalidRequest("eval_episode_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// One logged control step, in the trajectory CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub reward: f64,
}

impl TrajectoryRow {
    pub fn tracking_error(&self) -> f64 {
        ((self.tx - self.x).powi(2) + (self.ty - self.y).powi(2) + (self.tz - self.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub steps: usize,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub init: InitPose,
    pub rows: Vec<TrajectoryRow>,
    pub summary: EpisodeSummary,
    /// Distance to the target before the first step.
    pub initial_distance: f64,
}

impl EpisodeRecord {
    /// Mean drone-target distance over `rows[range]` (clamped to the episode).
    pub fn mean_tracking_error(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.rows.len());
        let start = range.start.min(end);
        let slice = &self.rows[start..end];
        if slice.is_empty() {
            return f64::NAN;
        }
        slice.iter().map(|r| r.tracking_error()).sum::<f64>() / slice.len() as f64
    }

    /// Mean distance over the last `n` steps.
    pub fn final_tracking_error(&self, n: usize) -> f64 {
        let len = self.rows.len();
        self.mean_tracking_error(len.saturating_sub(n)..len)
    }
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<(), HarnessError> {
    let ctx = format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(csv_err(ctx.clone()))?;
    if rows.is_empty() {
        w.write_record([
            "t", "x", "y", "z", "phi", "theta", "psi", "p", "q", "r", "tx", "ty", "tz", "a1", "a2", "a3", "a4",
            "reward",
        ])
        .map_err(csv_err(ctx.clone()))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(ctx.clone()))?;
    }
    w.flush().map_err(io_err(ctx))?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let ctx = format!("reading {}", path.display());
    let mut r = csv::Reader::from_path(path).map_err(csv_err(ctx.clone()))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_err(ctx))
}

/// Run one deterministic-policy episode from `init` for at most `max_steps`.
pub fn run_episode(
    agent: &SacAgent,
    env: &mut GoToTarget,
    init: InitPose,
    max_steps: usize,
) -> Result<EpisodeRecord, HarnessError> {
    run_episode_with(env, init, max_steps, |obs| {
        let a = agent.act_deterministic(obs)?;
        Ok([a[0], a[1], a[2], a[3]])
    })
}

fn run_episode_with(
    env: &mut GoToTarget,
    init: InitPose,
    max_steps: usize,
    mut policy: impl FnMut(&[f64]) -> Result<[f64; ACT_DIM], HarnessError>,
) -> Result<EpisodeRecord, HarnessError> {
    env.set_max_steps(max_steps);
    let mut obs = env.reset_to(init)?;
    let initial_distance = (env.target() - env.state().position).norm();
    let mut rows = Vec::with_capacity(max_steps);
    let mut total = 0.0;
    let terminated;
    loop {
        let action = policy(obs.as_slice())?;
        let out = env.step(action)?;
        let s = env.state();
        let [phi, theta, psi] = s.euler();
        let target = env.target();
        let a = out.obs.prev_action();
        rows.push(TrajectoryRow {
            t: env.time(),
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            phi,
            theta,
            psi,
            p: s.ang_vel.x,
            q: s.ang_vel.y,
            r: s.ang_vel.z,
            tx: target.x,
            ty: target.y,
            tz: target.z,
            a1: a[0],
            a2: a[1],
            a3: a[2],
            a4: a[3],
            reward: out.reward,
        });
        total += out.reward;
        obs = out.obs;
        if out.terminated || out.truncated {
            terminated = out.terminated;
            break;
        }
    }
    Ok(EpisodeRecord {
        init,
        summary: EpisodeSummary {
            total_reward: total,
            steps: rows.len(),
            terminated,
        },
        rows,
        initial_distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_total_reward: f64,
    pub completed: usize,
    pub completion_rate: f64,
}

impl EvalSummary {
    fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        let completed = records.iter().filter(|r| !r.summary.terminated).count();
        let (mean, rate) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                records.iter().map(|r| r.summary.total_reward).sum::<f64>() / n as f64,
                completed as f64 / n as f64,
            )
        };
        Self {
            episodes: n,
            mean_total_reward: mean,
            completed,
            completion_rate: rate,
        }
    }
}

/// Poses for the fixed-target suite, drawn from the configured init distribution.
pub fn eval_poses(env_cfg: &EnvConfig, n: usize, seed: u64) -> Vec<InitPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    (0..n).map(|_| env_cfg.init.sample(&mut rng)).collect()
}

fn fixed_env_config(env_cfg: &EnvConfig) -> EnvConfig {
    EnvConfig {
        path: TargetPath::fixed(env_cfg.episode.target_position),
        ..env_cfg.clone()
    }
}

fn check_agent(agent: &SacAgent) -> Result<(), HarnessError> {
    if agent.obs_dim() != OBS_DIM || agent.act_dim() != ACT_DIM {
        return Err(HarnessError::CheckpointMismatch(format!(
            "agent expects {} observations and {} actions, environment provides {OBS_DIM} and {ACT_DIM}",
            agent.obs_dim(),
            agent.act_dim()
        )));
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

/// Deterministic policy against the fixed target. Writes `fixed_episode_NNN.csv`
/// per episode into `out_dir` when given.
pub fn evaluate_fixed(
    agent: &SacAgent,
    quad: &QuadParams,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    episode_len: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(Vec<EpisodeRecord>, EvalSummary), HarnessError> {
    check_agent(agent)?;
    let poses = eval_poses(env_cfg, n_episodes, seed);
    evaluate_fixed_poses(agent, quad, env_cfg, &poses, episode_len, out_dir)
}

pub fn evaluate_fixed_poses(
    agent: &SacAgent,
    quad: &QuadParams,
    env_cfg: &EnvConfig,
    poses: &[InitPose],
    episode_len: usize,
    out_dir: Option<&Path>,
) -> Result<(Vec<EpisodeRecord>, EvalSummary), HarnessError> {
    check_agent(agent)?;
    let mut env = GoToTarget::new(quad.clone(), fixed_env_config(env_cfg), Mode::Eval)?;
    let mut records = Vec::with_capacity(poses.len());
    for pose in poses {
        records.push(run_episode(agent, &mut env, *pose, episode_len)?);
    }
    if let (Some(dir), false) = (out_dir, records.is_empty()) {
        ensure_dir(dir)?;
        for (i, rec) in records.iter().enumerate() {
            write_trajectory_csv(&dir.join(format!("fixed_episode_{i:03}.csv")), &rec.rows)?;
        }
    }
    let summary = EvalSummary::from_records(&records);
    Ok((records, summary))
}

/// Mean total reward of uniformly random actions from the given poses.
pub fn random_policy_baseline(
    quad: &QuadParams,
    env_cfg: &EnvConfig,
    poses: &[InitPose],
    episode_len: usize,
    seed: u64,
) -> Result<EvalSummary, HarnessError> {
    let mut env = GoToTarget::new(quad.clone(), fixed_env_config(env_cfg), Mode::Eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(poses.len());
    for pose in poses {
        records.push(run_episode_with(&mut env, *pose, episode_len, |_| {
            Ok(random_action(&mut rng))
        })?);
    }
    Ok(EvalSummary::from_records(&records))
}

/// Drone starting pose for a moving-target run: level, at the path's start point.
pub fn path_start_pose(path: &TargetPath) -> InitPose {
    let p = target_position(path, 0.0);
    InitPose {
        position: [p.x, p.y, p.z],
        euler: [0.0; 3],
    }
}

/// One deterministic episode chasing a moving target. Writes
/// `<kind>_<speed>.csv` into `out_dir` when given.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_path(
    agent: &SacAgent,
    quad: &QuadParams,
    env_cfg: &EnvConfig,
    kind: PathKind,
    speed: f64,
    init: Option<InitPose>,
    episode_len: usize,
    out_dir: Option<&Path>,
) -> Result<EpisodeRecord, HarnessError> {
    check_agent(agent)?;
    if kind == PathKind::Fixed {
        return Err(HarnessError::InvalidRequest(
            "evaluate_path needs a moving path (line, square, sinusoid)".into(),
        ));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(HarnessError::InvalidRequest(format!("speed must be > 0, got {speed}")));
    }
    let path = TargetPath {
        kind,
        speed,
        ..env_cfg.path.clone()
    };
    let init = init.unwrap_or_else(|| path_start_pose(&path));
    let cfg = EnvConfig {
        path,
        ..env_cfg.clone()
    };
    let mut env = GoToTarget::new(quad.clone(), cfg, Mode::Eval)?;
    let rec = run_episode(agent, &mut env, init, episode_len)?;
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        write_trajectory_csv(&dir.join(format!("{}_{speed}.csv", kind.name())), &rec.rows)?;
    }
    Ok(rec)
}

/// Extreme-initialization grid: x, y ∈ {−1.5, 0, 1.5}, z ∈ {1.2, 2.2},
/// roll, pitch ∈ {±44.69°}, yaw ∈ {−44.69°, 0, 44.69°}; 216 poses.
pub fn default_robustness_grid() -> Vec<InitPose> {
    let xy = [-1.5, 0.0, 1.5];
    let z = [1.2, 2.2];
    let tilt = [-44.69f64, 44.69];
    let yaw = [-44.69f64, 0.0, 44.69];
    let mut grid = Vec::with_capacity(216);
    for &x in &xy {
        for &y in &xy {
            for &zz in &z {
                for &phi in &tilt {
                    for &theta in &tilt {
                        for &psi in &yaw {
                            grid.push(InitPose {
                                position: [x, y, zz],
                                euler: [phi.to_radians(), theta.to_radians(), psi.to_radians()],
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

/// Per-pose outcome row of the robustness CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub total_reward: f64,
    pub steps: usize,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_total_reward: f64,
    pub mean_total_reward: f64,
}

impl RobustnessReport {
    pub fn from_rows(rows: &[RobustnessRow]) -> Self {
        let n = rows.len();
        let successes = rows.iter().filter(|r| !r.terminated).count();
        let mut totals: Vec<f64> = rows.iter().map(|r| r.total_reward).collect();
        totals.sort_by(f64::total_cmp);
        let median = match n {
            0 => f64::NAN,
            n if n % 2 == 1 => totals[n / 2],
            n => 0.5 * (totals[n / 2 - 1] + totals[n / 2]),
        };
        let mean = if n == 0 {
            f64::NAN
        } else {
            totals.iter().sum::<f64>() / n as f64
        };
        Self {
            episodes: n,
            successes,
            success_rate: if n == 0 { f64::NAN } else { successes as f64 / n as f64 },
            median_total_reward: median,
            mean_total_reward: mean,
        }
    }
}

pub fn write_robustness_csv(path: &Path, rows: &[RobustnessRow]) -> Result<(), HarnessError> {
    let ctx = format!("writing {}", path.display());
    let mut w = csv::Writer::from_path(path).map_err(csv_err(ctx.clone()))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(ctx.clone()))?;
    }
    w.flush().map_err(io_err(ctx))?;
    Ok(())
}

pub fn read_robustness_csv(path: &Path) -> Result<Vec<RobustnessRow>, HarnessError> {
    let ctx = format!("reading {}", path.display());
    let mut r = csv::Reader::from_path(path).map_err(csv_err(ctx.clone()))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_err(ctx))
}

/// One training-length deterministic episode per grid pose against the fixed target.
pub fn robustness_sweep(
    agent: &SacAgent,
    quad: &QuadParams,
    env_cfg: &EnvConfig,
    grid: &[InitPose],
    out_dir: Option<&Path>,
) -> Result<(RobustnessReport, Vec<RobustnessRow>), HarnessError> {
    check_agent(agent)?;
    if grid.is_empty() {
        return Err(HarnessError::InvalidRequest("robustness grid is empty".into()));
    }
    let mut env = GoToTarget::new(quad.clone(), fixed_env_config(env_cfg), Mode::Train)?;
    let len = env_cfg.episode.max_steps_train;
    let mut rows = Vec::with_capacity(grid.len());
    for (index, pose) in grid.iter().enumerate() {
        let rec = run_episode(agent, &mut env, *pose, len)?;
        rows.push(RobustnessRow {
            index,
            x: pose.position[0],
            y: pose.position[1],
            z: pose.position[2],
            phi: pose.euler[0],
            theta: pose.euler[1],
            psi: pose.euler[2],
            total_reward: rec.summary.total_reward,
            steps: rec.summary.steps,
            terminated: rec.summary.terminated,
        });
    }
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        write_robustness_csv(&dir.join(ROBUSTNESS_FILE), &rows)?;
    }
    Ok((RobustnessReport::from_rows(&rows), rows))
}

/// One learning-curve line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub env_steps: usize,
    pub mean_eval_reward: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
}

const CURVE_HEADER: &str = "env_steps,mean_eval_reward,q1_loss,q2_loss,value_loss,policy_loss,entropy";

pub fn read_learning_curve(path: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let ctx = format!("reading {}", path.display());
    let mut r = csv::Reader::from_path(path).map_err(csv_err(ctx.clone()))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_err(ctx))
}

fn append_curve_row(path: &Path, row: &CurveRow) -> Result<(), HarnessError> {
    let ctx = format!("appending to {}", path.display());
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(ctx.clone()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(row).map_err(csv_err(ctx.clone()))?;
    let bytes = w.into_inner().map_err(|e| io_err(ctx.clone())(e.into_error()))?;
    f.write_all(&bytes).map_err(io_err(ctx))
}

fn write_checkpoint(path: &Path, agent: &SacAgent) -> Result<(), HarnessError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, agent.to_json()).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<SacAgent, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let agent = SacAgent::from_json(&text)?;
    check_agent(&agent)?;
    Ok(agent)
}

#[derive(Debug, Default, Clone, Copy)]
struct LossAccumulator {
    sum: UpdateStats,
    count: usize,
}

impl LossAccumulator {
    fn add(&mut self, s: &UpdateStats) {
        self.sum.q1_loss += s.q1_loss;
        self.sum.q2_loss += s.q2_loss;
        self.sum.value_loss += s.value_loss;
        self.sum.policy_loss += s.policy_loss;
        self.sum.entropy += s.entropy;
        self.count += 1;
    }

    fn take_mean(&mut self) -> UpdateStats {
        let n = self.count as f64;
        let mean = if self.count == 0 {
            UpdateStats {
                q1_loss: f64::NAN,
                q2_loss: f64::NAN,
                value_loss: f64::NAN,
                policy_loss: f64::NAN,
                entropy: f64::NAN,
            }
        } else {
            UpdateStats {
                q1_loss: self.sum.q1_loss / n,
                q2_loss: self.sum.q2_loss / n,
                value_loss: self.sum.value_loss / n,
                policy_loss: self.sum.policy_loss / n,
                entropy: self.sum.entropy / n,
            }
        };
        *self = Self::default();
        mean
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: SacAgent,
    pub curve: Vec<CurveRow>,
    pub output_dir: PathBuf,
}

/// Progress callback payload, emitted after every learning-curve evaluation.
pub type ProgressFn<'a> = &'a mut dyn FnMut(&CurveRow);

/// Warmup with uniform actions, then alternate policy rollouts and SAC
/// updates until `total_env_steps`. Writes the learning curve, the resolved
/// config, periodic and final checkpoints into `out_dir`.
pub fn train(
    config: &ExperimentConfig,
    out_dir: &Path,
    mut progress: Option<ProgressFn<'_>>,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    ensure_dir(out_dir)?;
    fs::write(out_dir.join("config.toml"), config.to_toml_string()).map_err(io_err("writing resolved config"))?;
    let curve_path = out_dir.join(CURVE_FILE);
    fs::write(&curve_path, format!("{CURVE_HEADER}\n")).map_err(io_err("creating learning curve"))?;

    let tc = &config.train;
    let sac = &config.sac;
    let mut agent = SacAgent::new(OBS_DIM, ACT_DIM, sac.clone(), tc.seed)?;
    let mut env = GoToTarget::new(config.quad.clone(), config.env.clone(), Mode::Train)?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ ENV_STREAM);
    let mut buffer = ReplayBuffer::new(OBS_DIM, ACT_DIM, sac.buffer_capacity);
    let eval_set = eval_poses(&config.env, tc.eval_episodes, tc.seed);

    let mut losses = LossAccumulator::default();
    let mut curve = Vec::new();
    let mut obs = env.reset_from_rng(&mut env_rng);
    for step in 1..=tc.total_env_steps {
        let action: [f64; ACT_DIM] = if step <= sac.warmup_steps {
            random_action(&mut env_rng)
        } else {
            let (a, _) = agent.explore(obs.as_slice())?;
            [a[0], a[1], a[2], a[3]]
        };
        let out = env.step(action)?;
        buffer.push(Transition {
            obs: obs.0.to_vec(),
            action: out.obs.prev_action().to_vec(),
            reward: out.reward,
            next_obs: out.obs.0.to_vec(),
            done: out.terminated,
        })?;
        obs = if out.terminated || out.truncated {
            env.reset_from_rng(&mut env_rng)
        } else {
            out.obs
        };

        if step >= sac.warmup_steps && step % sac.env_steps_per_epoch == 0 && buffer.len() >= sac.batch_size {
            for _ in 0..sac.updates_per_epoch {
                let stats = agent.update(&buffer)?;
                losses.add(&stats);
            }
        }

        if step % tc.eval_interval == 0 {
            let (_, summary) =
                evaluate_fixed_poses(&agent, &config.quad, &config.env, &eval_set, tc.eval_episode_len, None)?;
            let l = losses.take_mean();
            let row = CurveRow {
                env_steps: step,
                mean_eval_reward: summary.mean_total_reward,
                q1_loss: l.q1_loss,
                q2_loss: l.q2_loss,
                value_loss: l.value_loss,
                policy_loss: l.policy_loss,
                entropy: l.entropy,
            };
            append_curve_row(&curve_path, &row)?;
            if let Some(cb) = progress.as_mut() {
                cb(&row);
            }
            curve.push(row);
        }
        if tc.checkpoint_interval > 0 && step % tc.checkpoint_interval == 0 {
            write_checkpoint(&out_dir.join(LATEST_CHECKPOINT), &agent)?;
        }
    }
    write_checkpoint(&out_dir.join(FINAL_CHECKPOINT), &agent)?;
    Ok(TrainOutcome {
        agent,
        curve,
        output_dir: out_dir.to_path_buf(),
    })
}

/// Distance from `point` to the target position of `env_cfg` at time zero.
pub fn distance_to_start(env_cfg: &EnvConfig, point: [f64; 3]) -> f64 {
    (target_position(&env_cfg.path, 0.0) - Vector3::from(point)).norm()
}
