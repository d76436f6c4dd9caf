//! Go-to-target MDP on top of the rigid-body simulator.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{step_physics, DynamicsError, MotorCommand, QuadParams, RigidState, PWM_LIMIT};

pub const OBS_DIM: usize = 25;
pub const ACT_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,
    #[error("step called before the first reset")]
    NotReset,
    #[error("initial pose has non-finite components")]
    NonFinitePose,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Physics(#[from] DynamicsError),
}

/// The 25-dimensional network input.
///
/// Layout: relative position (target minus drone, 0..3), attitude error
/// (drone minus target Euler angles, 3..6), linear velocity (6..9), body
/// rates (9..12), rotation matrix row-major (12..21), previous action (21..25).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn rel_pos(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn rel_euler(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    pub fn rotation(&self) -> &[f64] {
        &self.0[12..21]
    }

    pub fn prev_action(&self) -> &[f64] {
        &self.0[21..25]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alive_bonus: f64,
    pub pos_coeff: f64,
    pub roll_rate_coeff: f64,
    pub pitch_rate_coeff: f64,
    pub yaw_rate_coeff: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alive_bonus: 1.5,
            pos_coeff: 1.0,
            roll_rate_coeff: 0.05,
            pitch_rate_coeff: 0.05,
            yaw_rate_coeff: 0.1,
        }
    }
}

/// Alive bonus minus distance and body-rate penalties.
pub fn reward(state: &RigidState, target: &Vector3<f64>, weights: &RewardWeights) -> f64 {
    let err = (target - state.position).norm();
    let w = &state.ang_vel;
    weights.alive_bonus
        - weights.pos_coeff * err
        - weights.roll_rate_coeff * w.x.abs()
        - weights.pitch_rate_coeff * w.y.abs()
        - weights.yaw_rate_coeff * w.z.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// s
    pub control_dt: f64,
    pub max_steps_train: usize,
    pub max_steps_eval: usize,
    /// Episode fails once the drone is farther than this from the target (m).
    pub termination_radius: f64,
    pub target_position: [f64; 3],
    /// Z-Y-X Euler angles (rad).
    pub target_attitude: [f64; 3],
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.05,
            max_steps_train: 250,
            max_steps_eval: 500,
            termination_radius: 6.5,
            target_position: [0.0, 0.0, 1.7],
            target_attitude: [0.0, 0.0, 0.0],
        }
    }
}

/// Discrete uniform initialization sets, sampled independently per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitDistribution {
    /// m, used for both x and y
    pub xy_set: Vec<f64>,
    /// m
    pub z_set: Vec<f64>,
    /// degrees, used for roll, pitch and yaw
    pub angle_set_deg: Vec<f64>,
}

impl Default for InitDistribution {
    fn default() -> Self {
        Self {
            xy_set: vec![-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5],
            z_set: (0..=10).map(|i| (12 + i) as f64 / 10.0).collect(),
            angle_set_deg: vec![
                -44.69, -36.1, -26.93, -17.76, -9.17, 0.0, 9.17, 17.76, 26.93, 36.1, 44.69,
            ],
        }
    }
}

impl InitDistribution {
    /// Narrow task: positions within ±0.5 m of the target, angles within ±9.17°.
    pub fn reduced() -> Self {
        Self {
            xy_set: vec![-0.5, 0.0, 0.5],
            angle_set_deg: vec![-9.17, 0.0, 9.17],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let sets = [&self.xy_set, &self.z_set, &self.angle_set_deg];
        if sets.iter().any(|s| s.is_empty()) {
            return Err(EnvError::InvalidConfig("init sets must be nonempty".into()));
        }
        if sets.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(EnvError::InvalidConfig("init sets must be finite".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InitPose {
        let mut pick = |set: &[f64]| set[rng.gen_range(0..set.len())];
        let x = pick(&self.xy_set);
        let y = pick(&self.xy_set);
        let z = pick(&self.z_set);
        let phi = pick(&self.angle_set_deg).to_radians();
        let theta = pick(&self.angle_set_deg).to_radians();
        let psi = pick(&self.angle_set_deg).to_radians();
        InitPose {
            position: [x, y, z],
            euler: [phi, theta, psi],
        }
    }
}

/// Drone pose at the start of an episode; velocities are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPose {
    pub position: [f64; 3],
    /// rad
    pub euler: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Fixed,
    Line,
    Square,
    Sinusoid,
}

impl PathKind {
    pub fn name(&self) -> &'static str {
        match self {
            PathKind::Fixed => "fixed",
            PathKind::Line => "line",
            PathKind::Square => "square",
            PathKind::Sinusoid => "sinusoid",
        }
    }
}

impl std::str::FromStr for PathKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(PathKind::Fixed),
            "line" => Ok(PathKind::Line),
            "square" => Ok(PathKind::Square),
            "sinusoid" => Ok(PathKind::Sinusoid),
            other => Err(format!("unknown path kind `{other}`")),
        }
    }
}

/// Reference trajectory for the target.
///
/// All paths live around `origin`. The line starts at the origin and moves
/// along +x. The square is axis-aligned, centred on the origin in its
/// horizontal plane, and is traversed counter-clockwise from the corner
/// (-side/2, -side/2). The sinusoid advances along +x at `speed` with
/// `z = origin.z + amplitude * sin(2π x / wavelength)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetPath {
    pub kind: PathKind,
    /// m/s
    pub speed: f64,
    pub origin: [f64; 3],
    pub square_side: f64,
    pub sine_amplitude: f64,
    pub sine_wavelength: f64,
}

impl Default for TargetPath {
    fn default() -> Self {
        Self {
            kind: PathKind::Fixed,
            speed: 0.0,
            origin: [0.0, 0.0, 1.7],
            square_side: 2.0,
            sine_amplitude: 1.0,
            sine_wavelength: 4.0,
        }
    }
}

impl TargetPath {
    pub fn fixed(origin: [f64; 3]) -> Self {
        Self {
            origin,
            ..Self::default()
        }
    }

    pub fn moving(kind: PathKind, speed: f64) -> Self {
        Self {
            kind,
            speed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.speed.is_finite()
            && self.speed >= 0.0
            && self.origin.iter().all(|v| v.is_finite())
            && self.square_side > 0.0
            && self.sine_amplitude.is_finite()
            && self.sine_wavelength > 0.0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig("bad target path geometry".into()))
        }
    }
}

/// Target position at time `t` (s) along `path`.
pub fn target_position(path: &TargetPath, t: f64) -> Vector3<f64> {
    let o = Vector3::from(path.origin);
    let travelled = path.speed * t.max(0.0);
    match path.kind {
        PathKind::Fixed => o,
        PathKind::Line => o + Vector3::new(travelled, 0.0, 0.0),
        PathKind::Square => {
            let side = path.square_side;
            let half = side / 2.0;
            let d = travelled.rem_euclid(4.0 * side);
            let leg = ((d / side).floor() as usize).min(3);
            let s = d - leg as f64 * side;
            let (x, y) = match leg {
                0 => (-half + s, -half),
                1 => (half, -half + s),
                2 => (half - s, half),
                _ => (-half, half - s),
            };
            o + Vector3::new(x, y, 0.0)
        }
        PathKind::Sinusoid => {
            let x = travelled;
            let z = path.sine_amplitude * (std::f64::consts::TAU * x / path.sine_wavelength).sin();
            o + Vector3::new(x, 0.0, z)
        }
    }
}

/// Which episode length applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything needed to construct an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode: EpisodeConfig,
    pub reward: RewardWeights,
    pub init: InitDistribution,
    pub path: TargetPath,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let e = &self.episode;
        if !(e.control_dt > 0.0 && e.control_dt.is_finite()) {
            return Err(EnvError::InvalidConfig("control_dt must be > 0".into()));
        }
        if e.max_steps_train == 0 || e.max_steps_eval == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be > 0".into()));
        }
        if !(e.termination_radius > 0.0) {
            return Err(EnvError::InvalidConfig("termination_radius must be > 0".into()));
        }
        let w = &self.reward;
        let weights = [
            w.alive_bonus,
            w.pos_coeff,
            w.roll_rate_coeff,
            w.pitch_rate_coeff,
            w.yaw_rate_coeff,
        ];
        if weights.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(EnvError::InvalidConfig("reward weights must be non-negative".into()));
        }
        self.init.validate()?;
        self.path.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    /// Left the termination radius (absorbing).
    pub terminated: bool,
    /// Hit the step limit.
    pub truncated: bool,
}

/// A single go-to-target episode runner.
#[derive(Debug, Clone)]
pub struct GoToTarget {
    quad: QuadParams,
    config: EnvConfig,
    max_steps: usize,
    state: RigidState,
    prev_action: [f64; ACT_DIM],
    steps: usize,
    active: Option<bool>,
}

impl GoToTarget {
    pub fn new(quad: QuadParams, config: EnvConfig, mode: Mode) -> Result<Self, EnvError> {
        quad.validate()?;
        config.validate()?;
        let max_steps = match mode {
            Mode::Train => config.episode.max_steps_train,
            Mode::Eval => config.episode.max_steps_eval,
        };
        let target = Vector3::from(config.episode.target_position);
        Ok(Self {
            quad,
            config,
            max_steps,
            state: RigidState::at_rest(target, [0.0; 3]),
            prev_action: [0.0; ACT_DIM],
            steps: 0,
            active: None,
        })
    }

    pub fn set_max_steps(&mut self, max_steps: usize) {
        self.max_steps = max_steps.max(1);
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn quad(&self) -> &QuadParams {
        &self.quad
    }

    pub fn state(&self) -> &RigidState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.config.episode.control_dt
    }

    pub fn target(&self) -> Vector3<f64> {
        target_position(&self.config.path, self.time())
    }

    /// Reset with a pose drawn from the init distribution using a fresh RNG seeded by `seed`.
    pub fn reset_seeded(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_from_rng(&mut rng)
    }

    pub fn reset_from_rng<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let pose = self.config.init.sample(rng);
        self.reset_unchecked(pose)
    }

    pub fn reset_to(&mut self, pose: InitPose) -> Result<Observation, EnvError> {
        if pose.position.iter().chain(pose.euler.iter()).any(|v| !v.is_finite()) {
            return Err(EnvError::NonFinitePose);
        }
        Ok(self.reset_unchecked(pose))
    }

    fn reset_unchecked(&mut self, pose: InitPose) -> Observation {
        self.state = RigidState::at_rest(Vector3::from(pose.position), pose.euler);
        self.prev_action = [0.0; ACT_DIM];
        self.steps = 0;
        self.active = Some(true);
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        let target = self.target();
        let rel = target - self.state.position;
        let euler = self.state.euler();
        let att = self.config.episode.target_attitude;
        let mut o = [0.0; OBS_DIM];
        o[0..3].copy_from_slice(rel.as_slice());
        for i in 0..3 {
            o[3 + i] = euler[i] - att[i];
        }
        o[6..9].copy_from_slice(self.state.lin_vel.as_slice());
        o[9..12].copy_from_slice(self.state.ang_vel.as_slice());
        o[12..21].copy_from_slice(&self.state.rotation_row_major());
        o[21..25].copy_from_slice(&self.prev_action);
        Observation(o)
    }

    pub fn step(&mut self, action: [f64; ACT_DIM]) -> Result<StepOutcome, EnvError> {
        match self.active {
            None => return Err(EnvError::NotReset),
            Some(false) => return Err(EnvError::EpisodeFinished),
            Some(true) => {}
        }
        let cmd = MotorCommand::new(action).clamped();
        self.state = step_physics(&self.state, &cmd, &self.quad, self.config.episode.control_dt)?;
        self.prev_action = cmd.pwm;
        self.steps += 1;

        let target = self.target();
        let r = reward(&self.state, &target, &self.config.reward);
        let terminated = (target - self.state.position).norm() > self.config.episode.termination_radius;
        let truncated = self.steps >= self.max_steps;
        if terminated || truncated {
            self.active = Some(false);
        }
        Ok(StepOutcome {
            obs: self.observe(),
            reward: r,
            terminated,
            truncated,
        })
    }
}

/// Uniform random command in [-100, 100] per motor.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R) -> [f64; ACT_DIM] {
    [(); ACT_DIM].map(|_| rng.gen_range(-PWM_LIMIT..=PWM_LIMIT))
}
