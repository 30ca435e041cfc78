//! Agent kinematics, range sensing and random exploration for the lattice,
//! forward and holonomic test environments.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{compute_displacement, GroundTruthDisplacement};
use crate::geom::{path_collides, ray_cast, GeomError, Ray, Vec2, WorldGeometry};

/// Consecutive rejected commands tolerated at one step before giving up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("agent stuck at step {step}: {rejections} consecutive commands rejected")]
    Stuck { step: usize, rejections: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("{0:?} command passed to a {1:?} environment")]
    KindMismatch(&'static str, AgentKind),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Lattice,
    Forward,
    Holonomic,
}

/// Pose of a point agent. `head` is relative to the body and stays 0 for
/// agents without a head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Vec2,
    pub body: f64,
    pub head: f64,
}

impl AgentPose {
    pub fn new(x: f64, y: f64, body: f64, head: f64) -> Self {
        Self {
            position: Vec2::new(x, y),
            body: wrap_angle(body),
            head: wrap_angle(head),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::East, Heading::North, Heading::West, Heading::South];

    pub fn angle(self) -> f64 {
        match self {
            Heading::East => 0.0,
            Heading::North => FRAC_PI_2,
            Heading::West => PI,
            Heading::South => -FRAC_PI_2,
        }
    }

    /// Position in the orientation one-hot block.
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_quarter_turns(q: i32) -> Self {
        Self::ALL[q.rem_euclid(4) as usize]
    }

    pub fn turned(self, turn: LatticeTurn) -> Self {
        Self::from_quarter_turns(self as i32 + turn.quarter_turns())
    }

    pub fn step(self) -> (i32, i32) {
        match self {
            Heading::East => (1, 0),
            Heading::North => (0, 1),
            Heading::West => (-1, 0),
            Heading::South => (0, -1),
        }
    }

    /// Nearest heading to an angle in radians.
    pub fn from_angle(angle: f64) -> Self {
        Self::from_quarter_turns((angle / FRAC_PI_2).round() as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LatticeTurn {
    Right,
    Straight,
    Left,
}

impl LatticeTurn {
    pub const ALL: [LatticeTurn; 3] = [LatticeTurn::Right, LatticeTurn::Straight, LatticeTurn::Left];

    pub fn quarter_turns(self) -> i32 {
        match self {
            LatticeTurn::Right => -1,
            LatticeTurn::Straight => 0,
            LatticeTurn::Left => 1,
        }
    }

    pub fn angle(self) -> f64 {
        self.quarter_turns() as f64 * FRAC_PI_2
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeState {
    pub node: (i32, i32),
    pub heading: Heading,
}

impl LatticeState {
    pub fn new(i: i32, j: i32, heading: Heading) -> Self {
        Self {
            node: (i, j),
            heading,
        }
    }

    /// Row-major node index `j * size + i`.
    pub fn node_index(&self, size: usize) -> usize {
        self.node.1 as usize * size + self.node.0 as usize
    }

    pub fn pose(&self) -> AgentPose {
        AgentPose::new(self.node.0 as f64, self.node.1 as f64, self.heading.angle(), 0.0)
    }

    pub fn from_pose(pose: &AgentPose) -> Self {
        Self {
            node: (
                pose.position.x.round() as i32,
                pose.position.y.round() as i32,
            ),
            heading: Heading::from_angle(pose.body),
        }
    }
}

/// One timestep of actuator values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MotorCommand {
    Lattice {
        turn: LatticeTurn,
        advance: bool,
    },
    Forward {
        turn: f64,
        advance: f64,
    },
    Holonomic {
        turn: f64,
        longitudinal: f64,
        lateral: f64,
        head: f64,
    },
}

impl MotorCommand {
    pub fn kind(&self) -> AgentKind {
        match self {
            MotorCommand::Lattice { .. } => AgentKind::Lattice,
            MotorCommand::Forward { .. } => AgentKind::Forward,
            MotorCommand::Holonomic { .. } => AgentKind::Holonomic,
        }
    }

    /// Width of the network input vector for one command.
    pub fn encoded_dim(kind: AgentKind) -> usize {
        match kind {
            AgentKind::Lattice => 5,
            AgentKind::Forward => 2,
            AgentKind::Holonomic => 4,
        }
    }

    /// Network input: turn one-hot (3) ++ advance one-hot (2) on the
    /// lattice, raw actuator values otherwise.
    pub fn encode_into(&self, out: &mut [f64]) {
        match *self {
            MotorCommand::Lattice { turn, advance } => {
                out[..5].fill(0.0);
                out[turn.index()] = 1.0;
                out[3 + usize::from(advance)] = 1.0;
            }
            MotorCommand::Forward { turn, advance } => {
                out[0] = turn;
                out[1] = advance;
            }
            MotorCommand::Holonomic {
                turn,
                longitudinal,
                lateral,
                head,
            } => {
                out[0] = turn;
                out[1] = longitudinal;
                out[2] = lateral;
                out[3] = head;
            }
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = vec![0.0; Self::encoded_dim(self.kind())];
        self.encode_into(&mut v);
        v
    }

    /// Width of the raw storage form.
    pub fn raw_dim(kind: AgentKind) -> usize {
        match kind {
            AgentKind::Lattice | AgentKind::Forward => 2,
            AgentKind::Holonomic => 4,
        }
    }

    pub fn to_raw(&self) -> Vec<f64> {
        match *self {
            MotorCommand::Lattice { turn, advance } => {
                vec![turn.quarter_turns() as f64, f64::from(u8::from(advance))]
            }
            MotorCommand::Forward { turn, advance } => vec![turn, advance],
            MotorCommand::Holonomic {
                turn,
                longitudinal,
                lateral,
                head,
            } => vec![turn, longitudinal, lateral, head],
        }
    }

    pub fn from_raw(kind: AgentKind, raw: &[f64]) -> Option<Self> {
        if raw.len() != Self::raw_dim(kind) {
            return None;
        }
        Some(match kind {
            AgentKind::Lattice => {
                let turn = match raw[0] as i32 {
                    -1 => LatticeTurn::Right,
                    0 => LatticeTurn::Straight,
                    1 => LatticeTurn::Left,
                    _ => return None,
                };
                MotorCommand::Lattice {
                    turn,
                    advance: raw[1] != 0.0,
                }
            }
            AgentKind::Forward => MotorCommand::Forward {
                turn: raw[0],
                advance: raw[1],
            },
            AgentKind::Holonomic => MotorCommand::Holonomic {
                turn: raw[0],
                longitudinal: raw[1],
                lateral: raw[2],
                head: raw[3],
            },
        })
    }

    /// Body rotation requested by this command, in radians.
    pub fn body_turn(&self) -> f64 {
        match *self {
            MotorCommand::Lattice { turn, .. } => turn.angle(),
            MotorCommand::Forward { turn, .. } | MotorCommand::Holonomic { turn, .. } => turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorVector(pub Vec<f64>);

impl SensorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub agent: AgentKind,
    pub theta_body_max: f64,
    pub delta_forward_max: f64,
    pub delta_long_max: f64,
    pub delta_lat_max: f64,
    pub theta_head_max: f64,
    pub sensor_count: usize,
    pub sensor_range: f64,
    pub fov: f64,
    /// Append `(cos body, sin body)` to continuous-agent sensor vectors.
    pub orientation_in_sensors: bool,
    pub lattice_size: usize,
    pub world: WorldGeometry,
}

impl EnvConfig {
    fn base(agent: AgentKind, theta_body_max: f64) -> Self {
        Self {
            agent,
            theta_body_max,
            delta_forward_max: 1.0,
            delta_long_max: 1.0,
            delta_lat_max: 1.0,
            theta_head_max: 0.5 * PI,
            sensor_count: 9,
            sensor_range: 10.0,
            fov: PI,
            orientation_in_sensors: false,
            lattice_size: 6,
            world: WorldGeometry::canonical(),
        }
    }

    pub fn lattice() -> Self {
        Self::base(AgentKind::Lattice, FRAC_PI_2)
    }

    pub fn forward(theta_body_max: f64) -> Self {
        Self::base(AgentKind::Forward, theta_body_max)
    }

    pub fn holonomic(theta_body_max: f64) -> Self {
        Self::base(AgentKind::Holonomic, theta_body_max)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.sensor_count < 2 {
            return bad(format!("sensor_count must be >= 2, got {}", self.sensor_count));
        }
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return bad(format!("fov must lie in (0, 2pi], got {}", self.fov));
        }
        if !(self.sensor_range > 0.0 && self.sensor_range.is_finite()) {
            return bad(format!("sensor_range must be positive, got {}", self.sensor_range));
        }
        for (name, v) in [
            ("theta_body_max", self.theta_body_max),
            ("delta_forward_max", self.delta_forward_max),
            ("delta_long_max", self.delta_long_max),
            ("delta_lat_max", self.delta_lat_max),
            ("theta_head_max", self.theta_head_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if self.lattice_size < 2 {
            return bad(format!("lattice_size must be >= 2, got {}", self.lattice_size));
        }
        Ok(())
    }

    pub fn sensor_dim(&self) -> usize {
        match self.agent {
            AgentKind::Lattice => self.lattice_size * self.lattice_size + 4,
            _ => self.sensor_count + if self.orientation_in_sensors { 2 } else { 0 },
        }
    }

    pub fn motor_dim(&self) -> usize {
        MotorCommand::encoded_dim(self.agent)
    }
}

/// State of any of the three agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentState {
    Lattice(LatticeState),
    Continuous(AgentPose),
}

impl AgentState {
    pub fn pose(&self) -> AgentPose {
        match self {
            AgentState::Lattice(s) => s.pose(),
            AgentState::Continuous(p) => *p,
        }
    }

    pub fn from_pose(kind: AgentKind, pose: AgentPose) -> Self {
        match kind {
            AgentKind::Lattice => AgentState::Lattice(LatticeState::from_pose(&pose)),
            _ => AgentState::Continuous(pose),
        }
    }
}

/// Range readings at evenly spaced angles across the field of view, centred
/// on the head direction. Index 0 is the rightmost ray.
pub fn read_sensors(pose: &AgentPose, cfg: &EnvConfig) -> Result<SensorVector, EnvError> {
    let n = cfg.sensor_count;
    let centre = pose.body + pose.head;
    let mut values = Vec::with_capacity(cfg.sensor_dim());
    for k in 0..n {
        let angle = centre + cfg.fov * (k as f64 / (n - 1) as f64 - 0.5);
        let ray = Ray::from_angle(pose.position, angle, cfg.sensor_range)?;
        values.push(ray_cast(&ray, &cfg.world)?);
    }
    if cfg.orientation_in_sensors {
        values.push(pose.body.cos());
        values.push(pose.body.sin());
    }
    Ok(SensorVector(values))
}

/// Node one-hot (row-major) followed by the heading one-hot.
pub fn lattice_sensors(state: &LatticeState, size: usize) -> SensorVector {
    let mut v = vec![0.0; size * size + 4];
    v[state.node_index(size)] = 1.0;
    v[size * size + state.heading.index()] = 1.0;
    SensorVector(v)
}

pub fn observe(state: &AgentState, cfg: &EnvConfig) -> Result<SensorVector, EnvError> {
    match state {
        AgentState::Lattice(s) => Ok(lattice_sensors(s, cfg.lattice_size)),
        AgentState::Continuous(p) => read_sensors(p, cfg),
    }
}

/// Turn then optionally advance one node; `None` when the move leaves the grid.
pub fn step_lattice(
    state: &LatticeState,
    turn: LatticeTurn,
    advance: bool,
    size: usize,
) -> Option<LatticeState> {
    let heading = state.heading.turned(turn);
    let (di, dj) = if advance { heading.step() } else { (0, 0) };
    let (i, j) = (state.node.0 + di, state.node.1 + dj);
    let n = size as i32;
    ((0..n).contains(&i) && (0..n).contains(&j)).then_some(LatticeState {
        node: (i, j),
        heading,
    })
}

/// Rotate the body then move along it; `None` when the path hits a wall.
pub fn step_forward(
    pose: &AgentPose,
    turn: f64,
    advance: f64,
    world: &WorldGeometry,
) -> Option<AgentPose> {
    let body = wrap_angle(pose.body + turn);
    let position = pose.position + Vec2::from_angle(body) * advance;
    (!path_collides(pose.position, position, world)).then_some(AgentPose {
        position,
        body,
        head: pose.head,
    })
}

/// Rotate the body, translate longitudinally, translate laterally, then set
/// the head angle. Each translation leg is collision-checked on its own.
pub fn step_holonomic(
    pose: &AgentPose,
    turn: f64,
    longitudinal: f64,
    lateral: f64,
    head: f64,
    world: &WorldGeometry,
) -> Option<AgentPose> {
    let body = wrap_angle(pose.body + turn);
    let axis = Vec2::from_angle(body);
    let mid = pose.position + axis * longitudinal;
    if path_collides(pose.position, mid, world) {
        return None;
    }
    let end = mid + axis.perp() * lateral;
    if path_collides(mid, end, world) {
        return None;
    }
    Some(AgentPose {
        position: end,
        body,
        head: wrap_angle(head),
    })
}

/// Applies `cmd`, returning `Ok(None)` when the move is rejected.
pub fn step(
    state: &AgentState,
    cmd: &MotorCommand,
    cfg: &EnvConfig,
) -> Result<Option<AgentState>, EnvError> {
    let next = match (state, *cmd) {
        (AgentState::Lattice(s), MotorCommand::Lattice { turn, advance }) => {
            step_lattice(s, turn, advance, cfg.lattice_size).map(AgentState::Lattice)
        }
        (AgentState::Continuous(p), MotorCommand::Forward { turn, advance })
            if cfg.agent == AgentKind::Forward =>
        {
            step_forward(p, turn, advance, &cfg.world).map(AgentState::Continuous)
        }
        (
            AgentState::Continuous(p),
            MotorCommand::Holonomic {
                turn,
                longitudinal,
                lateral,
                head,
            },
        ) if cfg.agent == AgentKind::Holonomic => {
            step_holonomic(p, turn, longitudinal, lateral, head, &cfg.world)
                .map(AgentState::Continuous)
        }
        (_, cmd) => {
            let name = match cmd.kind() {
                AgentKind::Lattice => "lattice",
                AgentKind::Forward => "forward",
                AgentKind::Holonomic => "holonomic",
            };
            return Err(EnvError::KindMismatch(name, cfg.agent));
        }
    };
    Ok(next)
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, max: f64) -> f64 {
    rng.gen_range(-max..=max)
}

/// Draws each command component independently and uniformly.
pub fn sample_command<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> MotorCommand {
    match cfg.agent {
        AgentKind::Lattice => MotorCommand::Lattice {
            turn: LatticeTurn::ALL[rng.gen_range(0..3)],
            advance: rng.gen_bool(0.5),
        },
        AgentKind::Forward => MotorCommand::Forward {
            turn: symmetric(rng, cfg.theta_body_max),
            advance: rng.gen_range(0.0..=cfg.delta_forward_max),
        },
        AgentKind::Holonomic => MotorCommand::Holonomic {
            turn: symmetric(rng, cfg.theta_body_max),
            longitudinal: symmetric(rng, cfg.delta_long_max),
            lateral: symmetric(rng, cfg.delta_lat_max),
            head: symmetric(rng, cfg.theta_head_max),
        },
    }
}

/// Uniform start state: any lattice node and heading, or a collision-free
/// continuous position with uniform body angle and head angle.
pub fn sample_start<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Result<AgentState, EnvError> {
    if cfg.agent == AgentKind::Lattice {
        let n = cfg.lattice_size as i32;
        return Ok(AgentState::Lattice(LatticeState::new(
            rng.gen_range(0..n),
            rng.gen_range(0..n),
            Heading::ALL[rng.gen_range(0..4)],
        )));
    }
    let b = cfg.world.bounds();
    for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
        let p = Vec2::new(rng.gen_range(0.0..b.width), rng.gen_range(0.0..b.height));
        if path_collides(p, p, &cfg.world) {
            continue;
        }
        let body = wrap_angle(rng.gen_range(-PI..PI));
        let head = if cfg.agent == AgentKind::Holonomic {
            symmetric(rng, cfg.theta_head_max)
        } else {
            0.0
        };
        return Ok(AgentState::Continuous(AgentPose {
            position: p,
            body,
            head,
        }));
    }
    Err(EnvError::Stuck {
        step: 0,
        rejections: MAX_CONSECUTIVE_REJECTIONS,
    })
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// `T + 1` states, start first.
    pub states: Vec<AgentState>,
    pub commands: Vec<MotorCommand>,
    pub s_start: SensorVector,
    pub s_end: SensorVector,
    pub displacement: GroundTruthDisplacement,
}

/// Executes `horizon` random commands from `start`, resampling rejected ones.
pub fn rollout<R: Rng + ?Sized>(
    start: AgentState,
    cfg: &EnvConfig,
    horizon: usize,
    rng: &mut R,
) -> Result<Rollout, EnvError> {
    if horizon == 0 {
        return Err(EnvError::InvalidConfig("horizon must be >= 1".into()));
    }
    let s_start = observe(&start, cfg)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut commands = Vec::with_capacity(horizon);
    states.push(start);
    let mut current = start;
    for t in 0..horizon {
        let mut rejections = 0;
        loop {
            let cmd = sample_command(cfg, rng);
            if let Some(next) = step(&current, &cmd, cfg)? {
                current = next;
                commands.push(cmd);
                states.push(next);
                break;
            }
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(EnvError::Stuck { step: t, rejections });
            }
        }
    }
    let s_end = observe(&current, cfg)?;
    Ok(Rollout {
        displacement: compute_displacement(&start.pose(), &current.pose()),
        states,
        commands,
        s_start,
        s_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Bounds, Segment};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empty_forward() -> EnvConfig {
        EnvConfig {
            world: WorldGeometry::empty(40.0, 40.0).unwrap(),
            ..EnvConfig::forward(0.2 * PI)
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn centre_of_empty_box_reads_full_range() {
        let cfg = empty_forward();
        let s = read_sensors(&AgentPose::new(20.0, 20.0, 0.3, 0.0), &cfg).unwrap();
        assert_eq!(s.0, vec![10.0; 9]);
    }

    #[test]
    fn sensor_index_convention() {
        let cfg = empty_forward();
        let s = read_sensors(&AgentPose::new(20.0, 31.0, 0.0, 0.0), &cfg).unwrap();
        assert!((s.0[8] - 9.0).abs() < 1e-12, "{:?}", s.0);
        assert_eq!(s.0[0], 10.0);
    }

    #[test]
    fn head_rotation_equals_body_rotation() {
        let cfg = EnvConfig {
            agent: AgentKind::Holonomic,
            ..EnvConfig::forward(0.0)
        };
        let a = read_sensors(&AgentPose::new(8.0, 30.0, 0.4, FRAC_PI_2), &cfg).unwrap();
        let b = read_sensors(&AgentPose::new(8.0, 30.0, 0.4 + FRAC_PI_2, 0.0), &cfg).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_steps() {
        let s = LatticeState::new(2, 3, Heading::East);
        assert_eq!(
            step_lattice(&s, LatticeTurn::Left, true, 6),
            Some(LatticeState::new(2, 4, Heading::North))
        );
        let s = LatticeState::new(5, 5, Heading::East);
        assert_eq!(step_lattice(&s, LatticeTurn::Straight, true, 6), None);
        let s = LatticeState::new(0, 0, Heading::West);
        assert_eq!(
            step_lattice(&s, LatticeTurn::Right, true, 6),
            Some(LatticeState::new(0, 1, Heading::North))
        );
    }

    /// Independent rotation table: heading angle plus turn, rounded to the
    /// nearest quarter, compared against the enum arithmetic.
    #[test]
    fn lattice_rotation_table_exhaustive() {
        for h in Heading::ALL {
            for t in LatticeTurn::ALL {
                let a = wrap_angle(h.angle() + t.angle());
                let expected = (a.cos().round() as i32, a.sin().round() as i32);
                assert_eq!(h.turned(t).step(), expected, "{h:?} {t:?}");
            }
        }
    }

    #[test]
    fn lattice_sensor_one_hot() {
        let s = lattice_sensors(&LatticeState::new(1, 2, Heading::West), 6);
        assert_eq!(s.len(), 40);
        assert_eq!(s.0.iter().sum::<f64>(), 2.0);
        assert_eq!(s.0[2 * 6 + 1], 1.0);
        assert_eq!(s.0[36 + 2], 1.0);
    }

    #[test]
    fn forward_steps() {
        let w = WorldGeometry::empty(40.0, 40.0).unwrap();
        let p = AgentPose::new(20.0, 20.0, 0.0, 0.0);
        let q = step_forward(&p, 0.0, 1.0, &w).unwrap();
        assert_eq!(q.position, Vec2::new(21.0, 20.0));
        let q = step_forward(&p, FRAC_PI_2, 1.0, &w).unwrap();
        assert!((q.position.x - 20.0).abs() < 1e-12 && (q.position.y - 21.0).abs() < 1e-12);
        assert_eq!(q.body, FRAC_PI_2);
        let p = AgentPose::new(39.5, 20.0, 0.0, 0.0);
        assert!(step_forward(&p, 0.0, 1.0, &w).is_none());
    }

    #[test]
    fn holonomic_composition() {
        let w = WorldGeometry::empty(40.0, 40.0).unwrap();
        let p = AgentPose::new(20.0, 20.0, 0.0, 0.0);
        let q = step_holonomic(&p, FRAC_PI_2, 1.0, 1.0, 0.0, &w).unwrap();
        // Matrix route: R(pi/2) * (1, 1) = (-1, 1).
        let rot = [[0.0, -1.0], [1.0, 0.0]];
        let d = [
            rot[0][0] * 1.0 + rot[0][1] * 1.0,
            rot[1][0] * 1.0 + rot[1][1] * 1.0,
        ];
        assert!((q.position.x - (20.0 + d[0])).abs() < 1e-12);
        assert!((q.position.y - (20.0 + d[1])).abs() < 1e-12);
        assert_eq!(q.body, FRAC_PI_2);
        assert_eq!(q.head, 0.0);

        let p = AgentPose::new(20.0, 20.0, 0.3, 0.7);
        let q = step_holonomic(&p, 0.0, 0.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(q, AgentPose { head: 0.0, ..p });
    }

    #[test]
    fn holonomic_lateral_leg_collides() {
        let w = WorldGeometry::new(
            Bounds::new(40.0, 40.0).unwrap(),
            vec![Segment::new(Vec2::new(10.0, 22.0), Vec2::new(30.0, 22.0)).unwrap()],
        )
        .unwrap();
        let p = AgentPose::new(20.0, 20.0, 0.0, 0.0);
        assert!(step_holonomic(&p, 0.0, 1.0, 1.0, 0.0, &w).is_some());
        assert!(step_holonomic(&p, 0.0, 1.0, 3.0, 0.0, &w).is_none());
    }

    #[test]
    fn degenerate_interval_samples_zero() {
        let cfg = EnvConfig::forward(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            match sample_command(&cfg, &mut rng) {
                MotorCommand::Forward { turn, .. } => assert_eq!(turn, 0.0),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn lattice_command_frequencies() {
        let cfg = EnvConfig::lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 6];
        let n = 60_000;
        for _ in 0..n {
            if let MotorCommand::Lattice { turn, advance } = sample_command(&cfg, &mut rng) {
                counts[turn.index() * 2 + usize::from(advance)] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn forward_advance_mean() {
        let cfg = EnvConfig::forward(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            if let MotorCommand::Forward { advance, .. } = sample_command(&cfg, &mut rng) {
                assert!((0.0..=1.0).contains(&advance));
                sum += advance;
            }
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn rollout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = EnvConfig {
            theta_body_max: 0.0,
            delta_forward_max: 0.0,
            ..EnvConfig::forward(0.0)
        };
        let start = sample_start(&cfg, &mut rng).unwrap();
        let r = rollout(start, &cfg, 1, &mut rng).unwrap();
        assert_eq!(
            (r.displacement.dlong, r.displacement.dlat, r.displacement.dtheta),
            (0.0, 0.0, 0.0)
        );

        let cfg = EnvConfig::forward(0.0);
        let start = sample_start(&cfg, &mut rng).unwrap();
        let r = rollout(start, &cfg, 6, &mut rng).unwrap();
        let total: f64 = r
            .commands
            .iter()
            .map(|c| match c {
                MotorCommand::Forward { advance, .. } => *advance,
                _ => unreachable!(),
            })
            .sum();
        assert_eq!(r.commands.len(), 6);
        assert!((r.displacement.dlong - total).abs() < 1e-9);
        assert!(r.displacement.dlat.abs() < 1e-9);
        assert_eq!(r.displacement.dtheta, 0.0);
    }

    #[test]
    fn lattice_two_left_turns() {
        let cfg = EnvConfig::lattice();
        let mut s = AgentState::Lattice(LatticeState::new(2, 2, Heading::East));
        let cmd = MotorCommand::Lattice {
            turn: LatticeTurn::Left,
            advance: true,
        };
        for _ in 0..2 {
            s = step(&s, &cmd, &cfg).unwrap().unwrap();
        }
        assert_eq!(s, AgentState::Lattice(LatticeState::new(1, 3, Heading::West)));
    }

    #[test]
    fn lattice_exploration_visits_every_node() {
        let cfg = EnvConfig::lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = std::collections::HashSet::new();
        let mut s = AgentState::Lattice(LatticeState::new(0, 0, Heading::East));
        for _ in 0..20 {
            let r = rollout(s, &cfg, 50, &mut rng).unwrap();
            for st in &r.states {
                if let AgentState::Lattice(l) = st {
                    seen.insert(l.node);
                }
            }
            s = *r.states.last().unwrap();
        }
        assert_eq!(seen.len(), 36);
    }

    #[test]
    fn command_kind_mismatch_is_error() {
        let cfg = EnvConfig::forward(0.1);
        let s = AgentState::Continuous(AgentPose::new(20.0, 20.0, 0.0, 0.0));
        let cmd = MotorCommand::Lattice {
            turn: LatticeTurn::Left,
            advance: true,
        };
        assert!(matches!(step(&s, &cmd, &cfg), Err(EnvError::KindMismatch(..))));
    }

    #[test]
    fn raw_round_trip() {
        let cmds = [
            MotorCommand::Lattice {
                turn: LatticeTurn::Right,
                advance: false,
            },
            MotorCommand::Forward {
                turn: -0.25,
                advance: 0.5,
            },
            MotorCommand::Holonomic {
                turn: 0.1,
                longitudinal: -0.2,
                lateral: 0.3,
                head: -1.0,
            },
        ];
        for c in cmds {
            assert_eq!(MotorCommand::from_raw(c.kind(), &c.to_raw()), Some(c));
        }
    }
}
