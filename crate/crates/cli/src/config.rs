//! Run configuration: a TOML file with optional sections, resolved against
//! per-agent defaults into a [`RunConfig`] where every field has a value.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smrep::analysis::{Axes, ColorChannel, IcaConfig, OpacityWindow, TopologyConfig};
use smrep::data::mix_seed;
use smrep::env::{AgentKind, EnvConfig};
use smrep::geom::WorldGeometry;
use smrep::model::TrainConfig;

use crate::error::CliError;

pub const SEED_ENV: &str = "SMDS_SEED";
pub const BUILTIN_WORLD: &str = "builtin:canonical_v1";
const ANALYSIS_TAG: u64 = 0x414e_414c;
const TRAIN_SET_TAG: u64 = 0x5452_4149;

/// Parses `0.3`, `pi`, `-pi/4`, `2pi/10`, `5*pi/10`, `1.5pi`.
pub fn parse_angle(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_lowercase();
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, Some(d)),
        None => (s.as_str(), None),
    };
    let bad = || format!("cannot parse angle {text:?}");
    let numerator = match num.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => c.parse::<f64>().map_err(|_| bad())?,
            };
            c * PI
        }
        None => num.parse::<f64>().map_err(|_| bad())?,
    };
    let value = match den {
        Some(d) => {
            let d: f64 = d.parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            numerator / d
        }
        None => numerator,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(pub f64);

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(i) => Ok(Angle(i as f64)),
            Repr::Float(f) => Ok(Angle(f)),
            Repr::Text(t) => parse_angle(&t).map(Angle).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    agent: Option<AgentKind>,
    theta_body_max: Option<Angle>,
    delta_forward_max: Option<f64>,
    delta_long_max: Option<f64>,
    delta_lat_max: Option<f64>,
    theta_head_max: Option<Angle>,
    sensor_count: Option<usize>,
    sensor_range: Option<f64>,
    fov: Option<Angle>,
    orientation_in_sensors: Option<bool>,
    lattice_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    world: Option<String>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    paths: RawPaths,
    #[serde(default)]
    env: RawEnv,
    train: Option<TrainConfig>,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    analysis: AnalysisSection,
}

/// Scalar environment settings; the world comes from `paths.world`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSection {
    pub agent: AgentKind,
    pub theta_body_max: f64,
    pub delta_forward_max: f64,
    pub delta_long_max: f64,
    pub delta_lat_max: f64,
    pub theta_head_max: f64,
    pub sensor_count: usize,
    pub sensor_range: f64,
    pub fov: f64,
    pub orientation_in_sensors: bool,
    pub lattice_size: usize,
}

impl EnvSection {
    fn resolve(raw: RawEnv) -> Self {
        let agent = raw.agent.unwrap_or(AgentKind::Forward);
        let base = match agent {
            AgentKind::Lattice => EnvConfig::lattice(),
            AgentKind::Forward => EnvConfig::forward(2.0 * PI / 10.0),
            AgentKind::Holonomic => EnvConfig::holonomic(2.0 * PI / 10.0),
        };
        let angle = |a: Option<Angle>, d: f64| a.map_or(d, |a| a.0);
        EnvSection {
            agent,
            theta_body_max: angle(raw.theta_body_max, base.theta_body_max),
            delta_forward_max: raw.delta_forward_max.unwrap_or(base.delta_forward_max),
            delta_long_max: raw.delta_long_max.unwrap_or(base.delta_long_max),
            delta_lat_max: raw.delta_lat_max.unwrap_or(base.delta_lat_max),
            theta_head_max: angle(raw.theta_head_max, base.theta_head_max),
            sensor_count: raw.sensor_count.unwrap_or(base.sensor_count),
            sensor_range: raw.sensor_range.unwrap_or(base.sensor_range),
            fov: angle(raw.fov, base.fov),
            orientation_in_sensors: raw.orientation_in_sensors.unwrap_or(base.orientation_in_sensors),
            lattice_size: raw.lattice_size.unwrap_or(base.lattice_size),
        }
    }

    pub fn from_env(env: &EnvConfig) -> Self {
        EnvSection {
            agent: env.agent,
            theta_body_max: env.theta_body_max,
            delta_forward_max: env.delta_forward_max,
            delta_long_max: env.delta_long_max,
            delta_lat_max: env.delta_lat_max,
            theta_head_max: env.theta_head_max,
            sensor_count: env.sensor_count,
            sensor_range: env.sensor_range,
            fov: env.fov,
            orientation_in_sensors: env.orientation_in_sensors,
            lattice_size: env.lattice_size,
        }
    }

    pub fn env_config(&self, world: WorldGeometry) -> EnvConfig {
        EnvConfig {
            agent: self.agent,
            theta_body_max: self.theta_body_max,
            delta_forward_max: self.delta_forward_max,
            delta_long_max: self.delta_long_max,
            delta_lat_max: self.delta_lat_max,
            theta_head_max: self.theta_head_max,
            sensor_count: self.sensor_count,
            sensor_range: self.sensor_range,
            fov: self.fov,
            orientation_in_sensors: self.orientation_in_sensors,
            lattice_size: self.lattice_size,
            world,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// A world file, or `builtin:canonical_v1`.
    pub world: String,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Sample fresh rollouts every epoch; otherwise train on `train.smds`.
    pub on_the_fly: bool,
    /// Size of the dataset written by `generate`.
    pub train_samples: usize,
    pub checkpoint_every: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            on_the_fly: true,
            train_samples: 20_000,
            checkpoint_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub samples: usize,
    pub k: usize,
    pub axes: Vec<Axes>,
    pub channels: Vec<ColorChannel>,
    pub topology_pairs: usize,
    pub near_percentile: f64,
    pub ica_max_iter: usize,
    pub ica_tolerance: f64,
    pub opacity: Option<OpacityWindow>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let ica = IcaConfig::default();
        let topo = TopologyConfig::default();
        Self {
            samples: 20_000,
            k: 3,
            axes: vec![Axes::Pca, Axes::Ica],
            channels: ColorChannel::ALL.to_vec(),
            topology_pairs: topo.pairs,
            near_percentile: topo.near_percentile,
            ica_max_iter: ica.max_iter,
            ica_tolerance: ica.tolerance,
            opacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub paths: Paths,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub analysis: AnalysisSection,
}

impl RunConfig {
    /// Reads `path` and fills every unset field. `SMDS_SEED`, when set,
    /// replaces the file's seed.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: format!("cannot read config: {e}"),
        })?;
        let seed_override = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        Self::from_toml(&text, stem, base, seed_override).map_err(|e| match e {
            CliError::Config(message) => CliError::ConfigFile {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// `default_name` names the run when the file has no `name`; relative
    /// world paths resolve against `base`.
    pub fn from_toml(text: &str, default_name: &str, base: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        let seed = seed_override.or(raw.seed).unwrap_or(0);
        if seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {seed} exceeds {}", i64::MAX)));
        }
        let world = match raw.paths.world {
            None => BUILTIN_WORLD.to_string(),
            Some(w) if w == BUILTIN_WORLD => w,
            Some(w) => {
                let p = Path::new(&w);
                let p = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
                p.to_string_lossy().into_owned()
            }
        };
        let mut train = raw.train.unwrap_or_default();
        train.seed = seed;
        let cfg = RunConfig {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            seed,
            paths: Paths {
                world,
                out_dir: raw.paths.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            },
            env: EnvSection::resolve(raw.env),
            train,
            data: raw.data,
            analysis: raw.analysis,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("run name {:?} must be a plain file name", self.name)));
        }
        self.train.validate()?;
        if self.data.train_samples == 0 || self.data.checkpoint_every == 0 {
            return Err(CliError::Config("data.train_samples and data.checkpoint_every must be positive".into()));
        }
        let a = &self.analysis;
        if a.k == 0 || a.k > self.train.arch.repr_dim {
            return Err(CliError::Config(format!(
                "analysis.k = {} must lie in 1..={}",
                a.k, self.train.arch.repr_dim
            )));
        }
        if a.axes.is_empty() || a.channels.is_empty() {
            return Err(CliError::Config("analysis.axes and analysis.channels must not be empty".into()));
        }
        Ok(())
    }

    /// Loads the world file; a missing file is a config error naming it.
    pub fn world(&self) -> Result<WorldGeometry, CliError> {
        if self.paths.world == BUILTIN_WORLD {
            return Ok(WorldGeometry::canonical());
        }
        let path = PathBuf::from(&self.paths.world);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::ConfigFile {
            path: path.clone(),
            message: format!("cannot read world file: {e}"),
        })?;
        text.parse().map_err(|e| CliError::ConfigFile {
            path,
            message: format!("invalid world file: {e}"),
        })
    }

    pub fn env_config(&self) -> Result<EnvConfig, CliError> {
        let env = self.env.env_config(self.world()?);
        env.validate()?;
        Ok(env)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.out_dir.join(&self.name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn train_set_seed(&self) -> u64 {
        mix_seed(self.seed, TRAIN_SET_TAG)
    }

    pub fn analysis_seed(&self) -> u64 {
        mix_seed(self.seed, ANALYSIS_TAG)
    }

    pub fn ica_config(&self) -> IcaConfig {
        IcaConfig {
            max_iter: self.analysis.ica_max_iter,
            tolerance: self.analysis.ica_tolerance,
            seed: self.seed,
        }
    }

    pub fn topology_config(&self) -> TopologyConfig {
        TopologyConfig {
            pairs: self.analysis.topology_pairs,
            near_percentile: self.analysis.near_percentile,
            seed: self.analysis_seed(),
        }
    }
}
