//! Trajectory datasets: generation, ground-truth displacement, the `.smds`
//! file format and mini-batching.
//!
//! A `.smds` file is the 4-byte magic `SMDS`, a little-endian `u32` format
//! version, a `u32` header length, a UTF-8 JSON [`DatasetHeader`], then
//! `count` fixed-stride records of little-endian `f64`:
//!
//! ```text
//! start x, start y, start body, start head,
//! dlong, dlat, dtheta,
//! s_t[sensor_dim], s_{t+T}[sensor_dim],
//! T x command[command_raw_dim]
//! ```

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    observe, rollout, sample_start, step, wrap_angle, AgentPose, AgentState, EnvConfig, EnvError,
    MotorCommand, SensorVector,
};

pub const DATASET_MAGIC: &[u8; 4] = b"SMDS";
pub const DATASET_VERSION: u32 = 1;
const POSE_FIELDS: usize = 4;
const TRUTH_FIELDS: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("rollout {index}: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("dataset is empty")]
    Empty,
    #[error("batch size must be >= 1")]
    ZeroBatch,
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Net motion over a sequence, expressed in the body frame at its start.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthDisplacement {
    pub dlong: f64,
    pub dlat: f64,
    /// Wrapped to `(-pi, pi]`.
    pub dtheta: f64,
}

impl GroundTruthDisplacement {
    /// `(dlong, dlat, cos dtheta, sin dtheta)`, so orientation compares on the circle.
    pub fn embedding(&self) -> [f64; 4] {
        [self.dlong, self.dlat, self.dtheta.cos(), self.dtheta.sin()]
    }
}

pub fn compute_displacement(start: &AgentPose, end: &AgentPose) -> GroundTruthDisplacement {
    let local = (end.position - start.position).rotate(-start.body);
    GroundTruthDisplacement {
        dlong: local.x,
        dlat: local.y,
        dtheta: wrap_angle(end.body - start.body),
    }
}

/// One `(s_t, commands, s_{t+T})` triple with metadata the model never sees.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub s_t: SensorVector,
    pub commands: Vec<MotorCommand>,
    pub s_next: SensorVector,
    pub truth: GroundTruthDisplacement,
    pub start_pose: AgentPose,
}

impl TrainingSample {
    pub fn horizon(&self) -> usize {
        self.commands.len()
    }

    /// Sum of commanded body rotations, not wrapped.
    pub fn unwrapped_rotation(&self) -> f64 {
        self.commands.iter().map(MotorCommand::body_turn).sum()
    }

    /// Replays the stored commands from the stored start pose and returns the
    /// final sensor reading.
    pub fn resimulate(&self, cfg: &EnvConfig) -> Result<SensorVector, EnvError> {
        let mut state = AgentState::from_pose(cfg.agent, self.start_pose);
        for (t, cmd) in self.commands.iter().enumerate() {
            state = step(&state, cmd, cfg)?.ok_or(EnvError::Stuck {
                step: t,
                rejections: 1,
            })?;
        }
        observe(&state, cfg)
    }
}

/// SplitMix64 finaliser, used to derive independent seeds from a root seed.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for rollout `index` of the dataset seeded with `seed`: the
/// seed selects the key and the index selects the stream.
pub fn rollout_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fresh start poses tried for one rollout before giving up. A continuous
/// agent driven into a wall can get wedged (every sampled move collides);
/// such a rollout is discarded and restarted elsewhere.
pub const MAX_ROLLOUT_RESTARTS: usize = 100;

fn generate_one(cfg: &EnvConfig, horizon: usize, seed: u64, index: usize) -> Result<TrainingSample, DataError> {
    let mut rng = rollout_rng(seed, index);
    let mut run = || -> Result<TrainingSample, EnvError> {
        let start = sample_start(cfg, &mut rng)?;
        let r = rollout(start, cfg, horizon, &mut rng)?;
        Ok(TrainingSample {
            s_t: r.s_start,
            commands: r.commands,
            s_next: r.s_end,
            truth: r.displacement,
            start_pose: start.pose(),
        })
    };
    let mut attempt = 0;
    loop {
        match run() {
            Err(EnvError::Stuck { .. }) if attempt + 1 < MAX_ROLLOUT_RESTARTS => attempt += 1,
            other => return other.map_err(|source| DataError::Rollout { index, source }),
        }
    }
}

/// `count` independent rollouts, deterministic in `seed` regardless of the
/// number of worker threads.
pub fn generate_samples(
    cfg: &EnvConfig,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>, DataError> {
    if count == 0 {
        return Err(DataError::Empty);
    }
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| generate_one(cfg, horizon, seed, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub env: EnvConfig,
    pub horizon: usize,
    pub count: usize,
    pub seed: u64,
    pub sensor_dim: usize,
    pub command_raw_dim: usize,
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn generate(cfg: &EnvConfig, horizon: usize, count: usize, seed: u64) -> Result<Self, DataError> {
        let samples = generate_samples(cfg, horizon, count, seed)?;
        Ok(Self {
            header: Self::header_for(cfg, horizon, count, seed),
            samples,
        })
    }

    fn header_for(cfg: &EnvConfig, horizon: usize, count: usize, seed: u64) -> DatasetHeader {
        let sensor_dim = cfg.sensor_dim();
        let command_raw_dim = MotorCommand::raw_dim(cfg.agent);
        DatasetHeader {
            format_version: DATASET_VERSION,
            env: cfg.clone(),
            horizon,
            count,
            seed,
            sensor_dim,
            command_raw_dim,
            record_stride: POSE_FIELDS + TRUTH_FIELDS + 2 * sensor_dim + horizon * command_raw_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), DataError> {
        let h = &self.header;
        let json = serde_json::to_vec(h)?;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut record = Vec::with_capacity(h.record_stride);
        let mut bytes = Vec::with_capacity(h.record_stride * 8);
        for s in &self.samples {
            record.clear();
            let p = s.start_pose;
            record.extend([p.position.x, p.position.y, p.body, p.head]);
            record.extend([s.truth.dlong, s.truth.dlat, s.truth.dtheta]);
            record.extend_from_slice(s.s_t.as_slice());
            record.extend_from_slice(s.s_next.as_slice());
            for c in &s.commands {
                record.extend(c.to_raw());
            }
            if record.len() != h.record_stride {
                return Err(DataError::Format(format!(
                    "record of {} values, stride {}",
                    record.len(),
                    h.record_stride
                )));
            }
            bytes.clear();
            for v in &record {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DataError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    /// Reads only the JSON header.
    pub fn read_header<R: Read>(r: &mut R) -> Result<DatasetHeader, DataError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(DataError::Format("not a .smds file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != DATASET_VERSION {
            return Err(DataError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        Ok(serde_json::from_slice(&json)?)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, DataError> {
        let header = Self::read_header(r)?;
        let expected = Self::header_for(&header.env, header.horizon, header.count, header.seed);
        if expected.record_stride != header.record_stride {
            return Err(DataError::Format(format!(
                "header stride {} disagrees with layout {}",
                header.record_stride, expected.record_stride
            )));
        }
        let (sd, cd, t) = (header.sensor_dim, header.command_raw_dim, header.horizon);
        let mut raw = vec![0u8; header.record_stride * 8];
        let mut rec = vec![0.0; header.record_stride];
        let mut samples = Vec::with_capacity(header.count);
        for i in 0..header.count {
            r.read_exact(&mut raw)?;
            for (v, c) in rec.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            }
            let mut at = POSE_FIELDS + TRUTH_FIELDS;
            let s_t = SensorVector(rec[at..at + sd].to_vec());
            at += sd;
            let s_next = SensorVector(rec[at..at + sd].to_vec());
            at += sd;
            let commands = (0..t)
                .map(|k| {
                    MotorCommand::from_raw(header.env.agent, &rec[at + k * cd..at + (k + 1) * cd])
                        .ok_or_else(|| DataError::Format(format!("record {i}: bad command {k}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            samples.push(TrainingSample {
                start_pose: AgentPose {
                    position: crate::geom::Vec2::new(rec[0], rec[1]),
                    body: rec[2],
                    head: rec[3],
                },
                truth: GroundTruthDisplacement {
                    dlong: rec[4],
                    dlat: rec[5],
                    dtheta: rec[6],
                },
                s_t,
                commands,
                s_next,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(DataError::Format("trailing bytes after last record".into()));
        }
        Ok(Self { header, samples })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DataError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DataError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Seeded permutation of `0..len`, chunked into full batches; a short final
/// chunk is dropped.
#[derive(Debug, Clone)]
pub struct BatchIter {
    order: Vec<usize>,
    batch: usize,
    at: usize,
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let end = self.at + self.batch;
        if end > self.order.len() {
            return None;
        }
        let out = self.order[self.at..end].to_vec();
        self.at = end;
        Some(out)
    }
}

pub fn batch_iterator(len: usize, batch: usize, shuffle_seed: u64) -> Result<BatchIter, DataError> {
    if len == 0 {
        return Err(DataError::Empty);
    }
    if batch == 0 {
        return Err(DataError::ZeroBatch);
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(BatchIter { order, batch, at: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::AgentKind;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn displacement_examples() {
        let p = AgentPose::new(3.0, 4.0, 0.7, 0.0);
        assert_eq!(compute_displacement(&p, &p), GroundTruthDisplacement::default());

        let d = compute_displacement(
            &AgentPose::new(0.0, 0.0, FRAC_PI_2, 0.0),
            &AgentPose::new(0.0, 3.0, FRAC_PI_2, 0.0),
        );
        assert!((d.dlong - 3.0).abs() < 1e-12 && d.dlat.abs() < 1e-12);

        let d = compute_displacement(
            &AgentPose::new(0.0, 0.0, FRAC_PI_4, 0.0),
            &AgentPose::new(1.0, 0.0, FRAC_PI_4, 0.0),
        );
        let h = 2f64.sqrt() / 2.0;
        assert!((d.dlong - h).abs() < 1e-12);
        assert!((d.dlat + h).abs() < 1e-12);
        assert_eq!(d.dtheta, 0.0);
    }

    #[test]
    fn batches_drop_short_tail() {
        let sizes: Vec<usize> = batch_iterator(10, 3, 1).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
    }

    #[test]
    fn batches_deterministic_and_unique() {
        let a: Vec<_> = batch_iterator(100, 7, 42).unwrap().collect();
        let b: Vec<_> = batch_iterator(100, 7, 42).unwrap().collect();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert!(all.iter().all(|&i| i < 100));
    }

    #[test]
    fn batch_errors() {
        assert!(matches!(batch_iterator(0, 3, 0), Err(DataError::Empty)));
        assert!(matches!(batch_iterator(5, 0, 0), Err(DataError::ZeroBatch)));
    }

    #[test]
    fn collinear_dataset_has_no_lateral_motion() {
        let mut cfg = EnvConfig::forward(0.0);
        cfg.world = crate::geom::WorldGeometry::empty(1000.0, 1000.0).unwrap();
        let ds = Dataset::generate(&cfg, 6, 1000, 3).unwrap();
        for s in &ds.samples {
            assert!(s.truth.dlat.abs() < 1e-9);
            assert_eq!(s.truth.dtheta, 0.0);
        }
    }

    #[test]
    fn rotation_support_bounded_by_horizon() {
        let m = 0.3;
        let cfg = EnvConfig::forward(m);
        let ds = Dataset::generate(&cfg, 6, 2000, 8).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &ds.samples {
            let r = s.unwrapped_rotation();
            assert!(r.abs() <= 6.0 * m + 1e-12);
            assert!((wrap_angle(r) - s.truth.dtheta).abs() < 1e-9);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        // Spread reaches well beyond a single step.
        assert!(hi > 2.0 * m && lo < -2.0 * m);
    }

    #[test]
    fn round_trip_and_same_seed_same_bytes() {
        for cfg in [EnvConfig::lattice(), EnvConfig::forward(0.6), EnvConfig::holonomic(0.6)] {
            let a = Dataset::generate(&cfg, 4, 50, 9).unwrap();
            let b = Dataset::generate(&cfg, 4, 50, 9).unwrap();
            let bytes = a.to_bytes().unwrap();
            assert_eq!(bytes, b.to_bytes().unwrap());
            let back = Dataset::read_from(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, a);
            let other = Dataset::generate(&cfg, 4, 50, 10).unwrap();
            assert_ne!(other.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn truncated_file_is_error() {
        let a = Dataset::generate(&EnvConfig::lattice(), 2, 5, 1).unwrap();
        let bytes = a.to_bytes().unwrap();
        assert!(Dataset::read_from(&mut &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Dataset::read_from(&mut extra.as_slice()), Err(DataError::Format(_))));
    }

    #[test]
    fn resimulation_reproduces_final_reading() {
        for cfg in [EnvConfig::lattice(), EnvConfig::forward(0.8 * std::f64::consts::PI), EnvConfig::holonomic(1.2)] {
            let ds = Dataset::generate(&cfg, 6, 200, 4).unwrap();
            let bytes = ds.to_bytes().unwrap();
            let back = Dataset::read_from(&mut bytes.as_slice()).unwrap();
            for s in &back.samples {
                let again = s.resimulate(&cfg).unwrap();
                for (a, b) in again.0.iter().zip(&s.s_next.0) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
            assert_eq!(back.header.env.agent, cfg.agent);
        }
    }

    #[test]
    fn lattice_header_dims() {
        let ds = Dataset::generate(&EnvConfig::lattice(), 3, 4, 0).unwrap();
        assert_eq!(ds.header.sensor_dim, 40);
        assert_eq!(ds.header.env.agent, AgentKind::Lattice);
        assert_eq!(ds.header.record_stride, 4 + 3 + 80 + 3 * 2);
    }
}
