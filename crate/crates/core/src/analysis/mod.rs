//! Representation analysis: PCA and FastICA projections of encoded motor
//! sequences, colour coding by ground-truth displacement, and distance-based
//! topology metrics.

mod export;
mod ica;
mod metrics;
mod pca;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{GroundTruthDisplacement, TrainingSample};
use crate::model::{Batch, ModelError, SensorimotorModel};
use crate::nn::Tensor2;

pub use export::{jet, render_svg, write_csv, CSV_HEADER, SVG_SIZE};
pub use ica::{ica_fit, IcaConfig, IcaModel};
pub use metrics::{
    circle_correlation, multiple_correlation, multivariate_r, pearson, percentile, ranks, spearman,
    topology_metrics, TopologyConfig, TopologyReport, MIN_TOPOLOGY_POINTS,
};
pub use pca::{pca_fit, PcaModel};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need 1 <= k <= {dim} and more than k points; got k = {k}, n = {n}")]
    BadK { k: usize, n: usize, dim: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axes {
    Pca,
    Ica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorChannel {
    Dlong,
    Dlat,
    Dtheta,
}

impl ColorChannel {
    pub const ALL: [ColorChannel; 3] = [ColorChannel::Dlong, ColorChannel::Dlat, ColorChannel::Dtheta];

    pub fn value(self, t: &GroundTruthDisplacement) -> f64 {
        match self {
            ColorChannel::Dlong => t.dlong,
            ColorChannel::Dlat => t.dlat,
            ColorChannel::Dtheta => t.dtheta,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorChannel::Dlong => "dlong",
            ColorChannel::Dlat => "dlat",
            ColorChannel::Dtheta => "dtheta",
        }
    }
}

/// Points whose `channel` value lies in `[min, max]` are drawn with
/// `inside` opacity, the rest with `outside`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpacityWindow {
    pub channel: ColorChannel,
    pub min: f64,
    pub max: f64,
    pub inside: f64,
    pub outside: f64,
}

impl OpacityWindow {
    pub fn opacity(&self, t: &GroundTruthDisplacement) -> f64 {
        let v = self.channel.value(t);
        if (self.min..=self.max).contains(&v) {
            self.inside
        } else {
            self.outside
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPoint {
    pub coords: Vec<f64>,
    /// Colour value normalised to `[0, 1]` over the projected set.
    pub color_value: f64,
    pub opacity: f64,
    pub truth: GroundTruthDisplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Projector {
    Pca(PcaModel),
    Ica(IcaModel),
}

impl Projector {
    pub fn fit(points: &Tensor2, axes: Axes, k: usize, ica: &IcaConfig) -> Result<Self, AnalysisError> {
        Ok(match axes {
            Axes::Pca => Projector::Pca(pca_fit(points, k)?),
            Axes::Ica => Projector::Ica(ica_fit(points, k, ica)?),
        })
    }

    pub fn transform(&self, points: &Tensor2) -> Result<Tensor2, AnalysisError> {
        match self {
            Projector::Pca(p) => p.transform(points),
            Projector::Ica(i) => i.transform(points),
        }
    }
}

/// Min-max normalisation; a constant input maps to 0.5 everywhere.
pub fn normalize_colors(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

const ENCODE_CHUNK: usize = 1000;

/// `h_m` for every sample, one row each.
pub fn encode_samples(model: &SensorimotorModel, samples: &[TrainingSample]) -> Result<Tensor2, AnalysisError> {
    let dim = model.config.arch.repr_dim;
    let mut data = Vec::with_capacity(samples.len() * dim);
    for chunk in samples.chunks(ENCODE_CHUNK) {
        let batch = Batch::from_samples(chunk.iter()).map_err(AnalysisError::Model)?;
        data.extend_from_slice(model.encode_batch(&batch.commands)?.data());
    }
    Tensor2::from_vec(samples.len(), dim, data).map_err(|e| AnalysisError::Model(e.into()))
}

/// Attaches normalised colours and opacities to projected coordinates.
pub fn color_points(
    coords: &Tensor2,
    truths: &[GroundTruthDisplacement],
    channel: ColorChannel,
    window: Option<&OpacityWindow>,
) -> Result<Vec<ProjectionPoint>, AnalysisError> {
    if coords.rows() != truths.len() {
        return Err(AnalysisError::Shape(format!(
            "{} projected points for {} truths",
            coords.rows(),
            truths.len()
        )));
    }
    let raw: Vec<f64> = truths.iter().map(|t| channel.value(t)).collect();
    let colors = normalize_colors(&raw);
    Ok(truths
        .iter()
        .zip(colors)
        .enumerate()
        .map(|(r, (t, color_value))| ProjectionPoint {
            coords: coords.row(r).to_vec(),
            color_value,
            opacity: window.map_or(1.0, |w| w.opacity(t)),
            truth: *t,
        })
        .collect())
}

/// Encodes `samples`, fits `axes` on the encodings and returns the coloured
/// projection together with the fitted projector.
pub fn project_and_color(
    model: &SensorimotorModel,
    samples: &[TrainingSample],
    axes: Axes,
    k: usize,
    channel: ColorChannel,
    window: Option<&OpacityWindow>,
    ica: &IcaConfig,
) -> Result<(Vec<ProjectionPoint>, Projector), AnalysisError> {
    let h = encode_samples(model, samples)?;
    let projector = Projector::fit(&h, axes, k, ica)?;
    let coords = projector.transform(&h)?;
    let truths: Vec<GroundTruthDisplacement> = samples.iter().map(|s| s.truth).collect();
    Ok((color_points(&coords, &truths, channel, window)?, projector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_samples;
    use crate::env::EnvConfig;
    use crate::model::{Architecture, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalisation_endpoints() {
        let c = normalize_colors(&[2.0, -1.0, 5.0, 0.5]);
        assert_eq!(c[1], 0.0);
        assert_eq!(c[2], 1.0);
        assert_eq!(c[0], 0.5);
        assert_eq!(normalize_colors(&[3.0, 3.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn opacity_window() {
        let w = OpacityWindow {
            channel: ColorChannel::Dtheta,
            min: -0.1,
            max: 0.1,
            inside: 1.0,
            outside: 0.2,
        };
        let mut t = GroundTruthDisplacement::default();
        assert_eq!(w.opacity(&t), 1.0);
        t.dtheta = 0.5;
        assert_eq!(w.opacity(&t), 0.2);
    }

    fn model(env: &EnvConfig) -> SensorimotorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        SensorimotorModel::new(ModelConfig::for_env(env, Architecture::default()), &mut rng)
    }

    #[test]
    fn projection_covers_dataset_and_is_deterministic() {
        let env = EnvConfig::forward(0.6);
        let m = model(&env);
        let ss = generate_samples(&env, 6, 300, 2).unwrap();
        let run = || project_and_color(&m, &ss, Axes::Pca, 3, ColorChannel::Dlong, None, &IcaConfig::default()).unwrap();
        let (a, _) = run();
        let (b, _) = run();
        assert_eq!(a.len(), 300);
        assert_eq!(a, b);
        assert!(a.iter().any(|p| p.color_value == 0.0) && a.iter().any(|p| p.color_value == 1.0));
    }

    #[test]
    fn collinear_agent_has_constant_rotation_color() {
        let mut env = EnvConfig::forward(0.0);
        env.world = crate::geom::WorldGeometry::empty(1000.0, 1000.0).unwrap();
        let m = model(&env);
        let ss = generate_samples(&env, 6, 200, 3).unwrap();
        let (pts, _) = project_and_color(&m, &ss, Axes::Pca, 2, ColorChannel::Dtheta, None, &IcaConfig::default()).unwrap();
        assert!(pts.iter().all(|p| p.color_value == 0.5));
    }

    #[test]
    fn encoding_matches_single_sequence_path() {
        let env = EnvConfig::holonomic(0.6);
        let m = model(&env);
        let ss = generate_samples(&env, 4, 5, 4).unwrap();
        let h = encode_samples(&m, &ss).unwrap();
        for (r, s) in ss.iter().enumerate() {
            let cmds: Vec<Vec<f64>> = s.commands.iter().map(|c| c.encode()).collect();
            let single = m.encode_sequence(&cmds).unwrap();
            for (a, b) in single.iter().zip(h.row(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
