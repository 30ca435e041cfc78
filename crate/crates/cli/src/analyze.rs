use std::path::Path;

use serde::Serialize;
use smrep::analysis::{
    color_points, encode_samples, pca_fit, render_svg, topology_metrics, write_csv, Axes, Projector, TopologyReport,
};
use smrep::data::{generate_samples, GroundTruthDisplacement, TrainingSample};
use smrep::nn::Tensor2;

use crate::artifacts::{prepare_run_dir, sha256_file, write_file, write_json, Provenance};
use crate::commands::{check_compatible, load_model, FINAL_CHECKPOINT};
use crate::config::RunConfig;
use crate::error::CliError;

/// Below this per-dimension variance every encoding counts as identical.
const CONSTANT_VARIANCE: f64 = 1e-12;

fn axes_name(a: Axes) -> &'static str {
    match a {
        Axes::Pca => "pca",
        Axes::Ica => "ica",
    }
}

fn max_column_variance(h: &Tensor2) -> f64 {
    let n = h.rows() as f64;
    (0..h.cols())
        .map(|c| {
            let mean = (0..h.rows()).map(|r| h.get(r, c)).sum::<f64>() / n;
            (0..h.rows()).map(|r| (h.get(r, c) - mean).powi(2)).sum::<f64>() / n
        })
        .fold(0.0, f64::max)
}

#[derive(Serialize)]
struct IcaSummary {
    converged: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct TopologyOut<'a> {
    rank_correlation: f64,
    collapse_score: f64,
    epsilon: f64,
    pairs: usize,
    near_pairs: usize,
    samples: usize,
    /// Variance ratios of all principal components of h_m.
    pca_explained_variance_ratio: Vec<f64>,
    ica: Option<IcaSummary>,
    checkpoint_sha256: String,
    provenance: Provenance<'a>,
}

/// Projects encoded sequences on PCA and/or ICA axes, writes one CSV and SVG
/// per axis set and colour channel, and a topology report.
pub fn analyze(config: &RunConfig, checkpoint: Option<&Path>, dataset: Option<&Path>) -> Result<TopologyReport, CliError> {
    let env = config.env_config()?;
    let dir = prepare_run_dir(config)?;
    let ckpt = checkpoint.map_or_else(|| dir.join(FINAL_CHECKPOINT), Path::to_path_buf);
    let (model, _) = load_model(&ckpt)?;
    let samples: Vec<TrainingSample> = match dataset {
        Some(p) => {
            let ds = smrep::data::Dataset::load(p).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?;
            check_compatible(&model.config, &ds.header.env)?;
            ds.samples
        }
        None => {
            check_compatible(&model.config, &env)?;
            generate_samples(&env, config.train.horizon, config.analysis.samples, config.analysis_seed())?
        }
    };
    let truths: Vec<GroundTruthDisplacement> = samples.iter().map(|s| s.truth).collect();
    let h = encode_samples(&model, &samples)?;
    let spread = max_column_variance(&h);
    if spread <= CONSTANT_VARIANCE {
        return Err(CliError::Degenerate(format!(
            "all {} encodings are identical (largest per-dimension variance {spread:.3e}); \
             the encoder output is constant, usually an untrained or saturated representation layer",
            h.rows()
        )));
    }
    let out = dir.join("analysis");
    std::fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let mut ica = None;
    for &axes in &config.analysis.axes {
        let projector = Projector::fit(&h, axes, config.analysis.k, &config.ica_config())?;
        if let Projector::Ica(m) = &projector {
            ica = Some(IcaSummary {
                converged: m.converged,
                iterations: m.iterations,
            });
        }
        let coords = projector.transform(&h)?;
        for &channel in &config.analysis.channels {
            let points = color_points(&coords, &truths, channel, config.analysis.opacity.as_ref())?;
            let stem = format!("{}_{}", axes_name(axes), channel.name());
            let csv_path = out.join(format!("{stem}.csv"));
            let file = std::fs::File::create(&csv_path).map_err(CliError::io(&csv_path))?;
            write_csv(&points, std::io::BufWriter::new(file))?;
            let title = format!("{} of h_m, {}: {}", axes_name(axes).to_uppercase(), config.name, channel.name());
            write_file(&out.join(format!("{stem}.svg")), render_svg(&points, &title).as_bytes())?;
        }
        println!(
            "{}: wrote {} CSV/SVG pairs to {}",
            axes_name(axes),
            config.analysis.channels.len(),
            out.display()
        );
    }
    let topo = topology_metrics(&h, &truths, &config.topology_config())?;
    let spectrum = pca_fit(&h, 1)?.spectrum;
    let total: f64 = spectrum.iter().sum();
    write_json(
        &out.join("topology.json"),
        &TopologyOut {
            rank_correlation: topo.spearman,
            collapse_score: topo.collapse_score,
            epsilon: topo.epsilon,
            pairs: topo.pairs,
            near_pairs: topo.near_pairs,
            samples: samples.len(),
            pca_explained_variance_ratio: spectrum.iter().map(|v| v / total).collect(),
            ica,
            checkpoint_sha256: sha256_file(&ckpt)?,
            provenance: Provenance::new("analyze", config),
        },
    )?;
    println!(
        "topology: rank correlation {:.4}, collapse score {:.4} over {} pairs",
        topo.spearman, topo.collapse_score, topo.pairs
    );
    Ok(topo)
}
