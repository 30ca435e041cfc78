use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::data::GroundTruthDisplacement;
use crate::nn::Tensor2;

pub const MIN_TOPOLOGY_POINTS: usize = 1000;

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Linear-regression R of `targets` on the columns of `x` (with intercept):
/// `sqrt(explained / total)` summed over all targets. For one target this
/// is the correlation between the target and its least-squares fit.
pub fn multivariate_r(x: &Tensor2, targets: &[Vec<f64>]) -> Result<f64, AnalysisError> {
    let (n, k) = x.shape();
    if targets.iter().any(|t| t.len() != n) {
        return Err(AnalysisError::Shape("target length differs from point count".into()));
    }
    let design = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else { x.get(r, c - 1) });
    let svd = design.clone().svd(true, true);
    let mut explained = 0.0;
    let mut total = 0.0;
    for t in targets {
        let y = DVector::from_column_slice(t);
        let beta = svd.solve(&y, 1e-12).map_err(|e| AnalysisError::Shape(e.to_string()))?;
        let fit = &design * beta;
        let mean = y.mean();
        explained += fit.iter().map(|f| (f - mean).powi(2)).sum::<f64>();
        total += y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    Ok((explained / total).sqrt())
}

pub fn multiple_correlation(x: &Tensor2, y: &[f64]) -> Result<f64, AnalysisError> {
    multivariate_r(x, &[y.to_vec()])
}

/// How well `x` linearly explains the angle embedded on the unit circle.
pub fn circle_correlation(x: &Tensor2, angles: &[f64]) -> Result<f64, AnalysisError> {
    let cos = angles.iter().map(|a| a.cos()).collect();
    let sin = angles.iter().map(|a| a.sin()).collect();
    multivariate_r(x, &[cos, sin])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub pairs: usize,
    /// Truth-distance percentile defining "near" pairs for the collapse score.
    pub near_percentile: f64,
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            pairs: 100_000,
            near_percentile: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    /// Rank correlation between truth-space and representation distances.
    pub spearman: f64,
    /// Mean representation distance of near pairs over that of all pairs.
    pub collapse_score: f64,
    pub epsilon: f64,
    pub pairs: usize,
    pub near_pairs: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `p`-th percentile by linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Truth distances use `(dlong, dlat, cos dtheta, sin dtheta)`. Near pairs
/// are those at or below the percentile, since discrete displacements make
/// the low percentiles exactly zero.
pub fn topology_metrics(
    repr: &Tensor2,
    truths: &[GroundTruthDisplacement],
    cfg: &TopologyConfig,
) -> Result<TopologyReport, AnalysisError> {
    let n = repr.rows();
    if truths.len() != n {
        return Err(AnalysisError::Shape(format!("{n} representations for {} truths", truths.len())));
    }
    if n < MIN_TOPOLOGY_POINTS {
        return Err(AnalysisError::TooFewPoints {
            needed: MIN_TOPOLOGY_POINTS,
            got: n,
        });
    }
    let emb: Vec<[f64; 4]> = truths.iter().map(|t| t.embedding()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut d_truth = Vec::with_capacity(cfg.pairs);
    let mut d_repr = Vec::with_capacity(cfg.pairs);
    while d_truth.len() < cfg.pairs {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        d_truth.push(euclid(&emb[i], &emb[j]));
        d_repr.push(euclid(repr.row(i), repr.row(j)));
    }
    let epsilon = percentile(&d_truth, cfg.near_percentile);
    let mean_all = d_repr.iter().sum::<f64>() / d_repr.len() as f64;
    let near: Vec<f64> = d_truth
        .iter()
        .zip(&d_repr)
        .filter(|(t, _)| **t <= epsilon)
        .map(|(_, r)| *r)
        .collect();
    let mean_near = near.iter().sum::<f64>() / near.len() as f64;
    Ok(TopologyReport {
        spearman: spearman(&d_truth, &d_repr),
        collapse_score: mean_near / mean_all,
        epsilon,
        pairs: d_truth.len(),
        near_pairs: near.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truths(n: usize, seed: u64) -> Vec<GroundTruthDisplacement> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| GroundTruthDisplacement {
                dlong: rng.gen_range(-3.0..6.0),
                dlat: rng.gen_range(-3.0..3.0),
                dtheta: rng.gen_range(-3.0..3.0),
            })
            .collect()
    }

    #[test]
    fn rank_ties_share_average() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_is_monotone_invariant() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v.powi(3) + 1.0).collect();
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|v| -v.exp()).collect();
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_image_of_truth_is_perfect() {
        let t = truths(1500, 1);
        // An isometry of the truth embedding, padded with zero columns.
        let mut repr = Tensor2::zeros(t.len(), 50);
        for (r, tr) in t.iter().enumerate() {
            let e = tr.embedding();
            repr.set(r, 0, 2.0 * e[0]);
            repr.set(r, 1, 2.0 * e[1]);
            repr.set(r, 2, 2.0 * e[2]);
            repr.set(r, 3, 2.0 * e[3]);
        }
        let rep = topology_metrics(&repr, &t, &TopologyConfig::default()).unwrap();
        assert!((rep.spearman - 1.0).abs() < 1e-9);
        assert!(rep.collapse_score < 0.5);
    }

    #[test]
    fn random_vectors_are_null() {
        let t = truths(2000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let repr = Tensor2::uniform(t.len(), 50, 1.0, &mut rng);
        let rep = topology_metrics(&repr, &t, &TopologyConfig::default()).unwrap();
        assert!(rep.spearman.abs() < 0.02, "{}", rep.spearman);
        assert!((rep.collapse_score - 1.0).abs() < 0.03, "{}", rep.collapse_score);
        assert_eq!(rep.pairs, 100_000);
    }

    #[test]
    fn too_few_points() {
        let t = truths(999, 4);
        let repr = Tensor2::zeros(999, 3);
        assert!(matches!(
            topology_metrics(&repr, &t, &TopologyConfig::default()),
            Err(AnalysisError::TooFewPoints { got: 999, .. })
        ));
    }

    #[test]
    fn single_target_r_equals_abs_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| -3.0 * v + rng.gen_range(-1.0..1.0)).collect();
        let xt = Tensor2::from_vec(200, 1, x.clone()).unwrap();
        let r = multiple_correlation(&xt, &y).unwrap();
        assert!((r - pearson(&x, &y).abs()).abs() < 1e-10);
    }

    #[test]
    fn circle_embedding_beats_raw_angle_on_circle_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let angles: Vec<f64> = (0..2000).map(|_| rng.gen_range(-9.0..9.0)).collect();
        let mut x = Tensor2::zeros(2000, 2);
        for (r, a) in angles.iter().enumerate() {
            x.set(r, 0, a.cos());
            x.set(r, 1, a.sin());
        }
        let circle = circle_correlation(&x, &angles).unwrap();
        let raw = multiple_correlation(&x, &angles).unwrap();
        assert!((circle - 1.0).abs() < 1e-9);
        assert!(raw < 0.5);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[4.0, 1.0, 2.0, 3.0], 50.0), 2.5);
        assert_eq!(percentile(&[0.0, 0.0, 0.0, 5.0], 5.0), 0.0);
    }
}
