//! FastICA with the log-cosh contrast and symmetric decorrelation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pca::{from_matrix, pca_fit, to_matrix, PcaModel};
use super::AnalysisError;
use crate::nn::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcaConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    /// Whitening basis: the PCA fit whose components are scaled to unit
    /// variance.
    pub pca: PcaModel,
    /// k x k, unit-norm orthogonal rows acting on whitened data.
    pub unmixing: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// `(W W^T)^{-1/2} W`.
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

fn whiten(pca: &PcaModel, points: &Tensor2) -> Result<DMatrix<f64>, AnalysisError> {
    let mut z = to_matrix(&pca.transform(points)?);
    for (c, var) in pca.explained_variance.iter().enumerate() {
        z.column_mut(c).scale_mut(1.0 / var.sqrt());
    }
    Ok(z)
}

pub fn ica_fit(points: &Tensor2, k: usize, cfg: &IcaConfig) -> Result<IcaModel, AnalysisError> {
    let pca = pca_fit(points, k)?;
    if pca.degenerate {
        return Err(AnalysisError::Degenerate(format!(
            "only {} of {k} directions have variance",
            pca.k()
        )));
    }
    let z = whiten(&pca, points)?;
    let n = z.nrows() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = symmetric_decorrelation(&to_matrix(&Tensor2::uniform(k, k, 1.0, &mut rng)));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let y = &z * w.transpose();
        let g = y.map(f64::tanh);
        let g_prime_mean: Vec<f64> = (0..k).map(|c| g.column(c).iter().map(|v| 1.0 - v * v).sum::<f64>() / n).collect();
        let mut next = g.transpose() * &z / n;
        for (r, m) in g_prime_mean.iter().enumerate() {
            let shifted = next.row(r) - w.row(r) * *m;
            next.set_row(r, &shifted);
        }
        let next = symmetric_decorrelation(&next);
        let change = (0..k)
            .map(|r| (1.0 - next.row(r).dot(&w.row(r)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("FastICA stopped after {iterations} iterations without converging");
    }
    Ok(IcaModel {
        pca,
        unmixing: (0..k).map(|r| w.row(r).iter().copied().collect()).collect(),
        iterations,
        converged,
    })
}

impl IcaModel {
    pub fn k(&self) -> usize {
        self.unmixing.len()
    }

    /// Estimated sources, one column per component.
    pub fn transform(&self, points: &Tensor2) -> Result<Tensor2, AnalysisError> {
        let z = whiten(&self.pca, points)?;
        let k = self.k();
        let w = DMatrix::from_fn(k, k, |r, c| self.unmixing[r][c]);
        Ok(from_matrix(&(z * w.transpose())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn column(t: &Tensor2, c: usize) -> Vec<f64> {
        (0..t.rows()).map(|r| t.get(r, c)).collect()
    }

    fn mixed_uniform(n: usize, seed: u64) -> (Tensor2, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = Tensor2::zeros(n, 3);
        for r in 0..n {
            x.set(r, 0, 2.0 * s1[r] + s2[r]);
            x.set(r, 1, s1[r] - 1.5 * s2[r]);
            x.set(r, 2, 0.5 * s1[r] + 0.3 * s2[r] + 4.0);
        }
        (x, vec![s1, s2])
    }

    #[test]
    fn recovers_uniform_sources() {
        let (x, sources) = mixed_uniform(5000, 1);
        let ica = ica_fit(&x, 2, &IcaConfig::default()).unwrap();
        assert!(ica.converged);
        let est = ica.transform(&x).unwrap();
        for s in &sources {
            let best = (0..2).map(|c| pearson(s, &column(&est, c)).abs()).fold(0.0, f64::max);
            assert!(best > 0.99, "{best}");
        }
    }

    #[test]
    fn sources_are_decorrelated_with_unit_rows() {
        let (x, _) = mixed_uniform(3000, 2);
        let ica = ica_fit(&x, 2, &IcaConfig::default()).unwrap();
        let est = ica.transform(&x).unwrap();
        assert!(pearson(&column(&est, 0), &column(&est, 1)).abs() < 0.05);
        for row in &ica.unmixing {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_input_is_error() {
        let x = Tensor2::from_vec(20, 2, (0..40).map(|i| (i / 2) as f64).collect()).unwrap();
        assert!(matches!(
            ica_fit(&x, 2, &IcaConfig::default()),
            Err(AnalysisError::Degenerate(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (x, _) = mixed_uniform(500, 3);
        let cfg = IcaConfig {
            max_iter: 1,
            tolerance: 0.0,
            seed: 0,
        };
        let ica = ica_fit(&x, 2, &cfg).unwrap();
        assert!(!ica.converged);
        assert_eq!(ica.iterations, 1);
    }
}
