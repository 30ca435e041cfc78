use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::nn::Tensor2;

/// Components whose variance is below this fraction of the largest are
/// treated as absent.
const DEGENERATE_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Orthonormal rows, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Variance along every principal axis, including the ones not kept.
    pub spectrum: Vec<f64>,
    /// Fewer than the requested number of components had non-zero variance.
    pub degenerate: bool,
}

pub(crate) fn to_matrix(points: &Tensor2) -> DMatrix<f64> {
    DMatrix::from_row_slice(points.rows(), points.cols(), points.data())
}

pub(crate) fn from_matrix(m: &DMatrix<f64>) -> Tensor2 {
    let mut t = Tensor2::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            t.set(r, c, m[(r, c)]);
        }
    }
    t
}

/// Principal axes of the centred rows of `points` (n x d), via the SVD of
/// the data matrix.
pub fn pca_fit(points: &Tensor2, k: usize) -> Result<PcaModel, AnalysisError> {
    let (n, d) = points.shape();
    if k == 0 || k > d || n <= k {
        return Err(AnalysisError::BadK { k, n, dim: d });
    }
    let mut x = to_matrix(points);
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).mean()).collect();
    for (c, m) in mean.iter().enumerate() {
        x.column_mut(c).add_scalar_mut(-m);
    }
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let spectrum: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64)
        .collect();
    let total: f64 = spectrum.iter().sum();
    let top = spectrum.first().copied().unwrap_or(0.0);

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for (&i, &var) in order.iter().zip(&spectrum).take(k) {
        if top == 0.0 || var <= DEGENERATE_RELATIVE * top {
            break;
        }
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        let pivot = row.iter().copied().fold(0.0, |best: f64, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
        explained_variance.push(var);
    }
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    Ok(PcaModel {
        mean,
        degenerate: components.len() < k,
        components,
        explained_variance,
        explained_variance_ratio,
        spectrum,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Coordinates of each row on the kept components.
    pub fn transform(&self, points: &Tensor2) -> Result<Tensor2, AnalysisError> {
        if points.cols() != self.dim() {
            return Err(AnalysisError::Shape(format!(
                "points have {} columns, model expects {}",
                points.cols(),
                self.dim()
            )));
        }
        let mut out = Tensor2::zeros(points.rows(), self.k());
        for r in 0..points.rows() {
            let row = points.row(r);
            for (c, comp) in self.components.iter().enumerate() {
                let v: f64 = row.iter().zip(&self.mean).zip(comp).map(|((x, m), w)| (x - m) * w).sum();
                out.set(r, c, v);
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, coords: &Tensor2) -> Result<Tensor2, AnalysisError> {
        if coords.cols() != self.k() {
            return Err(AnalysisError::Shape(format!(
                "coordinates have {} columns, model keeps {}",
                coords.cols(),
                self.k()
            )));
        }
        let mut out = Tensor2::zeros(coords.rows(), self.dim());
        for r in 0..coords.rows() {
            let row = out.row_mut(r);
            row.copy_from_slice(&self.mean);
            for (c, comp) in self.components.iter().enumerate() {
                let a = coords.get(r, c);
                for (o, w) in row.iter_mut().zip(comp) {
                    *o += a * w;
                }
            }
        }
        Ok(out)
    }
}
