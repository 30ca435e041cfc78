use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::Parameters;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Coordinates checked per tensor (all of them if the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Floor on the relative-error denominator so that vanishing gradients
    /// are compared in absolute terms.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples_per_tensor: 50,
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

/// Result of one loss evaluation. `kink` fingerprints the relu activation
/// pattern; a coordinate whose perturbation changes it sits on a
/// non-differentiable point and is skipped.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub loss: f64,
    pub kink: Option<u64>,
}

impl From<f64> for Probe {
    fn from(loss: f64) -> Self {
        Probe { loss, kink: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central finite differences of `eval` on a
/// random subsample of coordinates of every tensor of `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut eval: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Probe,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_kink = eval(params).kink;
    let mut work = params.clone();
    let grads: Vec<(String, Vec<f64>)> = analytic
        .params()
        .into_iter()
        .map(|v| (v.name, v.data.to_vec()))
        .collect();
    let mut tensors = Vec::with_capacity(grads.len());
    for (ti, (name, grad)) in grads.iter().enumerate() {
        let n = grad.len();
        let picks = sample(&mut rng, n, cfg.samples_per_tensor.min(n));
        let mut check = TensorCheck {
            name: name.clone(),
            checked: 0,
            skipped_kinks: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for k in picks.iter() {
            let original = work.params()[ti].data[k];
            work.params_mut()[ti].data[k] = original + cfg.step;
            let up = eval(&work);
            work.params_mut()[ti].data[k] = original - cfg.step;
            let down = eval(&work);
            work.params_mut()[ti].data[k] = original;
            if up.kink != base_kink || down.kink != base_kink {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (up.loss - down.loss) / (2.0 * cfg.step);
            let err = relative_error(grad[k], numeric, cfg.abs_floor);
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(err);
        }
        check.passed = check.max_rel_error < cfg.tolerance;
        tensors.push(check);
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        passed: tensors.iter().all(|t| t.passed),
        max_rel_error,
        tensors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse_batch, Activation, DenseLayer, Tensor2};

    #[test]
    fn linear_model_is_exact() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = DenseLayer::init(3, 2, Activation::Identity, &mut rng);
        let x = Tensor2::uniform(5, 3, 1.0, &mut rng);
        // Loss linear in the parameters: sum of outputs.
        let eval = |l: &DenseLayer| Probe::from(l.forward_batch(&x).unwrap().output.data().iter().sum::<f64>());
        let cache = layer.forward_batch(&x).unwrap();
        let mut grads = DenseLayer::zeros(3, 2, Activation::Identity);
        let ones = Tensor2::from_vec(5, 2, vec![1.0; 10]).unwrap();
        layer.backward(&cache, &ones, &mut grads);
        let report = grad_check(&layer, &grads, eval, &GradCheckConfig::default());
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn relu_kinks_are_skipped() {
        // Pre-activation of unit 0 is exactly zero for the single input.
        let layer = DenseLayer::new(
            Tensor2::from_vec(1, 1, vec![0.0]).unwrap(),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let y = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let eval = |l: &DenseLayer| {
            let c = l.forward_batch(&x).unwrap();
            let mut kink = 0xcbf2_9ce4_8422_2325;
            l.fold_relu_pattern(&c, &mut kink);
            Probe {
                loss: mse_batch(&c.output, &y).unwrap().0,
                kink: Some(kink),
            }
        };
        let grads = DenseLayer::zeros(1, 1, Activation::Relu);
        let report = grad_check(&layer, &grads, eval, &GradCheckConfig::default());
        assert_eq!(report.tensors[0].skipped_kinks, 1);
        assert_eq!(report.tensors[0].checked, 0);
        assert!(report.passed);
    }
}
