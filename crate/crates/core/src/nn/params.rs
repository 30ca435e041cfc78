/// Read-only view of one named parameter tensor.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

/// A model whose trainable state is a fixed, ordered list of named tensors.
///
/// Gradients are stored in a value of the same type, so the i-th view of a
/// model and the i-th view of its gradient always describe the same tensor.
pub trait Parameters {
    fn params(&self) -> Vec<ParamView<'_>>;
    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.data.fill(0.0);
        }
    }

    /// Flattened copy of every parameter, in view order.
    fn flat(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.data.iter().copied())
            .collect()
    }

    /// Euclidean norm over every parameter.
    fn global_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, k: f64) {
        for p in self.params_mut() {
            for v in p.data.iter_mut() {
                *v *= k;
            }
        }
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, views: Vec<ParamView<'a>>) -> Vec<ParamView<'a>> {
    views
        .into_iter()
        .map(|v| ParamView {
            name: format!("{prefix}.{}", v.name),
            ..v
        })
        .collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    views: Vec<ParamViewMut<'a>>,
) -> Vec<ParamViewMut<'a>> {
    views
        .into_iter()
        .map(|v| ParamViewMut {
            name: format!("{prefix}.{}", v.name),
            ..v
        })
        .collect()
}
