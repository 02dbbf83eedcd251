//! Small fully connected regressor over head masks.
//!
//! Parameters live in one flat vector, layer by layer, weights before biases.
//! Weight matrices are stored one row per input unit so the first layer,
//! whose inputs are 0/1 mask bits, reduces to summing the rows of the set bits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_width, Error, Result};
use crate::mask::HeadMask;

/// Range predictions are clamped to before they enter a search cost.
pub const PREDICTION_RANGE: (f64, f64) = (0.0, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }
}

/// Feedforward network `[L_I, L_1, .., 1]` with rectifier hidden units and a
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegressorRepr", into = "RegressorRepr")]
pub struct SurrogateRegressor {
    sizes: Vec<usize>,
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RegressorRepr {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl TryFrom<RegressorRepr> for SurrogateRegressor {
    type Error = Error;

    fn try_from(repr: RegressorRepr) -> Result<Self> {
        let mut model = Self::zeros(&repr.layer_sizes)?;
        if repr.layers.len() != model.shapes.len() {
            return Err(Error::data(format!(
                "{} layer blocks for {} layers",
                repr.layers.len(),
                model.shapes.len()
            )));
        }
        for (shape, layer) in model.shapes.clone().iter().zip(repr.layers) {
            if layer.weights.len() != shape.weight_len() || layer.biases.len() != shape.outputs {
                return Err(Error::data(format!(
                    "layer {}x{} has {} weights and {} biases",
                    shape.inputs,
                    shape.outputs,
                    layer.weights.len(),
                    layer.biases.len()
                )));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.biases)
                .any(|v| !v.is_finite())
            {
                return Err(Error::data("non-finite parameter in regressor"));
            }
            model.params[shape.weight_offset..shape.weight_offset + shape.weight_len()]
                .copy_from_slice(&layer.weights);
            model.params[shape.bias_offset..shape.bias_offset + shape.outputs]
                .copy_from_slice(&layer.biases);
        }
        Ok(model)
    }
}

impl From<SurrogateRegressor> for RegressorRepr {
    fn from(model: SurrogateRegressor) -> Self {
        let layers = model
            .shapes
            .iter()
            .map(|s| LayerRepr {
                weights: model.params[s.weight_offset..s.weight_offset + s.weight_len()].to_vec(),
                biases: model.params[s.bias_offset..s.bias_offset + s.outputs].to_vec(),
            })
            .collect();
        RegressorRepr {
            layer_sizes: model.sizes,
            layers,
        }
    }
}

impl SurrogateRegressor {
    /// All-zero parameters. Layer sizes run from the mask width to a single output;
    /// at most two hidden layers are supported.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if !(2..=4).contains(&layer_sizes.len()) {
            return Err(Error::config(format!(
                "expected 2 to 4 layer sizes (at most two hidden layers), got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::config(format!(
                "output layer must have one unit, got {layer_sizes:?}"
            )));
        }
        let mut shapes = Vec::with_capacity(layer_sizes.len() - 1);
        let mut offset = 0;
        for pair in layer_sizes.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let weight_offset = offset;
            let bias_offset = offset + inputs * outputs;
            offset = bias_offset + outputs;
            shapes.push(LayerShape {
                inputs,
                outputs,
                weight_offset,
                bias_offset,
            });
        }
        Ok(Self {
            sizes: layer_sizes.to_vec(),
            shapes,
            params: vec![0.0; offset],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes)?;
        for shape in model.shapes.clone() {
            let limit = (6.0 / shape.inputs as f64).sqrt();
            for w in
                &mut model.params[shape.weight_offset..shape.weight_offset + shape.weight_len()]
            {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    #[cfg(test)]
    pub(crate) fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.shapes.last().unwrap().bias_offset]
    }

    pub fn set_output_bias(&mut self, value: f64) {
        let off = self.shapes.last().unwrap().bias_offset;
        self.params[off] = value;
    }

    /// Checked, clamped prediction in scaled units.
    pub fn predict(&self, mask: &HeadMask) -> Result<f64> {
        check_width(self.input_width(), mask.len())?;
        Ok(self.predict_unchecked(mask))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, mask: &HeadMask) -> f64 {
        self.forward(mask)
            .clamp(PREDICTION_RANGE.0, PREDICTION_RANGE.1)
    }

    /// Raw network output without clamping. Panics on a width mismatch.
    pub fn forward(&self, mask: &HeadMask) -> f64 {
        let mut cache = Vec::new();
        self.forward_cached(mask, &mut cache)
    }

    /// Forward pass that leaves each hidden layer's post-activation in `cache`.
    pub(crate) fn forward_cached(&self, mask: &HeadMask, cache: &mut Vec<Vec<f64>>) -> f64 {
        assert_eq!(mask.len(), self.input_width(), "mask width mismatch");
        let hidden = self.shapes.len() - 1;
        cache.resize_with(hidden, Vec::new);
        let mut output = 0.0;
        for (l, shape) in self.shapes.iter().enumerate() {
            let weights =
                &self.params[shape.weight_offset..shape.weight_offset + shape.weight_len()];
            let biases = &self.params[shape.bias_offset..shape.bias_offset + shape.outputs];
            let (before, rest) = cache.split_at_mut(l);
            let mut scratch = Vec::new();
            let z = if l < hidden {
                &mut rest[0]
            } else {
                &mut scratch
            };
            z.clear();
            z.extend_from_slice(biases);
            let out = shape.outputs;
            if l == 0 {
                for i in mask.ones_iter() {
                    axpy(1.0, &weights[i * out..(i + 1) * out], z);
                }
            } else {
                for (i, &a) in before[l - 1].iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, &weights[i * out..(i + 1) * out], z);
                    }
                }
            }
            if l < hidden {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            } else {
                output = z[0];
            }
        }
        output
    }

    /// Which hidden units are active (strictly positive) for `mask`.
    pub(crate) fn activation_pattern(&self, mask: &HeadMask) -> Vec<bool> {
        let mut cache = Vec::new();
        self.forward_cached(mask, &mut cache);
        cache.iter().flatten().map(|&a| a > 0.0).collect()
    }

    /// Mean squared error over the given samples.
    pub fn mse(&self, masks: &[HeadMask], targets: &[f64]) -> f64 {
        let mut cache = Vec::new();
        let total: f64 = masks
            .iter()
            .zip(targets)
            .map(|(m, &y)| (self.forward_cached(m, &mut cache) - y).powi(2))
            .sum();
        total / masks.len() as f64
    }

    /// Mean squared error over `indices` and its gradient with respect to
    /// every parameter, accumulated into `grad` (which is overwritten).
    pub(crate) fn loss_and_gradient(
        &self,
        masks: &[HeadMask],
        targets: &[f64],
        indices: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 2.0 / indices.len() as f64;
        let mut cache = Vec::new();
        let mut delta = Vec::new();
        let mut next_delta = Vec::new();
        let mut loss = 0.0;
        for &idx in indices {
            let mask = &masks[idx];
            let err = self.forward_cached(mask, &mut cache) - targets[idx];
            loss += err * err;
            delta.clear();
            delta.push(scale * err);
            for (l, shape) in self.shapes.iter().enumerate().rev() {
                let out = shape.outputs;
                for (g, d) in grad[shape.bias_offset..shape.bias_offset + out]
                    .iter_mut()
                    .zip(&delta)
                {
                    *g += d;
                }
                let gw = shape.weight_offset;
                if l == 0 {
                    for i in mask.ones_iter() {
                        axpy(1.0, &delta, &mut grad[gw + i * out..gw + (i + 1) * out]);
                    }
                } else {
                    let weights = &self.params[gw..gw + shape.weight_len()];
                    let prev = &cache[l - 1];
                    next_delta.clear();
                    next_delta.resize(shape.inputs, 0.0);
                    for (i, &a) in prev.iter().enumerate() {
                        if a > 0.0 {
                            axpy(a, &delta, &mut grad[gw + i * out..gw + (i + 1) * out]);
                            next_delta[i] = dot(&weights[i * out..(i + 1) * out], &delta);
                        }
                    }
                    std::mem::swap(&mut delta, &mut next_delta);
                }
            }
        }
        loss / indices.len() as f64
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense reference forward pass over the full 0/1 input vector.
    fn dense_forward(model: &SurrogateRegressor, mask: &HeadMask) -> f64 {
        let mut act: Vec<f64> = mask.iter().map(|b| if b { 1.0 } else { 0.0 }).collect();
        let n_layers = model.shapes.len();
        for (l, s) in model.shapes.iter().enumerate() {
            let mut z = vec![0.0; s.outputs];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = model.params[s.bias_offset + j];
                for (i, a) in act.iter().enumerate() {
                    *zj += a * model.params[s.weight_offset + i * s.outputs + j];
                }
            }
            if l + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = z;
        }
        act[0]
    }

    #[test]
    fn sparse_forward_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = SurrogateRegressor::new(&[40, 16, 8, 1], &mut rng).unwrap();
        for _ in 0..50 {
            let bits: Vec<bool> = (0..40).map(|_| rng.random_bool(0.3)).collect();
            let m = HeadMask::from_bits(&bits);
            let a = model.forward(&m);
            let b = dense_forward(&model, &m);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_output_the_final_bias() {
        let mut model = SurrogateRegressor::zeros(&[12, 8, 4, 1]).unwrap();
        model.set_output_bias(0.37);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let bits: Vec<bool> = (0..12).map(|_| rng.random_bool(0.5)).collect();
            assert_eq!(model.predict(&HeadMask::from_bits(&bits)).unwrap(), 0.37);
        }
    }

    #[test]
    fn predict_checks_width_and_clamps() {
        let mut model = SurrogateRegressor::zeros(&[4, 1]).unwrap();
        assert!(matches!(
            model.predict(&HeadMask::zeros(5)),
            Err(Error::Dimension {
                expected: 4,
                actual: 5
            })
        ));
        model.set_output_bias(7.0);
        assert_eq!(model.predict(&HeadMask::zeros(4)).unwrap(), 1.5);
        model.set_output_bias(-2.0);
        assert_eq!(model.predict(&HeadMask::zeros(4)).unwrap(), 0.0);
        assert_eq!(model.forward(&HeadMask::zeros(4)), -2.0);
    }

    #[test]
    fn predict_is_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = SurrogateRegressor::new(&[64, 64, 32, 1], &mut rng).unwrap();
        let m = HeadMask::from_indices(64, [1, 5, 9, 40]).unwrap();
        let first = model.predict(&m).unwrap().to_bits();
        for _ in 0..10_000 {
            assert_eq!(model.predict(&m).unwrap().to_bits(), first);
        }
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(SurrogateRegressor::zeros(&[10]).is_err());
        assert!(SurrogateRegressor::zeros(&[10, 8, 4, 2, 1]).is_err());
        assert!(SurrogateRegressor::zeros(&[10, 4, 2]).is_err());
        assert!(SurrogateRegressor::zeros(&[10, 0, 1]).is_err());
        assert_eq!(
            SurrogateRegressor::zeros(&[72, 64, 32, 1])
                .unwrap()
                .parameter_count(),
            72 * 64 + 64 + 64 * 32 + 32 + 32 + 1
        );
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = SurrogateRegressor::new(&[20, 8, 4, 1], &mut rng).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: SurrogateRegressor = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        let broken = text.replacen("[20,8,4,1]", "[20,8,5,1]", 1);
        assert!(serde_json::from_str::<SurrogateRegressor>(&broken).is_err());
    }
}
