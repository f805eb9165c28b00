//! Fully connected ReLU classifiers.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Layer widths `[D, h1, …, K]`; ReLU between every pair of affine layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid(format!(
                "an MLP needs input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::invalid(format!("zero width in {widths:?}")));
        }
        if *widths.last().unwrap() < 2 {
            return Err(Error::invalid("an MLP classifier needs at least 2 classes"));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl std::fmt::Display for MlpSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// One affine layer: `weight` is `fan_in × fan_out`, `bias` has `fan_out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl ModelParams {
    /// Wraps explicit layers after checking them against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != spec.depth() {
            return Err(Error::shape(
                "model",
                format!("spec {spec} needs {} layers, got {}", spec.depth(), layers.len()),
            ));
        }
        for (j, (layer, w)) in layers.iter().zip(spec.widths.windows(2)).enumerate() {
            if layer.weight.shape() != [w[0], w[1]] || layer.bias.shape() != [w[1]] {
                return Err(Error::shape(
                    "model",
                    format!(
                        "layer {j}: weight {:?} / bias {:?} do not match {}x{}",
                        layer.weight.shape(),
                        layer.bias.shape(),
                        w[0],
                        w[1]
                    ),
                ));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Parameter tensors in order `W0, b0, W1, b1, …`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// Uniform(−√(6/fan_in), √(6/fan_in)) weights, zero biases, drawn from the
/// `"init"` stream of `seed`.
pub fn init_mlp(spec: &MlpSpec, seed: u64) -> ModelParams {
    let mut rng = Stream::new(seed, "init");
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let bound = (6.0 / w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.uniform_range(-bound, bound)).collect();
            Layer {
                weight: Tensor::matrix(w[0], w[1], data).expect("sized"),
                bias: Tensor::zeros(&[w[1]]),
            }
        })
        .collect();
    ModelParams {
        spec: spec.clone(),
        layers,
    }
}

/// Logits for a `n × D` batch.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    let (_, d) = batch.dims2("forward")?;
    if d != params.spec.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("batch width {d} but model input dim {}", params.spec.input_dim()),
        ));
    }
    let last = params.layers.len() - 1;
    let mut h = batch.clone();
    for (j, layer) in params.layers.iter().enumerate() {
        let mut z = h.matmul(&layer.weight)?;
        let m = z.cols();
        for row in z.data_mut().chunks_exact_mut(m) {
            for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                *v += b;
            }
            if j < last {
                for v in row.iter_mut() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        h = z;
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("forward"));
    }
    Ok(h)
}

/// Parameter handles recorded on a tape, in layer order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Result<Self> {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    Ok((tape.leaf(l.weight.clone())?, tape.leaf(l.bias.clone())?))
                } else {
                    Ok((tape.constant(l.weight.clone())?, tape.constant(l.bias.clone())?))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Records the forward pass of `params` applied to `batch` on `tape`.
pub fn forward_on_tape(tape: &mut Tape, params: &ParamVars, batch: Var) -> Result<Var> {
    let last = params.layers.len() - 1;
    let mut h = batch;
    for (j, &(w, b)) in params.layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add_bias(z, b)?;
        if j < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Frobenius norm of every weight matrix (biases excluded).
pub fn frobenius_norms(params: &ModelParams) -> Vec<f64> {
    params.layers.iter().map(|l| l.weight.sum_squares().sqrt()).collect()
}

/// `2^d · Π norms / √m` with the leading constant fixed to 1.
pub fn bound_from_norms(norms: &[f64], m: u64) -> Result<f64> {
    if m < 1 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let depth = i32::try_from(norms.len()).map_err(|_| Error::invalid("depth overflow"))?;
    let prod: f64 = norms.iter().product();
    Ok(2f64.powi(depth) * prod / (m as f64).sqrt())
}

/// Size-independent generalization-bound proxy of a trained network on `m` samples.
pub fn generalization_bound_proxy(params: &ModelParams, m: u64) -> Result<f64> {
    bound_from_norms(&frobenius_norms(params), m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 3]).is_err());
        assert!(MlpSpec::new(vec![4, 1]).is_err());
        let s = MlpSpec::new(vec![32, 256, 256, 10]).unwrap();
        assert_eq!(s.depth(), 3);
        assert_eq!(s.param_count(), 32 * 256 + 256 + 256 * 256 + 256 + 256 * 10 + 10);
    }

    #[test]
    fn init_shapes_and_bounds() {
        let spec = MlpSpec::new(vec![4, 3]).unwrap();
        let p = init_mlp(&spec, 9);
        assert_eq!(p.layers().len(), 1);
        assert_eq!(p.layers()[0].weight.shape(), &[4, 3]);
        assert_eq!(p.layers()[0].bias.data(), &[0.0; 3]);
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(p.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = MlpSpec::new(vec![5, 7, 3]).unwrap();
        assert_eq!(init_mlp(&spec, 1), init_mlp(&spec, 1));
        assert_ne!(init_mlp(&spec, 1), init_mlp(&spec, 2));
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let spec = MlpSpec::new(vec![3, 5, 4]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
        let z = forward(&ModelParams::zeros(&spec), &x).unwrap();
        assert_eq!(z, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn single_layer_is_affine() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let layer = Layer {
            weight: Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            bias: Tensor::vector(vec![0.5, -0.5]),
        };
        let p = ModelParams::from_layers(spec, vec![layer]).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap();
        // [1,-1]·W = [1-3, 2-4] = [-2, -2]; plus bias.
        assert_eq!(forward(&p, &x).unwrap().data(), &[-1.5, -2.5]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_mlp(&MlpSpec::new(vec![3, 2]).unwrap(), 0);
        assert!(forward(&p, &Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn from_layers_checks_shapes() {
        let spec = MlpSpec::new(vec![2, 3]).unwrap();
        let bad = Layer {
            weight: Tensor::zeros(&[3, 2]),
            bias: Tensor::zeros(&[3]),
        };
        assert!(ModelParams::from_layers(spec, vec![bad]).is_err());
    }

    #[test]
    fn frobenius_three_four_five() {
        let spec = MlpSpec::new(vec![2, 2]).unwrap();
        let layer = Layer {
            weight: Tensor::matrix(2, 2, vec![3.0, 4.0, 0.0, 0.0]).unwrap(),
            bias: Tensor::vector(vec![100.0, 100.0]),
        };
        let p = ModelParams::from_layers(spec.clone(), vec![layer]).unwrap();
        assert_eq!(frobenius_norms(&p), vec![5.0]);
        assert_eq!(frobenius_norms(&ModelParams::zeros(&spec)), vec![0.0]);
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(bound_from_norms(&[2.0, 3.0], 100).unwrap(), 2.4);
        assert_eq!(bound_from_norms(&[2.0, 3.0], 400).unwrap(), 1.2);
        assert_eq!(bound_from_norms(&[0.0, 3.0], 100).unwrap(), 0.0);
        assert!(bound_from_norms(&[1.0], 0).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let spec = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let p = init_mlp(&spec, 3);
        let mut s = Stream::new(3, "x");
        let x = Tensor::matrix(5, 4, (0..20).map(|_| s.normal()).collect()).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::record(&mut tape, &p, true).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let z = forward_on_tape(&mut tape, &vars, xv).unwrap();
        assert_eq!(tape.value(z), &forward(&p, &x).unwrap());
    }
}
