use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{HemlError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `act(W x + b)` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DenseMatrix<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: DenseMatrix<f32>, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(HemlError::Shape(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn seeded<R: Rng>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f32).sqrt();
        let weight: Vec<f32> = (0..input * output).map(|_| rng.random_range(-bound..=bound)).collect();
        let bias = (0..output).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weight: DenseMatrix::new(output, input, weight).expect("sized above"),
            bias,
            activation,
        }
    }
}

/// An ordered chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let params = Self { layers };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(HemlError::Shape("MLP has no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(HemlError::Shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    k + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(HemlError::Shape(format!("layer {k} bias length mismatch")));
            }
            if !layer.weight.all_finite() || !layer.bias.iter().all(|b| b.is_finite()) {
                return Err(HemlError::NonFinite(format!("layer {k} parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.values().len() + l.bias.len()).sum()
    }

    /// Layer `(input, output)` dimensions in order.
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.input_dim(), l.output_dim())).collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Parameters flattened in storage order: per layer, weights row-major then bias.
    pub fn flat_values(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.values());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn same_architecture(&self, other: &MlpParams) -> bool {
        self.dims() == other.dims() && self.activations() == other.activations()
    }

    fn zip_map(&self, other: &MlpParams, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<MlpParams> {
        if !self.same_architecture(other) {
            return Err(HemlError::Shape(format!(
                "{what}: architectures differ ({:?} vs {:?})",
                self.dims(),
                other.dims()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let w = a
                    .weight
                    .values()
                    .iter()
                    .zip(b.weight.values())
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Layer {
                    weight: DenseMatrix::new(a.weight.rows(), a.weight.cols(), w).expect("same shape"),
                    bias: a.bias.iter().zip(&b.bias).map(|(&x, &y)| f(x, y)).collect(),
                    activation: a.activation,
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }
}

/// Layer widths of a trunk + embedder model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Trunk layer widths; every trunk layer uses ReLU.
    pub trunk_widths: Vec<usize>,
    /// Width of the embedder's single hidden layer.
    pub embedder_hidden: usize,
    pub embed_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, embed_dim: usize) -> Self {
        Self {
            input_dim,
            trunk_widths: vec![64, 32],
            embedder_hidden: 32,
            embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.embedder_hidden == 0 {
            return Err(HemlError::Usage("architecture dimensions must be positive".into()));
        }
        if self.trunk_widths.is_empty() || self.trunk_widths.contains(&0) {
            return Err(HemlError::Usage("trunk needs at least one non-empty layer".into()));
        }
        Ok(())
    }
}

/// Trunk followed by an embedder with exactly one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderModel {
    pub trunk: MlpParams,
    pub embedder: MlpParams,
}

impl EmbedderModel {
    pub fn new(trunk: MlpParams, embedder: MlpParams) -> Result<Self> {
        let model = Self { trunk, embedder };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        self.embedder.validate()?;
        if self.embedder.layers.len() != 2 {
            return Err(HemlError::Shape(format!(
                "embedder must have exactly one hidden layer (2 affine layers), got {}",
                self.embedder.layers.len()
            )));
        }
        if self.trunk.output_dim() != self.embedder.input_dim() {
            return Err(HemlError::Shape(format!(
                "trunk outputs {} but embedder expects {}",
                self.trunk.output_dim(),
                self.embedder.input_dim()
            )));
        }
        Ok(())
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization from `seed`.
    pub fn seeded(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, rng::purpose::INIT);
        let mut trunk = Vec::with_capacity(arch.trunk_widths.len());
        let mut fan_in = arch.input_dim;
        for &w in &arch.trunk_widths {
            trunk.push(Layer::seeded(fan_in, w, Activation::Relu, &mut rng));
            fan_in = w;
        }
        let embedder = vec![
            Layer::seeded(fan_in, arch.embedder_hidden, Activation::Relu, &mut rng),
            Layer::seeded(arch.embedder_hidden, arch.embed_dim, Activation::Identity, &mut rng),
        ];
        Self::new(MlpParams { layers: trunk }, MlpParams { layers: embedder })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedder.output_dim()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            trunk_widths: self.trunk.layers.iter().map(|l| l.output_dim()).collect(),
            embedder_hidden: self.embedder.layers[0].output_dim(),
            embed_dim: self.embed_dim(),
        }
    }

    pub fn same_architecture(&self, other: &EmbedderModel) -> bool {
        self.trunk.same_architecture(&other.trunk) && self.embedder.same_architecture(&other.embedder)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.layers.iter().chain(&self.embedder.layers)
    }

    /// FNV-1a over dimensions and parameter bits; ties a forward cache to the
    /// exact model that produced it.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for l in self.layers() {
            eat(l.input_dim() as u64);
            eat(l.output_dim() as u64);
            eat(l.activation as u64);
            for v in l.weight.values().iter().chain(&l.bias) {
                eat(v.to_bits() as u64);
            }
        }
        h
    }
}

/// Activations recorded by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    rows: usize,
    inputs: Vec<DenseMatrix<f64>>,
    pre_activations: Vec<DenseMatrix<f64>>,
}

/// Gradient of one layer's weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: DenseMatrix<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Gradients flattened in the same order as [`MlpParams::flat_values`].
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.values());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub trunk: MlpGrads,
    pub embedder: MlpGrads,
}

impl ModelGrads {
    pub fn flat_values(&self) -> Vec<f64> {
        let mut v = self.trunk.flat_values();
        v.extend(self.embedder.flat_values());
        v
    }
}

/// Runs the trunk then the embedder on every row of `batch`.
pub fn mlp_forward(model: &EmbedderModel, batch: &DenseMatrix<f64>) -> Result<(DenseMatrix<f64>, ForwardCache)> {
    if batch.cols() != model.input_dim() {
        return Err(HemlError::Shape(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_dim()
        )));
    }
    let n = batch.rows();
    let mut inputs = Vec::new();
    let mut pre_activations = Vec::new();
    let mut current = batch.clone();
    for layer in model.layers() {
        let (out_dim, in_dim) = layer.weight.shape();
        let w = layer.weight.values();
        let mut z = DenseMatrix::<f64>::zeros(n, out_dim);
        for r in 0..n {
            let x = current.row(r);
            let zr = z.row_mut(r);
            for (o, zo) in zr.iter_mut().enumerate() {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = layer.bias[o] as f64;
                for (xi, wi) in x.iter().zip(wrow) {
                    acc += xi * (*wi as f64);
                }
                *zo = acc;
            }
        }
        let mut a = z.clone();
        for v in a.values_mut() {
            *v = layer.activation.apply(*v);
        }
        inputs.push(current);
        pre_activations.push(z);
        current = a;
    }
    if !current.all_finite() {
        return Err(HemlError::NonFinite("forward pass".into()));
    }
    let cache = ForwardCache {
        fingerprint: model.fingerprint(),
        rows: n,
        inputs,
        pre_activations,
    };
    Ok((current, cache))
}

/// Convenience wrapper for `f32` feature batches.
pub fn embed_batch(model: &EmbedderModel, batch: &DenseMatrix<f32>) -> Result<DenseMatrix<f64>> {
    mlp_forward(model, &batch.to_f64()).map(|(e, _)| e)
}

/// Exact gradients of a scalar objective with respect to every parameter and
/// every input, given the objective's gradient with respect to the embeddings.
pub fn mlp_backward(
    model: &EmbedderModel,
    cache: &ForwardCache,
    grad_embeddings: &DenseMatrix<f64>,
) -> Result<(ModelGrads, DenseMatrix<f64>)> {
    let n_layers = model.trunk.layers.len() + model.embedder.layers.len();
    if cache.fingerprint != model.fingerprint() || cache.inputs.len() != n_layers {
        return Err(HemlError::Usage(
            "forward cache was produced by a different model".into(),
        ));
    }
    if grad_embeddings.shape() != (cache.rows, model.embed_dim()) {
        return Err(HemlError::Usage(format!(
            "upstream gradient is {:?}, forward produced {:?}",
            grad_embeddings.shape(),
            (cache.rows, model.embed_dim())
        )));
    }
    let layers: Vec<&Layer> = model.layers().collect();
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(n_layers);
    let mut upstream = grad_embeddings.clone();
    for k in (0..n_layers).rev() {
        let layer = layers[k];
        let (out_dim, in_dim) = layer.weight.shape();
        let z = &cache.pre_activations[k];
        let x = &cache.inputs[k];
        let mut dz = upstream;
        for (d, &zv) in dz.values_mut().iter_mut().zip(z.values()) {
            *d *= layer.activation.derivative(zv);
        }
        let mut gw = DenseMatrix::<f64>::zeros(out_dim, in_dim);
        let mut gb = vec![0.0; out_dim];
        let mut dx = DenseMatrix::<f64>::zeros(cache.rows, in_dim);
        let w = layer.weight.values();
        for r in 0..cache.rows {
            let dzr = dz.row(r);
            let xr = x.row(r);
            for (o, &g) in dzr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let gw_row = gw.row_mut(o);
                for (gwi, xi) in gw_row.iter_mut().zip(xr) {
                    *gwi += g * xi;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let dxr = dx.row_mut(r);
                for (dxi, wi) in dxr.iter_mut().zip(wrow) {
                    *dxi += g * (*wi as f64);
                }
            }
        }
        grads.push(LayerGrad { weight: gw, bias: gb });
        upstream = dx;
    }
    grads.reverse();
    let embedder_layers = grads.split_off(model.trunk.layers.len());
    let out = ModelGrads {
        trunk: MlpGrads { layers: grads },
        embedder: MlpGrads {
            layers: embedder_layers,
        },
    };
    if !upstream.all_finite() || !out.flat_values().iter().all(|g| g.is_finite()) {
        return Err(HemlError::NonFinite("backward pass".into()));
    }
    Ok((out, upstream))
}

/// `p' = p - lr * g`, computed in `f64` and stored back as `f32`.
pub fn sgd_step(params: &MlpParams, grads: &MlpGrads, lr: f64) -> Result<MlpParams> {
    let dims_match = params.layers.len() == grads.layers.len()
        && params
            .layers
            .iter()
            .zip(&grads.layers)
            .all(|(p, g)| p.weight.shape() == g.weight.shape() && p.bias.len() == g.bias.len());
    if !dims_match {
        return Err(HemlError::Shape("gradient does not match parameters".into()));
    }
    let step = |p: f32, g: f64| (p as f64 - lr * g) as f32;
    let layers = params
        .layers
        .iter()
        .zip(&grads.layers)
        .map(|(p, g)| {
            let w = p
                .weight
                .values()
                .iter()
                .zip(g.weight.values())
                .map(|(&pv, &gv)| step(pv, gv))
                .collect();
            Layer {
                weight: DenseMatrix::new(p.weight.rows(), p.weight.cols(), w).expect("same shape"),
                bias: p.bias.iter().zip(&g.bias).map(|(&pv, &gv)| step(pv, gv)).collect(),
                activation: p.activation,
            }
        })
        .collect();
    let out = MlpParams { layers };
    if out.flat_values().iter().any(|v| !v.is_finite()) {
        return Err(HemlError::NonFinite("parameters after SGD step".into()));
    }
    Ok(out)
}

pub fn sgd_step_model(model: &EmbedderModel, grads: &ModelGrads, lr: f64) -> Result<EmbedderModel> {
    Ok(EmbedderModel {
        trunk: sgd_step(&model.trunk, &grads.trunk, lr)?,
        embedder: sgd_step(&model.embedder, &grads.embedder, lr)?,
    })
}

/// Elementwise mean of two parameter sets with identical architecture.
pub fn average_params(a: &MlpParams, b: &MlpParams) -> Result<MlpParams> {
    // The f64 sum of two f32 values is exact, so this is the correctly
    // rounded mean and is commutative bit-for-bit.
    a.zip_map(b, "average_params", |x, y| ((x as f64 + y as f64) * 0.5) as f32)
}
