use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// Fully connected layer computing `act(x W + b)` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::input(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Layer widths of a network `input -> hidden.. (relu) -> embedding (identity) -> classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        embedding_dim: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            embedding_dim,
            num_classes,
        }
    }
}

/// A dense network with a fixed-width embedding layer followed (eventually) by
/// the classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
    embedding_index: usize,
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>, embedding_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::input("model needs at least one layer"));
        }
        if embedding_index + 1 >= layers.len() {
            return Err(Error::input(format!(
                "embedding layer {embedding_index} must precede the final layer (model has {} layers)",
                layers.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::input(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if !l.weight.is_finite() || !l.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self {
            layers,
            embedding_index,
        })
    }

    /// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(arch, &mut rng)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.input_dim == 0 || arch.embedding_dim == 0 || arch.num_classes == 0 {
            return Err(Error::config(format!("degenerate architecture {arch:?}")));
        }
        if arch.hidden.contains(&0) {
            return Err(Error::config(format!(
                "zero-width hidden layer in {arch:?}"
            )));
        }
        let mut widths = vec![arch.input_dim];
        widths.extend(&arch.hidden);
        widths.push(arch.embedding_dim);
        widths.push(arch.num_classes);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let activation = if i < arch.hidden.len() {
                Activation::Relu
            } else {
                Activation::Identity
            };
            layers.push(DenseLayer::new(
                Matrix::from_vec(fan_in, fan_out, data)?,
                vec![0.0; fan_out],
                activation,
            )?);
        }
        Self::new(layers, n - 2)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn embedding_index(&self) -> usize {
        self.embedding_index
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.embedding_index].out_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn param_slot(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            if k < nw {
                return &mut l.weight.as_mut_slice()[k];
            }
            k -= nw;
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub(crate) fn set_flat_param(&mut self, k: usize, v: f64) {
        *self.param_slot(k) = v;
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardRecord> {
        if batch.cols() != self.input_dim() {
            return Err(Error::input(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(batch);
            let mut z = x.matmul(&layer.weight)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardRecord {
            input: batch.clone(),
            pre,
            post,
            embedding_index: self.embedding_index,
        })
    }

    /// Backpropagates gradients arriving at the logits and at the embedding
    /// layer output. The two contributions are summed at the embedding layer.
    pub fn backward(
        &self,
        record: &ForwardRecord,
        grad_logits: &Matrix,
        grad_embeddings: &Matrix,
    ) -> Result<Gradients> {
        if record.post.len() != self.layers.len() || record.embedding_index != self.embedding_index
        {
            return Err(Error::input("forward record does not belong to this model"));
        }
        grad_logits.check_same_shape(record.logits(), "grad_logits")?;
        grad_embeddings.check_same_shape(record.embeddings(), "grad_embeddings")?;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l == self.embedding_index {
                delta.add_assign(grad_embeddings)?;
            }
            let dz = delta.zip_map(&record.pre[l], |g, z| g * layer.activation.derivative(z))?;
            let input = if l == 0 {
                &record.input
            } else {
                &record.post[l - 1]
            };
            let weight = input.t_matmul(&dz)?;
            let mut bias = vec![0.0; layer.out_dim()];
            for row in dz.row_iter() {
                for (b, g) in bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
            grads.push(LayerGrad { weight, bias });
            if l > 0 {
                delta = dz.matmul_t(&layer.weight)?;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn describe(&self) -> String {
        let mut s = format!("{}", self.input_dim());
        for (i, l) in self.layers.iter().enumerate() {
            if i == self.embedding_index {
                s.push_str(&format!("->emb{}", l.out_dim()));
            } else {
                s.push_str(&format!("->{}", l.out_dim()));
            }
        }
        s
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    embedding_index: usize,
}

impl ForwardRecord {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }

    /// `b x d` embedding batch.
    pub fn embeddings(&self) -> &Matrix {
        &self.post[self.embedding_index]
    }

    /// `b x C` logits.
    pub fn logits(&self) -> &Matrix {
        &self.post[self.post.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// One gradient per parameter, in the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
