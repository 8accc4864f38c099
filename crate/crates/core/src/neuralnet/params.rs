use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;

/// Affine map `x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub(crate) fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }
}

/// One post-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm2: LayerNorm,
}

/// All trainable tensors. Gradients and Adam moments use the same type.
///
/// The sinusoidal position table is fixed and derived from the config, so it
/// is not stored here.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)` (the embedding
/// uses `d_model` as its fan-in), every bias zero, layer-norm gains one.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let d = config.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let token_embedding = uniform(&mut rng, config.vocab_size, d, 1.0 / (d as f64).sqrt());
    let layers = (0..config.n_layers)
        .map(|_| EncoderLayer {
            query: Linear::init(&mut rng, d, d),
            key: Linear::init(&mut rng, d, d),
            value: Linear::init(&mut rng, d, d),
            output: Linear::init(&mut rng, d, d),
            norm1: LayerNorm::identity(d),
            ffn_in: Linear::init(&mut rng, d, config.d_ffn),
            ffn_out: Linear::init(&mut rng, config.d_ffn, d),
            norm2: LayerNorm::identity(d),
        })
        .collect();
    let head = Linear::init(&mut rng, d, config.n_labels);
    Ok(ModelParams {
        config: config.clone(),
        token_embedding,
        layers,
        head,
    })
}

impl ModelParams {
    /// Same shapes and config, every element zero.
    pub fn zeros_like(&self) -> Self {
        let c = &self.config;
        let d = c.d_model;
        ModelParams {
            config: c.clone(),
            token_embedding: Array2::zeros(self.token_embedding.raw_dim()),
            layers: (0..self.layers.len())
                .map(|_| EncoderLayer {
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    norm1: LayerNorm::zeros(d),
                    ffn_in: Linear::zeros(d, c.d_ffn),
                    ffn_out: Linear::zeros(c.d_ffn, d),
                    norm2: LayerNorm::zeros(d),
                })
                .collect(),
            head: Linear::zeros(d, c.n_labels),
        }
    }

    /// Named views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![(
            "token_embedding".to_string(),
            self.token_embedding.view().into_dyn(),
        )];
        for (i, l) in self.layers.iter().enumerate() {
            let linears = [
                ("query", &l.query),
                ("key", &l.key),
                ("value", &l.value),
                ("output", &l.output),
            ];
            for (name, lin) in linears {
                out.push((
                    format!("layers.{i}.{name}.weight"),
                    lin.weight.view().into_dyn(),
                ));
                out.push((
                    format!("layers.{i}.{name}.bias"),
                    lin.bias.view().into_dyn(),
                ));
            }
            out.push((
                format!("layers.{i}.norm1.gain"),
                l.norm1.gain.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm1.bias"),
                l.norm1.bias.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_in.weight"),
                l.ffn_in.weight.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_in.bias"),
                l.ffn_in.bias.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_out.weight"),
                l.ffn_out.weight.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_out.bias"),
                l.ffn_out.bias.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm2.gain"),
                l.norm2.gain.view().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm2.bias"),
                l.norm2.bias.view().into_dyn(),
            ));
        }
        out.push((
            "head.weight".to_string(),
            self.head.weight.view().into_dyn(),
        ));
        out.push(("head.bias".to_string(), self.head.bias.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![(
            "token_embedding".to_string(),
            self.token_embedding.view_mut().into_dyn(),
        )];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let EncoderLayer {
                query,
                key,
                value,
                output,
                norm1,
                ffn_in,
                ffn_out,
                norm2,
            } = l;
            for (name, lin) in [
                ("query", query),
                ("key", key),
                ("value", value),
                ("output", output),
            ] {
                out.push((
                    format!("layers.{i}.{name}.weight"),
                    lin.weight.view_mut().into_dyn(),
                ));
                out.push((
                    format!("layers.{i}.{name}.bias"),
                    lin.bias.view_mut().into_dyn(),
                ));
            }
            out.push((
                format!("layers.{i}.norm1.gain"),
                norm1.gain.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm1.bias"),
                norm1.bias.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_in.weight"),
                ffn_in.weight.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_in.bias"),
                ffn_in.bias.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_out.weight"),
                ffn_out.weight.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.ffn_out.bias"),
                ffn_out.bias.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm2.gain"),
                norm2.gain.view_mut().into_dyn(),
            ));
            out.push((
                format!("layers.{i}.norm2.bias"),
                norm2.bias.view_mut().into_dyn(),
            ));
        }
        out.push((
            "head.weight".to_string(),
            self.head.weight.view_mut().into_dyn(),
        ));
        out.push((
            "head.bias".to_string(),
            self.head.bias.view_mut().into_dyn(),
        ));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }
}
