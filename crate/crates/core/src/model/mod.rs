//! The VGG-style network: four conv stages (two conv blocks and a 2x2 max
//! pool each) followed by three fully connected layers.

mod checkpoint;
mod config;

pub use checkpoint::{peek, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BlockOrder, DropoutPlacement, VggConfig};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::{
    maxpool_backward, maxpool_forward, relu, relu_backward, BatchNormLayer, ConvLayer,
    DropoutLayer, LinearLayer, Mode,
};
use crate::tensor::{Real, SeededRng, Tensor};

/// Name → tensor registry, ordered by layer position.
pub type ParamMap<T> = IndexMap<String, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    BatchNorm(BatchNormLayer<T>),
    Relu,
    MaxPool,
    Flatten,
    Linear(LinearLayer<T>),
    Dropout(DropoutLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer<T> {
    pub name: String,
    pub layer: Layer<T>,
}

#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Pool(Vec<usize>),
    Mask(Option<Tensor<T>>),
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    mode: Mode,
    inputs: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: ParamMap<T>,
    pub input: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct VggModel<T> {
    config: VggConfig,
    layers: Vec<NamedLayer<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> VggModel<T> {
    /// Build with He-normal conv/linear weights, zero biases, unit gamma and
    /// zero beta. Weights are drawn layer by layer in network order.
    pub fn build(config: &VggConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut push = |name: String, layer: Layer<T>| layers.push(NamedLayer { name, layer });
        let mut in_ch = 1;
        for (s, &width) in config.stage_widths.iter().enumerate() {
            for b in 0..2 {
                let prefix = format!("stage{}.block{}", s + 1, b + 1);
                let conv =
                    ConvLayer::he_normal(in_ch, width, config.kernel, config.kernel / 2, rng)?;
                push(format!("{prefix}.conv"), Layer::Conv(conv));
                let mut bn = BatchNormLayer::new(width);
                bn.momentum = config.bn_momentum;
                bn.epsilon = config.bn_epsilon;
                match config.block_order {
                    BlockOrder::ConvReluBn => {
                        push(format!("{prefix}.relu"), Layer::Relu);
                        push(format!("{prefix}.bn"), Layer::BatchNorm(bn));
                    }
                    BlockOrder::ConvBnRelu => {
                        push(format!("{prefix}.bn"), Layer::BatchNorm(bn));
                        push(format!("{prefix}.relu"), Layer::Relu);
                    }
                }
                in_ch = width;
            }
            push(format!("stage{}.pool", s + 1), Layer::MaxPool);
        }
        push("flatten".into(), Layer::Flatten);
        let mut features = config.flatten_extent();
        for (i, &width) in config.fc_widths.iter().enumerate() {
            push(
                format!("fc{}", i + 1),
                Layer::Linear(LinearLayer::he_normal(features, width, rng)?),
            );
            push(format!("fc{}.relu", i + 1), Layer::Relu);
            if config.dropout_placement.after(i) {
                push(
                    format!("fc{}.dropout", i + 1),
                    Layer::Dropout(DropoutLayer::new(config.dropout_p)?),
                );
            }
            features = width;
        }
        push(
            "fc3".into(),
            Layer::Linear(LinearLayer::he_normal(features, config.n_classes, rng)?),
        );
        Ok(VggModel {
            config: config.clone(),
            layers,
            cache: None,
        })
    }

    pub fn config(&self) -> &VggConfig {
        &self.config
    }

    pub fn layers(&self) -> &[NamedLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [NamedLayer<T>] {
        &mut self.layers
    }

    /// Trainable parameters in network order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.layer {
                Layer::Conv(c) => {
                    out.push((format!("{}.weight", l.name), &c.weight));
                    out.push((format!("{}.bias", l.name), &c.bias));
                }
                Layer::Linear(c) => {
                    out.push((format!("{}.weight", l.name), &c.weight));
                    out.push((format!("{}.bias", l.name), &c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{}.gamma", l.name), &b.gamma));
                    out.push((format!("{}.beta", l.name), &b.beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.layer {
                Layer::Conv(c) => {
                    out.push((format!("{}.weight", l.name), &mut c.weight));
                    out.push((format!("{}.bias", l.name), &mut c.bias));
                }
                Layer::Linear(c) => {
                    out.push((format!("{}.weight", l.name), &mut c.weight));
                    out.push((format!("{}.bias", l.name), &mut c.bias));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{}.gamma", l.name), &mut b.gamma));
                    out.push((format!("{}.beta", l.name), &mut b.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::BatchNorm(b) = &mut l.layer {
                out.push((format!("{}.running_mean", l.name), &mut b.running_mean));
                out.push((format!("{}.running_var", l.name), &mut b.running_var));
            }
        }
        out
    }

    pub fn param_map(&self) -> ParamMap<T> {
        self.params()
            .into_iter()
            .map(|(k, v)| (k, v.clone()))
            .collect()
    }

    pub fn buffer_map(&self) -> ParamMap<T> {
        let mut out = ParamMap::new();
        for l in &self.layers {
            if let Layer::BatchNorm(b) = &l.layer {
                out.insert(format!("{}.running_mean", l.name), b.running_mean.clone());
                out.insert(format!("{}.running_var", l.name), b.running_var.clone());
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Replace every parameter and buffer. The name sets must match exactly
    /// and every shape must agree; nothing is modified on error.
    pub fn load_state(&mut self, params: &ParamMap<T>, buffers: &ParamMap<T>) -> Result<()> {
        check_registry("parameter", params, &self.params_mut())?;
        check_registry("buffer", buffers, &self.buffers_mut())?;
        for (name, t) in self.params_mut() {
            *t = params[&name].clone();
        }
        for (name, t) in self.buffers_mut() {
            *t = buffers[&name].clone();
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.dims::<4>("model input")?;
        let s = self.config.input_size;
        if c != 1 || h != s || w != s {
            return Err(Error::shape(format!(
                "model expects [n, 1, {s}, {s}] input, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass, caching every layer input for [`backward`](Self::backward).
    /// Train mode uses batch statistics, updates running estimates, and draws
    /// dropout masks from `rng`.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.cache = None;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &mut self.layers {
            let (next, a) = match &mut l.layer {
                Layer::Conv(c) => (c.forward(&h)?, Aux::None),
                Layer::BatchNorm(b) => (b.forward(&h, mode)?, Aux::None),
                Layer::Relu => (relu(&h), Aux::None),
                Layer::MaxPool => {
                    let p = maxpool_forward(&h)?;
                    (p.output, Aux::Pool(p.indices))
                }
                Layer::Flatten => {
                    let n = h.shape()[0];
                    let len = h.len() / n;
                    (h.clone().reshape(&[n, len])?, Aux::None)
                }
                Layer::Linear(f) => (f.forward(&h)?, Aux::None),
                Layer::Dropout(d) => {
                    let (y, mask) = d.forward(&h, mode, rng.as_deref_mut())?;
                    (y, Aux::Mask(mask))
                }
            };
            inputs.push(std::mem::replace(&mut h, next));
            aux.push(a);
        }
        self.cache = Some(ForwardCache { mode, inputs, aux });
        Ok(h)
    }

    /// Eval-mode forward that touches no state; safe to call concurrently.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = match &l.layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::BatchNorm(b) => b.forward_eval(&h)?,
                Layer::Relu => relu(&h),
                Layer::MaxPool => maxpool_forward(&h)?.output,
                Layer::Flatten => {
                    let n = h.shape()[0];
                    let len = h.len() / n;
                    h.reshape(&[n, len])?
                }
                Layer::Linear(f) => f.forward(&h)?,
                Layer::Dropout(_) => h,
            };
        }
        Ok(h)
    }

    /// Backpropagate `logit_grad` through the cached forward pass. The cache
    /// is consumed.
    pub fn backward(&mut self, logit_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let mut grads: Vec<(String, Tensor<T>)> = Vec::new();
        let mut up = logit_grad.clone();
        for ((l, x), aux) in self.layers.iter().zip(&cache.inputs).zip(&cache.aux).rev() {
            up = match (&l.layer, aux) {
                (Layer::Conv(c), _) => {
                    let g = c.backward(x, &up)?;
                    grads.push((format!("{}.bias", l.name), g.bias));
                    grads.push((format!("{}.weight", l.name), g.weight));
                    g.input
                }
                (Layer::Linear(f), _) => {
                    let g = f.backward(x, &up)?;
                    grads.push((format!("{}.bias", l.name), g.bias));
                    grads.push((format!("{}.weight", l.name), g.weight));
                    g.input
                }
                (Layer::BatchNorm(b), _) => {
                    let g = b.backward(x, &up, cache.mode)?;
                    grads.push((format!("{}.beta", l.name), g.beta));
                    grads.push((format!("{}.gamma", l.name), g.gamma));
                    g.input
                }
                (Layer::Relu, _) => relu_backward(x, &up)?,
                (Layer::MaxPool, Aux::Pool(idx)) => maxpool_backward(idx, &up, x.shape())?,
                (Layer::Flatten, _) => up.reshape(x.shape())?,
                (Layer::Dropout(_), Aux::Mask(mask)) => DropoutLayer::backward(mask.as_ref(), &up)?,
                _ => {
                    return Err(Error::State(format!(
                        "inconsistent cache at layer {}",
                        l.name
                    )))
                }
            };
        }
        Ok(Gradients {
            params: grads.into_iter().rev().collect(),
            input: up,
        })
    }
}

fn check_registry<T: Real>(
    kind: &str,
    source: &ParamMap<T>,
    targets: &[(String, &mut Tensor<T>)],
) -> Result<()> {
    for (name, t) in targets {
        let Some(src) = source.get(name) else {
            return Err(Error::Checkpoint(format!(
                "{kind} {name} is missing from the checkpoint"
            )));
        };
        if src.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{kind} {name} has shape {:?} in the checkpoint but {:?} in the model",
                src.shape(),
                t.shape()
            )));
        }
    }
    if source.len() != targets.len() {
        let unknown = source
            .keys()
            .find(|k| !targets.iter().any(|(n, _)| n == *k))
            .expect("a surplus name exists");
        return Err(Error::Checkpoint(format!(
            "unknown {kind} {unknown} in the checkpoint"
        )));
    }
    Ok(())
}
