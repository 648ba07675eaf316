//! First-order optimizers: SGD (momentum), SGD with Nesterov momentum,
//! averaged SGD, Adam, Adam with AMSGrad, Adadelta and Adagrad.
//!
//! Weight decay is coupled L2: every variant sees the effective gradient
//! `g + weight_decay * θ`. Momentum only exists for the two momentum SGD
//! variants.

use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamMap;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdNesterov,
    Asgd,
    Adam,
    AdamAmsgrad,
    Adadelta,
    Adagrad,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::SgdNesterov,
        OptimizerKind::Asgd,
        OptimizerKind::Adam,
        OptimizerKind::AdamAmsgrad,
        OptimizerKind::Adadelta,
        OptimizerKind::Adagrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdNesterov => "sgd-nesterov",
            OptimizerKind::Asgd => "asgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamAmsgrad => "adam-amsgrad",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adagrad => "adagrad",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub adagrad_epsilon: f64,
    pub adadelta_epsilon: f64,
    pub adadelta_rho: f64,
    /// Averaged SGD includes the iterates of steps `t > asgd_t0`.
    pub asgd_t0: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            momentum: 0.9,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            adagrad_epsilon: 1e-10,
            adadelta_epsilon: 1e-6,
            adadelta_rho: 0.9,
            asgd_t0: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} is outside [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !unit(self.adadelta_rho) {
            return Err(Error::Config(
                "adam betas and adadelta rho must lie in [0, 1)".into(),
            ));
        }
        if [
            self.adam_epsilon,
            self.adagrad_epsilon,
            self.adadelta_epsilon,
        ]
        .iter()
        .any(|&e| e.is_nan() || e <= 0.0)
        {
            return Err(Error::Config("optimizer epsilons must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter auxiliary buffers, keyed by slot name.
pub type Slots<T> = IndexMap<String, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    hp: HyperParams,
    step: u64,
    state: IndexMap<String, Slots<T>>,
}

/// Scalar part of an optimizer state, stored alongside its buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub kind: OptimizerKind,
    pub hp: HyperParams,
    pub step: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Optimizer {
            kind,
            hp,
            step: 0,
            state: IndexMap::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn slots(&self, param: &str) -> Option<&Slots<T>> {
        self.state.get(param)
    }

    /// Apply one update to every parameter. `grads` must cover exactly the
    /// names in `params`; nothing is modified if validation fails.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &ParamMap<T>,
        lr: f64,
    ) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Numeric(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Registry(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Registry(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            g.check_finite(&format!("gradient of {name}"))?;
        }
        if grads.len() != params.len() {
            let extra = grads
                .keys()
                .find(|k| !params.iter().any(|(n, _)| n == *k))
                .expect("surplus gradient exists");
            return Err(Error::Registry(format!(
                "gradient {extra} has no matching parameter"
            )));
        }

        self.step += 1;
        for (name, p) in params.iter_mut() {
            let slots = self.state.entry(name.clone()).or_default();
            update(
                self.kind,
                &self.hp,
                self.step,
                lr,
                p,
                &grads[name.as_str()],
                slots,
            );
        }
        Ok(())
    }

    /// The running average of averaged SGD, for evaluation. Parameters whose
    /// averaging window is still empty report their current value. The live
    /// parameters are left untouched.
    pub fn swap_in_average(&self, params: &ParamMap<T>) -> Result<ParamMap<T>> {
        if self.kind != OptimizerKind::Asgd {
            return Err(Error::State(format!(
                "parameter averaging needs asgd, optimizer is {}",
                self.kind.name()
            )));
        }
        if self.step == 0 {
            return Err(Error::State("no optimizer step has been taken yet".into()));
        }
        let averaged = self.step > self.hp.asgd_t0;
        Ok(params
            .iter()
            .map(|(name, p)| {
                let avg = self
                    .state
                    .get(name)
                    .and_then(|s| s.get("average"))
                    .filter(|_| averaged)
                    .unwrap_or(p);
                (name.clone(), avg.clone())
            })
            .collect())
    }

    pub fn to_parts(&self) -> (OptimizerMeta, Vec<(String, Tensor<T>)>) {
        let meta = OptimizerMeta {
            kind: self.kind,
            hp: self.hp.clone(),
            step: self.step,
        };
        let tensors = self
            .state
            .iter()
            .flat_map(|(param, slots)| {
                slots
                    .iter()
                    .map(move |(slot, t)| (format!("{slot}/{param}"), t.clone()))
            })
            .collect();
        (meta, tensors)
    }

    pub fn from_parts(meta: OptimizerMeta, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut opt = Optimizer::new(meta.kind, meta.hp)?;
        opt.step = meta.step;
        for (key, t) in tensors {
            let (slot, param) = key
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("malformed optimizer record {key}")))?;
            opt.state
                .entry(param.to_string())
                .or_default()
                .insert(slot.to_string(), t);
        }
        Ok(opt)
    }
}

fn slot<'a, T: Real>(slots: &'a mut Slots<T>, name: &str, like: &Tensor<T>) -> &'a mut [T] {
    slots
        .entry(name.to_string())
        .or_insert_with(|| Tensor::zeros_like(like))
        .data_mut()
}

fn update<T: Real>(
    kind: OptimizerKind,
    hp: &HyperParams,
    t: u64,
    lr: f64,
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    slots: &mut Slots<T>,
) {
    let lr = T::of(lr);
    let wd = T::of(hp.weight_decay);
    let one = T::one();
    // effective gradient with coupled L2
    let g: Vec<T> = grad
        .data()
        .iter()
        .zip(param.data())
        .map(|(&g, &p)| g + wd * p)
        .collect();

    match kind {
        OptimizerKind::Sgd | OptimizerKind::SgdNesterov => {
            let mu = T::of(hp.momentum);
            let nesterov = kind == OptimizerKind::SgdNesterov;
            let v = slot(slots, "velocity", grad);
            for ((p, v), &g) in param.data_mut().iter_mut().zip(v).zip(&g) {
                *v = mu * *v + g;
                let dir = if nesterov { g + mu * *v } else { *v };
                *p = *p - lr * dir;
            }
        }
        OptimizerKind::Asgd => {
            for (p, &g) in param.data_mut().iter_mut().zip(&g) {
                *p = *p - lr * g;
            }
            if t > hp.asgd_t0 {
                let n = T::of((t - hp.asgd_t0) as f64);
                let avg = slot(slots, "average", grad);
                for (a, &p) in avg.iter_mut().zip(param.data()) {
                    *a = *a + (p - *a) / n;
                }
            }
        }
        OptimizerKind::Adagrad => {
            let eps = T::of(hp.adagrad_epsilon);
            let acc = slot(slots, "sum_sq", grad);
            for ((p, s), &g) in param.data_mut().iter_mut().zip(acc).zip(&g) {
                *s = *s + g * g;
                *p = *p - lr * g / (s.sqrt() + eps);
            }
        }
        OptimizerKind::Adadelta => {
            let rho = T::of(hp.adadelta_rho);
            let eps = T::of(hp.adadelta_epsilon);
            slot(slots, "square_avg", grad);
            slot(slots, "acc_delta", grad);
            let [sq, acc] = slots
                .get_disjoint_mut(["square_avg", "acc_delta"])
                .map(|s| s.expect("slot inserted above").data_mut());
            for (((p, v), u), &g) in param.data_mut().iter_mut().zip(sq).zip(acc).zip(&g) {
                *v = rho * *v + (one - rho) * g * g;
                let delta = (*u + eps).sqrt() / (*v + eps).sqrt() * g;
                *u = rho * *u + (one - rho) * delta * delta;
                *p = *p - lr * delta;
            }
        }
        OptimizerKind::Adam | OptimizerKind::AdamAmsgrad => {
            let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
            let eps = T::of(hp.adam_epsilon);
            let bc1 = one - T::of(hp.beta1.powi(t as i32));
            let bc2 = one - T::of(hp.beta2.powi(t as i32));
            let amsgrad = kind == OptimizerKind::AdamAmsgrad;
            slot(slots, "exp_avg", grad);
            slot(slots, "exp_avg_sq", grad);
            if amsgrad {
                slot(slots, "max_exp_avg_sq", grad);
            }
            let [m, v, vmax] = slots.get_disjoint_mut(["exp_avg", "exp_avg_sq", "max_exp_avg_sq"]);
            let (m, v) = (m.expect("slot").data_mut(), v.expect("slot").data_mut());
            let mut vmax = vmax.map(|t| t.data_mut());
            for (i, (p, &g)) in param.data_mut().iter_mut().zip(&g).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let second = match vmax.as_deref_mut() {
                    Some(vm) => {
                        vm[i] = vm[i].max(v[i]);
                        vm[i]
                    }
                    None => v[i],
                };
                let m_hat = m[i] / bc1;
                let v_hat = second / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
