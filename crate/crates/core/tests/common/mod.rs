#![allow(dead_code)]

use std::f64::consts::PI;
use std::io::Read;
use std::path::{Path, PathBuf};

use fer_core::data::{synthetic_records, write_csv, FerRecord, SyntheticSpec, Usage, IMAGE_PIXELS};
use fer_core::model::{VggConfig, VggModel};
use fer_core::nn::{
    maxpool_backward, maxpool_forward, relu, relu_backward, softmax_cross_entropy, BatchNormLayer,
    ConvLayer, DropoutLayer, LinearLayer, Mode,
};
use fer_core::optim::{HyperParams, Optimizer, OptimizerKind};
use fer_core::sched::{Schedule, Scheduler, SchedulerKind};
use fer_core::tensor::{SeededRng, Tensor};

/// Central-difference step.
pub const H: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Worst relative error between `analytic` and central differences of
/// `loss` at every coordinate of `point`.
pub fn fd_max_rel(point: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let x0 = p[i];
        p[i] = x0 + H;
        let up = loss(&p);
        p[i] = x0 - H;
        let down = loss(&p);
        p[i] = x0;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

pub fn normal(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Direct cross-correlation, one output element at a time.
pub fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; n * oc * oh * ow];
    for i in 0..n {
        for o in 0..oc {
            for y in 0..oh {
                for z in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (y * stride + ki) as isize - pad as isize;
                                let ix = (z * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((i * c + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((o * c + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[((i * oc + o) * oh + y) * ow + z] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, oc, oh, ow], out).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub layer: &'static str,
    pub shapes: usize,
    pub worst: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.worst <= self.tol
    }
}

fn pick(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn gradcheck_conv(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let k = [1, 3, 3, 5][rng.below(4)];
        let stride = pick(rng, 1, 2);
        let pad = rng.below(k / 2 + 1);
        let (n, c, oc) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3));
        let h = pick(rng, k.max(2), 7);
        let w = pick(rng, k.max(2), 7);
        let x = normal(&[n, c, h, w], rng);
        let wt = normal(&[oc, c, k, k], rng);
        let b = normal(&[oc], rng);
        let layer = ConvLayer::new(wt.clone(), b.clone(), stride, pad).unwrap();
        let y = layer.forward(&x).unwrap();
        let r = normal(y.shape(), rng);
        let g = layer.backward(&x, &r).unwrap();
        let shape_x = x.shape().to_vec();
        worst = worst.max(fd_max_rel(x.data(), g.input.data(), |p| {
            dot(&r, &layer.forward(&t(&shape_x, p)).unwrap())
        }));
        worst = worst.max(fd_max_rel(wt.data(), g.weight.data(), |p| {
            let l = ConvLayer::new(t(wt.shape(), p), b.clone(), stride, pad).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        }));
        worst = worst.max(fd_max_rel(b.data(), g.bias.data(), |p| {
            let l = ConvLayer::new(wt.clone(), t(&[oc], p), stride, pad).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        }));
    }
    GradReport {
        layer: "conv",
        shapes,
        worst,
        tol: 1e-6,
    }
}

pub fn gradcheck_batchnorm(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let (n, c, h, w) = (
            pick(rng, 2, 4),
            pick(rng, 1, 3),
            pick(rng, 1, 4),
            pick(rng, 1, 4),
        );
        let x = normal(&[n, c, h, w], rng).scale(2.0);
        let mut bn = BatchNormLayer::<f64>::new(c);
        bn.gamma = normal(&[c], rng);
        bn.beta = normal(&[c], rng);
        let y = bn.clone().forward(&x, Mode::Train).unwrap();
        let r = normal(y.shape(), rng);
        let g = bn.backward(&x, &r, Mode::Train).unwrap();
        let shape_x = x.shape().to_vec();
        worst = worst.max(fd_max_rel(x.data(), g.input.data(), |p| {
            dot(
                &r,
                &bn.clone().forward(&t(&shape_x, p), Mode::Train).unwrap(),
            )
        }));
        worst = worst.max(fd_max_rel(bn.gamma.data(), g.gamma.data(), |p| {
            let mut l = bn.clone();
            l.gamma = t(&[c], p);
            dot(&r, &l.forward(&x, Mode::Train).unwrap())
        }));
        worst = worst.max(fd_max_rel(bn.beta.data(), g.beta.data(), |p| {
            let mut l = bn.clone();
            l.beta = t(&[c], p);
            dot(&r, &l.forward(&x, Mode::Train).unwrap())
        }));
    }
    GradReport {
        layer: "batchnorm",
        shapes,
        worst,
        tol: 1e-5,
    }
}

/// Distinct values at least 0.01 apart so no window has a near-tie.
fn untied(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    rng.shuffle(&mut vals);
    Tensor::from_vec(shape, vals).unwrap()
}

pub fn gradcheck_maxpool(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let shape = [
            pick(rng, 1, 2),
            pick(rng, 1, 3),
            pick(rng, 2, 7),
            pick(rng, 2, 7),
        ];
        let x = untied(&shape, rng);
        let out = maxpool_forward(&x).unwrap();
        let r = normal(out.output.shape(), rng);
        let g = maxpool_backward(&out.indices, &r, x.shape()).unwrap();
        worst = worst.max(fd_max_rel(x.data(), g.data(), |p| {
            dot(&r, &maxpool_forward(&t(&shape, p)).unwrap().output)
        }));
    }
    GradReport {
        layer: "maxpool",
        shapes,
        worst,
        tol: 1e-6,
    }
}

pub fn gradcheck_linear(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let (n, k, m) = (pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6));
        let x = normal(&[n, k], rng);
        let w = normal(&[m, k], rng);
        let b = normal(&[m], rng);
        let layer = LinearLayer::new(w.clone(), b.clone()).unwrap();
        let r = normal(&[n, m], rng);
        let g = layer.backward(&x, &r).unwrap();
        worst = worst.max(fd_max_rel(x.data(), g.input.data(), |p| {
            dot(&r, &layer.forward(&t(&[n, k], p)).unwrap())
        }));
        worst = worst.max(fd_max_rel(w.data(), g.weight.data(), |p| {
            let l = LinearLayer::new(t(&[m, k], p), b.clone()).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        }));
        worst = worst.max(fd_max_rel(b.data(), g.bias.data(), |p| {
            let l = LinearLayer::new(w.clone(), t(&[m], p)).unwrap();
            dot(&r, &l.forward(&x).unwrap())
        }));
    }
    GradReport {
        layer: "linear",
        shapes,
        worst,
        tol: 1e-6,
    }
}

pub fn gradcheck_dropout(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let shape = [pick(rng, 1, 4), pick(rng, 1, 8)];
        let p = [0.1, 0.5, 0.8][rng.below(3)];
        let layer = DropoutLayer::new(p).unwrap();
        let x = normal(&shape, rng);
        let (y, mask) = layer.forward(&x, Mode::Train, Some(rng)).unwrap();
        let mask = mask.expect("train mode with p > 0 draws a mask");
        let r = normal(y.shape(), rng);
        let g = DropoutLayer::backward(Some(&mask), &r).unwrap();
        worst = worst.max(fd_max_rel(x.data(), g.data(), |v| {
            dot(&r, &t(&shape, v).mul(&mask).unwrap())
        }));
    }
    GradReport {
        layer: "dropout",
        shapes,
        worst,
        tol: 1e-6,
    }
}

pub fn gradcheck_relu(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let shape = [
            pick(rng, 1, 3),
            pick(rng, 1, 3),
            pick(rng, 1, 5),
            pick(rng, 1, 5),
        ];
        let mut x = normal(&shape, rng);
        // keep clear of the kink
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2f64.copysign(*v);
            }
        }
        let r = normal(&shape, rng);
        let g = relu_backward(&x, &r).unwrap();
        worst = worst.max(fd_max_rel(x.data(), g.data(), |p| {
            dot(&r, &relu(&t(&shape, p)))
        }));
    }
    GradReport {
        layer: "relu",
        shapes,
        worst,
        tol: 1e-6,
    }
}

pub fn gradcheck_softmax_ce(rng: &mut SeededRng, shapes: usize) -> GradReport {
    let mut worst = 0.0f64;
    for _ in 0..shapes {
        let (n, k) = (pick(rng, 1, 5), pick(rng, 2, 7));
        let logits = normal(&[n, k], rng).scale(3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let g = softmax_cross_entropy(&logits, &labels).unwrap().logit_grad;
        worst = worst.max(fd_max_rel(logits.data(), g.data(), |p| {
            softmax_cross_entropy(&t(&[n, k], p), &labels).unwrap().loss
        }));
    }
    GradReport {
        layer: "softmax-ce",
        shapes,
        worst,
        tol: 1e-6,
    }
}

/// Every layer's check, `shapes` random shapes each.
pub fn gradcheck_suite(seed: u64, shapes: usize) -> Vec<GradReport> {
    let mut rng = SeededRng::new(seed);
    vec![
        gradcheck_conv(&mut rng, shapes),
        gradcheck_batchnorm(&mut rng, shapes),
        gradcheck_maxpool(&mut rng, shapes),
        gradcheck_linear(&mut rng, shapes),
        gradcheck_dropout(&mut rng, shapes),
        gradcheck_relu(&mut rng, shapes),
        gradcheck_softmax_ce(&mut rng, shapes),
    ]
}

/// Widths 2/2/2/2, FC 8/8, 16x16 input, no dropout.
pub fn tiny_config() -> VggConfig {
    VggConfig {
        stage_widths: [2, 2, 2, 2],
        fc_widths: [8, 8],
        input_size: 16,
        dropout_p: 0.0,
        ..VggConfig::default()
    }
}

/// Whole-network check on `samples` randomly chosen parameters.
pub fn network_gradcheck(seed: u64, samples: usize) -> f64 {
    let mut rng = SeededRng::new(seed);
    let mut model = VggModel::<f64>::build(&tiny_config(), &mut rng).unwrap();
    // non-trivial affine BN parameters and biases
    for (_, p) in model.params_mut() {
        if p.shape().len() == 1 {
            for v in p.data_mut() {
                *v += rng.normal(0.0, 0.3);
            }
        }
    }
    let x = normal(&[3, 1, 16, 16], &mut rng);
    let labels = [0, 3, 6];
    let logits = model.forward(&x, Mode::Train, None).unwrap();
    let lg = softmax_cross_entropy(&logits, &labels).unwrap().logit_grad;
    let grads = model.backward(&lg).unwrap().params;
    let names: Vec<String> = grads.keys().cloned().collect();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let name = &names[rng.below(names.len())];
        let idx = rng.below(grads[name].len());
        let eval_at = |delta: f64| {
            let mut m = model.clone();
            for (n, p) in m.params_mut() {
                if &n == name {
                    p.data_mut()[idx] += delta;
                }
            }
            let out = m.forward(&x, Mode::Train, None).unwrap();
            softmax_cross_entropy(&out, &labels).unwrap().loss
        };
        let num = (eval_at(H) - eval_at(-H)) / (2.0 * H);
        worst = worst.max(rel_err(grads[name].data()[idx], num));
    }
    worst
}

pub const QUAD_START: [f64; 5] = [1.0, -2.0, 0.5, 3.0, -0.75];
pub const QUAD_CENTER: [f64; 5] = [0.3, 0.1, -1.2, 2.0, 0.0];

pub fn oracle_lr(kind: OptimizerKind) -> f64 {
    match kind {
        OptimizerKind::Sgd | OptimizerKind::SgdNesterov | OptimizerKind::Asgd => 0.05,
        OptimizerKind::Adam | OptimizerKind::AdamAmsgrad => 0.02,
        OptimizerKind::Adagrad => 0.3,
        OptimizerKind::Adadelta => 1.0,
    }
}

/// Straight-line scalar reimplementation on f(θ) = ½‖θ − c‖². Returns the
/// iterates after each step and, for averaged SGD, the running averages.
pub fn oracle_run(
    kind: OptimizerKind,
    hp: &HyperParams,
    lr: f64,
    steps: usize,
) -> (Vec<[f64; 5]>, Vec<[f64; 5]>) {
    let mut theta = QUAD_START;
    let mut a = [0.0; 5]; // velocity / m / sum of squares / E[g²]
    let mut b = [0.0; 5]; // v / E[Δ²]
    let mut vmax = [0.0f64; 5];
    let mut iterate_sum = [0.0; 5];
    let mut averaged = 0u64;
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut iterates = Vec::new();
    let mut averages = Vec::new();
    for step in 1..=steps as u64 {
        b1t *= hp.beta1;
        b2t *= hp.beta2;
        for i in 0..5 {
            let g = (theta[i] - QUAD_CENTER[i]) + hp.weight_decay * theta[i];
            match kind {
                OptimizerKind::Sgd => {
                    a[i] = hp.momentum * a[i] + g;
                    theta[i] -= lr * a[i];
                }
                OptimizerKind::SgdNesterov => {
                    a[i] = hp.momentum * a[i] + g;
                    theta[i] -= lr * (g + hp.momentum * a[i]);
                }
                OptimizerKind::Asgd => theta[i] -= lr * g,
                OptimizerKind::Adagrad => {
                    a[i] += g * g;
                    theta[i] -= lr * g / (a[i].sqrt() + hp.adagrad_epsilon);
                }
                OptimizerKind::Adadelta => {
                    let rho = hp.adadelta_rho;
                    a[i] = rho * a[i] + (1.0 - rho) * g * g;
                    let delta =
                        ((b[i] + hp.adadelta_epsilon) / (a[i] + hp.adadelta_epsilon)).sqrt() * g;
                    b[i] = rho * b[i] + (1.0 - rho) * delta * delta;
                    theta[i] -= lr * delta;
                }
                OptimizerKind::Adam | OptimizerKind::AdamAmsgrad => {
                    a[i] = hp.beta1 * a[i] + (1.0 - hp.beta1) * g;
                    b[i] = hp.beta2 * b[i] + (1.0 - hp.beta2) * g * g;
                    vmax[i] = vmax[i].max(b[i]);
                    let second = if kind == OptimizerKind::AdamAmsgrad {
                        vmax[i]
                    } else {
                        b[i]
                    };
                    theta[i] -= lr * (a[i] / (1.0 - b1t))
                        / ((second / (1.0 - b2t)).sqrt() + hp.adam_epsilon);
                }
            }
        }
        if step > hp.asgd_t0 {
            averaged += 1;
            for i in 0..5 {
                iterate_sum[i] += theta[i];
            }
        }
        iterates.push(theta);
        averages.push(if averaged == 0 {
            theta
        } else {
            iterate_sum.map(|s| s / averaged as f64)
        });
    }
    (iterates, averages)
}

/// The engine on the same problem, as a single 5-element parameter.
pub fn engine_run(
    kind: OptimizerKind,
    hp: &HyperParams,
    lr: f64,
    steps: usize,
) -> (Vec<[f64; 5]>, Vec<[f64; 5]>) {
    let mut opt = Optimizer::<f64>::new(kind, hp.clone()).unwrap();
    let mut theta = t(&[5], &QUAD_START);
    let center = t(&[5], &QUAD_CENTER);
    let mut iterates = Vec::new();
    let mut averages = Vec::new();
    for _ in 0..steps {
        let g = theta.sub(&center).unwrap();
        let grads = [("theta".to_string(), g)].into_iter().collect();
        opt.step(&mut [("theta".to_string(), &mut theta)], &grads, lr)
            .unwrap();
        iterates.push(theta.data().try_into().unwrap());
        if kind == OptimizerKind::Asgd {
            let map = [("theta".to_string(), theta.clone())].into_iter().collect();
            let avg = opt.swap_in_average(&map).unwrap();
            averages.push(avg["theta"].data().try_into().unwrap());
        }
    }
    (iterates, averages)
}

/// Largest absolute difference between engine and oracle over `steps`
/// steps, including the averages of averaged SGD.
pub fn optimizer_oracle_error(kind: OptimizerKind, hp: &HyperParams, steps: usize) -> f64 {
    let lr = oracle_lr(kind);
    let (oi, oa) = oracle_run(kind, hp, lr, steps);
    let (ei, ea) = engine_run(kind, hp, lr, steps);
    let mut worst = 0.0f64;
    for (o, e) in oi.iter().zip(&ei) {
        for i in 0..5 {
            worst = worst.max((o[i] - e[i]).abs());
        }
    }
    for (o, e) in oa.iter().zip(&ea) {
        for i in 0..5 {
            worst = worst.max((o[i] - e[i]).abs());
        }
    }
    worst
}

/// One-line evaluation of each closed-form schedule.
pub fn closed_form(s: &Schedule, e: usize) -> f64 {
    let ef = e as f64;
    match *s {
        Schedule::Constant { lr } => lr,
        Schedule::StepLr {
            lr,
            step_size,
            gamma,
        } => lr * gamma.powf((e / step_size) as f64),
        Schedule::Cosine {
            eta_max,
            eta_min,
            t_max,
        } => eta_min + (eta_max - eta_min) * (1.0 + (PI * ef / t_max as f64).cos()) / 2.0,
        Schedule::CosineWr {
            eta_max,
            eta_min,
            t_0,
            t_mult,
        } => {
            assert_eq!(t_mult, 2, "closed form written for doubling cycles");
            let k = (e / t_0 + 1).ilog2();
            let start = t_0 * ((1 << k) - 1);
            let len = (t_0 << k) as f64;
            eta_min + (eta_max - eta_min) * (1.0 + (PI * (e - start) as f64 / len).cos()) / 2.0
        }
        Schedule::OneCycle {
            max_lr,
            pct_start,
            div,
            final_div,
            total,
        } => {
            let up = pct_start * total as f64;
            if ef <= up {
                max_lr / div + (max_lr - max_lr / div) * (ef / up)
            } else {
                let frac = (ef - up) / ((total - 1) as f64 - up);
                max_lr / final_div + (max_lr - max_lr / final_div) * (1.0 + (PI * frac).cos()) / 2.0
            }
        }
        Schedule::Rlrp { .. } => panic!("plateau reduction has no closed form"),
    }
}

/// Worst absolute deviation of the scheduler from [`closed_form`] over
/// `epochs` epochs of the default schedule at lr 0.01.
pub fn schedule_error(kind: SchedulerKind, epochs: usize) -> f64 {
    let schedule = Schedule::with_defaults(kind, 0.01, epochs);
    let mut s = Scheduler::new(schedule.clone()).unwrap();
    (0..epochs)
        .map(|e| (s.begin_epoch(e).unwrap() - closed_form(&schedule, e)).abs())
        .fold(0.0, f64::max)
}

/// Validation accuracies: best .60 at epoch 2, five stagnant epochs (3..=7),
/// then strict improvement.
pub fn plateau_trace(epochs: usize) -> Vec<f64> {
    let head = [0.50, 0.55, 0.60, 0.58, 0.59, 0.60, 0.57, 0.60];
    (0..epochs)
        .map(|e| {
            head.get(e)
                .copied()
                .unwrap_or_else(|| 0.60 + 0.001 * (e - head.len() + 1) as f64)
        })
        .collect()
}

/// Per-epoch learning rates of a default plateau scheduler fed `accs`, and
/// its reduction count.
pub fn run_plateau(accs: &[f64]) -> (Vec<f64>, usize) {
    let mut s = Scheduler::new(Schedule::with_defaults(
        SchedulerKind::Rlrp,
        0.01,
        accs.len(),
    ))
    .unwrap();
    let lrs = accs
        .iter()
        .enumerate()
        .map(|(e, &a)| {
            let lr = s.begin_epoch(e).unwrap();
            s.observe(a).unwrap();
            lr
        })
        .collect();
    (lrs, s.reductions())
}

pub const OFFICIAL_COUNTS: [usize; 3] = [28709, 3589, 3589];

/// A streamed CSV with the official file's header and split sizes. Pixel
/// rows vary with the label only.
pub struct OfficialShapedCsv {
    rows: Vec<Vec<u8>>,
    index: usize,
    total: usize,
    buf: Vec<u8>,
    pos: usize,
}

impl OfficialShapedCsv {
    pub fn new() -> Self {
        let rows = (0..7)
            .map(|label| {
                let px: Vec<String> = (0..IMAGE_PIXELS)
                    .map(|i| ((i * 7 + label * 31) % 256).to_string())
                    .collect();
                format!("{label},{}", px.join(" ")).into_bytes()
            })
            .collect();
        OfficialShapedCsv {
            rows,
            index: 0,
            total: OFFICIAL_COUNTS.iter().sum(),
            buf: b"emotion,pixels,Usage\n".to_vec(),
            pos: 0,
        }
    }

    fn refill(&mut self) -> bool {
        if self.index == self.total {
            return false;
        }
        let i = self.index;
        let usage = if i < OFFICIAL_COUNTS[0] {
            Usage::Training
        } else if i < OFFICIAL_COUNTS[0] + OFFICIAL_COUNTS[1] {
            Usage::PublicTest
        } else {
            Usage::PrivateTest
        };
        self.buf.clear();
        self.buf.extend_from_slice(&self.rows[i % 7]);
        self.buf.push(b',');
        self.buf.extend_from_slice(usage.as_str().as_bytes());
        self.buf.push(b'\n');
        self.pos = 0;
        self.index += 1;
        true
    }
}

impl Read for OfficialShapedCsv {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        let mut written = 0;
        while written < out.len() {
            if self.pos == self.buf.len() && !self.refill() {
                break;
            }
            let n = (self.buf.len() - self.pos).min(out.len() - written);
            out[written..written + n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
            self.pos += n;
            written += n;
        }
        Ok(written)
    }
}

/// Synthetic records, `per_class` of each class in every split.
pub fn synthetic(per_class: [usize; 3], seed: u64) -> Vec<FerRecord> {
    synthetic_records(
        &SyntheticSpec {
            per_class,
            ..SyntheticSpec::default()
        },
        seed,
    )
}

pub fn write_synthetic_csv(dir: &Path, per_class: [usize; 3], seed: u64) -> PathBuf {
    let path = dir.join("fer.csv");
    let file = std::fs::File::create(&path).unwrap();
    write_csv(&synthetic(per_class, seed), std::io::BufWriter::new(file)).unwrap();
    path
}

pub fn fer_bin() -> &'static str {
    env!("CARGO_BIN_EXE_fer")
}

/// Flattened parameters of the small f64 model after each of `epochs`
/// epochs of SGD with Nesterov momentum at lr 0.01, with loss scaling.
pub fn param_trajectory(
    records: &[FerRecord],
    loss_scale: f64,
    epochs: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    use fer_core::data::{make_batches, AugmentConfig, BatchMode};
    use fer_core::train::train_epoch;
    let mut model =
        VggModel::<f64>::build(&VggConfig::small(), &mut SeededRng::with_stream(seed, 1)).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::SgdNesterov, HyperParams::default()).unwrap();
    let cfg = AugmentConfig::default();
    (0..epochs as u64)
        .map(|epoch| {
            let batches =
                make_batches::<f64>(records, &cfg, seed, epoch, BatchMode::Train, 8).unwrap();
            let mut rng = SeededRng::substream(seed, 2, epoch, 0);
            train_epoch(&mut model, &mut opt, batches, 0.01, loss_scale, &mut rng).unwrap();
            model
                .params()
                .iter()
                .flat_map(|(_, p)| p.data().to_vec())
                .collect()
        })
        .collect()
}

/// Worst elementwise relative difference between two trajectories.
pub fn trajectory_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}
