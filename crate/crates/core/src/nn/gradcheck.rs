//! Finite-difference verification of the backward passes on 64-bit replicas.
//!
//! Layer checks use a random linear projection of the layer output as the
//! objective. Model checks use binary cross-entropy on a small network.
//! Coordinates whose perturbation flips a ReLU branch or a pooling winner are
//! skipped and counted, since the objective is not differentiable there.

use crate::error::Result;
use crate::nn::config::{InputLayout, LayerKind, LayerSpec, ModelConfig};
use crate::nn::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward, sigmoid,
    sigmoid_backward, DropoutMode,
};
use crate::nn::model::{Mode, Model};
use crate::rng::{hash64, RngStream, StreamLabel};
use crate::tensor::TensorOf;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;

type T64 = TensorOf<f64>;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }

    /// Compares `analytic` against central differences of `f` around
    /// `point`. `f` returns `None` when the perturbed point leaves the
    /// linear region of the base point.
    fn check(&mut self, point: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> Option<f64>) {
        let mut p = point.to_vec();
        for i in 0..p.len() {
            p[i] = point[i] + FD_STEP;
            let up = f(&p);
            p[i] = point[i] - FD_STEP;
            let down = f(&p);
            p[i] = point[i];
            match (up, down) {
                (Some(u), Some(d)) => {
                    let numeric = (u - d) / (2.0 * FD_STEP);
                    self.max_rel_error = self.max_rel_error.max(rel_error(analytic[i], numeric));
                    self.checked += 1;
                }
                _ => self.skipped += 1,
            }
        }
    }
}

fn randn(rng: &mut RngStream, shape: &[usize]) -> T64 {
    let n = shape.iter().product();
    TensorOf::new(shape, (0..n).map(|_| rng.normal01()).collect()).expect("valid shape")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(shape: &[usize], data: &[f64]) -> T64 {
    TensorOf::new(shape, data.to_vec()).expect("valid shape")
}

fn dim(rng: &mut RngStream, lo: i64, hi: i64) -> usize {
    rng.int_range(lo, hi).expect("valid range") as usize
}

fn check_conv(rep: &mut GradReport, rng: &mut RngStream, spatial_rank: usize) {
    let cin = dim(rng, 1, 3);
    let cout = dim(rng, 1, 3);
    let mut xs = vec![cin];
    xs.extend((0..spatial_rank).map(|_| dim(rng, 2, 5)));
    let mut ks = vec![cout, cin];
    ks.extend(std::iter::repeat_n(3, spatial_rank));
    let x = randn(rng, &xs);
    let k = randn(rng, &ks);
    let b = randn(rng, &[cout]);
    let y = conv_forward(&x, &k, &b).expect("conv");
    let r = randn(rng, y.shape());
    let g = conv_backward(&x, &k, &r, true).expect("conv backward");
    let obj = |x: &T64, k: &T64, b: &T64| dot(conv_forward(x, k, b).expect("conv").data(), r.data());
    rep.check(x.data(), g.dx.as_ref().expect("dx").data(), |p| Some(obj(&with(&xs, p), &k, &b)));
    rep.check(k.data(), g.dkernels.data(), |p| Some(obj(&x, &with(&ks, p), &b)));
    rep.check(b.data(), g.dbias.data(), |p| Some(obj(&x, &k, &with(&[cout], p))));
}

fn check_pool(rep: &mut GradReport, rng: &mut RngStream, spatial_rank: usize) {
    let kernel: Vec<usize> = match spatial_rank {
        3 if rng.uniform01() < 0.5 => vec![2, 2, 1],
        3 => vec![2, 2, 2],
        _ => vec![2, 2],
    };
    let end_pad = rng.uniform01() < 0.5;
    let mut xs = vec![dim(rng, 1, 3)];
    xs.extend((0..spatial_rank).map(|_| dim(rng, 2, 5)));
    let n: usize = xs.iter().product();
    // Distinct values spaced well beyond the step keep every winner fixed.
    let data = rng
        .permutation(n)
        .into_iter()
        .map(|v| (v as f64 - n as f64 / 2.0) * 0.01)
        .collect::<Vec<_>>();
    let x = with(&xs, &data);
    let (y, arg) = maxpool_forward(&x, &kernel, end_pad).expect("pool");
    let r = randn(rng, y.shape());
    let dx = maxpool_backward(&xs, &arg, &r).expect("pool backward");
    rep.check(x.data(), dx.data(), |p| {
        let (y2, arg2) = maxpool_forward(&with(&xs, p), &kernel, end_pad).expect("pool");
        (arg2 == arg).then(|| dot(y2.data(), r.data()))
    });
}

fn check_dense(rep: &mut GradReport, rng: &mut RngStream) {
    let inp = dim(rng, 1, 8);
    let out = dim(rng, 1, 5);
    let x = randn(rng, &[inp]);
    let w = randn(rng, &[out, inp]);
    let b = randn(rng, &[out]);
    let r = randn(rng, &[out]);
    let g = dense_backward(&x, &w, &r, true).expect("dense backward");
    let obj = |x: &T64, w: &T64, b: &T64| dot(dense_forward(x, w, b).expect("dense").data(), r.data());
    rep.check(x.data(), g.dx.as_ref().expect("dx").data(), |p| Some(obj(&with(&[inp], p), &w, &b)));
    rep.check(w.data(), g.dweight.data(), |p| Some(obj(&x, &with(&[out, inp], p), &b)));
    rep.check(b.data(), g.dbias.data(), |p| Some(obj(&x, &w, &with(&[out], p))));
}

fn check_relu(rep: &mut GradReport, rng: &mut RngStream) {
    let n = dim(rng, 1, 20);
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = 0.1 + 0.9 * rng.uniform01();
            if rng.uniform01() < 0.5 { -m } else { m }
        })
        .collect();
    let x = with(&[n], &data);
    let mut y = x.clone();
    let mask = relu_forward(&mut y);
    let r = randn(rng, &[n]);
    let mut dx = r.clone();
    relu_backward(&mask, &mut dx).expect("relu backward");
    rep.check(x.data(), dx.data(), |p| {
        let mut y = with(&[n], p);
        let m = relu_forward(&mut y);
        (m == mask).then(|| dot(y.data(), r.data()))
    });
}

fn check_sigmoid(rep: &mut GradReport, rng: &mut RngStream) {
    let n = dim(rng, 1, 20);
    let data: Vec<f64> = (0..n).map(|_| 6.0 * rng.uniform01() - 3.0).collect();
    let y = with(&[n], &data.iter().map(|&z| sigmoid(z)).collect::<Vec<_>>());
    let r = randn(rng, &[n]);
    let mut dx = r.clone();
    sigmoid_backward(&y, &mut dx).expect("sigmoid backward");
    rep.check(&data, dx.data(), |p| Some(p.iter().zip(r.data()).map(|(&z, &w)| sigmoid(z) * w).sum()));
}

fn check_dropout(rep: &mut GradReport, rng: &mut RngStream) {
    let n = dim(rng, 1, 20);
    let seed = rng.next_u64();
    let x = randn(rng, &[n]);
    let r = randn(rng, &[n]);
    let apply = |x: &T64| {
        let mut y = x.clone();
        let mask = dropout_forward(&mut y, 0.4, DropoutMode::Train(&mut RngStream::new(seed, StreamLabel::Dropout)));
        (y, mask)
    };
    let (_, mask) = apply(&x);
    let mut dx = r.clone();
    dropout_backward(mask.as_deref(), &mut dx).expect("dropout backward");
    rep.check(x.data(), dx.data(), |p| Some(dot(apply(&with(&[n], p)).0.data(), r.data())));
}

fn check_flatten(rep: &mut GradReport, rng: &mut RngStream) {
    let shape = [dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)];
    let x = randn(rng, &shape);
    let r = randn(rng, &[x.len()]);
    let dx = r.clone().reshape(&shape).expect("reshape");
    rep.check(x.data(), dx.data(), |p| {
        let y = with(&shape, p).reshape(&[p.len()]).expect("reshape");
        Some(dot(y.data(), r.data()))
    });
}

/// Checks every layer kind on `instances` random shapes each.
pub fn check_layers(instances: usize, seed: u64) -> Vec<GradReport> {
    type Check = fn(&mut GradReport, &mut RngStream);
    let checks: [(&str, Check); 9] = [
        ("conv3d", |r, g| check_conv(r, g, 3)),
        ("conv2d", |r, g| check_conv(r, g, 2)),
        ("maxpool3d", |r, g| check_pool(r, g, 3)),
        ("maxpool2d", |r, g| check_pool(r, g, 2)),
        ("relu", check_relu),
        ("dropout", check_dropout),
        ("flatten", check_flatten),
        ("dense", check_dense),
        ("sigmoid", check_sigmoid),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(j, (name, f))| {
            let mut rep = GradReport::new(name);
            let mut rng = RngStream::new(hash64(seed, j as u64), StreamLabel::Init);
            for _ in 0..instances {
                f(&mut rep, &mut rng);
            }
            rep
        })
        .collect()
}

/// Two convolutions and one dense layer, small enough for exhaustive
/// coordinate checks.
pub fn tiny_config(two_d: bool) -> ModelConfig {
    let (input_shape, kernel, layout) = if two_d {
        (vec![3, 6, 6], vec![2, 2], InputLayout::Slices)
    } else {
        (vec![1, 6, 6, 6], vec![2, 2, 2], InputLayout::Volume)
    };
    ModelConfig {
        name: if two_d { "tiny2d" } else { "tiny" }.into(),
        input_shape,
        layout,
        input_scale: 1.0,
        layers: vec![
            LayerSpec::new(LayerKind::Conv { out_channels: 2 }),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::MaxPool { kernel, end_pad: false }),
            LayerSpec::new(LayerKind::Conv { out_channels: 3 }),
            LayerSpec::new(LayerKind::Relu),
            LayerSpec::new(LayerKind::Flatten),
            LayerSpec::new(LayerKind::Dense { out_features: 1 }),
            LayerSpec::new(LayerKind::Sigmoid),
        ],
    }
}

fn bce(p: f64, label: bool) -> f64 {
    if label { -p.ln() } else { -(1.0 - p).ln() }
}

/// Full-model check of every trainable parameter coordinate against
/// cross-entropy loss, over `instances` random initializations and inputs.
pub fn check_model(config: &ModelConfig, instances: usize, seed: u64) -> Result<GradReport> {
    let mut rep = GradReport::new(&config.name);
    for inst in 0..instances {
        let s = hash64(seed, inst as u64);
        let mut data_rng = RngStream::new(s, StreamLabel::Synth);
        let model = Model::<f64>::init(config.clone(), &mut RngStream::new(s, StreamLabel::Init))?;
        let x = randn(&mut data_rng, &config.input_shape);
        let label = data_rng.uniform01() < 0.5;
        let run = |m: &Model<f64>| -> Result<(f64, _)> {
            let f = m.forward(&x, Mode::Train(&mut RngStream::new(s, StreamLabel::Dropout)))?;
            Ok((f.score, f.cache.expect("train mode caches")))
        };
        let (p, cache) = run(&model)?;
        let dscore = if label { -1.0 / p } else { 1.0 / (1.0 - p) };
        let grads = model.backward(&cache, dscore)?;
        for (i, param) in model.params().iter().enumerate() {
            let Some(g) = grads.get(i) else { continue };
            let shape = param.tensor.shape().to_vec();
            rep.check(param.tensor.data(), g.data(), |pt| {
                let mut m = model.clone();
                m.params_mut()[i].tensor = with(&shape, pt);
                let (p2, c2) = run(&m).ok()?;
                c2.same_pattern(&cache).then(|| bce(p2, label))
            });
        }
    }
    Ok(rep)
}
