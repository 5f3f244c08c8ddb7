//! Instantiated networks: parameters, forward pass with activation cache, and
//! backward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::config::{LayerKind, ModelConfig};
use crate::nn::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
    sigmoid_backward, sigmoid_forward, DropoutMode, CONV_KERNEL,
};
use crate::rng::RngStream;
use crate::tensor::{Real, TensorOf};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    name: String,
    frozen: bool,
    pub tensor: TensorOf<T>,
}

impl<T> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }
}

#[derive(Debug)]
pub enum Mode<'a> {
    /// Dropout active; activations cached for backward.
    Train(&'a mut RngStream),
    Eval,
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(TensorOf<T>),
    Pool { input_shape: Vec<usize>, argmax: Vec<u32> },
    Relu(Vec<bool>),
    Dropout(Option<Vec<T>>),
    Flatten(Vec<usize>),
    Output(TensorOf<T>),
}

/// Activations recorded by a train-mode forward pass, from the first layer
/// that owns trainable parameters onwards.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    version: u64,
    start: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> Cache<T> {
    /// True when both caches took the same ReLU branches and pooling winners,
    /// i.e. they lie in the same linear region of the network.
    pub fn same_pattern(&self, other: &Self) -> bool {
        self.start == other.start
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| match (a, b) {
                (LayerCache::Relu(x), LayerCache::Relu(y)) => x == y,
                (LayerCache::Pool { argmax: x, .. }, LayerCache::Pool { argmax: y, .. }) => x == y,
                _ => true,
            })
    }
}

#[derive(Debug)]
pub struct Forward<T> {
    pub score: T,
    /// Present in train mode.
    pub cache: Option<Cache<T>>,
}

/// Per-parameter gradients, aligned with [`Model::params`]. Frozen parameters
/// have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<TensorOf<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(model: &Model<T>) -> Self {
        Self {
            grads: model
                .params
                .iter()
                .map(|p| (!p.frozen).then(|| TensorOf::zeros(p.tensor.shape()).expect("valid shape")))
                .collect(),
        }
    }

    pub fn from_parts(grads: Vec<Option<TensorOf<T>>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&TensorOf<T>> {
        self.grads.get(i).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut TensorOf<T>> {
        self.grads.get_mut(i).and_then(Option::as_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&TensorOf<T>>> {
        self.grads.iter().map(Option::as_ref)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::ShapeMismatch("gradient sets of different length".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a, b) {
                (Some(a), Some(b)) => a.add_assign(b)?,
                (None, None) => {}
                _ => return Err(Error::ShapeMismatch("gradient sets cover different parameters".into())),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.grads.iter_mut().flatten().for_each(|g| g.scale(factor));
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    /// Per layer, the index of its weight parameter; the bias follows it.
    layer_param: Vec<Option<usize>>,
    /// First layer with trainable parameters; nothing before it needs a
    /// backward pass.
    grad_start: usize,
    version: u64,
}

impl<T: Real> Model<T> {
    /// Fresh parameters: He-normal weights for layers feeding a ReLU,
    /// Glorot-uniform for the final dense layer, zero biases. Weights are drawn
    /// in parameter order.
    pub fn init(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::zeroed(config)?;
        let last_weight = m.layer_param.iter().flatten().copied().max();
        for i in 0..m.params.len() {
            if !m.params[i].name.ends_with(".weight") {
                continue;
            }
            let shape = m.params[i].tensor.shape().to_vec();
            let fan_in: usize = shape[1..].iter().product();
            let fan_out = shape[0];
            let data = m.params[i].tensor.data_mut();
            if Some(i) == last_weight {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                data.iter_mut()
                    .for_each(|v| *v = T::from_f64((2.0 * rng.uniform01() - 1.0) * limit));
            } else {
                let std = (2.0 / fan_in as f64).sqrt();
                data.iter_mut().for_each(|v| *v = T::from_f64(rng.normal01() * std));
            }
        }
        Ok(m)
    }

    /// All parameters zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let shapes = config.validate()?;
        let mut params = Vec::new();
        let mut layer_param = vec![None; config.layers.len()];
        for (i, prefix) in config.param_layers() {
            let layer = &config.layers[i];
            let input = &shapes[i];
            let (wshape, out) = match layer.kind {
                LayerKind::Conv { out_channels } => {
                    let mut s = vec![out_channels, input[0]];
                    s.extend(std::iter::repeat_n(CONV_KERNEL, input.len() - 1));
                    (s, out_channels)
                }
                LayerKind::Dense { out_features } => (vec![out_features, input[0]], out_features),
                _ => unreachable!("param_layers yields only conv and dense"),
            };
            layer_param[i] = Some(params.len());
            params.push(Param {
                name: format!("{prefix}.weight"),
                frozen: layer.frozen,
                tensor: TensorOf::zeros(&wshape)?,
            });
            params.push(Param {
                name: format!("{prefix}.bias"),
                frozen: layer.frozen,
                tensor: TensorOf::zeros(&[out])?,
            });
        }
        let grad_start = config
            .layers
            .iter()
            .position(|l| l.kind.has_params() && !l.frozen)
            .unwrap_or(config.layers.len());
        Ok(Self {
            config,
            params,
            layer_param,
            grad_start,
            version: fresh_version(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        self.version = fresh_version();
        &mut self.params
    }

    /// Replaces a parameter tensor by name.
    pub fn set_param(&mut self, name: &str, tensor: TensorOf<T>) -> Result<()> {
        let i = self
            .param_index(name)
            .ok_or_else(|| Error::Format(format!("unknown tensor `{name}`")))?;
        if self.params[i].tensor.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                tensor.shape(),
                self.params[i].tensor.shape()
            )));
        }
        self.params_mut()[i].tensor = tensor;
        Ok(())
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    frozen: p.frozen,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            layer_param: self.layer_param.clone(),
            grad_start: self.grad_start,
            version: fresh_version(),
        }
    }

    fn layer_params(&self, layer: usize) -> (usize, &TensorOf<T>, &TensorOf<T>) {
        let w = self.layer_param[layer].expect("parameterized layer");
        (w, &self.params[w].tensor, &self.params[w + 1].tensor)
    }

    /// Single-sample forward pass. `x` must have the config's input shape and
    /// holds raw 8-bit intensities; the config's input scale is applied here.
    pub fn forward(&self, x: &TensorOf<T>, mode: Mode<'_>) -> Result<Forward<T>> {
        if x.shape() != self.config.input_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, model expects {:?}",
                x.shape(),
                self.config.input_shape
            )));
        }
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let train = rng.is_some();
        let mut act = x.clone();
        let scale = T::from_f64(self.config.input_scale as f64);
        if scale != T::one() {
            act.scale(scale);
        }
        let mut caches = Vec::new();
        for (i, layer) in self.config.layers.iter().enumerate() {
            let keep = train && i >= self.grad_start;
            act = match &layer.kind {
                LayerKind::Conv { .. } => {
                    let (_, w, b) = self.layer_params(i);
                    let y = conv_forward(&act, w, b)?;
                    if keep {
                        caches.push(LayerCache::Input(act));
                    }
                    y
                }
                LayerKind::Dense { .. } => {
                    let (_, w, b) = self.layer_params(i);
                    let y = dense_forward(&act, w, b)?;
                    if keep {
                        caches.push(LayerCache::Input(act));
                    }
                    y
                }
                LayerKind::MaxPool { kernel, end_pad } => {
                    let (y, argmax) = maxpool_forward(&act, kernel, *end_pad)?;
                    if keep {
                        caches.push(LayerCache::Pool {
                            input_shape: act.shape().to_vec(),
                            argmax,
                        });
                    }
                    y
                }
                LayerKind::Relu => {
                    let mask = relu_forward(&mut act);
                    if keep {
                        caches.push(LayerCache::Relu(mask));
                    }
                    act
                }
                LayerKind::Dropout { rate } => {
                    let mode = match rng.as_deref_mut() {
                        Some(r) => DropoutMode::Train(r),
                        None => DropoutMode::Eval,
                    };
                    let mask = dropout_forward(&mut act, *rate, mode);
                    if keep {
                        caches.push(LayerCache::Dropout(mask));
                    }
                    act
                }
                LayerKind::Flatten => {
                    let shape = act.shape().to_vec();
                    let n = act.len();
                    if keep {
                        caches.push(LayerCache::Flatten(shape));
                    }
                    act.reshape(&[n])?
                }
                LayerKind::Sigmoid => {
                    sigmoid_forward(&mut act);
                    if keep {
                        caches.push(LayerCache::Output(act.clone()));
                    }
                    act
                }
            };
        }
        Ok(Forward {
            score: act.data()[0],
            cache: train.then_some(Cache {
                version: self.version,
                start: self.grad_start,
                layers: caches,
            }),
        })
    }

    /// Gradients of `dscore · score` with respect to every trainable
    /// parameter, given the cache of a train-mode forward pass made with the
    /// current parameters.
    pub fn backward(&self, cache: &Cache<T>, dscore: T) -> Result<Gradients<T>> {
        let n = self.config.layers.len();
        if cache.version != self.version
            || cache.start != self.grad_start
            || cache.layers.len() != n - self.grad_start
        {
            return Err(Error::StaleCache);
        }
        let mut grads: Vec<Option<TensorOf<T>>> = vec![None; self.params.len()];
        let mut dy = TensorOf::new(&[1], vec![dscore])?;
        for (i, lc) in (self.grad_start..n).zip(&cache.layers).rev() {
            let layer = &self.config.layers[i];
            let need_dx = i > self.grad_start;
            match (&layer.kind, lc) {
                (LayerKind::Conv { .. }, LayerCache::Input(x)) => {
                    let (wi, w, _) = self.layer_params(i);
                    let g = conv_backward(x, w, &dy, need_dx)?;
                    if !layer.frozen {
                        grads[wi] = Some(g.dkernels);
                        grads[wi + 1] = Some(g.dbias);
                    }
                    if let Some(dx) = g.dx {
                        dy = dx;
                    }
                }
                (LayerKind::Dense { .. }, LayerCache::Input(x)) => {
                    let (wi, w, _) = self.layer_params(i);
                    let g = dense_backward(x, w, &dy, need_dx)?;
                    if !layer.frozen {
                        grads[wi] = Some(g.dweight);
                        grads[wi + 1] = Some(g.dbias);
                    }
                    if let Some(dx) = g.dx {
                        dy = dx;
                    }
                }
                (LayerKind::MaxPool { .. }, LayerCache::Pool { input_shape, argmax }) => {
                    dy = maxpool_backward(input_shape, argmax, &dy)?;
                }
                (LayerKind::Relu, LayerCache::Relu(mask)) => relu_backward(mask, &mut dy)?,
                (LayerKind::Dropout { .. }, LayerCache::Dropout(mask)) => {
                    dropout_backward(mask.as_deref(), &mut dy)?
                }
                (LayerKind::Flatten, LayerCache::Flatten(shape)) => dy = dy.reshape(shape)?,
                (LayerKind::Sigmoid, LayerCache::Output(y)) => sigmoid_backward(y, &mut dy)?,
                _ => return Err(Error::StaleCache),
            }
        }
        Ok(Gradients { grads })
    }
}
