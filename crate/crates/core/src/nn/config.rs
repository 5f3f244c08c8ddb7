//! Declarative model descriptions and shape propagation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::layers::pooled_extent;
use crate::volume::{CHANNELS_PER_FRAME, PATCH_EXTENT};

/// Number of transverse slices a 2D model scores per patient.
pub const SLICES_PER_PATIENT: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// 3×3(×3) convolution, stride 1, zero padding 1. Two- or
    /// three-dimensional according to the rank of its input.
    Conv { out_channels: usize },
    /// Max pooling with stride equal to the kernel; one kernel entry per
    /// spatial axis.
    MaxPool { kernel: Vec<usize>, end_pad: bool },
    Relu,
    Dropout { rate: f32 },
    Flatten,
    Dense { out_features: usize },
    Sigmoid,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub frozen: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self { kind, frozen: false }
    }

    pub fn frozen(kind: LayerKind) -> Self {
        Self { kind, frozen: true }
    }
}

/// How a cropped patch becomes network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLayout {
    /// `(1, x, y, z)`: the patch as a single-channel volume.
    Volume,
    /// `(3, frames, x, y)`: consecutive slice triples as RGB frames.
    Frames,
    /// `(3, x, y)` per slice triple; the patient score is the mean over
    /// [`SLICES_PER_PATIENT`] slices.
    Slices,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layout: InputLayout,
    /// Multiplier applied to the 8-bit input values before the first layer.
    /// Built-in configs use 1, feeding raw `[0, 255]` values.
    pub input_scale: f32,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// Same network fed `[0, 1]` inputs instead of raw 8-bit values.
    pub fn with_unit_inputs(mut self) -> Self {
        self.input_scale = 1.0 / 255.0;
        self
    }

    /// Activation shapes, input first, one entry per layer output.
    pub fn propagate(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |msg: String| Error::InvalidConfig(format!("{}: {msg}", self.name));
        let mut shapes = vec![self.input_shape.clone()];
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(bad(format!("invalid input shape {:?}", self.input_shape)));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let s = shapes.last().expect("non-empty");
            let next = match &layer.kind {
                LayerKind::Conv { out_channels } => {
                    if !(3..=4).contains(&s.len()) || *out_channels == 0 {
                        return Err(bad(format!("layer {i}: conv on shape {s:?}")));
                    }
                    let mut n = s.clone();
                    n[0] = *out_channels;
                    n
                }
                LayerKind::MaxPool { kernel, end_pad } => {
                    if s.len() < 2 || kernel.len() != s.len() - 1 || kernel.contains(&0) {
                        return Err(bad(format!("layer {i}: pool {kernel:?} on shape {s:?}")));
                    }
                    let mut n = vec![s[0]];
                    for (&e, &k) in s[1..].iter().zip(kernel) {
                        let o = pooled_extent(e, k, *end_pad);
                        if o == 0 {
                            return Err(bad(format!("layer {i}: pooling {s:?} empties an axis")));
                        }
                        n.push(o);
                    }
                    n
                }
                LayerKind::Relu | LayerKind::Sigmoid => s.clone(),
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("layer {i}: dropout rate {rate}")));
                    }
                    s.clone()
                }
                LayerKind::Flatten => vec![s.iter().product()],
                LayerKind::Dense { out_features } => {
                    if s.len() != 1 || *out_features == 0 {
                        return Err(bad(format!("layer {i}: dense on shape {s:?}")));
                    }
                    vec![*out_features]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Checks the head (`dense(1)` then sigmoid) and shape propagation.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        let n = self.layers.len();
        let head_ok = n >= 2
            && self.layers[n - 2].kind == LayerKind::Dense { out_features: 1 }
            && self.layers[n - 1].kind == LayerKind::Sigmoid;
        if !head_ok {
            return Err(Error::InvalidConfig(format!(
                "{}: must end with dense(1) and sigmoid",
                self.name
            )));
        }
        let expected_rank = match self.layout {
            InputLayout::Volume | InputLayout::Frames => 4,
            InputLayout::Slices => 3,
        };
        if self.input_shape.len() != expected_rank {
            return Err(Error::InvalidConfig(format!(
                "{}: input shape {:?} does not match layout {:?}",
                self.name, self.input_shape, self.layout
            )));
        }
        self.propagate()
    }

    /// Size of the flattened feature vector, if the config has a flatten layer.
    pub fn flatten_size(&self) -> Result<Option<usize>> {
        let shapes = self.propagate()?;
        Ok(self
            .layers
            .iter()
            .position(|l| l.kind == LayerKind::Flatten)
            .map(|i| shapes[i + 1][0]))
    }

    /// Patch extent `(x, y, z)` that the input layout consumes.
    pub fn patch_extent(&self) -> [usize; 3] {
        let s = &self.input_shape;
        match self.layout {
            InputLayout::Volume => [s[1], s[2], s[3]],
            InputLayout::Frames => [s[2], s[3], s[1] * CHANNELS_PER_FRAME],
            InputLayout::Slices => [s[1], s[2], SLICES_PER_PATIENT * CHANNELS_PER_FRAME],
        }
    }

    /// Forward passes per patient at inference time.
    pub fn samples_per_patient(&self) -> usize {
        match self.layout {
            InputLayout::Slices => SLICES_PER_PATIENT,
            _ => 1,
        }
    }

    /// Layer indices of parameterized layers paired with their parameter
    /// name prefix (`conv1`, `dense2`, ...).
    pub fn param_layers(&self) -> Vec<(usize, String)> {
        let (mut convs, mut denses) = (0, 0);
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::Conv { .. } => {
                    convs += 1;
                    out.push((i, format!("conv{convs}")));
                }
                LayerKind::Dense { .. } => {
                    denses += 1;
                    out.push((i, format!("dense{denses}")));
                }
                _ => {}
            }
        }
        out
    }
}

fn conv(c: usize, frozen: bool) -> [LayerSpec; 2] {
    [
        LayerSpec { kind: LayerKind::Conv { out_channels: c }, frozen },
        LayerSpec::new(LayerKind::Relu),
    ]
}

fn pool(kernel: &[usize], end_pad: bool) -> LayerSpec {
    LayerSpec::new(LayerKind::MaxPool {
        kernel: kernel.to_vec(),
        end_pad,
    })
}

fn dropout(rate: f32) -> LayerSpec {
    LayerSpec::new(LayerKind::Dropout { rate })
}

/// Trainable dense head: each hidden layer followed by ReLU and dropout,
/// then `dense(1)` and sigmoid.
fn head(layers: &mut Vec<LayerSpec>, hidden: &[(usize, f32)]) {
    layers.push(LayerSpec::new(LayerKind::Flatten));
    for &(n, rate) in hidden {
        layers.push(LayerSpec::new(LayerKind::Dense { out_features: n }));
        layers.push(LayerSpec::new(LayerKind::Relu));
        layers.push(dropout(rate));
    }
    layers.push(LayerSpec::new(LayerKind::Dense { out_features: 1 }));
    layers.push(LayerSpec::new(LayerKind::Sigmoid));
}

/// Shape parameters of the from-scratch 3D network family.
#[derive(Debug, Clone, PartialEq)]
pub struct ScratchDesign {
    pub name: String,
    /// `(x, y, z)` patch extent.
    pub input: [usize; 3],
    pub convs: Vec<usize>,
    /// Index of the conv layer not followed by pooling, if any.
    pub unpooled: Option<usize>,
    pub dense: Vec<usize>,
    pub dropout: f32,
}

impl ScratchDesign {
    pub fn full() -> Self {
        Self {
            name: "scratch3d".into(),
            input: PATCH_EXTENT,
            convs: vec![16, 32, 32, 64, 128, 128],
            unpooled: Some(4),
            dense: vec![256, 128],
            dropout: 0.25,
        }
    }

    /// Pool after every conv except `unpooled`; the first pool leaves the
    /// longitudinal axis alone. Dropout follows the last conv block and
    /// each hidden dense layer.
    pub fn build(&self) -> ModelConfig {
        let mut layers = Vec::new();
        let last = self.convs.len().saturating_sub(1);
        for (i, &c) in self.convs.iter().enumerate() {
            layers.extend(conv(c, false));
            if self.unpooled != Some(i) {
                layers.push(pool(if i == 0 { &[2, 2, 1] } else { &[2, 2, 2] }, false));
            }
            if i == last {
                layers.push(dropout(self.dropout));
            }
        }
        let hidden: Vec<(usize, f32)> = self.dense.iter().map(|&n| (n, self.dropout)).collect();
        head(&mut layers, &hidden);
        let [x, y, z] = self.input;
        ModelConfig {
            name: self.name.clone(),
            input_shape: vec![1, x, y, z],
            layout: InputLayout::Volume,
            input_scale: 1.0,
            layers,
        }
    }
}

/// 3D network trained from random initialization on `(1,112,112,48)` patches.
pub fn config_scratch3d() -> ModelConfig {
    ScratchDesign::full().build()
}

/// Frozen C3D-style video base over 16 three-channel frames with a trainable
/// dense head.
pub fn config_c3d_transfer() -> ModelConfig {
    let mut layers = Vec::new();
    let groups: [&[usize]; 5] = [&[64], &[128], &[256, 256], &[512, 512], &[512, 512]];
    for (g, convs) in groups.iter().enumerate() {
        for &c in *convs {
            layers.extend(conv(c, true));
        }
        match g {
            0 => layers.push(pool(&[1, 2, 2], false)),
            4 => layers.push(pool(&[2, 2, 2], true)),
            _ => layers.push(pool(&[2, 2, 2], false)),
        }
    }
    head(&mut layers, &[(1024, 0.35), (64, 0.25)]);
    let [x, y, z] = PATCH_EXTENT;
    ModelConfig {
        name: "c3d-transfer".into(),
        input_shape: vec![CHANNELS_PER_FRAME, z / CHANNELS_PER_FRAME, x, y],
        layout: InputLayout::Frames,
        input_scale: 1.0,
        layers,
    }
}

/// Frozen VGG16 base on single three-channel slices with a trainable dense head.
pub fn config_vgg16_2d() -> ModelConfig {
    let mut layers = Vec::new();
    let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256; 3], &[512; 3], &[512; 3]];
    for convs in blocks {
        for &c in convs {
            layers.extend(conv(c, true));
        }
        layers.push(pool(&[2, 2], false));
    }
    head(&mut layers, &[(512, 0.5), (64, 0.25)]);
    let [x, y, _] = PATCH_EXTENT;
    ModelConfig {
        name: "vgg16-2d".into(),
        input_shape: vec![CHANNELS_PER_FRAME, x, y],
        layout: InputLayout::Slices,
        input_scale: 1.0,
        layers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    C3dTransfer,
    Scratch3d,
    Vgg16TwoD,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::C3dTransfer, ModelKind::Scratch3d, ModelKind::Vgg16TwoD];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::C3dTransfer => "c3d-transfer",
            ModelKind::Scratch3d => "scratch3d",
            ModelKind::Vgg16TwoD => "vgg16-2d",
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            ModelKind::C3dTransfer => config_c3d_transfer(),
            ModelKind::Scratch3d => config_scratch3d(),
            ModelKind::Vgg16TwoD => config_vgg16_2d(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_sizes() {
        assert_eq!(config_scratch3d().flatten_size().unwrap(), Some(3456));
        assert_eq!(config_c3d_transfer().flatten_size().unwrap(), Some(8192));
        assert_eq!(config_vgg16_2d().flatten_size().unwrap(), Some(4608));
        for k in ModelKind::ALL {
            k.config().validate().unwrap();
        }
    }

    #[test]
    fn scratch_first_pool_shape() {
        let c = config_scratch3d();
        let shapes = c.propagate().unwrap();
        let first_pool = c
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::MaxPool { .. }))
            .unwrap();
        assert_eq!(shapes[first_pool + 1], vec![16, 56, 56, 48]);
    }

    #[test]
    fn c3d_frame_counts() {
        let c = config_c3d_transfer();
        let shapes = c.propagate().unwrap();
        let frames: Vec<usize> = c
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::MaxPool { .. }))
            .map(|(i, _)| shapes[i + 1][1])
            .collect();
        assert_eq!(shapes[0][1], 16);
        assert_eq!(frames, vec![16, 8, 4, 2, 1]);
        assert_eq!(c.patch_extent(), PATCH_EXTENT);
    }

    #[test]
    fn frozen_layers() {
        let vgg = config_vgg16_2d();
        let frozen_convs = vgg
            .layers
            .iter()
            .filter(|l| l.frozen && matches!(l.kind, LayerKind::Conv { .. }))
            .count();
        assert_eq!(frozen_convs, 13);
        assert!(vgg.layers.iter().all(|l| l.frozen == matches!(l.kind, LayerKind::Conv { .. })));
        assert!(config_scratch3d().layers.iter().all(|l| !l.frozen));
    }

    #[test]
    fn dropout_placement() {
        let rates = |c: ModelConfig| -> Vec<f32> {
            c.layers
                .iter()
                .filter_map(|l| match l.kind {
                    LayerKind::Dropout { rate } => Some(rate),
                    _ => None,
                })
                .collect()
        };
        assert_eq!(rates(config_scratch3d()), vec![0.25; 3]);
        assert_eq!(rates(config_c3d_transfer()), vec![0.35, 0.25]);
        assert_eq!(rates(config_vgg16_2d()), vec![0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = config_scratch3d();
        c.layers.pop();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = config_scratch3d();
        c.input_shape = vec![1, 4, 4, 4];
        assert!(c.validate().is_err());
        let mut c = config_scratch3d();
        c.layers.insert(2, dropout(1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn model_kind_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(k.config().name, k.name());
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }
}
