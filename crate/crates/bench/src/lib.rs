//! Fixtures shared by the criterion benchmarks in `benches/`.

use volnet_core::volume::{CtVolume, Voxels};
use volnet_core::{RngStream, StreamLabel, Tensor};

/// Standard-normal tensor drawn from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal01() as f32).collect()).expect("shape matches data")
}

/// HU volume with values spread over and beyond the window.
pub fn random_hu_volume(dims: [usize; 3], spacing_mm: [f64; 3], seed: u64) -> CtVolume {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let n = dims.iter().product();
    let hu = (0..n).map(|_| rng.int_range(-1000, 1000).unwrap() as i16).collect();
    CtVolume::new(dims, spacing_mm, [0.0; 3], Voxels::I16(hu)).expect("valid volume")
}

/// Scores with ties and roughly balanced labels.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let labels: Vec<bool> = (0..n).map(|_| rng.uniform01() < 0.5).collect();
    let scores = labels
        .iter()
        .map(|&l| ((rng.uniform01() + if l { 0.3 } else { 0.0 }) * 100.0).round() / 100.0)
        .collect();
    (scores, labels)
}
