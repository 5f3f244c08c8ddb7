//! Training protocol: epochs of shuffled, augmented mini-batches, best
//! validation-loss checkpointing, repeated runs, and per-patient inference.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{AugmentationSpec, MAX_SHIFT_VOX};
use crate::cohort::{CohortManifest, PatientRecord, Split};
use crate::error::{Error, IoContext, Result};
use crate::nn::{load_weights, save_weights, InputLayout, Mode, Model, ModelConfig, SLICES_PER_PATIENT};
use crate::optim::{class_weights, wbce, AdamConfig, AdamState, LossWeights};
use crate::rng::{hash64, RngStream, StreamLabel};
use crate::tensor::Tensor;
use crate::volume::{load_volume, preprocess, crop_at, Dtype, Patch, CHANNELS_PER_FRAME};

pub const CHECKPOINT_FILE: &str = "best.nnw1";
pub const HISTORY_FILE: &str = "history.csv";
pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss";
pub const SCORES_HEADER: &str = "patient_id,score,label";

pub fn scores_file(split: Split) -> String {
    format!("scores_{split}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub runs: usize,
    pub root_seed: u64,
    pub threshold: f64,
    /// Runs trained concurrently; results do not depend on it.
    pub parallel_runs: usize,
    /// Pre-trained weights loaded over the fresh initialization.
    pub base_weights: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: 200,
            batch_size: 16,
            adam: AdamConfig::default(),
            runs: 10,
            root_seed: 0,
            threshold: 0.5,
            parallel_runs: 1,
            base_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.runs == 0 || self.parallel_runs == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch size, runs and parallel runs must all be at least 1".into(),
            ));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.adam.lr)));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// One patient held in memory as a crop large enough for every shifted
/// augmentation.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub id: String,
    pub label: bool,
    context: Patch,
}

const MARGIN: usize = MAX_SHIFT_VOX as usize;

impl PatientData {
    fn load(manifest: &CohortManifest, r: &PatientRecord, extent: [usize; 3]) -> Result<Self> {
        let mut v = load_volume(&manifest.volume_path(r))?;
        if v.dtype() == Dtype::I16 {
            v = preprocess(&v)?;
        }
        let ctx = [extent[0] + 2 * MARGIN, extent[1] + 2 * MARGIN, extent[2]];
        Ok(Self {
            id: r.patient_id.clone(),
            label: r.hpv_label == 1,
            context: crop_at(&v, r.gtv_center_mm, (0, 0), ctx)?,
        })
    }

    /// Crop shifted by `spec.shift_vox`, then flipped and rotated. Equal to
    /// `spec.apply` on the full volume.
    pub fn patch(&self, spec: &AugmentationSpec, extent: [usize; 3]) -> Patch {
        let (dx, dy) = spec.shift_vox;
        let x0 = (MARGIN as i64 + dx) as usize;
        let y0 = (MARGIN as i64 + dy) as usize;
        let c = &self.context;
        let mut values = Vec::with_capacity(extent.iter().product());
        for z in 0..extent[2] {
            for y in 0..extent[1] {
                let start = c.index(x0, y0 + y, z);
                values.extend_from_slice(&c.values()[start..start + extent[0]]);
            }
        }
        let p = Patch::new(extent, values, c.source_center_mm()).expect("extent fits the context");
        spec.transform(&p)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub extent: [usize; 3],
    pub splits: BTreeMap<Split, Vec<PatientData>>,
}

impl Dataset {
    /// Loads every patient, preprocessing raw HU volumes on the fly.
    pub fn load(manifest: &CohortManifest, extent: [usize; 3]) -> Result<Self> {
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let recs: Vec<&PatientRecord> = manifest.split(split).collect();
            let data = recs
                .par_iter()
                .map(|r| PatientData::load(manifest, r, extent))
                .collect::<Result<Vec<_>>>()?;
            splits.insert(split, data);
        }
        Ok(Self { extent, splits })
    }

    pub fn split(&self, split: Split) -> &[PatientData] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn class_counts(&self, split: Split) -> Result<(usize, usize)> {
        let s = self.split(split);
        if s.is_empty() {
            return Err(Error::EmptySplit(split));
        }
        let pos = s.iter().filter(|p| p.label).count();
        Ok((pos, s.len() - pos))
    }
}

fn check_extent(config: &ModelConfig, patch: &Patch) -> Result<()> {
    if patch.extent() != config.patch_extent() {
        return Err(Error::ShapeMismatch(format!(
            "patch extent {:?}, model `{}` expects {:?}",
            patch.extent(),
            config.name,
            config.patch_extent()
        )));
    }
    Ok(())
}

/// Slice triple `k` as a `(3, x, y)` tensor.
pub fn slice_input(patch: &Patch, k: usize) -> Result<Tensor> {
    let [ex, ey, ez] = patch.extent();
    if CHANNELS_PER_FRAME * (k + 1) > ez {
        return Err(Error::ShapeMismatch(format!("slice {k} beyond depth {ez}")));
    }
    let mut data = Vec::with_capacity(CHANNELS_PER_FRAME * ex * ey);
    for c in 0..CHANNELS_PER_FRAME {
        for x in 0..ex {
            for y in 0..ey {
                data.push(patch.at(x, y, CHANNELS_PER_FRAME * k + c) as f32);
            }
        }
    }
    Tensor::new(&[CHANNELS_PER_FRAME, ex, ey], data)
}

/// Network inputs for one patch: one tensor for 3D layouts, one per slice
/// triple for the 2D layout.
pub fn patch_inputs(config: &ModelConfig, patch: &Patch) -> Result<Vec<Tensor>> {
    check_extent(config, patch)?;
    let [ex, ey, ez] = patch.extent();
    match config.layout {
        InputLayout::Volume => {
            let mut data = Vec::with_capacity(ex * ey * ez);
            for x in 0..ex {
                for y in 0..ey {
                    data.extend((0..ez).map(|z| patch.at(x, y, z) as f32));
                }
            }
            Ok(vec![Tensor::new(&[1, ex, ey, ez], data)?])
        }
        InputLayout::Frames => {
            let frames = ez / CHANNELS_PER_FRAME;
            let mut data = Vec::with_capacity(ex * ey * ez);
            for c in 0..CHANNELS_PER_FRAME {
                for f in 0..frames {
                    for x in 0..ex {
                        for y in 0..ey {
                            data.push(patch.at(x, y, CHANNELS_PER_FRAME * f + c) as f32);
                        }
                    }
                }
            }
            Ok(vec![Tensor::new(&[CHANNELS_PER_FRAME, frames, ex, ey], data)?])
        }
        InputLayout::Slices => (0..SLICES_PER_PATIENT).map(|k| slice_input(patch, k)).collect(),
    }
}

/// A seeded permutation of `0..n` cut into batches of at most `batch_size`;
/// the short last batch is kept.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::EmptySplit(Split::Train));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size 0".into()));
    }
    Ok(rng
        .permutation(n)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Index of the smallest loss, earliest on ties; NaN never wins.
pub fn best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in val_losses.iter().enumerate() {
        match best {
            None if !l.is_nan() => best = Some(i),
            Some(b) if l < val_losses[b] => best = Some(i),
            _ => {}
        }
    }
    best.or((!val_losses.is_empty()).then_some(0))
}

/// Something that scores a single network input.
pub trait Scorer: Sync {
    fn score(&self, x: &Tensor) -> Result<f32>;
}

impl Scorer for Model {
    fn score(&self, x: &Tensor) -> Result<f32> {
        Ok(self.forward(x, Mode::Eval)?.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Patient-level scores on unaugmented patches, in manifest order. 2D models
/// score each slice triple and average.
pub fn predict(
    scorer: &impl Scorer,
    config: &ModelConfig,
    patients: &[PatientData],
    extent: [usize; 3],
) -> Result<SplitScores> {
    let identity = AugmentationSpec::identity();
    let scores = patients
        .par_iter()
        .map(|p| -> Result<f64> {
            let inputs = patch_inputs(config, &p.patch(&identity, extent))?;
            let mut sum = 0.0f64;
            for x in &inputs {
                sum += scorer.score(x)? as f64;
            }
            Ok(sum / inputs.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitScores {
        ids: patients.iter().map(|p| p.id.clone()).collect(),
        scores,
        labels: patients.iter().map(|p| p.label).collect(),
    })
}

pub fn write_scores(s: &SplitScores, path: &Path) -> Result<()> {
    let mut out = format!("{SCORES_HEADER}\n");
    for ((id, score), label) in s.ids.iter().zip(&s.scores).zip(&s.labels) {
        out.push_str(&format!("{id},{score},{}\n", *label as u8));
    }
    fs::write(path, out).at(path)
}

pub fn read_scores(path: &Path) -> Result<SplitScores> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut s = SplitScores {
        ids: vec![],
        scores: vec![],
        labels: vec![],
    };
    for (i, line) in lines.enumerate() {
        let bad = || Error::Format(format!("{}: line {}: `{line}`", path.display(), i + 2));
        let mut f = line.split(',');
        let (Some(id), Some(score), Some(label), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        s.ids.push(id.to_string());
        s.scores.push(score.parse().map_err(|_| bad())?);
        s.labels.push(match label {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        });
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_index: usize,
    pub run_seed: u64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub scores: BTreeMap<Split, SplitScores>,
}

/// A training sample: a patient, and for 2D models one slice triple.
#[derive(Debug, Clone, Copy)]
struct Sample {
    patient: usize,
    slice: Option<usize>,
}

fn samples(config: &ModelConfig, n_patients: usize) -> Vec<Sample> {
    match config.layout {
        InputLayout::Slices => (0..n_patients)
            .flat_map(|patient| (0..SLICES_PER_PATIENT).map(move |k| Sample { patient, slice: Some(k) }))
            .collect(),
        _ => (0..n_patients).map(|patient| Sample { patient, slice: None }).collect(),
    }
}

fn sample_input(
    config: &ModelConfig,
    p: &PatientData,
    s: Sample,
    spec: &AugmentationSpec,
    extent: [usize; 3],
) -> Result<Tensor> {
    let patch = p.patch(spec, extent);
    match s.slice {
        Some(k) => {
            check_extent(config, &patch)?;
            slice_input(&patch, k)
        }
        None => Ok(patch_inputs(config, &patch)?.remove(0)),
    }
}

/// One optimizer step on a batch: per-sample forward and backward, with
/// gradients summed in sample order so the result does not depend on the
/// thread count. Returns the summed weighted loss.
fn train_batch(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    inputs: Vec<(Tensor, bool, u64)>,
    weights: LossWeights,
) -> Result<f64> {
    let b = inputs.len() as f64;
    let chunk = rayon::current_num_threads().max(1);
    let mut total = crate::nn::Gradients::zeros(model);
    let mut loss_sum = 0.0;
    for part in inputs.chunks(chunk) {
        let m: &Model = model;
        let results = part
            .par_iter()
            .map(|(x, label, seed)| {
                let mut rng = RngStream::new(*seed, StreamLabel::Dropout);
                let f = m.forward(x, Mode::Train(&mut rng))?;
                let out = wbce(&[f.score as f64], &[*label], weights)?;
                let g = m.backward(&f.cache.expect("train mode caches"), (out.grads[0] / b) as f32)?;
                Ok((out.loss, g))
            })
            .collect::<Result<Vec<_>>>()?;
        for (loss, g) in results {
            loss_sum += loss;
            total.add_assign(&g)?;
        }
    }
    adam.step(model, &total)?;
    Ok(loss_sum)
}

/// Class-weighted loss in eval mode without augmentation; slice-level for 2D
/// models.
fn validation_loss(model: &Model, data: &Dataset, weights: LossWeights) -> Result<f64> {
    let cfg = model.config();
    let val = data.split(Split::Val);
    let identity = AugmentationSpec::identity();
    let per_patient = val
        .par_iter()
        .map(|p| -> Result<Vec<f64>> {
            patch_inputs(cfg, &p.patch(&identity, data.extent))?
                .iter()
                .map(|x| Ok(model.forward(x, Mode::Eval)?.score as f64))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, s) in val.iter().zip(per_patient) {
        labels.extend(std::iter::repeat_n(p.label, s.len()));
        scores.extend(s);
    }
    Ok(wbce(&scores, &labels, weights)?.loss)
}

fn write_history(train: &[f64], val: &[f64], path: &Path) -> Result<()> {
    let mut out = format!("{HISTORY_HEADER}\n");
    for (i, (t, v)) in train.iter().zip(val).enumerate() {
        out.push_str(&format!("{i},{t},{v}\n"));
    }
    fs::write(path, out).at(path)
}

pub fn read_history(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    lines
        .map(|line| {
            let bad = || Error::Format(format!("{}: bad row `{line}`", path.display()));
            let f: Vec<&str> = line.split(',').collect();
            let [e, t, v] = f[..] else { return Err(bad()) };
            Ok((
                e.parse().map_err(|_| bad())?,
                t.parse().map_err(|_| bad())?,
                v.parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Trains one run into `run_dir`, writing the best checkpoint, the loss
/// history and per-split scores of the best-epoch weights.
pub fn train_run(cfg: &TrainConfig, data: &Dataset, run_index: usize, run_dir: &Path) -> Result<RunResult> {
    cfg.validate()?;
    if data.extent != cfg.model.patch_extent() {
        return Err(Error::ShapeMismatch(format!(
            "dataset patches {:?}, model expects {:?}",
            data.extent,
            cfg.model.patch_extent()
        )));
    }
    let run_seed = hash64(cfg.root_seed, run_index as u64);
    let mut init_rng = RngStream::new(run_seed, StreamLabel::Init);
    let mut dropout_rng = RngStream::new(run_seed, StreamLabel::Dropout);
    let mut aug_rng = RngStream::new(run_seed, StreamLabel::Augment);
    let mut shuffle_rng = RngStream::new(run_seed, StreamLabel::Shuffle);

    let mut model = match &cfg.base_weights {
        Some(path) => load_weights(path, cfg.model.clone(), &mut init_rng)?,
        None => Model::init(cfg.model.clone(), &mut init_rng)?,
    };
    let mut adam = AdamState::new(&model, cfg.adam);
    let (n_pos, n_neg) = data.class_counts(Split::Train)?;
    data.class_counts(Split::Val)?;
    let weights = class_weights(n_pos, n_neg)?;

    fs::create_dir_all(run_dir).at(run_dir)?;
    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    let train = data.split(Split::Train);
    let all = samples(&cfg.model, train.len());
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in make_batches(all.len(), cfg.batch_size, &mut shuffle_rng)? {
            // All randomness is drawn here, in sample order, before any
            // parallel work.
            let draws: Vec<(AugmentationSpec, u64)> = batch
                .iter()
                .map(|_| (AugmentationSpec::sample(&mut aug_rng), dropout_rng.next_u64()))
                .collect();
            let inputs = batch
                .par_iter()
                .zip(&draws)
                .map(|(&i, (spec, seed))| {
                    let s = all[i];
                    let p = &train[s.patient];
                    Ok((sample_input(&cfg.model, p, s, spec, data.extent)?, p.label, *seed))
                })
                .collect::<Result<Vec<_>>>()?;
            loss_sum += train_batch(&mut model, &mut adam, inputs, weights)?;
        }
        let tl = loss_sum / all.len() as f64;
        let vl = validation_loss(&model, data, weights)?;
        log::info!(
            "{} run {run_index} epoch {epoch}: train loss {tl:.5}, val loss {vl:.5}",
            cfg.model.name
        );
        train_loss.push(tl);
        val_loss.push(vl);
        let improved = match &best {
            None => true,
            Some((b, _)) => vl < val_loss[*b] || (val_loss[*b].is_nan() && !vl.is_nan()),
        };
        if improved {
            save_weights(&model, &checkpoint)?;
            best = Some((epoch, model.clone()));
        }
    }
    let (best_epoch, best_model) = best.expect("at least one epoch");
    write_history(&train_loss, &val_loss, &run_dir.join(HISTORY_FILE))?;
    let mut scores = BTreeMap::new();
    for split in Split::ALL {
        let s = predict(&best_model, &cfg.model, data.split(split), data.extent)?;
        write_scores(&s, &run_dir.join(scores_file(split)))?;
        scores.insert(split, s);
    }
    Ok(RunResult {
        run_index,
        run_seed,
        train_loss,
        val_loss,
        best_epoch,
        checkpoint,
        scores,
    })
}

/// `cfg.runs` independent runs into `model_dir/<run_index>`, ordered by run
/// index. With `parallel_runs > 1` runs execute concurrently in a dedicated
/// pool; outputs are identical either way.
pub fn train_repeated(cfg: &TrainConfig, data: &Dataset, model_dir: &Path) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let run = |i: usize| train_run(cfg, data, i, &model_dir.join(i.to_string()));
    if cfg.parallel_runs <= 1 {
        return (0..cfg.runs).map(run).collect();
    }
    let threads = rayon::current_num_threads().max(cfg.parallel_runs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .with_max_len(1)
            .map(run)
            .collect::<Result<Vec<_>>>()
    })
}
