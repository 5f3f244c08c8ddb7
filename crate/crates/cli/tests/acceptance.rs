//! Acceptance suite: one pass/fail line per criterion. Runs with
//! `cargo test -p volnet-cli --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use volnet_core::augment::AugmentationSpec;
use volnet_core::cohort::{synth_generate, Split, SynthSpec};
use volnet_core::metrics::{aggregate_runs, auc, parse_roc_csv, render_text, roc_curve, Metric, RunMetrics};
use volnet_core::nn::gradcheck::{check_layers, check_model, tiny_config};
use volnet_core::nn::layers::conv_forward;
use volnet_core::nn::{
    config_c3d_transfer, config_scratch3d, config_vgg16_2d, InputLayout, Mode, Model, ModelConfig, ScratchDesign,
};
use volnet_core::optim::{class_weights, wbce, AdamConfig, AdamState, LossWeights};
use volnet_core::train::{
    read_history, read_scores, scores_file, train_repeated, write_scores, Dataset, SplitScores, TrainConfig,
    HISTORY_FILE,
};
use volnet_core::volume::{
    frames_to_patch, rearrange_frames, resample_isotropic, window_value, CtVolume, Patch, Voxels,
};
use volnet_core::{RngStream, StreamLabel, Tensor, TensorOf};

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: usize = 20;
const CONV_TOL: f64 = 1e-6;
const CONV_SHAPES: usize = 100;
const AUC_TOL: f64 = 1e-12;
const AUC_INSTANCES: usize = 1000;
const FREEZE_STEPS: usize = 50;
const LEARN_MIN_AUC: f64 = 0.95;
const LEARN_MAX_EPOCHS: usize = 30;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_volnet")
}

fn volnet(args: &[&str], threads: Option<usize>) -> Result<String, String> {
    let mut cmd = Command::new(bin());
    cmd.args(args).env("RUST_LOG", "warn");
    match threads {
        Some(n) => cmd.env("VOLNET_THREADS", n.to_string()),
        None => cmd.env_remove("VOLNET_THREADS"),
    };
    let out = cmd.output().map_err(|e| format!("spawn volnet: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "volnet {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c1_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut reports = check_layers(GRAD_INSTANCES, 11);
    reports.push(check_model(&tiny_config(false), GRAD_INSTANCES, 12).map_err(|e| e.to_string())?);
    reports.push(check_model(&tiny_config(true), GRAD_INSTANCES, 13).map_err(|e| e.to_string())?);
    for r in &reports {
        ensure!(r.passes(GRAD_TOL), "{}: max rel error {:.3e} over {} coordinates", r.name, r.max_rel_error, r.checked);
        worst = worst.max(r.max_rel_error);
    }
    let out = volnet(&["gradcheck"], None)?;
    ensure!(out.lines().count() == 10 && !out.contains("FAIL"), "cli gradcheck output:\n{out}");
    Ok(format!("{} checks, worst rel error {worst:.2e}", reports.len()))
}

/// Direct seven-loop convolution with zero padding, in f64.
fn naive_conv(x: &[f64], shape: &[usize], k: &[f64], bias: &[f64], cout: usize) -> Vec<f64> {
    let cin = shape[0];
    let dims: Vec<usize> = shape[1..].to_vec();
    let (d, h, w) = if dims.len() == 3 { (dims[0], dims[1], dims[2]) } else { (1, dims[0], dims[1]) };
    let kd = if dims.len() == 3 { 3 } else { 1 };
    let mut y = vec![0.0; cout * d * h * w];
    for o in 0..cout {
        for i in 0..d {
            for j in 0..h {
                for l in 0..w {
                    let mut s = bias[o];
                    for c in 0..cin {
                        for a in 0..kd {
                            for b in 0..3 {
                                for e in 0..3 {
                                    let si = i as isize + a as isize - (kd as isize / 2);
                                    let sj = j as isize + b as isize - 1;
                                    let sl = l as isize + e as isize - 1;
                                    if si < 0 || sj < 0 || sl < 0 || si >= d as isize || sj >= h as isize || sl >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((c * d + si as usize) * h + sj as usize) * w + sl as usize];
                                    let kv = k[(((o * cin + c) * kd + a) * 3 + b) * 3 + e];
                                    s += xv * kv;
                                }
                            }
                        }
                    }
                    y[((o * d + i) * h + j) * w + l] = s;
                }
            }
        }
    }
    y
}

fn c2_conv_oracle() -> Outcome {
    let mut rng = RngStream::new(21, StreamLabel::Synth);
    let mut worst: f64 = 0.0;
    for n in 0..CONV_SHAPES {
        let two_d = n % 4 == 3;
        let cin = rng.int_range(1, 2).unwrap() as usize;
        let cout = rng.int_range(1, 3).unwrap() as usize;
        let spatial: Vec<usize> = (0..if two_d { 2 } else { 3 }).map(|_| rng.int_range(1, 8).unwrap() as usize).collect();
        let mut shape = vec![cin];
        shape.extend(&spatial);
        let mut kshape = vec![cout, cin];
        kshape.extend(std::iter::repeat_n(3, spatial.len()));
        let fill = |len: usize, rng: &mut RngStream| -> Vec<f64> { (0..len).map(|_| rng.normal01()).collect() };
        let x = fill(shape.iter().product(), &mut rng);
        let k = fill(kshape.iter().product(), &mut rng);
        let b = fill(cout, &mut rng);
        let got = conv_forward(
            &TensorOf::<f64>::new(&shape, x.clone()).unwrap(),
            &TensorOf::<f64>::new(&kshape, k.clone()).unwrap(),
            &TensorOf::<f64>::new(&[cout], b.clone()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        let want = naive_conv(&x, &shape, &k, &b, cout);
        let mut out_shape = vec![cout];
        out_shape.extend(&spatial);
        ensure!(got.shape() == out_shape.as_slice(), "shape {:?} vs {:?}", got.shape(), out_shape);
        for (g, w) in got.data().iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
        // The f32 path must agree as well.
        let got32 = conv_forward(
            &Tensor::new(&shape, x.iter().map(|&v| v as f32).collect()).unwrap(),
            &Tensor::new(&kshape, k.iter().map(|&v| v as f32).collect()).unwrap(),
            &Tensor::new(&[cout], b.iter().map(|&v| v as f32).collect()).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        for (g, w) in got32.data().iter().zip(&want) {
            ensure!((*g as f64 - w).abs() < 1e-4 * (1.0 + w.abs()), "f32 conv drifted: {g} vs {w}");
        }
    }
    ensure!(worst <= CONV_TOL, "max abs error {worst:.3e}");
    Ok(format!("{CONV_SHAPES} shapes, max abs error {worst:.2e}"))
}

fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn c3_auc_oracle() -> Outcome {
    let hand = |s: &[f64], l: &[bool], want: f64| -> Result<(), String> {
        let got = auc(s, l).map_err(|e| e.to_string())?;
        ensure!(got == want, "hand case {s:?}: {got} vs {want}");
        Ok(())
    };
    hand(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false], 1.0)?;
    hand(&[0.5; 6], &[true, false, true, false, true, false], 0.5)?;
    hand(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false], 0.75)?;

    let mut rng = RngStream::new(31, StreamLabel::Synth);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < AUC_INSTANCES {
        let n = rng.int_range(2, 50).unwrap() as usize;
        let levels = rng.int_range(2, 12).unwrap();
        let labels: Vec<bool> = (0..n).map(|_| rng.uniform01() < 0.5).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|_| rng.int_range(0, levels).unwrap() as f64 / levels as f64).collect();
        let oracle = mann_whitney(&scores, &labels);
        let area = roc_curve(&scores, &labels).map_err(|e| e.to_string())?.trapezoid_area();
        let direct = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((area - oracle).abs()).max((direct - oracle).abs());
        done += 1;
    }
    ensure!(worst <= AUC_TOL, "max disagreement {worst:.3e}");
    Ok(format!("{AUC_INSTANCES} tied instances, max disagreement {worst:.1e}"))
}

fn c4_shapes() -> Outcome {
    for (cfg, want) in [(config_scratch3d(), 3456), (config_c3d_transfer(), 8192), (config_vgg16_2d(), 4608)] {
        let got = cfg.flatten_size().map_err(|e| e.to_string())?;
        ensure!(got == Some(want), "{}: flatten {got:?}, expected {want}", cfg.name);
    }
    let first_pool = |cfg: &ModelConfig| -> Result<Vec<usize>, String> {
        let shapes = cfg.propagate().map_err(|e| e.to_string())?;
        let i = cfg
            .layers
            .iter()
            .position(|l| matches!(l.kind, volnet_core::nn::LayerKind::MaxPool { .. }))
            .ok_or("no pool")?;
        Ok(shapes[i + 1].clone())
    };
    let s = first_pool(&config_scratch3d())?;
    ensure!(s == [16, 56, 56, 48], "scratch3d first pool {s:?}");
    // C3D frames are (channels, frames, x, y): transverse halves, slices kept.
    let c = first_pool(&config_c3d_transfer())?;
    ensure!(c == [64, 16, 56, 56], "c3d first pool {c:?}");
    Ok("flatten 3456/8192/4608, first pools 112x112 -> 56x56 with depth kept".into())
}

fn freeze_session(config: ModelConfig, seed: u64) -> Result<String, String> {
    let err = |e: volnet_core::Error| e.to_string();
    let mut init = RngStream::new(seed, StreamLabel::Init);
    let mut model = Model::init(config.clone(), &mut init).map_err(err)?;
    let before: Vec<(String, bool, Vec<f32>)> =
        model.params().iter().map(|p| (p.name().to_string(), p.frozen(), p.tensor.data().to_vec())).collect();
    let mut adam = AdamState::new(&model, AdamConfig::default());
    let mut data = RngStream::new(seed, StreamLabel::Augment);
    let mut dropout = RngStream::new(seed, StreamLabel::Dropout);
    let weights = class_weights(1, 1).map_err(err)?;
    for step in 0..FREEZE_STEPS {
        let n: usize = config.input_shape.iter().product();
        let x = Tensor::new(&config.input_shape, (0..n).map(|_| data.int_range(0, 255).unwrap() as f32).collect())
            .map_err(err)?;
        let label = step % 2 == 0;
        let f = model.forward(&x, Mode::Train(&mut dropout)).map_err(err)?;
        let loss = wbce(&[f.score as f64], &[label], weights).map_err(err)?;
        let g = model.backward(&f.cache.expect("train mode caches"), loss.grads[0] as f32).map_err(err)?;
        adam.step(&mut model, &g).map_err(err)?;
    }
    let (mut frozen, mut head) = (0, 0);
    for ((name, was_frozen, old), p) in before.iter().zip(model.params()) {
        let same = old.iter().zip(p.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if *was_frozen {
            ensure!(same, "{}: frozen {name} changed", config.name);
            frozen += 1;
        } else {
            ensure!(!same, "{}: head {name} unchanged", config.name);
            head += 1;
        }
    }
    Ok(format!("{} {frozen} frozen / {head} head", config.name))
}

fn c5_freeze() -> Outcome {
    let c3d = freeze_session(config_c3d_transfer(), 51)?;
    let vgg = freeze_session(config_vgg16_2d(), 52)?;
    Ok(format!("{FREEZE_STEPS} steps: {c3d}; {vgg}"))
}

fn c6_class_weights() -> Outcome {
    let (n_pos, n_neg) = (513usize, 162usize);
    let w = class_weights(n_pos, n_neg).map_err(|e| e.to_string())?;
    ensure!(n_pos as f64 * w.w_pos == n_neg as f64 * w.w_neg, "mass {} vs {}", n_pos as f64 * w.w_pos, n_neg as f64 * w.w_neg);
    let labels: Vec<bool> = (0..n_pos + n_neg).map(|i| i < n_pos).collect();
    let out = wbce(&vec![0.5; labels.len()], &labels, w).map_err(|e| e.to_string())?;
    let rel = (out.pos_mass - out.neg_mass).abs() / out.pos_mass;
    ensure!(rel < 1e-12, "per-class loss {} vs {}", out.pos_mass, out.neg_mass);
    ensure!(LossWeights::uniform().weight(true) == 1.0, "uniform weights");
    Ok(format!("w_pos {:.6}, w_neg {:.6}, per-class loss {:.4}", w.w_pos, w.w_neg, out.pos_mass))
}

fn random_patch(extent: [usize; 3], rng: &mut RngStream) -> Patch {
    let n = extent.iter().product();
    Patch::new(extent, (0..n).map(|_| rng.int_range(0, 255).unwrap() as u8).collect(), [0.0; 3]).unwrap()
}

fn c7_preprocessing() -> Outcome {
    ensure!(window_value(-250) == 0, "-250 -> {}", window_value(-250));
    ensure!(window_value(250) == 255, "250 -> {}", window_value(250));
    ensure!(window_value(0) == 128, "0 -> {}", window_value(0));
    ensure!(window_value(-1000) == 0 && window_value(3000) == 255, "clamping");

    let mut rng = RngStream::new(71, StreamLabel::Synth);
    let dims = [9, 7, 5];
    let hu: Vec<i16> = (0..dims.iter().product()).map(|_| rng.int_range(-1000, 1000).unwrap() as i16).collect();
    let v = CtVolume::new(dims, [1.0; 3], [3.0, -2.0, 10.0], Voxels::I16(hu)).map_err(|e| e.to_string())?;
    let r = resample_isotropic(&v, 1.0).map_err(|e| e.to_string())?;
    ensure!(r == v, "1 mm resampling is not the identity");

    for i in 0..50 {
        let side = rng.int_range(1, 9).unwrap() as usize;
        let frames = rng.int_range(1, 4).unwrap() as usize;
        let p = random_patch([side, side, 3 * frames], &mut rng);
        let t = rearrange_frames(&p).map_err(|e| e.to_string())?;
        let back = frames_to_patch(&t, p.source_center_mm()).map_err(|e| e.to_string())?;
        ensure!(back == p, "frame round trip broke on patch {i}");
        ensure!(p.flip_sagittal().flip_sagittal() == p, "sagittal flip is not an involution");
        ensure!(p.flip_coronal().flip_coronal() == p, "coronal flip is not an involution");
        ensure!(p.rotate_quarter(4) == p, "four quarter turns are not the identity");
        let once = (0..4).fold(p.clone(), |q, _| q.rotate_quarter(1));
        ensure!(once == p, "rotation order is not 4");
        let spec = AugmentationSpec::sample(&mut rng);
        ensure!(spec.transform(&p).values().len() == p.values().len(), "augmentation changed the voxel count");
    }
    Ok("window 0/128/255, 1 mm identity, frame round trip, flip and rotation laws".into())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c8_determinism(work: &Path) -> Outcome {
    let cohort = work.join("cohort");
    let cohort_s = cohort.to_str().unwrap();
    volnet(&["synth", "--out", cohort_s, "--n-pos", "5", "--n-neg", "5", "--seed", "3"], None)?;
    let manifest = cohort.join("manifest.csv");
    let variants: [(&str, &str, Option<usize>); 3] = [("a", "1", Some(1)), ("b", "2", Some(3)), ("c", "1", None)];
    let mut trees = Vec::new();
    for (name, parallel, threads) in variants {
        let out = work.join(name);
        volnet(
            &[
                "train",
                "--model",
                "scratch3d",
                "--manifest",
                manifest.to_str().unwrap(),
                "--runs",
                "2",
                "--seed",
                "7",
                "--epochs",
                "2",
                "--batch-size",
                "4",
                "--parallel-runs",
                parallel,
                "--out",
                out.to_str().unwrap(),
            ],
            threads,
        )?;
        trees.push(tree(&out));
    }
    ensure!(trees[0].len() == 10, "expected 2 runs x 5 files, got {:?}", trees[0].keys().collect::<Vec<_>>());
    for (i, t) in trees.iter().enumerate().skip(1) {
        ensure!(*t == trees[0], "variant {} differs from serial single-threaded output", variants[i].0);
    }
    let run0 = &trees[0][Path::new("scratch3d/0/best.nnw1")];
    let run1 = &trees[0][Path::new("scratch3d/1/best.nnw1")];
    ensure!(run0 != run1, "both runs produced the same weights");
    Ok(format!("{} files identical across serial, --parallel-runs 2 and VOLNET_THREADS 1/3/unset", trees[0].len()))
}

/// Reduced from-scratch network small enough to train in minutes.
fn reduced_scratch() -> ModelConfig {
    ScratchDesign {
        name: "scratch3d-reduced".into(),
        input: [64, 64, 24],
        convs: vec![8, 16, 16, 32],
        unpooled: None,
        dense: vec![32, 16],
        dropout: 0.1,
    }
    .build()
    .with_unit_inputs()
}

fn c9_learnability(work: &Path) -> Outcome {
    let err = |e: volnet_core::Error| e.to_string();
    let cohort = work.join("learn");
    let m = synth_generate(&SynthSpec::default(), 2024, &cohort).map_err(err)?;
    let sizes: Vec<usize> = Split::ALL.iter().map(|&s| m.split(s).count()).collect();
    ensure!(sizes == [60, 20, 20], "split sizes {sizes:?}");
    let model = reduced_scratch();
    ensure!(model.layout == InputLayout::Volume, "reduced design must stay volumetric");
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 4,
        adam: AdamConfig { lr: 5e-4, ..AdamConfig::default() },
        runs: 1,
        root_seed: 9,
        ..TrainConfig::new(model)
    };
    ensure!(cfg.epochs <= LEARN_MAX_EPOCHS, "too many epochs");
    let data = Dataset::load(&m, cfg.model.patch_extent()).map_err(err)?;
    let runs = work.join("learn-runs");
    let result = train_repeated(&cfg, &data, &runs).map_err(err)?.remove(0);
    let run_dir = runs.join("0");
    let test = read_scores(&run_dir.join(scores_file(Split::Test))).map_err(err)?;
    let test_auc = auc(&test.scores, &test.labels).map_err(err)?;
    let history = read_history(&run_dir.join(HISTORY_FILE)).map_err(err)?;
    let argmin = history
        .iter()
        .fold(None::<(usize, f64)>, |best, &(e, _, v)| match best {
            Some((_, bv)) if bv <= v => best,
            _ => Some((e, v)),
        })
        .map(|(e, _)| e)
        .ok_or("empty history")?;
    ensure!(result.best_epoch == argmin, "best epoch {} but history argmin {argmin}", result.best_epoch);
    ensure!(test_auc >= LEARN_MIN_AUC, "test AUC {test_auc:.3} below {LEARN_MIN_AUC}");
    Ok(format!("test AUC {test_auc:.3} after {} epochs, best epoch {argmin}", history.len()))
}

fn c10_reporting(work: &Path) -> Outcome {
    let err = |e: volnet_core::Error| e.to_string();
    let runs: Vec<RunMetrics> = [0.79, 0.81, 0.83]
        .iter()
        .map(|&a| RunMetrics { auc: Some(a), ..RunMetrics::default() })
        .collect();
    let agg = aggregate_runs(&runs).map_err(err)?;
    let cell = agg.get(Metric::Auc).ok_or("no AUC")?.cell();
    ensure!(cell == "0.81 (0.02)", "cell `{cell}`");

    // Two models with three runs each, written as scores files and reported
    // through the CLI.
    let runs_dir = work.join("report-runs");
    let mut rng = RngStream::new(101, StreamLabel::Synth);
    for model in ["vgg16-2d", "c3d-transfer"] {
        for run in 0..3 {
            let dir = runs_dir.join(model).join(run.to_string());
            fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let labels: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
            let scores: Vec<f64> =
                labels.iter().map(|&l| (rng.uniform01() * 0.7 + if l { 0.3 } else { 0.0 }).min(1.0)).collect();
            let ids = (0..30).map(|i| format!("p{i:02}")).collect();
            write_scores(&SplitScores { ids, scores, labels }, &dir.join(scores_file(Split::Test))).map_err(err)?;
        }
    }
    let out = work.join("report");
    let text = volnet(&["report", "--runs-dir", runs_dir.to_str().unwrap(), "--out", out.to_str().unwrap()], None)?;
    let header = text.lines().next().ok_or("empty report")?;
    ensure!(
        header.find("c3d-transfer") < header.find("vgg16-2d"),
        "model columns out of order: `{header}`"
    );
    let labels: Vec<&str> = text.lines().skip(1).take(6).map(|l| l.split("  ").next().unwrap().trim()).collect();
    let want: Vec<&str> = Metric::ALL.iter().map(|m| m.label()).collect();
    ensure!(labels == want, "row order {labels:?}");
    ensure!(text == fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?, "report.txt differs from stdout");
    ensure!(text.contains("AUC median"), "median row missing");

    for model in ["vgg16-2d", "c3d-transfer"] {
        let csv = fs::read_to_string(out.join(format!("roc_{model}.csv"))).map_err(|e| e.to_string())?;
        let env = parse_roc_csv(&csv).map_err(err)?;
        for i in 0..env.fpr.len() {
            ensure!(env.min[i] <= env.mean[i] && env.mean[i] <= env.max[i], "{model}: envelope broken at {i}");
        }
        let svg = fs::read_to_string(out.join(format!("roc_{model}.svg"))).map_err(|e| e.to_string())?;
        ensure!(svg.contains("<polygon") && svg.contains("<polyline"), "{model}: svg lacks band or mean curve");
    }

    let report_csv = fs::read_to_string(out.join("report.csv")).map_err(|e| e.to_string())?;
    let mut rows = 0;
    for line in report_csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2].is_empty() {
            continue;
        }
        let v: Vec<f64> = f[4..9].iter().map(|s| s.parse().unwrap()).collect();
        let (min, max, median, q25, q75) = (v[0], v[1], v[2], v[3], v[4]);
        ensure!(min <= q25 && q25 <= median && median <= q75 && q75 <= max, "quantiles out of order: {line}");
        rows += 1;
    }
    let render = render_text(&[("m".into(), agg)]);
    ensure!(render.lines().nth(1).is_some_and(|l| l.ends_with("0.81 (0.02)")), "rendered AUC row");
    Ok(format!("cell 0.81 (0.02), table row order, {rows} ordered quantile rows, ROC CSV+SVG envelopes"))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient audit", Box::new(c1_gradients)),
        ("convolution oracle", Box::new(c2_conv_oracle)),
        ("AUC dual oracle", Box::new(c3_auc_oracle)),
        ("architecture shapes", Box::new(c4_shapes)),
        ("freeze contract", Box::new(c5_freeze)),
        ("class-weight contract", Box::new(c6_class_weights)),
        ("preprocessing exactness", Box::new(c7_preprocessing)),
        ("determinism", Box::new(move || c8_determinism(w))),
        ("end-to-end learnability", Box::new(move || c9_learnability(w))),
        ("reporting fidelity", Box::new(move || c10_reporting(w))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
