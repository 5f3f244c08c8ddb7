use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use volnet_core::cohort::{cohort_summary, load_manifest, save_manifest, synth_generate, Split, SynthSpec};
use volnet_core::metrics::{
    aggregate_runs, emit_roc, render_csv, render_text, roc_curve, roc_envelope, Metric, RunAggregate,
    RunMetrics, DEFAULT_THRESHOLD, ENVELOPE_POINTS,
};
use volnet_core::nn::gradcheck::{check_layers, check_model, tiny_config, GradReport};
use volnet_core::nn::ModelKind;
use volnet_core::optim::AdamConfig;
use volnet_core::train::{read_scores, scores_file, train_repeated, Dataset, TrainConfig};
use volnet_core::volume::{load_volume, preprocess, save_volume};

/// Tolerance on the relative error reported by `gradcheck`.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "volnet", version, about = "HPV status classification from CT volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with a planted intensity signal.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n_pos: usize,
        #[arg(long, default_value_t = 50)]
        n_neg: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Volume size in voxels, x,y,z.
        #[arg(long, value_parser = triple::<usize>, default_value = "128,128,32")]
        dims: [usize; 3],
        /// Voxel spacing in mm, x,y,z.
        #[arg(long, value_parser = triple::<f64>, default_value = "1,1,2")]
        spacing: [f64; 3],
    },
    /// Resample to 1 mm and window every volume of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train repeated runs of one model into OUT/<model>/<run>.
    Train {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pre-trained base weights for the transfer models.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Runs trained concurrently; outputs do not depend on it.
        #[arg(long, default_value_t = 1)]
        parallel_runs: usize,
        /// Scale inputs to [0, 1] instead of raw 8-bit values.
        #[arg(long)]
        unit_inputs: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold metrics of one run, or of every run below a model directory.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Aggregate report and ROC envelopes for every model under RUNS_DIR.
    Report {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Finite-difference audit of every layer kind and a tiny model.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = TinyConfig::Tiny)]
        config: TinyConfig,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TinyConfig {
    Tiny,
    Tiny2d,
}

fn triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad component `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("VOLNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("VOLNET_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Synth { out, n_pos, n_neg, seed, dims, spacing } => {
            let spec = SynthSpec {
                n_pos,
                n_neg,
                dims,
                spacing_mm: spacing,
            };
            let m = synth_generate(&spec, seed, &out)?;
            print!("{}", cohort_summary(&m).render());
        }
        Command::Preprocess { manifest, out } => preprocess_cohort(&manifest, &out)?,
        Command::Train {
            model,
            manifest,
            runs,
            epochs,
            seed,
            weights,
            batch_size,
            lr,
            threshold,
            parallel_runs,
            unit_inputs,
            out,
        } => {
            let mut config = model.config();
            if unit_inputs {
                config = config.with_unit_inputs();
            }
            let transfer = config.layers.iter().any(|l| l.frozen);
            if transfer && weights.is_none() {
                warn!("{model}: no --weights given, training on a randomly initialized frozen base");
            }
            let cfg = TrainConfig {
                epochs,
                batch_size,
                adam: AdamConfig { lr, ..AdamConfig::default() },
                runs,
                root_seed: seed,
                threshold,
                parallel_runs,
                base_weights: weights,
                ..TrainConfig::new(config)
            };
            cfg.validate()?;
            let m = load_manifest(&manifest)?;
            let data = Dataset::load(&m, cfg.model.patch_extent())?;
            let model_dir = out.join(model.name());
            let results = train_repeated(&cfg, &data, &model_dir)?;
            for r in &results {
                let s = &r.scores[&Split::Test];
                let metrics = RunMetrics::evaluate(&s.scores, &s.labels, threshold)?;
                println!(
                    "run {}: best epoch {}, test AUC {}",
                    r.run_index,
                    r.best_epoch,
                    fmt_opt(metrics.auc)
                );
            }
        }
        Command::Evaluate { run_dir, split, threshold } => {
            for dir in run_dirs(&run_dir, split)? {
                let m = evaluate_run(&dir, split, threshold)?;
                let path = dir.join(format!("metrics_{split}.csv"));
                fs::write(&path, metrics_csv(&m)).with_context(|| format!("writing {}", path.display()))?;
                println!("{}", dir.display());
                for metric in Metric::ALL {
                    println!("  {:<12} {}", metric.label(), fmt_opt(m.get(metric)));
                }
            }
        }
        Command::Report { runs_dir, out, split, threshold } => report(&runs_dir, &out, split, threshold)?,
        Command::Gradcheck { config, instances, seed } => {
            let mut reports = check_layers(instances, seed);
            let cfg = tiny_config(matches!(config, TinyConfig::Tiny2d));
            reports.push(check_model(&cfg, instances, seed)?);
            return Ok(print_gradcheck(&reports));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn preprocess_cohort(manifest: &Path, out: &Path) -> Result<()> {
    let mut m = load_manifest(manifest)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut records = Vec::with_capacity(m.records.len());
    for r in &m.records {
        let v = load_volume(&m.volume_path(r))?;
        let file = PathBuf::from(format!("{}.json", r.patient_id));
        save_volume(&preprocess(&v)?, &out.join(&file))?;
        info!("{}: {:?} -> 1 mm", r.patient_id, v.dims());
        let mut r = r.clone();
        r.volume_path = file;
        records.push(r);
    }
    m.records = records;
    m.base_dir = out.to_path_buf();
    save_manifest(&m, &out.join("manifest.csv"))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

/// `dir` itself when it holds scores for `split`, else its numbered run
/// subdirectories in index order.
fn run_dirs(dir: &Path, split: Split) -> Result<Vec<PathBuf>> {
    if dir.join(scores_file(split)).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut runs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let index = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok());
        if let Some(i) = index {
            if path.join(scores_file(split)).is_file() {
                runs.push((i, path));
            }
        }
    }
    if runs.is_empty() {
        bail!("no {} found in {} or its run directories", scores_file(split), dir.display());
    }
    runs.sort();
    Ok(runs.into_iter().map(|(_, p)| p).collect())
}

fn evaluate_run(dir: &Path, split: Split, threshold: f64) -> Result<RunMetrics> {
    let s = read_scores(&dir.join(scores_file(split)))?;
    Ok(RunMetrics::evaluate(&s.scores, &s.labels, threshold)?)
}

fn metrics_csv(m: &RunMetrics) -> String {
    let mut out = String::from("metric,value\n");
    for metric in Metric::ALL {
        let v = m.get(metric).map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{v}\n", metric.key()));
    }
    out
}

fn report(runs_dir: &Path, out: &Path, split: Split, threshold: f64) -> Result<()> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(runs_dir).with_context(|| format!("reading {}", runs_dir.display()))? {
        let path = entry?.path();
        if path.is_dir() && run_dirs(&path, split).is_ok() {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            found.insert(name, path);
        }
    }
    if found.is_empty() {
        bail!("no model directories with runs under {}", runs_dir.display());
    }
    // Built-in models first in table order, anything else after by name.
    let mut order: Vec<String> = ModelKind::ALL
        .iter()
        .map(|k| k.name().to_string())
        .filter(|n| found.contains_key(n))
        .collect();
    order.extend(found.keys().filter(|n| !order.contains(n)).cloned().collect::<Vec<_>>());

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut models: Vec<(String, RunAggregate)> = Vec::new();
    for name in order {
        let mut metrics = Vec::new();
        let mut curves = Vec::new();
        for dir in run_dirs(&found[&name], split)? {
            let s = read_scores(&dir.join(scores_file(split)))?;
            metrics.push(RunMetrics::evaluate(&s.scores, &s.labels, threshold)?);
            curves.push(roc_curve(&s.scores, &s.labels)?);
        }
        emit_roc(&roc_envelope(&curves, ENVELOPE_POINTS)?, &name, out)?;
        models.push((name, aggregate_runs(&metrics)?));
    }
    let text = render_text(&models);
    let write = |file: &str, body: &str| {
        let p = out.join(file);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("report.txt", &text)?;
    write("report.csv", &render_csv(&models)?)?;
    print!("{text}");
    Ok(())
}

fn print_gradcheck(reports: &[GradReport]) -> ExitCode {
    let mut ok = true;
    for r in reports {
        let pass = r.passes(GRAD_TOLERANCE);
        ok &= pass;
        println!(
            "{:<12} max rel error {:.3e}  checked {:>5}  skipped {:>3}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if pass { "ok" } else { "FAIL" }
        );
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
