//! Patient manifests, cohort summaries and the synthetic cohort generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, IoContext, Result};
use crate::rng::{hash64, RngStream, StreamLabel};
use crate::volume::{save_volume, CtVolume, Voxels};

pub const MANIFEST_HEADER: [&str; 13] = [
    "patient_id",
    "cohort",
    "split",
    "volume_path",
    "gtv_x_mm",
    "gtv_y_mm",
    "gtv_z_mm",
    "hpv_label",
    "age",
    "sex",
    "t_stage",
    "n_stage",
    "tumor_cm3",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sex {
    F,
    M,
}

/// T stage 1–4 or N stage 0–3, kept as the bare stage number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Stage(pub u8);

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub cohort: String,
    pub split: Split,
    pub volume_path: PathBuf,
    pub gtv_center_mm: [f64; 3],
    /// 1 = HPV positive.
    pub hpv_label: u8,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
    pub t_stage: Option<Stage>,
    pub n_stage: Option<Stage>,
    pub tumor_cm3: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortManifest {
    pub records: Vec<PatientRecord>,
    /// Directory that relative volume paths are resolved against.
    pub base_dir: PathBuf,
}

impl CohortManifest {
    pub fn new(records: Vec<PatientRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.patient_id.as_str()) {
                return Err(Error::DuplicateId(r.patient_id.clone()));
            }
            if r.hpv_label > 1 {
                return Err(Error::BadLabel {
                    line: 0,
                    value: r.hpv_label.to_string(),
                });
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn volume_path(&self, r: &PatientRecord) -> PathBuf {
        if r.volume_path.is_absolute() {
            r.volume_path.clone()
        } else {
            self.base_dir.join(&r.volume_path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PatientRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// `(n_pos, n_neg)` in one split.
    pub fn class_counts(&self, split: Split) -> Result<(usize, usize)> {
        let (mut pos, mut neg) = (0, 0);
        for r in self.split(split) {
            if r.hpv_label == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        if pos + neg == 0 {
            return Err(Error::EmptySplit(split));
        }
        Ok((pos, neg))
    }
}

fn parse_opt<T, E: fmt::Display>(
    s: &str,
    parse: impl FnOnce(&str) -> std::result::Result<T, E>,
) -> std::result::Result<Option<T>, String> {
    let s = s.trim();
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s).map(Some).map_err(|e| e.to_string())
    }
}

fn parse_sex(s: &str) -> std::result::Result<Sex, String> {
    match s {
        "F" | "f" => Ok(Sex::F),
        "M" | "m" => Ok(Sex::M),
        other => Err(format!("unknown sex `{other}`")),
    }
}

fn parse_stage(prefix: char, range: std::ops::RangeInclusive<u8>, s: &str) -> std::result::Result<Stage, String> {
    let digits = s
        .strip_prefix(prefix)
        .or_else(|| s.strip_prefix(prefix.to_ascii_lowercase()))
        .unwrap_or(s);
    match digits.parse::<u8>() {
        Ok(n) if range.contains(&n) => Ok(Stage(n)),
        _ => Err(format!("unknown {prefix} stage `{s}`")),
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value `{s}`"))
    }
}

/// Read a manifest CSV. Relative volume paths resolve against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<CohortManifest> {
    let file = fs::File::open(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, column: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, "header", e.to_string()))?
        .clone();
    if headers.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            "header",
            format!("expected `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "row", e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < 8 || row.len() > MANIFEST_HEADER.len() {
            return Err(parse_err(
                line,
                "row",
                format!("expected 8 to 13 fields, got {}", row.len()),
            ));
        }
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let required = |i: usize| -> Result<&str> {
            let v = field(i);
            if v.is_empty() {
                Err(parse_err(line, MANIFEST_HEADER[i], "missing value".into()))
            } else {
                Ok(v)
            }
        };
        let num = |i: usize| -> Result<f64> {
            parse_f64(required(i)?).map_err(|m| parse_err(line, MANIFEST_HEADER[i], m))
        };
        let patient_id = required(0)?.to_string();
        let split = required(2)?
            .parse::<Split>()
            .map_err(|m| parse_err(line, "split", m))?;
        let hpv_label = match field(7) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::BadLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        fn opt<T>(
            i: usize,
            m: std::result::Result<T, String>,
            err: impl Fn(u64, &str, String) -> Error,
            line: u64,
        ) -> Result<T> {
            m.map_err(|msg| err(line, MANIFEST_HEADER[i], msg))
        }
        let record = PatientRecord {
            cohort: required(1)?.to_string(),
            split,
            volume_path: PathBuf::from(required(3)?),
            gtv_center_mm: [num(4)?, num(5)?, num(6)?],
            hpv_label,
            age: opt(8, parse_opt(field(8), parse_f64), parse_err, line)?,
            sex: opt(9, parse_opt(field(9), parse_sex), parse_err, line)?,
            t_stage: opt(10, parse_opt(field(10), |s| parse_stage('T', 1..=4, s)), parse_err, line)?,
            n_stage: opt(11, parse_opt(field(11), |s| parse_stage('N', 0..=3, s)), parse_err, line)?,
            tumor_cm3: opt(12, parse_opt(field(12), parse_f64), parse_err, line)?,
            patient_id,
        };
        if !seen.insert(record.patient_id.clone()) {
            return Err(Error::DuplicateId(record.patient_id));
        }
        records.push(record);
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(CohortManifest { records, base_dir })
}

fn fmt_opt<T>(v: Option<T>, f: impl FnOnce(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn save_manifest(m: &CohortManifest, path: &Path) -> Result<()> {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for r in &m.records {
        let row = [
            r.patient_id.clone(),
            r.cohort.clone(),
            r.split.to_string(),
            r.volume_path.to_string_lossy().into_owned(),
            r.gtv_center_mm[0].to_string(),
            r.gtv_center_mm[1].to_string(),
            r.gtv_center_mm[2].to_string(),
            r.hpv_label.to_string(),
            fmt_opt(r.age, |v| v.to_string()),
            fmt_opt(r.sex, |s| format!("{s:?}")),
            fmt_opt(r.t_stage, |s| format!("T{}", s.0)),
            fmt_opt(r.n_stage, |s| format!("N{}", s.0)),
            fmt_opt(r.tumor_cm3, |v| v.to_string()),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).at(path)
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousStats {
    pub n: usize,
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl ContinuousStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q25: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q75: quantile_sorted(&sorted, 0.75),
        })
    }
}

impl fmt::Display for ContinuousStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2}-{:.2})", self.mean, self.q25, self.q75)
    }
}

/// Summary statistics for one (cohort, HPV class) group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupSummary {
    pub count: usize,
    pub age: Option<ContinuousStats>,
    pub tumor_cm3: Option<ContinuousStats>,
    pub sex: BTreeMap<String, usize>,
    pub t_stage: BTreeMap<u8, usize>,
    pub n_stage: BTreeMap<u8, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortSummary {
    /// Keyed by (cohort, hpv_label).
    pub groups: BTreeMap<(String, u8), GroupSummary>,
}

impl CohortSummary {
    pub fn total(&self) -> usize {
        self.groups.values().map(|g| g.count).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for ((cohort, label), g) in &self.groups {
            let class = if *label == 1 { "pos" } else { "neg" };
            let stats = |s: &Option<ContinuousStats>| s.map_or("-".into(), |s| s.to_string());
            let stage = |m: &BTreeMap<u8, usize>, range: std::ops::RangeInclusive<u8>| {
                range
                    .map(|k| m.get(&k).copied().unwrap_or(0).to_string())
                    .collect::<Vec<_>>()
                    .join("/")
            };
            out.push_str(&format!(
                "{cohort:<12} {class}  n={:<4} age {:<24} sex F/M {}/{}  T1-4 {}  N0-3 {}  tumor[cm3] {}\n",
                g.count,
                stats(&g.age),
                g.sex.get("F").copied().unwrap_or(0),
                g.sex.get("M").copied().unwrap_or(0),
                stage(&g.t_stage, 1..=4),
                stage(&g.n_stage, 0..=3),
                stats(&g.tumor_cm3),
            ));
        }
        out
    }
}

pub fn cohort_summary(m: &CohortManifest) -> CohortSummary {
    let mut buckets: BTreeMap<(String, u8), Vec<&PatientRecord>> = BTreeMap::new();
    for r in &m.records {
        buckets
            .entry((r.cohort.clone(), r.hpv_label))
            .or_default()
            .push(r);
    }
    let groups = buckets
        .into_iter()
        .map(|(key, rs)| {
            let ages: Vec<f64> = rs.iter().filter_map(|r| r.age).collect();
            let sizes: Vec<f64> = rs.iter().filter_map(|r| r.tumor_cm3).collect();
            let mut g = GroupSummary {
                count: rs.len(),
                age: ContinuousStats::from_values(&ages),
                tumor_cm3: ContinuousStats::from_values(&sizes),
                ..Default::default()
            };
            for r in &rs {
                if let Some(s) = r.sex {
                    *g.sex.entry(format!("{s:?}")).or_default() += 1;
                }
                if let Some(t) = r.t_stage {
                    *g.t_stage.entry(t.0).or_default() += 1;
                }
                if let Some(n) = r.n_stage {
                    *g.n_stage.entry(n.0).or_default() += 1;
                }
            }
            (key, g)
        })
        .collect();
    CohortSummary { groups }
}

/// Parameters of the synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_pos: usize,
    pub n_neg: usize,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_pos: 50,
            n_neg: 50,
            dims: [128, 128, 32],
            spacing_mm: [1.0, 1.0, 2.0],
        }
    }
}

pub const SYNTH_BACKGROUND_HU: f64 = 0.0;
pub const SYNTH_NOISE_HU: f64 = 30.0;
/// Mean ellipsoid intensity for HPV-negative and HPV-positive patients.
pub const SYNTH_CLASS_MEAN_HU: [f64; 2] = [-50.0, 50.0];
pub const SYNTH_RADIUS_VOX: (f64, f64) = (8.0, 16.0);

/// Train/val/test sizes for one class under a 60/20/20 split.
pub fn stratified_sizes(n: usize) -> (usize, usize, usize) {
    let train = ((n as f64 * 0.6) + 0.5).floor() as usize;
    let val = (((n as f64 * 0.2) + 0.5).floor() as usize).min(n - train);
    (train, val, n - train - val)
}

struct SynthPatient {
    volume: CtVolume,
    center_vox: [usize; 3],
    radii_vox: [f64; 3],
    age: f64,
    sex: Sex,
    t_stage: Stage,
    n_stage: Stage,
}

fn synth_patient(spec: &SynthSpec, label: u8, seed: u64) -> Result<SynthPatient> {
    let mut rng = RngStream::new(seed, StreamLabel::Synth);
    let (rlo, rhi) = SYNTH_RADIUS_VOX;
    let mut radii = [0.0; 3];
    for r in &mut radii {
        *r = rlo + (rhi - rlo) * rng.uniform01();
    }
    // Centers stay in the middle third of each axis, as a tumor would, so
    // crops around them rarely leave the scan.
    let mut center = [0usize; 3];
    for (c, &n) in center.iter_mut().zip(&spec.dims) {
        let n = n as i64;
        let margin = (rlo as i64).max(n / 3).min((n - 1) / 2);
        *c = rng.int_range(margin, n - 1 - margin)? as usize;
    }
    let mean = SYNTH_CLASS_MEAN_HU[label as usize];
    let [nx, ny, nz] = spec.dims;
    let mut voxels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = [x, y, z]
                    .iter()
                    .zip(center.iter().zip(&radii))
                    .map(|(&p, (&c, &r))| ((p as f64 - c as f64) / r).powi(2))
                    .sum::<f64>();
                let mu = if d <= 1.0 { mean } else { SYNTH_BACKGROUND_HU };
                let h = mu + SYNTH_NOISE_HU * rng.normal01();
                voxels.push(h.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
            }
        }
    }
    let age = (60.0 + 8.0 * rng.normal01()).clamp(30.0, 90.0);
    let sex = if rng.uniform01() < 0.8 { Sex::M } else { Sex::F };
    let t_stage = Stage(rng.int_range(1, 4)? as u8);
    let n_stage = Stage(rng.int_range(0, 3)? as u8);
    Ok(SynthPatient {
        volume: CtVolume::new(spec.dims, spec.spacing_mm, [0.0; 3], Voxels::I16(voxels))?,
        center_vox: center,
        radii_vox: radii,
        age: (age * 10.0).round() / 10.0,
        sex,
        t_stage,
        n_stage,
    })
}

/// Write a synthetic cohort (RV1 volumes plus `manifest.csv`) into `out_dir`.
///
/// Each scan is normal(0, 30) HU noise with one planted ellipsoid whose mean
/// is −50 HU for negatives and +50 HU for positives. Positives come first in
/// patient order; each class is split 60/20/20 into train/val/test.
pub fn synth_generate(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<CohortManifest> {
    if spec.n_pos == 0 || spec.n_neg == 0 {
        return Err(Error::EmptyClass {
            n_pos: spec.n_pos,
            n_neg: spec.n_neg,
        });
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let total = spec.n_pos + spec.n_neg;
    let width = total.to_string().len().max(3);
    let mut plan = Vec::with_capacity(total);
    for (label, n) in [(1u8, spec.n_pos), (0u8, spec.n_neg)] {
        let (train, val, _) = stratified_sizes(n);
        for k in 0..n {
            let split = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
            plan.push((label, split));
        }
    }
    let records = plan
        .into_par_iter()
        .enumerate()
        .map(|(i, (label, split))| -> Result<PatientRecord> {
            let p = synth_patient(spec, label, hash64(seed, i as u64))?;
            let patient_id = format!("synth-{i:0width$}");
            let file = format!("{patient_id}.json");
            save_volume(&p.volume, &out_dir.join(&file))?;
            let s = spec.spacing_mm;
            let center_mm = [0, 1, 2].map(|a| p.center_vox[a] as f64 * s[a]);
            let cm3 = 4.0 / 3.0 * std::f64::consts::PI
                * p.radii_vox.iter().zip(&s).map(|(r, s)| r * s).product::<f64>()
                / 1000.0;
            Ok(PatientRecord {
                patient_id,
                cohort: "synth".into(),
                split,
                volume_path: PathBuf::from(file),
                gtv_center_mm: center_mm,
                hpv_label: label,
                age: Some(p.age),
                sex: Some(p.sex),
                t_stage: Some(p.t_stage),
                n_stage: Some(p.n_stage),
                tumor_cm3: Some((cm3 * 100.0).round() / 100.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CohortManifest::new(records, out_dir)?;
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
