//! ROC/AUC, threshold metrics, multi-run aggregation and reporting.

use std::fmt::Write as _;
use std::path::Path;

use crate::cohort::quantile_sorted;
use crate::error::{Error, IoContext, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const ENVELOPE_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// A score at or above `threshold` counts as a positive prediction.
pub fn confusion_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check_pairs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn check_pairs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Auc,
    Sensitivity,
    Specificity,
    Ppv,
    Npv,
    F1,
}

impl Metric {
    /// Report row order.
    pub const ALL: [Metric; 6] = [
        Metric::Auc,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::Ppv,
        Metric::Npv,
        Metric::F1,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Sensitivity => "Sensitivity",
            Metric::Specificity => "Specificity",
            Metric::Ppv => "PPV",
            Metric::Npv => "NPV",
            Metric::F1 => "F1 score",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Ppv => "ppv",
            Metric::Npv => "npv",
            Metric::F1 => "f1",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.key() == key)
    }
}

/// Per-run metrics; `None` marks an undefined (0/0) ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunMetrics {
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
}

impl RunMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Auc => self.auc,
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::Ppv => self.ppv,
            Metric::Npv => self.npv,
            Metric::F1 => self.f1,
        }
    }

    /// Threshold metrics plus AUC for one run's scores.
    pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let mut m = threshold_metrics(&confusion_at(scores, labels, threshold)?);
        m.auc = match auc(scores, labels) {
            Ok(a) => Some(a),
            Err(Error::OneClassOnly) => None,
            Err(e) => return Err(e),
        };
        Ok(m)
    }
}

pub fn threshold_metrics(c: &Confusion) -> RunMetrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let f1 = match (ppv, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    RunMetrics {
        auc: None,
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv,
        npv: ratio(c.tn, c.tn + c.fn_),
        f1,
    }
}

/// Pairwise Mann–Whitney AUC: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half. Computed from tie groups in
/// O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let groups = tie_groups(scores, labels);
    let n_pos: usize = groups.iter().map(|g| g.1).sum();
    let n_neg: usize = groups.iter().map(|g| g.2).sum();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    // Ascending scores: each positive beats every negative seen so far.
    let mut neg_below = 0usize;
    let mut twice_wins = 0u128;
    for &(_, p, n) in groups.iter().rev() {
        twice_wins += (p as u128) * (2 * neg_below as u128 + n as u128);
        neg_below += n;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// `(score, positives, negatives)` per distinct score, descending.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in idx {
        let (s, y) = (scores[i], labels[i]);
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as usize, (!y) as usize)),
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0,0) to (1,1), thresholds descending.
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    /// Highest TPR reached at or below `fpr`.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.0 <= fpr)
            .map(|p| p.1)
            .fold(0.0, f64::max)
    }
}

/// One point per distinct score; tied scores advance both rates in a single
/// diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_pairs(scores, labels)?;
    let groups = tie_groups(scores, labels);
    let n_pos: usize = groups.iter().map(|g| g.1).sum();
    let n_neg: usize = groups.iter().map(|g| g.2).sum();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocEnvelope {
    pub fpr: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Samples every curve on an even FPR grid and takes pointwise mean, min
/// and max.
pub fn roc_envelope(curves: &[RocCurve], grid_points: usize) -> Result<RocEnvelope> {
    if curves.is_empty() || grid_points < 2 {
        return Err(Error::EmptyInput);
    }
    let fpr: Vec<f64> = (0..grid_points)
        .map(|i| i as f64 / (grid_points - 1) as f64)
        .collect();
    let mut env = RocEnvelope {
        fpr: fpr.clone(),
        mean: Vec::with_capacity(grid_points),
        min: Vec::with_capacity(grid_points),
        max: Vec::with_capacity(grid_points),
    };
    for &f in &fpr {
        let tprs: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        env.mean.push(tprs.iter().sum::<f64>() / tprs.len() as f64);
        env.min.push(tprs.iter().copied().fold(f64::INFINITY, f64::min));
        env.max.push(tprs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    /// Runs where the metric was undefined.
    pub excluded: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    /// `None` when no value is defined.
    pub fn of(values: &[Option<f64>]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        // Shifted by the first value so identical inputs give an exact mean.
        let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            excluded: values.len() - n,
            mean,
            std,
            min: v[0],
            max: v[n - 1],
            median: quantile_sorted(&v, 0.5),
            q25: quantile_sorted(&v, 0.25),
            q75: quantile_sorted(&v, 0.75),
        })
    }

    /// `mean (std)` with two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2} ({:.2})", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunAggregate {
    pub runs: usize,
    /// Indexed like [`Metric::ALL`].
    pub metrics: [Option<Summary>; 6],
}

impl RunAggregate {
    pub fn get(&self, m: Metric) -> Option<&Summary> {
        self.metrics[Metric::ALL.iter().position(|&x| x == m).expect("listed")].as_ref()
    }
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<RunAggregate> {
    if runs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let metrics = Metric::ALL.map(|m| {
        let values: Vec<Option<f64>> = runs.iter().map(|r| r.get(m)).collect();
        Summary::of(&values)
    });
    Ok(RunAggregate {
        runs: runs.len(),
        metrics,
    })
}

/// Plain-text table with metrics as rows and models as columns, closed by
/// the median AUC.
pub fn render_text(models: &[(String, RunAggregate)]) -> String {
    let mut out = String::new();
    let width = models.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(12);
    let _ = write!(out, "{:<12}", "");
    for (name, _) in models {
        let _ = write!(out, "  {name:>width$}");
    }
    out.push('\n');
    for m in Metric::ALL {
        let _ = write!(out, "{:<12}", m.label());
        for (_, agg) in models {
            let cell = agg.get(m).map_or_else(|| "undefined".to_string(), Summary::cell);
            let _ = write!(out, "  {cell:>width$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<12}", "AUC median");
    for (_, agg) in models {
        let cell = agg
            .get(Metric::Auc)
            .map_or_else(|| "undefined".to_string(), |s| format!("{:.2}", s.median));
        let _ = write!(out, "  {cell:>width$}");
    }
    out.push('\n');
    out
}

pub const REPORT_HEADER: [&str; 9] = ["model", "metric", "mean", "std", "min", "max", "median", "q25", "q75"];

pub fn render_csv(models: &[(String, RunAggregate)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for (name, agg) in models {
        for m in Metric::ALL {
            let mut row = vec![name.clone(), m.key().to_string()];
            match agg.get(m) {
                Some(s) => row.extend(
                    [s.mean, s.std, s.min, s.max, s.median, s.q25, s.q75].map(|v| v.to_string()),
                ),
                None => row.extend(std::iter::repeat_n(String::new(), 7)),
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub const ROC_HEADER: [&str; 4] = ["fpr", "tpr_mean", "tpr_min", "tpr_max"];

pub fn roc_csv(env: &RocEnvelope) -> String {
    let mut out = ROC_HEADER.join(",");
    out.push('\n');
    for i in 0..env.fpr.len() {
        let _ = writeln!(out, "{},{},{},{}", env.fpr[i], env.mean[i], env.min[i], env.max[i]);
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<RocEnvelope> {
    let mut lines = text.lines();
    if lines.next() != Some(ROC_HEADER.join(",").as_str()) {
        return Err(Error::Format("unexpected ROC CSV header".into()));
    }
    let mut env = RocEnvelope {
        fpr: vec![],
        mean: vec![],
        min: vec![],
        max: vec![],
    };
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("ROC CSV row {}: {e}", i + 2)))?;
        let [f, mean, min, max] = v[..] else {
            return Err(Error::Format(format!("ROC CSV row {} needs 4 fields", i + 2)));
        };
        env.fpr.push(f);
        env.mean.push(mean);
        env.min.push(min);
        env.max.push(max);
    }
    Ok(env)
}

/// ROC figure: shaded min/max band, mean curve and the chance diagonal.
pub fn roc_svg(env: &RocEnvelope, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let x = |f: f64| MARGIN + f * SIZE;
    let y = |t: f64| MARGIN + (1.0 - t) * SIZE;
    let pts = |xs: &[f64], ys: &[f64]| -> Vec<String> {
        xs.iter()
            .zip(ys)
            .map(|(&f, &t)| format!("{:.2},{:.2}", x(f), y(t)))
            .collect()
    };
    let mut band = pts(&env.fpr, &env.max);
    let mut lower = pts(&env.fpr, &env.min);
    lower.reverse();
    band.extend(lower);
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"  <rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"  <polygon points="{}" fill="#1f77b4" fill-opacity="0.25" stroke="none"/>"##,
        band.join(" ")
    );
    let _ = writeln!(
        s,
        r#"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        s,
        r##"  <polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        pts(&env.fpr, &env.mean).join(" ")
    );
    let _ = writeln!(
        s,
        r#"  <text x="{}" y="{}" text-anchor="middle" font-size="16">{}</text>"#,
        total / 2.0,
        MARGIN / 2.0,
        escape_xml(title)
    );
    let _ = writeln!(
        s,
        r#"  <text x="{}" y="{}" text-anchor="middle" font-size="12">False positive rate</text>"#,
        total / 2.0,
        total - 15.0
    );
    let _ = writeln!(
        s,
        r#"  <text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">True positive rate</text>"#,
        total / 2.0,
        total / 2.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `roc_<name>.csv` and `roc_<name>.svg` into `dir`.
pub fn emit_roc(env: &RocEnvelope, name: &str, dir: &Path) -> Result<()> {
    let csv_path = dir.join(format!("roc_{name}.csv"));
    std::fs::write(&csv_path, roc_csv(env)).at(&csv_path)?;
    let svg_path = dir.join(format!("roc_{name}.svg"));
    std::fs::write(&svg_path, roc_svg(env, name)).at(&svg_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamLabel};
    use proptest::prelude::*;

    /// Brute-force pairwise AUC.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_hand_case() {
        let c = confusion_at(
            &[0.9, 0.7, 0.6, 0.4, 0.2],
            &[true, true, false, true, false],
            0.5,
        )
        .unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        let m = threshold_metrics(&c);
        assert_eq!(m.sensitivity, Some(2.0 / 3.0));
        assert_eq!(m.specificity, Some(0.5));
        assert_eq!(m.ppv, Some(2.0 / 3.0));
        assert_eq!(m.npv, Some(0.5));
        assert!((m.f1.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_boundary_and_degenerate() {
        let c = confusion_at(&[0.5], &[false], 0.5).unwrap();
        assert_eq!(c.fp, 1);
        let c = confusion_at(&[1.0; 4], &[true; 4], 0.5).unwrap();
        assert_eq!(c, Confusion { tp: 4, ..Default::default() });
        let m = threshold_metrics(&c);
        assert_eq!(m.specificity, None);
        assert_eq!(m.npv, None);
        let m = threshold_metrics(&Confusion { tp: 0, fp: 0, tn: 3, fn_: 0 });
        assert_eq!(m.sensitivity, None);
        assert!(matches!(confusion_at(&[], &[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn f1_is_harmonic_mean() {
        // ppv 0.5, sensitivity 0.75
        let m = threshold_metrics(&Confusion { tp: 3, fp: 3, tn: 0, fn_: 1 });
        assert!((m.f1.unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn auc_hand_cases() {
        assert_eq!(auc(&[0.9, 0.8, 0.3], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[true, false, true, false, true, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::OneClassOnly)));
    }

    #[test]
    fn roc_hand_cases() {
        let c = roc_curve(&[0.9, 0.8, 0.3], &[true, true, false]).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        let c = roc_curve(&[0.4; 4], &[true, false, true, false]).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(c.trapezoid_area(), 0.5);
    }

    #[test]
    fn dual_oracle_on_random_instances() {
        let mut rng = RngStream::new(77, StreamLabel::Synth);
        for _ in 0..1000 {
            let n = rng.int_range(2, 50).unwrap() as usize;
            let levels = rng.int_range(2, 12).unwrap();
            let scores: Vec<f64> = (0..n).map(|_| rng.int_range(0, levels).unwrap() as f64 / levels as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.uniform01() < 0.5).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            let c = roc_curve(&scores, &labels).unwrap();
            assert!((c.trapezoid_area() - a).abs() <= 1e-12);
            assert!((pairwise_auc(&scores, &labels) - a).abs() <= 1e-12);
            assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }

    proptest! {
        #[test]
        fn auc_label_flip_and_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)
        ) {
            let mut scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            labels[0] = true;
            labels[1] = false;
            // break ties
            for (i, s) in scores.iter_mut().enumerate() {
                *s += i as f64 * 1e-9;
            }
            let a = auc(&scores, &labels).unwrap();
            let flipped: Vec<bool> = labels.iter().map(|&y| !y).collect();
            prop_assert!((a - (1.0 - auc(&scores, &flipped).unwrap())).abs() < 1e-12);
            let squashed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(a, auc(&squashed, &labels).unwrap());
        }

        #[test]
        fn aggregate_order(values in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let s = Summary::of(&values.iter().map(|&v| Some(v)).collect::<Vec<_>>()).unwrap();
            prop_assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
        }

        #[test]
        fn ppv_identity(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let m = threshold_metrics(&Confusion { tp, fp, tn, fn_ });
            if let Some(p) = m.ppv {
                prop_assert!((p * (tp + fp) as f64 - tp as f64).abs() < 1e-9);
            }
            if let (Some(p), Some(s), Some(f)) = (m.ppv, m.sensitivity, m.f1) {
                prop_assert!((f - 2.0 / (1.0 / p + 1.0 / s)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn envelope_properties() {
        let a = roc_curve(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false]).unwrap();
        let b = roc_curve(&[0.9, 0.5, 0.4, 0.1], &[true, true, false, false]).unwrap();
        let single = roc_envelope(std::slice::from_ref(&a), ENVELOPE_POINTS).unwrap();
        assert_eq!(single.fpr.len(), 101);
        assert_eq!(single.mean, single.min);
        assert_eq!(single.mean, single.max);
        assert_eq!(single.mean[0], 0.5);
        assert_eq!(single.mean[100], 1.0);
        let both = roc_envelope(&[a, b], ENVELOPE_POINTS).unwrap();
        for i in 0..101 {
            assert!(both.min[i] <= both.mean[i] && both.mean[i] <= both.max[i]);
        }
        assert!(matches!(roc_envelope(&[], 101), Err(Error::EmptyInput)));
    }

    #[test]
    fn aggregate_values() {
        let runs: Vec<RunMetrics> = [0.77, 0.81, 0.84]
            .iter()
            .map(|&a| RunMetrics { auc: Some(a), ..Default::default() })
            .collect();
        let agg = aggregate_runs(&runs).unwrap();
        let s = agg.get(Metric::Auc).unwrap();
        assert!((s.mean - 0.8066666666666666).abs() < 1e-12);
        assert_eq!(s.median, 0.81);
        assert!(agg.get(Metric::F1).is_none());
        let same = aggregate_runs(&[RunMetrics { auc: Some(0.8), ..Default::default() }; 3]).unwrap();
        assert_eq!(same.get(Metric::Auc).unwrap().std, 0.0);
        let partial = aggregate_runs(&[
            RunMetrics { ppv: Some(0.5), ..Default::default() },
            RunMetrics::default(),
        ])
        .unwrap();
        assert_eq!(partial.get(Metric::Ppv).unwrap().excluded, 1);
        assert!(matches!(aggregate_runs(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn text_report_layout() {
        let half = RunMetrics {
            auc: Some(0.5),
            sensitivity: Some(0.5),
            specificity: Some(0.5),
            ppv: Some(0.5),
            npv: Some(0.5),
            f1: Some(0.5),
        };
        let agg = aggregate_runs(&[half, half]).unwrap();
        let text = render_text(&[("m".into(), agg.clone())]);
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 7);
        for (row, m) in rows.iter().zip(Metric::ALL) {
            assert!(row.starts_with(m.label()));
            assert!(row.ends_with("0.50 (0.00)"));
        }
        assert!(rows[6].starts_with("AUC median") && rows[6].ends_with("0.50"));
        let csv = render_csv(&[("m".into(), agg)]).unwrap();
        assert!(csv.starts_with("model,metric,mean,std,min,max,median,q25,q75\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn cell_format() {
        let s = Summary::of(&[Some(0.79), Some(0.81), Some(0.83)]).unwrap();
        assert_eq!(s.cell(), "0.81 (0.02)");
    }

    #[test]
    fn roc_csv_round_trip() {
        let c = roc_curve(&[0.9, 0.7, 0.4, 0.3, 0.1], &[true, false, true, false, false]).unwrap();
        let env = roc_envelope(&[c], ENVELOPE_POINTS).unwrap();
        let back = parse_roc_csv(&roc_csv(&env)).unwrap();
        assert_eq!(back, env);
        let svg = roc_svg(&env, "a<b");
        assert!(svg.contains("<polygon") && svg.contains("<polyline") && svg.contains("<line"));
        assert!(svg.contains("a&lt;b"));
    }
}
