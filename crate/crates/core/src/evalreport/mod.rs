//! Accuracy metrics, significance tests, classification maps and run
//! aggregates.

use std::collections::HashSet;
use std::io::Write;

use log::warn;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hsdata::{gather_patches, HyperCube, LabelMap};
use crate::models::ModelState;

/// Counts indexed `[true label - 1][predicted label - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Records one pixel with 0-based class indices.
    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }
}

/// Tallies pixels with a nonzero true label that are not in `exclude`. The
/// matrix covers labels `1..=max(truth, pred)`.
pub fn confusion_matrix(
    truth: &LabelMap,
    pred: &LabelMap,
    exclude: &HashSet<(usize, usize)>,
) -> Result<ConfusionMatrix> {
    if (truth.height(), truth.width()) != (pred.height(), pred.width()) {
        return Err(Error::dim(format!(
            "truth {}x{} vs prediction {}x{}",
            truth.height(),
            truth.width(),
            pred.height(),
            pred.width()
        )));
    }
    let c = truth.class_count().max(pred.class_count()) as usize;
    let mut cm = ConfusionMatrix::new(c);
    for r in 0..truth.height() {
        for col in 0..truth.width() {
            let t = truth.get(r, col);
            if t == 0 || exclude.contains(&(r, col)) {
                continue;
            }
            match pred.get(r, col) {
                0 => {
                    return Err(Error::Evaluation(format!(
                        "no prediction for evaluated pixel ({r}, {col})"
                    )))
                }
                p => cm.add(t as usize - 1, p as usize - 1),
            }
        }
    }
    if cm.is_empty() {
        warn!("confusion matrix is empty: no evaluated pixels");
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSet {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `None` for classes with no evaluated pixels.
    pub per_class_recall: Vec<Option<f64>>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricSet> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Evaluation(
            "metrics of an empty confusion matrix".into(),
        ));
    }
    let n = total as f64;
    let oa = cm.trace() as f64 / n;
    let per_class_recall: Vec<Option<f64>> = (0..cm.classes())
        .map(|i| match cm.row_sum(i) {
            0 => None,
            rs => Some(cm.get(i, i) as f64 / rs as f64),
        })
        .collect();
    let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..cm.classes())
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    // agreement is perfect and fully expected only for a single-class diagonal
    let kappa = if pe >= 1.0 {
        1.0
    } else {
        (oa - pe) / (1.0 - pe)
    };
    Ok(MetricSet {
        oa,
        aa,
        kappa,
        per_class_recall,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    /// The first sample is stochastically greater than the second.
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UTestResult {
    /// `U` of the first sample.
    pub u_statistic: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub method: PMethod,
}

/// Largest combined sample size that uses the exact distribution.
pub const EXACT_LIMIT: usize = 16;

/// Ranks `1..=n` of the pooled values, ties sharing their mean rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .chunk_by(|a, b| a == b)
        .map(|g| g.len())
        .filter(|&t| t > 1)
        .collect()
}

fn u_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Evaluation(
            "Mann-Whitney U needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Evaluation("NaN in Mann-Whitney sample".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let n1 = a.len() as f64;
    Ok(ranks[..a.len()].iter().sum::<f64>() - n1 * (n1 + 1.0) / 2.0)
}

/// Number of rank assignments giving each `U` value, for sizes `m, n`.
fn u_frequencies(m: usize, n: usize) -> Vec<f64> {
    // f[i][j][u]: first sample of size i and second of size j
    let max = m * n;
    let mut table = vec![vec![Vec::<f64>::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut f = vec![0.0; i * j + 1];
            if i == 0 || j == 0 {
                f[0] = 1.0;
            } else {
                // the largest pooled value belongs to sample one (adds j) or two
                for (u, v) in table[i - 1][j].iter().enumerate() {
                    f[u + j] += v;
                }
                for (u, v) in table[i][j - 1].iter().enumerate() {
                    f[u] += v;
                }
            }
            table[i][j] = f;
        }
    }
    let f = std::mem::take(&mut table[m][n]);
    debug_assert_eq!(f.len(), max + 1);
    f
}

/// Exact one-sided p-value `P(U >= u)`; requires tie-free samples.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    let u = u_statistic(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if !tie_sizes(&pooled).is_empty() {
        return Err(Error::Evaluation(
            "exact U distribution requires tie-free samples".into(),
        ));
    }
    let freq = u_frequencies(a.len(), b.len());
    let total: f64 = freq.iter().sum();
    let tail: f64 = freq[u.round() as usize..].iter().sum();
    Ok(UTestResult {
        u_statistic: u,
        p_value: (tail / total).min(1.0),
        alternative: Alternative::Greater,
        method: PMethod::Exact,
    })
}

/// Normal approximation with continuity and tie corrections.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    let u = u_statistic(a, b)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ties: f64 = tie_sizes(&pooled)
        .iter()
        .map(|&t| (t as f64).powi(3) - t as f64)
        .sum();
    let variance = if n > 1.0 {
        n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))
    } else {
        0.0
    };
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = (u - n1 * n2 / 2.0 - 0.5) / variance.sqrt();
        let normal = Normal::standard();
        (1.0 - normal.cdf(z)).clamp(0.0, 1.0)
    };
    Ok(UTestResult {
        u_statistic: u,
        p_value,
        alternative: Alternative::Greater,
        method: PMethod::Normal,
    })
}

/// One-sided test that `a` tends to exceed `b`. Exact when the samples are
/// tie-free and `|a| + |b| <= 16`, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if a.len() + b.len() <= EXACT_LIMIT && tie_sizes(&pooled).is_empty() {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

/// Predicts every pixel; network class `i` becomes label `i + 1`.
pub fn classify_full_image(
    model: &ModelState,
    cube: &HyperCube,
    patch_side: usize,
) -> Result<LabelMap> {
    if patch_side != model.spec().patch_side {
        return Err(Error::dim(format!(
            "patch side {patch_side}, model expects {}",
            model.spec().patch_side
        )));
    }
    let (h, w) = (cube.height(), cube.width());
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        let centers: Vec<(usize, usize)> = (0..w).map(|c| (r, c)).collect();
        let batch = gather_patches(cube, &centers, patch_side)?;
        labels.extend(
            model
                .predict_batch(&batch)?
                .into_iter()
                .map(|p| p as u16 + 1),
        );
    }
    LabelMap::new(h, w, labels)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two runs.
    pub std: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub runs: usize,
    pub oa: Stat,
    pub aa: Stat,
    pub kappa: Stat,
}

fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Stat { mean, std }
}

/// Mean and sample standard deviation of each metric; a single run gets no
/// standard deviation.
pub fn summarize_runs(runs: &[MetricSet]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::Evaluation("no runs to aggregate".into()));
    }
    let pick = |f: fn(&MetricSet) -> f64| stat(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(Aggregate {
        runs: runs.len(),
        oa: pick(|m| m.oa),
        aa: pick(|m| m.aa),
        kappa: pick(|m| m.kappa),
    })
}

/// Like [`summarize_runs`] but requires the standard deviation.
pub fn aggregate_runs(runs: &[MetricSet]) -> Result<Aggregate> {
    if runs.len() < 2 {
        return Err(Error::Evaluation(format!(
            "standard deviation needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    summarize_runs(runs)
}

pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn percent(s: &Stat) -> String {
    match s.std {
        Some(sd) => format!("{:.2}±{:.2}", 100.0 * s.mean, 100.0 * sd),
        None => format!("{:.2}", 100.0 * s.mean),
    }
}

/// `mean±std (pretrained) / mean±std (scratch)` in percent, with `*` or `**`
/// when the improvement is significant.
pub fn paired_row(pretrained: &Stat, scratch: &Stat, p_value: Option<f64>) -> String {
    let marker = p_value.map_or("", significance_marker);
    format!("{}{marker} / {}", percent(pretrained), percent(scratch))
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub arch: String,
    pub n_per_class: usize,
    pub pretrained: bool,
    pub aggregate: Aggregate,
    pub p_value: Option<f64>,
}

pub const SUMMARY_HEADER: &str =
    "scenario,arch,n_per_class,pretrained,mean_oa,std_oa,mean_aa,std_aa,mean_kappa,std_kappa,p_value";

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

pub fn write_summary_row<W: Write>(w: &mut W, row: &SummaryRow) -> Result<()> {
    let a = &row.aggregate;
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{}",
        row.scenario,
        row.arch,
        row.n_per_class,
        row.pretrained,
        num(Some(a.oa.mean)),
        num(a.oa.std),
        num(Some(a.aa.mean)),
        num(a.aa.std),
        num(Some(a.kappa.mean)),
        num(a.kappa.std),
        num(row.p_value)
    )?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: &mut W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    rows.iter().try_for_each(|r| write_summary_row(w, r))
}

/// One realization of one arm, for `runs.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub scenario: String,
    pub arch: String,
    pub n_per_class: usize,
    pub seed: u64,
    pub pretrained: bool,
    pub metrics: MetricSet,
}

pub const RUNS_HEADER: &str = "scenario,arch,n_per_class,seed,pretrained,oa,aa,kappa";

pub fn write_runs_csv<W: Write>(w: &mut W, runs: &[RunRecord]) -> Result<()> {
    writeln!(w, "{RUNS_HEADER}")?;
    for r in runs {
        writeln!(
            w,
            "{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.scenario,
            r.arch,
            r.n_per_class,
            r.seed,
            r.pretrained,
            r.metrics.oa,
            r.metrics.aa,
            r.metrics.kappa
        )?;
    }
    Ok(())
}
