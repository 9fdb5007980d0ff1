//! Metrics and report rendering: confusion matrices, Top-k rates,
//! per-connection-type accuracy, error attribution, and the published
//! reference numbers they are laid out against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::ConnectionType;
use crate::error::{Error, Result};
use crate::fusion::{DecisionRecord, Pipeline};
use crate::nncore::topk;

/// Published reference results, stored for side-by-side report rendering.
pub mod paper {
    /// Fusion threshold used in the reference experiments.
    pub const THRESHOLD: f32 = 0.95;

    /// Length classifier confusion matrix (%), testing set; blank cells of
    /// the published table are zeros.
    pub const LENGTH_CONFUSION: [[f64; 4]; 4] = [
        [99.9, 0.01, 0.0, 0.0],
        [0.02, 99.2, 0.07, 0.0],
        [0.0, 0.9, 96.9, 2.3],
        [0.0, 0.0, 2.3, 97.7],
    ];

    /// Length classifier Top-1 / Top-2 recognition rates (%).
    pub const LENGTH_TOPK: (f64, f64) = (98.4, 99.9);

    /// Digit classifier recognition rates (%): (name, Top-1, Top-2).
    pub const DIGIT_RATES: [(&str, f64, f64); 4] = [
        ("c1", 99.6, 99.9),
        ("c2", 99.7, 100.0),
        ("c3", 97.7, 98.9),
        ("c1110", 95.9, 98.6),
    ];

    /// One row of the touching-pairs comparison: method, overall %,
    /// per-connection-type % (I, II, III, V), segmentation cuts.
    pub struct TpRow {
        pub method: &'static str,
        pub overall: f64,
        pub by_type: [f64; 4],
        pub cuts: f64,
    }

    /// Published touching-pairs results: ten segmentation algorithms and
    /// the three segmentation-free strategies.
    pub const TP_RESULTS: [TpRow; 13] = [
        TpRow { method: "Shi and Govindaraju (1997)", overall: 59.30, by_type: [68.31, 59.72, 60.35, 25.44], cuts: 1.0 },
        TpRow { method: "Congedo et al. (1995)", overall: 63.07, by_type: [62.88, 67.51, 59.40, 40.45], cuts: 1.0 },
        TpRow { method: "Lacerda and Mello (2013)", overall: 65.79, by_type: [71.75, 71.21, 63.64, 56.57], cuts: 1.0 },
        TpRow { method: "Elnagar and Alhajajj (2003)", overall: 67.34, by_type: [63.88, 71.51, 56.40, 58.73], cuts: 1.0 },
        TpRow { method: "Pal et al. (2003)", overall: 71.21, by_type: [73.96, 74.69, 80.09, 41.52], cuts: 1.0 },
        TpRow { method: "Oliveira et al. (2000)", overall: 88.03, by_type: [90.40, 90.78, 89.01, 64.88], cuts: 1.0 },
        TpRow { method: "Fusijawa et al. (1992)", overall: 89.85, by_type: [95.45, 91.27, 83.57, 63.72], cuts: 3.66 },
        TpRow { method: "Fenrich and Krishnamoorthy (1990)", overall: 92.37, by_type: [97.54, 93.79, 99.45, 65.57], cuts: 4.07 },
        TpRow { method: "Gattal and Chibani (2015)", overall: 93.24, by_type: [96.67, 93.75, 99.68, 77.58], cuts: 24.11 },
        TpRow { method: "Chen and Wang (2000)", overall: 93.80, by_type: [97.87, 94.23, 97.55, 76.76], cuts: 45.40 },
        TpRow { method: "End-to-end", overall: 94.37, by_type: [94.33, 95.13, 96.13, 91.90], cuts: 0.0 },
        TpRow { method: "End-to-end+L", overall: 96.05, by_type: [95.95, 96.87, 98.03, 93.35], cuts: 0.0 },
        TpRow { method: "Dynamic selection (2018)", overall: 97.12, by_type: [97.02, 97.89, 98.97, 93.03], cuts: 0.0 },
    ];

    /// Published synthetic-data accuracy (%): method, single, 2-digit,
    /// 3-digit.
    pub const SYNTHETIC_RESULTS: [(&str, f64, f64, f64); 3] = [
        ("End-to-end", 97.68, 94.09, 96.05),
        ("End-to-end+L", 98.73, 96.82, 95.50),
        ("Dynamic selection (2018)", 99.56, 99.00, 94.88),
    ];

    /// Published error split of the end-to-end+length strategy on pairs:
    /// (total %, caused by the length classifier %, caused by digits %).
    pub const ERROR_SPLIT: (f64, f64, f64) = (3.95, 1.76, 2.79);

    /// Data distribution rows: (length, training, validation, testing).
    pub const DATA_DISTRIBUTION: [(usize, usize, usize, usize); 4] = [
        (1, 197_784, 23_384, 23_621),
        (2, 161_563, 53_907, 55_091),
        (3, 1_448_680, 484_346, 491_749),
        (4, 100_000, 20_000, 20_000),
    ];
}

/// Square count matrix; rows are truth, columns are prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, prediction: usize) -> Result<()> {
        if truth >= self.n || prediction >= self.n {
            return Err(Error::Usage(format!(
                "class ({truth}, {prediction}) outside a {n}x{n} matrix",
                n = self.n
            )));
        }
        self.counts[truth * self.n + prediction] += 1;
        Ok(())
    }

    pub fn count(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.n + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Rows normalized to 100; a row with no samples renders as zeros.
    pub fn percent(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|t| {
                let row = &self.counts[t * self.n..(t + 1) * self.n];
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if sum == 0 {
                            0.0
                        } else {
                            c as f64 * 100.0 / sum as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Count-based confusion matrix over class indices.
pub fn confusion(truths: &[usize], predictions: &[usize], n: usize) -> Result<ConfusionMatrix> {
    if truths.len() != predictions.len() {
        return Err(Error::Usage(format!(
            "{} truths vs {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    let mut m = ConfusionMatrix::new(n);
    for (&t, &p) in truths.iter().zip(predictions) {
        m.add(t, p)?;
    }
    Ok(m)
}

/// Percentage of rows whose truth appears among the k highest-scoring
/// classes.
pub fn topk_accuracy(probability_logs: &[Vec<f32>], truths: &[usize], k: usize) -> Result<f64> {
    if probability_logs.len() != truths.len() {
        return Err(Error::Usage(format!(
            "{} probability rows vs {} truths",
            probability_logs.len(),
            truths.len()
        )));
    }
    if probability_logs.is_empty() {
        return Err(Error::Usage("cannot score an empty log".into()));
    }
    let hits = probability_logs
        .iter()
        .zip(truths)
        .filter(|(probs, &t)| topk(probs, k).iter().any(|&(c, _)| c == t))
        .count();
    Ok(hits as f64 * 100.0 / truths.len() as f64)
}

/// Correct/total tally with a percentage view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyAccuracy {
    pub correct: u64,
    pub total: u64,
}

impl TallyAccuracy {
    pub fn pct(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 * 100.0 / self.total as f64
        }
    }
}

/// Accuracy per connection type over touching samples.
pub fn per_connection_type(
    decisions: &[DecisionRecord],
) -> BTreeMap<ConnectionType, TallyAccuracy> {
    let mut out: BTreeMap<ConnectionType, TallyAccuracy> = BTreeMap::new();
    for d in decisions {
        let slot = out.entry(d.connection_type).or_default();
        slot.total += 1;
        slot.correct += u64::from(d.is_correct());
    }
    out
}

/// Accuracy per true string length.
pub fn per_length(decisions: &[DecisionRecord]) -> BTreeMap<usize, TallyAccuracy> {
    let mut out: BTreeMap<usize, TallyAccuracy> = BTreeMap::new();
    for d in decisions {
        let slot = out.entry(d.true_length).or_default();
        slot.total += 1;
        slot.correct += u64::from(d.is_correct());
    }
    out
}

/// Error attribution of a decision log.
///
/// A wrong decision is attributed to the length classifier when the fused
/// length differs from the true length (rejections included); it is
/// attributed to the digit classifier when a computed candidate at the
/// true length was wrong. Decisions wrong on both axes count once toward
/// the length side and are reported separately as overlap, so
/// from_length + from_digits - overlap == total exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribution {
    pub samples: u64,
    pub wrong: u64,
    pub from_length: u64,
    pub from_digits: u64,
    pub overlap: u64,
}

impl Attribution {
    pub fn total_pct(&self) -> f64 {
        pct(self.wrong, self.samples)
    }
    pub fn from_length_pct(&self) -> f64 {
        pct(self.from_length, self.samples)
    }
    pub fn from_digits_pct(&self) -> f64 {
        pct(self.from_digits, self.samples)
    }
    pub fn overlap_pct(&self) -> f64 {
        pct(self.overlap, self.samples)
    }
}

fn pct(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 * 100.0 / den as f64
    }
}

pub fn error_attribution(decisions: &[DecisionRecord]) -> Attribution {
    let mut a = Attribution {
        samples: decisions.len() as u64,
        ..Attribution::default()
    };
    for d in decisions {
        if d.is_correct() {
            continue;
        }
        a.wrong += 1;
        let length_wrong = d.fused_length() != Some(d.true_length);
        let digit_wrong = d
            .candidates
            .iter()
            .any(|c| c.length == d.true_length && c.label != d.truth);
        if length_wrong {
            a.from_length += 1;
        }
        if digit_wrong {
            a.from_digits += 1;
        }
        if length_wrong && digit_wrong {
            a.overlap += 1;
        }
    }
    a
}

/// Per-pipeline summary of one decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pipeline: Pipeline,
    pub samples: u64,
    pub correct: u64,
    pub rejects: u64,
    pub per_connection_type: BTreeMap<ConnectionType, TallyAccuracy>,
    pub per_length: BTreeMap<usize, TallyAccuracy>,
    pub attribution: Attribution,
}

impl PipelineReport {
    pub fn accuracy_pct(&self) -> f64 {
        pct(self.correct, self.samples)
    }
}

/// Summarize one pipeline's decision log.
pub fn summarize_pipeline(pipeline: Pipeline, decisions: &[DecisionRecord]) -> PipelineReport {
    PipelineReport {
        pipeline,
        samples: decisions.len() as u64,
        correct: decisions.iter().filter(|d| d.is_correct()).count() as u64,
        rejects: decisions.iter().filter(|d| d.predicted.is_none()).count() as u64,
        per_connection_type: per_connection_type(decisions),
        per_length: per_length(decisions),
        attribution: error_attribution(decisions),
    }
}

/// Top-1/Top-2 recognition rates of one classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRates {
    pub top1_pct: f64,
    pub top2_pct: f64,
}

/// Full evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub pipelines: Vec<PipelineReport>,
    /// Per-classifier Top-1/Top-2 rates, keyed by classifier name.
    pub classifier_rates: BTreeMap<String, ClassifierRates>,
    /// Length classifier confusion on the evaluated set.
    pub length_confusion: Option<ConfusionMatrix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

fn fmt_pct(v: f64) -> String {
    format!("{v:.2}")
}

/// Render a percentage cell the way the published confusion table does:
/// zeros stay blank.
fn fmt_confusion_cell(v: f64) -> String {
    if v == 0.0 {
        String::new()
    } else {
        format!("{v:.2}")
    }
}

fn type_cell(map: &BTreeMap<ConnectionType, TallyAccuracy>, t: ConnectionType) -> String {
    map.get(&t).map(|a| fmt_pct(a.pct())).unwrap_or_else(|| "-".into())
}

fn length_cell(map: &BTreeMap<usize, TallyAccuracy>, l: usize) -> String {
    map.get(&l).map(|a| fmt_pct(a.pct())).unwrap_or_else(|| "-".into())
}

fn markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("# Evaluation report\n");

    s.push_str("\n## Length classifier confusion (%)\n\n");
    match &report.length_confusion {
        Some(m) => {
            s.push_str("| truth \\ prediction | (1) | (2) | (3) | (4) |\n");
            s.push_str("|---|---|---|---|---|\n");
            for (t, row) in m.percent().iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|&v| fmt_confusion_cell(v)).collect();
                s.push_str(&format!("| ({}) | {} |\n", t + 1, cells.join(" | ")));
            }
        }
        None => s.push_str("(no samples)\n"),
    }
    s.push_str("\nPublished reference:\n\n");
    s.push_str("| truth \\ prediction | (1) | (2) | (3) | (4) |\n");
    s.push_str("|---|---|---|---|---|\n");
    for (t, row) in paper::LENGTH_CONFUSION.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_confusion_cell(v)).collect();
        s.push_str(&format!("| ({}) | {} |\n", t + 1, cells.join(" | ")));
    }

    s.push_str("\n## Classifier recognition rates (%)\n\n");
    s.push_str("| Classifier | Top-1 (ours) | Top-2 (ours) | Top-1 (paper) | Top-2 (paper) |\n");
    s.push_str("|---|---|---|---|---|\n");
    let paper_rates: BTreeMap<&str, (f64, f64)> = paper::DIGIT_RATES
        .iter()
        .map(|&(n, a, b)| (n, (a, b)))
        .chain(std::iter::once(("length", paper::LENGTH_TOPK)))
        .collect();
    if report.classifier_rates.is_empty() {
        s.push_str("| (no samples) | - | - | - | - |\n");
    }
    for (name, rates) in &report.classifier_rates {
        let (p1, p2) = paper_rates
            .get(name.as_str())
            .copied()
            .unwrap_or((f64::NAN, f64::NAN));
        let paper1 = if p1.is_nan() { "-".into() } else { fmt_pct(p1) };
        let paper2 = if p2.is_nan() { "-".into() } else { fmt_pct(p2) };
        s.push_str(&format!(
            "| {name} | {} | {} | {paper1} | {paper2} |\n",
            fmt_pct(rates.top1_pct),
            fmt_pct(rates.top2_pct),
        ));
    }

    s.push_str("\n## Accuracy by connection type (%)\n\n");
    s.push_str("| Method | Overall | I | II | III | V | Cuts |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for row in &paper::TP_RESULTS {
        s.push_str(&format!(
            "| {} (paper) | {} | {} | {} | {} | {} | {} |\n",
            row.method,
            fmt_pct(row.overall),
            fmt_pct(row.by_type[0]),
            fmt_pct(row.by_type[1]),
            fmt_pct(row.by_type[2]),
            fmt_pct(row.by_type[3]),
            row.cuts
        ));
    }
    if report.pipelines.is_empty() {
        s.push_str("| ours (no samples) | - | - | - | - | - | - |\n");
    }
    for p in &report.pipelines {
        if p.samples == 0 {
            s.push_str(&format!("| {} (ours) | (no samples) | - | - | - | - | 0 |\n", p.pipeline));
            continue;
        }
        s.push_str(&format!(
            "| {} (ours) | {} | {} | {} | {} | {} | 0 |\n",
            p.pipeline,
            fmt_pct(p.accuracy_pct()),
            type_cell(&p.per_connection_type, ConnectionType::I),
            type_cell(&p.per_connection_type, ConnectionType::II),
            type_cell(&p.per_connection_type, ConnectionType::III),
            type_cell(&p.per_connection_type, ConnectionType::V),
        ));
    }

    s.push_str("\n## Accuracy by string length (%)\n\n");
    s.push_str("| Method | Single digit | 2-digit | 3-digit |\n");
    s.push_str("|---|---|---|---|\n");
    for &(method, single, pair, triple) in &paper::SYNTHETIC_RESULTS {
        s.push_str(&format!(
            "| {method} (paper) | {} | {} | {} |\n",
            fmt_pct(single),
            fmt_pct(pair),
            fmt_pct(triple)
        ));
    }
    if report.pipelines.is_empty() {
        s.push_str("| ours (no samples) | - | - | - |\n");
    }
    for p in &report.pipelines {
        if p.samples == 0 {
            s.push_str(&format!("| {} (ours) | (no samples) | - | - |\n", p.pipeline));
            continue;
        }
        s.push_str(&format!(
            "| {} (ours) | {} | {} | {} |\n",
            p.pipeline,
            length_cell(&p.per_length, 1),
            length_cell(&p.per_length, 2),
            length_cell(&p.per_length, 3),
        ));
    }

    s.push_str("\n## Error attribution (%)\n\n");
    s.push_str(&format!(
        "Published reference for end-to-end+L on pairs: total {} = length {} + digits {} - overlap {:.2}.\n\n",
        paper::ERROR_SPLIT.0,
        paper::ERROR_SPLIT.1,
        paper::ERROR_SPLIT.2,
        paper::ERROR_SPLIT.1 + paper::ERROR_SPLIT.2 - paper::ERROR_SPLIT.0
    ));
    s.push_str("| Pipeline | Total | From length | From digits | Overlap |\n");
    s.push_str("|---|---|---|---|---|\n");
    if report.pipelines.is_empty() {
        s.push_str("| (no samples) | - | - | - | - |\n");
    }
    for p in &report.pipelines {
        if p.samples == 0 {
            s.push_str(&format!("| {} | (no samples) | - | - | - |\n", p.pipeline));
            continue;
        }
        let a = &p.attribution;
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            p.pipeline,
            fmt_pct(a.total_pct()),
            fmt_pct(a.from_length_pct()),
            fmt_pct(a.from_digits_pct()),
            fmt_pct(a.overlap_pct()),
        ));
    }
    s
}

fn csv(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("section,item,metric,value\n");
    if let Some(m) = &report.length_confusion {
        for (t, row) in m.percent().iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                s.push_str(&format!(
                    "length_confusion,truth_{},pred_{},{}\n",
                    t + 1,
                    p + 1,
                    fmt_pct(*v)
                ));
            }
        }
    }
    for (name, rates) in &report.classifier_rates {
        s.push_str(&format!(
            "classifier_rates,{name},top1,{}\n",
            fmt_pct(rates.top1_pct)
        ));
        s.push_str(&format!(
            "classifier_rates,{name},top2,{}\n",
            fmt_pct(rates.top2_pct)
        ));
    }
    for p in &report.pipelines {
        if p.samples == 0 {
            s.push_str(&format!("pipeline,{},samples,no samples\n", p.pipeline));
            continue;
        }
        s.push_str(&format!("pipeline,{},samples,{}\n", p.pipeline, p.samples));
        s.push_str(&format!(
            "pipeline,{},accuracy,{}\n",
            p.pipeline,
            fmt_pct(p.accuracy_pct())
        ));
        s.push_str(&format!("pipeline,{},rejects,{}\n", p.pipeline, p.rejects));
        for (t, a) in &p.per_connection_type {
            s.push_str(&format!(
                "pipeline,{},type_{t},{}\n",
                p.pipeline,
                fmt_pct(a.pct())
            ));
        }
        for (l, a) in &p.per_length {
            s.push_str(&format!(
                "pipeline,{},length_{l},{}\n",
                p.pipeline,
                fmt_pct(a.pct())
            ));
        }
        let at = &p.attribution;
        s.push_str(&format!(
            "pipeline,{},error_total,{}\n",
            p.pipeline,
            fmt_pct(at.total_pct())
        ));
        s.push_str(&format!(
            "pipeline,{},error_from_length,{}\n",
            p.pipeline,
            fmt_pct(at.from_length_pct())
        ));
        s.push_str(&format!(
            "pipeline,{},error_from_digits,{}\n",
            p.pipeline,
            fmt_pct(at.from_digits_pct())
        ));
        s.push_str(&format!(
            "pipeline,{},error_overlap,{}\n",
            p.pipeline,
            fmt_pct(at.overlap_pct())
        ));
    }
    s
}

/// Deterministic serialization of a report.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Csv => csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
    })
}
