//! Precision, recall and F1 in the two aggregation modes used for reporting:
//! positive-class (binary tasks) and support-weighted (multi-class tasks).

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Rows are gold labels, columns are predictions, both in label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }
}

pub fn confusion<G: AsRef<str>, P: AsRef<str>>(gold: &[G], pred: &[P], labels: &[String]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "gold has {} entries but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let index = |label: &str| {
        labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Input(format!("unknown label {label:?}")))
    };
    let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
    for (g, p) in gold.iter().zip(pred) {
        counts[index(g.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "positive_label")]
pub enum AggregateMode {
    PositiveClass(String),
    Weighted,
}

impl AggregateMode {
    fn name(&self) -> &'static str {
        match self {
            AggregateMode::PositiveClass(_) => "positive_class",
            AggregateMode::Weighted => "weighted",
        }
    }
}

fn three_decimals<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((value * 1000.0).round() / 1000.0)
}

/// Per-class scores, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    #[serde(serialize_with = "three_decimals")]
    pub precision: f64,
    #[serde(serialize_with = "three_decimals")]
    pub recall: f64,
    #[serde(serialize_with = "three_decimals")]
    pub f1: f64,
    /// Gold count.
    pub support: u64,
    /// Predicted count.
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub mode: AggregateMode,
    pub per_class: Vec<ClassMetrics>,
    #[serde(serialize_with = "three_decimals")]
    pub precision: f64,
    #[serde(serialize_with = "three_decimals")]
    pub recall: f64,
    #[serde(serialize_with = "three_decimals")]
    pub f1: f64,
    pub n_examples: u64,
    /// Metrics that hit a zero denominator and were set to 0, as `label:metric`.
    pub zero_division: Vec<String>,
}

pub fn metrics(cm: &ConfusionMatrix, mode: &AggregateMode, model: &str) -> Result<EvalReport> {
    let k = cm.labels.len();
    let mut zero_division = Vec::new();
    let ratio = |num: u64, den: u64, flags: &mut Vec<String>, label: &str, what: &str| {
        if den == 0 {
            flags.push(format!("{label}:{what}"));
            0.0
        } else {
            100.0 * num as f64 / den as f64
        }
    };
    let mut per_class = Vec::with_capacity(k);
    for i in 0..k {
        let tp = cm.counts[i][i];
        let support: u64 = cm.counts[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let label = &cm.labels[i];
        let precision = ratio(tp, predicted, &mut zero_division, label, "precision");
        let recall = ratio(tp, support, &mut zero_division, label, "recall");
        let f1 = if precision + recall == 0.0 {
            zero_division.push(format!("{label}:f1"));
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: label.clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }

    let (precision, recall, f1) = match mode {
        AggregateMode::PositiveClass(positive) => {
            if k != 2 {
                return Err(Error::Mode(format!("positive-class metrics need 2 labels, got {k}")));
            }
            let c = per_class.iter().find(|c| &c.label == positive).ok_or_else(|| {
                Error::Mode(format!("positive label {positive:?} not among {:?}", cm.labels))
            })?;
            (c.precision, c.recall, c.f1)
        }
        AggregateMode::Weighted => {
            let total: u64 = per_class.iter().map(|c| c.support).sum();
            if total == 0 {
                (0.0, 0.0, 0.0)
            } else {
                let w = |f: fn(&ClassMetrics) -> f64| {
                    per_class.iter().map(|c| c.support as f64 * f(c)).sum::<f64>() / total as f64
                };
                (w(|c| c.precision), w(|c| c.recall), w(|c| c.f1))
            }
        }
    };
    Ok(EvalReport {
        model: model.to_string(),
        mode: mode.clone(),
        per_class,
        precision,
        recall,
        f1,
        n_examples: cm.total(),
        zero_division,
    })
}

/// Clean F1 minus private F1, in percentage points. Negative when the
/// private model scores higher.
pub fn f1_drop(clean: &EvalReport, private: &EvalReport) -> Result<f64> {
    if clean.mode != private.mode {
        return Err(Error::Input(format!(
            "cannot compare {} report with {} report",
            clean.mode.name(),
            private.mode.name()
        )));
    }
    Ok(clean.f1 - private.f1)
}

/// Plain-text table with one row per report: Model, Precision, Recall, F1.
pub fn render_table(reports: &[&EvalReport]) -> String {
    let header = ["Model", "Precision", "Recall", "F1"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.3}", r.precision),
                format!("{:.3}", r.recall),
                format!("{:.3}", r.f1),
            ]
        })
        .collect();
    let width = |col: usize| {
        rows.iter()
            .map(|r| r[col].chars().count())
            .chain([header[col].len()])
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..4).map(width).collect();
    let line = |cells: [&str; 4]| {
        let mut out = format!("{:<w$}", cells[0], w = widths[0]);
        for c in 1..4 {
            out.push_str(&format!("  {:>w$}", cells[c], w = widths[c]));
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 6));
    out.push('\n');
    for r in &rows {
        out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
    }
    out
}
