//! Confusion counts, F1 and MCC. Accept (label 1) is the positive class.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no samples to score")]
    Empty,
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The matrix obtained by flipping every prediction.
    pub fn inverted_predictions(&self) -> Self {
        Self::new(self.fn_, self.tn, self.tp, self.fp)
    }

    /// The matrix seen when label 0 is treated as the positive class.
    pub fn swapped_positive(&self) -> Self {
        Self::new(self.tn, self.fn_, self.fp, self.tp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self)
    }

    pub fn mcc(&self) -> f64 {
        mcc(self)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            (bad, 0 | 1) | (_, bad) => return Err(MetricsError::BadLabel(bad)),
        }
    }
    Ok(cm)
}

pub fn f1(cm: &ConfusionMatrix) -> f64 {
    let (p, r) = (cm.precision(), cm.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub repo: String,
    pub cm: ConfusionMatrix,
}

pub const REPORT_HEADER: &str = "repo,samples,tp,fp,fn,tn,precision,recall,f1,mcc";

/// CSV report with a header line. Repo names containing commas or quotes are quoted.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for row in rows {
        let cm = &row.cm;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            csv_field(&row.repo),
            cm.total(),
            cm.tp,
            cm.fp,
            cm.fn_,
            cm.tn,
            cm.precision(),
            cm.recall(),
            cm.f1(),
            cm.mcc()
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
