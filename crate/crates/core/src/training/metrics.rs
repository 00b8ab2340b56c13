use super::TrainError;

/// Confusion matrix (rows true, columns predicted) and macro-averaged scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self, TrainError> {
        let n = confusion.len();
        if n == 0 || confusion.iter().any(|r| r.len() != n) {
            return Err(TrainError::Config("confusion matrix must be square and non-empty".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(TrainError::EmptySplit("no evaluated trials".into()));
        }
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..n {
            let tp = confusion[c][c];
            let row: u64 = confusion[c].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[c]).sum();
            let p = ratio(tp, col);
            let r = ratio(tp, row);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            p_sum += p;
            r_sum += r;
            f_sum += f;
        }
        Ok(Self {
            accuracy: trace as f64 / total as f64,
            macro_precision: p_sum / n as f64,
            macro_recall: r_sum / n as f64,
            macro_f1: f_sum / n as f64,
            confusion,
        })
    }

    pub fn from_predictions(
        truth: &[u8],
        predicted: &[u8],
        n_classes: usize,
    ) -> Result<Self, TrainError> {
        if truth.len() != predicted.len() {
            return Err(TrainError::Config(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= n_classes || p as usize >= n_classes {
                return Err(TrainError::Config(format!(
                    "label {t} or prediction {p} outside {n_classes} classes"
                )));
            }
            confusion[t as usize][p as usize] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Metrics of the summed confusion matrices.
    pub fn pooled(parts: &[Metrics]) -> Result<Self, TrainError> {
        let first = parts
            .first()
            .ok_or_else(|| TrainError::EmptySplit("nothing to pool".into()))?;
        let n = first.confusion.len();
        let mut sum = vec![vec![0u64; n]; n];
        for m in parts {
            if m.confusion.len() != n {
                return Err(TrainError::Config("confusion sizes differ".into()));
            }
            for (dst, src) in sum.iter_mut().zip(&m.confusion) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Self::from_confusion(sum)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    /// `accuracy,macro_precision,macro_recall,macro_f1` in percent.
    pub fn summary_percent(&self) -> [String; 4] {
        [
            self.accuracy,
            self.macro_precision,
            self.macro_recall,
            self.macro_f1,
        ]
        .map(|v| format!("{:.2}", 100.0 * v))
    }

    /// Confusion rows under a class-name header, then the percent summary.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String, TrainError> {
        if class_names.len() != self.confusion.len() {
            return Err(TrainError::Config(format!(
                "{} class names for a {}-class confusion matrix",
                class_names.len(),
                self.confusion.len()
            )));
        }
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        w.write_record(class_names)?;
        for row in &self.confusion {
            w.write_record(row.iter().map(u64::to_string))?;
        }
        w.write_record(["accuracy", "macro_precision", "macro_recall", "macro_f1"])?;
        w.write_record(self.summary_percent())?;
        let bytes = w.into_inner().map_err(|e| TrainError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Reads [`Self::to_csv`] output back: class names and the metrics
    /// recomputed from the confusion rows.
    pub fn from_csv(text: &str) -> Result<(Vec<String>, Self), TrainError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = r.records();
        let header = records
            .next()
            .ok_or_else(|| TrainError::Csv("empty metrics file".into()))??;
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        let n = names.len();
        let mut confusion = Vec::with_capacity(n);
        for i in 0..n {
            let rec = records
                .next()
                .ok_or_else(|| TrainError::Csv(format!("missing confusion row {}", i + 1)))??;
            if rec.len() != n {
                return Err(TrainError::Csv(format!(
                    "confusion row {} has {} fields, expected {n}",
                    i + 1,
                    rec.len()
                )));
            }
            let row = rec
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<u64>()
                        .map_err(|_| TrainError::Csv(format!("bad count {v:?} in row {}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            confusion.push(row);
        }
        Ok((names, Self::from_confusion(confusion)?))
    }
}
