use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictor::Model;
use crate::synth::Clip;

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub method: String,
    /// Observed segments.
    pub k: usize,
    pub segments: usize,
    pub correct: usize,
    pub count: usize,
}

impl AccuracyRow {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }

    pub fn ratio(&self) -> f64 {
        self.k as f64 / self.segments as f64
    }

    /// `k/K` as a decimal string: exact when it terminates within six
    /// places (`0.1`, `0.25`, `1.0`), otherwise rounded to six.
    pub fn ratio_label(&self) -> String {
        ratio_label(self.k, self.segments)
    }
}

pub fn ratio_label(k: usize, segments: usize) -> String {
    let whole = k / segments;
    let mut rem = k % segments;
    if rem == 0 {
        return format!("{whole}.0");
    }
    let mut digits = String::new();
    for _ in 0..6 {
        rem *= 10;
        digits.push(char::from(b'0' + (rem / segments) as u8));
        rem %= segments;
        if rem == 0 {
            return format!("{whole}.{digits}");
        }
    }
    format!("{:.6}", k as f64 / segments as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyTable {
    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a AccuracyRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Mean of the per-ratio accuracies of `method`.
    pub fn average(&self, method: &str) -> Option<f64> {
        let accs: Vec<f64> = self.rows_for(method).map(AccuracyRow::accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn accuracy_at(&self, method: &str, k: usize) -> Option<f64> {
        self.rows_for(method).find(|r| r.k == k).map(AccuracyRow::accuracy)
    }

    pub fn extend(&mut self, other: AccuracyTable) {
        self.rows.extend(other.rows);
    }
}

fn predictions(model: &Model, clips: &[Clip], k: usize, segments: usize) -> Result<Vec<Vec<usize>>> {
    clips
        .par_iter()
        .map(|clip| {
            Ok(model
                .predict_partial(&clip.video, k, segments)?
                .iter()
                .map(|o| o.argmax())
                .collect())
        })
        .collect()
}

/// Accuracy at every ratio `k/segments`, `k = 1..=segments`.
///
/// One `predict_partial(video, K)` call per clip supplies all ratios: its
/// step-`k` output equals `predict_partial(video, k)`'s last output exactly,
/// since both read the same frames with the same deterministic sampling.
pub fn evaluate(model: &Model, clips: &[Clip], segments: usize, method: &str) -> Result<AccuracyTable> {
    if clips.is_empty() {
        return Err(Error::Input("no evaluation clips".into()));
    }
    let preds = predictions(model, clips, segments, segments)?;
    let rows = (1..=segments)
        .map(|k| AccuracyRow {
            method: method.to_string(),
            k,
            segments,
            correct: clips
                .iter()
                .zip(&preds)
                .filter(|(c, p)| p[k - 1] == c.video.label)
                .count(),
            count: clips.len(),
        })
        .collect();
    Ok(AccuracyTable { rows })
}

/// Row = true label, column = prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub segments: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn confusion(model: &Model, clips: &[Clip], k: usize, segments: usize) -> Result<ConfusionMatrix> {
    let n = model.config.num_classes;
    let preds = predictions(model, clips, k, segments)?;
    let mut counts = vec![vec![0; n]; n];
    for (clip, p) in clips.iter().zip(&preds) {
        let label = clip.video.label;
        if label >= n {
            return Err(Error::Input(format!("clip {} has label {label} outside {n} classes", clip.video.id)));
        }
        counts[label][p[k - 1]] += 1;
    }
    Ok(ConfusionMatrix { k, segments, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_labels() {
        let labels: Vec<String> = (1..=10).map(|k| ratio_label(k, 10)).collect();
        assert_eq!(labels, ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"]);
        assert_eq!(ratio_label(1, 4), "0.25");
        assert_eq!(ratio_label(1, 3), "0.333333");
    }

    #[test]
    fn table_average() {
        let t = AccuracyTable {
            rows: (1..=4)
                .map(|k| AccuracyRow {
                    method: "m".into(),
                    k,
                    segments: 4,
                    correct: k,
                    count: 4,
                })
                .collect(),
        };
        assert_eq!(t.average("m"), Some(0.625));
        assert_eq!(t.accuracy_at("m", 2), Some(0.5));
        assert_eq!(t.methods(), vec!["m"]);
        assert_eq!(t.average("x"), None);
    }
}
