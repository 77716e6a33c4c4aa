use super::eval::{evaluate, AccuracyTable};
use super::train::{train, EpochStats};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::predictor::Mode;
use crate::synth::{generate_corpus, Corpus};

/// Full and segment-only models trained on one corpus with one seed.
#[derive(Debug, Clone)]
pub struct Ablation {
    /// Methods `segment_only` then `full`, each over every ratio.
    pub table: AccuracyTable,
    /// `accuracy(full) - accuracy(segment_only)` per ratio.
    pub spread: Vec<f64>,
}

pub fn ablate(cfg: &TrainConfig, corpus: &Corpus, mut on_epoch: impl FnMut(Mode, &EpochStats)) -> Result<Ablation> {
    let mut table = AccuracyTable::default();
    for mode in [Mode::SegmentOnly, Mode::Full] {
        let mut run = cfg.clone();
        run.model.mode = mode;
        let outcome = train(&run, &corpus.train, |e| on_epoch(mode, e))?;
        let segments = run.model.segments;
        table.extend(evaluate(&outcome.model, &corpus.test, segments, mode.as_str())?);
    }
    let spread = table
        .rows_for(Mode::Full.as_str())
        .zip(table.rows_for(Mode::SegmentOnly.as_str()))
        .map(|(f, s)| f.accuracy() - s.accuracy())
        .collect();
    Ok(Ablation { table, spread })
}

/// One swept setting and the values it takes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `key=v1|v2|v3`.
pub fn parse_grid(spec: &str) -> Result<GridAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid axis {spec:?} is not key=v1|v2")))?;
    let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).collect();
    if key.trim().is_empty() || values.iter().any(String::is_empty) {
        return Err(Error::Config(format!("grid axis {spec:?} has an empty key or value")));
    }
    Ok(GridAxis {
        key: key.trim().to_string(),
        values,
    })
}

/// LSTM width, learning rate and decay schedule, each varied alone.
pub fn standard_grid() -> Vec<GridAxis> {
    [
        "model.hidden=512|1024|2048",
        "optimizer.lr=0.0001|0.0005|0.001",
        "optimizer.decay_epochs=20,80|40,100|60,100",
    ]
    .iter()
    .map(|s| parse_grid(s).expect("valid grid literal"))
    .collect()
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// `None` for the base run of an empty grid.
    pub setting: Option<(String, String)>,
    pub config: TrainConfig,
    pub table: AccuracyTable,
    pub history: Vec<EpochStats>,
}

impl SweepPoint {
    /// Directory-safe label such as `model.hidden=512` or `base`.
    pub fn label(&self) -> String {
        point_label(self.setting.as_ref())
    }
}

fn point_label(setting: Option<&(String, String)>) -> String {
    match setting {
        None => "base".into(),
        Some((k, v)) => format!("{k}={}", v.replace(',', "_")),
    }
}

/// One run per grid value, changing a single setting at a time from `base`.
/// An empty grid runs `base` alone.
pub fn sweep(base: &TrainConfig, grid: &[GridAxis], mut on_point: impl FnMut(&SweepPoint)) -> Result<Vec<SweepPoint>> {
    let mut plan: Vec<(Option<(String, String)>, TrainConfig)> = Vec::new();
    if grid.is_empty() {
        plan.push((None, base.clone()));
    }
    for axis in grid {
        for v in &axis.values {
            plan.push((Some((axis.key.clone(), v.clone())), base.with(&axis.key, v)?));
        }
    }
    let base_corpus = generate_corpus(&base.corpus)?;
    let mut out = Vec::with_capacity(plan.len());
    for (setting, config) in plan {
        let fresh;
        let corpus = if config.corpus == base.corpus {
            &base_corpus
        } else {
            fresh = generate_corpus(&config.corpus)?;
            &fresh
        };
        let outcome = train(&config, &corpus.train, |_| {})?;
        let method = point_label(setting.as_ref());
        let table = evaluate(&outcome.model, &corpus.test, config.model.segments, &method)?;
        let point = SweepPoint {
            setting,
            config,
            table,
            history: outcome.history,
        };
        on_point(&point);
        out.push(point);
    }
    Ok(out)
}
