//! Training, evaluation and the experiment drivers behind the CLI.

mod checks;
mod eval;
mod experiments;
pub mod report;
mod train;

pub use checks::{gradient_suite, selftest, CheckResult};
pub use eval::{confusion, evaluate, ratio_label, AccuracyRow, AccuracyTable, ConfusionMatrix};
pub use experiments::{ablate, parse_grid, standard_grid, sweep, Ablation, GridAxis, SweepPoint};
pub use train::{lr_at, train, EpochStats, TrainOutcome};

use std::fmt::Write as _;

use crate::config::{join, KeyValues, MODEL_KEYS};
use crate::error::{Error, Result};
use crate::predictor::ModelConfig;
use crate::synth::{CorpusConfig, SpriteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum: `v = momentum·v + g; p -= lr·v`.
    Sgd,
    /// Adam with `beta1 = momentum`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub decay_rate: f64,
    /// 0-based epochs at whose start the rate is multiplied by `decay_rate`.
    pub decay_epochs: Vec<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 0.001,
            momentum: 0.9,
            decay_rate: 0.1,
            decay_epochs: vec![5, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::staircase(0.3, 0);
        let mut model = ModelConfig::default();
        model.frame = corpus.shape;
        model.num_classes = corpus.classes.len();
        Self {
            seed: 0,
            corpus,
            model,
            optimizer: OptimizerConfig::default(),
            epochs: 10,
            batch_size: 8,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "corpus.ambiguity_ratio",
    "corpus.train_per_class",
    "corpus.test_per_class",
    "corpus.frames",
    "corpus.shape",
    "corpus.noise_sigma",
    "corpus.speed_jitter",
    "corpus.sprite",
    "corpus.sprite_size",
    "optimizer.kind",
    "optimizer.lr",
    "optimizer.momentum",
    "optimizer.decay_rate",
    "optimizer.decay_epochs",
    "train.epochs",
    "train.batch_size",
];

impl TrainConfig {
    /// Defaults overridden by `kv`. Unknown keys are errors.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut known = KEYS.to_vec();
        known.extend_from_slice(MODEL_KEYS);
        kv.reject_unknown(&known)?;
        let defaults = Self::default();

        let seed = kv.parse_or("seed", defaults.seed)?;
        let ambiguity = kv.parse_or("corpus.ambiguity_ratio", 0.3)?;
        let mut corpus = CorpusConfig::staircase(ambiguity, seed);
        corpus.train_per_class = kv.parse_or("corpus.train_per_class", corpus.train_per_class)?;
        corpus.test_per_class = kv.parse_or("corpus.test_per_class", corpus.test_per_class)?;
        corpus.frames = kv.parse_or("corpus.frames", corpus.frames)?;
        if let Some(v) = kv.get("corpus.shape") {
            match crate::config::parse_list::<usize>(v).map_err(Error::Config)?[..] {
                [c, h, w] => corpus.shape = (c, h, w),
                _ => return Err(Error::Config(format!("corpus.shape = {v:?}: expected C,H,W"))),
            }
        }
        corpus.noise_sigma = kv.parse_or("corpus.noise_sigma", corpus.noise_sigma)?;
        corpus.speed_jitter = kv.parse_or("corpus.speed_jitter", corpus.speed_jitter)?;
        let kind = match kv.get("corpus.sprite").unwrap_or("square") {
            "square" => SpriteKind::Square,
            "disc" => SpriteKind::Disc,
            other => return Err(Error::Config(format!("corpus.sprite = {other:?}: expected square or disc"))),
        };
        let size = kv.parse_or("corpus.sprite_size", corpus.classes[0].sprite.size)?;
        for c in &mut corpus.classes {
            c.sprite.kind = kind;
            c.sprite.size = size;
        }

        let mut model = ModelConfig::default();
        model.apply(kv)?;
        model.frame = corpus.shape;
        model.num_classes = corpus.classes.len();

        let d = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            kind: kv.parse_or("optimizer.kind", d.kind)?,
            lr: kv.parse_or("optimizer.lr", d.lr)?,
            momentum: kv.parse_or("optimizer.momentum", d.momentum)?,
            decay_rate: kv.parse_or("optimizer.decay_rate", d.decay_rate)?,
            decay_epochs: kv.list_or("optimizer.decay_epochs", d.decay_epochs)?,
        };
        let cfg = Self {
            seed,
            corpus,
            model,
            optimizer,
            epochs: kv.parse_or("train.epochs", defaults.epochs)?,
            batch_size: kv.parse_or("train.batch_size", defaults.batch_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config(format!("optimizer.lr must be positive, got {}", self.optimizer.lr)));
        }
        self.check_runnable()
    }

    /// Everything [`TrainConfig::validate`] checks except that a zero
    /// learning rate is allowed.
    pub(crate) fn check_runnable(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !o.lr.is_finite() {
            return Err(Error::Config(format!("optimizer.lr must be non-negative, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("optimizer.momentum must be in [0, 1), got {}", o.momentum)));
        }
        if !(o.decay_rate > 0.0) {
            return Err(Error::Config("optimizer.decay_rate must be positive".into()));
        }
        if o.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("optimizer.decay_epochs must be strictly increasing".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.corpus.seed != self.seed {
            return Err(Error::Config("corpus seed must equal the run seed".into()));
        }
        self.corpus.validate()?;
        crate::predictor::Model::new(self.model.clone(), self.seed).map(|_| ())
    }

    /// Every effective setting as `key = value` lines; parses back to `self`.
    pub fn resolved(&self) -> String {
        let c = &self.corpus;
        let o = &self.optimizer;
        let m = &self.model;
        let sprite = c.classes[0].sprite;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "corpus.ambiguity_ratio = {}", c.ambiguity_ratio);
        let _ = writeln!(s, "corpus.train_per_class = {}", c.train_per_class);
        let _ = writeln!(s, "corpus.test_per_class = {}", c.test_per_class);
        let _ = writeln!(s, "corpus.frames = {}", c.frames);
        let _ = writeln!(s, "corpus.shape = {},{},{}", c.shape.0, c.shape.1, c.shape.2);
        let _ = writeln!(s, "corpus.noise_sigma = {}", c.noise_sigma);
        let _ = writeln!(s, "corpus.speed_jitter = {}", c.speed_jitter);
        let _ = writeln!(
            s,
            "corpus.sprite = {}",
            match sprite.kind {
                SpriteKind::Square => "square",
                SpriteKind::Disc => "disc",
            }
        );
        let _ = writeln!(s, "corpus.sprite_size = {}", sprite.size);
        let _ = writeln!(s, "model.mode = {}", m.mode.as_str());
        let _ = writeln!(s, "model.segments = {}", m.segments);
        let _ = writeln!(s, "model.hidden = {}", m.hidden);
        let _ = writeln!(s, "model.dropout = {}", m.dropout);
        let _ = writeln!(s, "model.diff_channels = {}", join(&m.encoder.diff_channels));
        let _ = writeln!(s, "model.frame_channels = {}", join(&m.encoder.frame_channels));
        let _ = writeln!(s, "model.out_channels = {}", join(&m.encoder.out_channels));
        let _ = writeln!(s, "model.diff2_channels = {}", join(&m.encoder.diff2_channels));
        let _ = writeln!(s, "model.kernel = {}", m.encoder.kernel);
        let _ = writeln!(s, "optimizer.kind = {}", o.kind.as_str());
        let _ = writeln!(s, "optimizer.lr = {}", o.lr);
        let _ = writeln!(s, "optimizer.momentum = {}", o.momentum);
        let _ = writeln!(s, "optimizer.decay_rate = {}", o.decay_rate);
        let _ = writeln!(s, "optimizer.decay_epochs = {}", join(&o.decay_epochs));
        let _ = writeln!(s, "train.epochs = {}", self.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.batch_size);
        s
    }

    /// Same config with one `key = value` replaced.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(&self.resolved())?;
        kv.set(key, value);
        Self::from_kv(&kv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_round_trips() {
        let kv = KeyValues::parse("seed = 5\nmodel.hidden = 17\noptimizer.decay_epochs = 60, 100\ncorpus.sprite = disc").unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.model.hidden, 17);
        assert_eq!(cfg.corpus.seed, 5);
        let back = TrainConfig::from_kv(&KeyValues::parse(&cfg.resolved()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_settings() {
        for bad in ["optimizer.lr = 0", "optimizer.decay_epochs = 25,15", "train.batch_size = 0", "model.mode = both", "bogus = 1"] {
            assert!(TrainConfig::from_kv(&KeyValues::parse(bad).unwrap()).is_err(), "{bad}");
        }
    }

    #[test]
    fn with_overrides_one_key() {
        let cfg = TrainConfig::default().with("optimizer.lr", "0.0005").unwrap();
        assert_eq!(cfg.optimizer.lr, 0.0005);
        assert_eq!(cfg.epochs, TrainConfig::default().epochs);
    }
}
