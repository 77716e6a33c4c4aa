//! Observed-global scale: an LSTM folds segment features in order and a
//! linear head emits class logits after every segment.

use std::fmt::Write as _;

use crate::autodiff::{Tape, Var};
use crate::encoder::{stack_inputs, EncoderConfig, SegmentEncoderSpec, SegmentFeature};
use crate::error::{Error, Result};
use crate::ops::{LinearSpec, LstmSpec};
use crate::params::{rng_for, Bound, ParamStore, Rng};
use crate::tensor::Tensor;
use crate::video::{partial, sample_frames, sample_span, split_segments, FullVideo, SampleMode, SampledSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Segment encoder followed by the LSTM.
    Full,
    /// One window spanning the observed prefix, classified directly from its
    /// segment feature.
    SegmentOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::SegmentOnly => "segment_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "segment_only" => Ok(Mode::SegmentOnly),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected full or segment_only)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Frame shape `(C, H, W)`.
    pub frame: (usize, usize, usize),
    pub num_classes: usize,
    /// Segments per clip, `K`.
    pub segments: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub encoder: EncoderConfig,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame: (3, 32, 32),
            num_classes: 4,
            segments: 10,
            hidden: 64,
            dropout: 0.5,
            encoder: EncoderConfig::default(),
            mode: Mode::Full,
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Stable `key = value` rendering; checkpoints hash and store it.
    pub fn canonical(&self) -> String {
        let (c, h, w) = self.frame;
        let e = &self.encoder;
        let mut s = String::new();
        let _ = writeln!(s, "model.frame = {c},{h},{w}");
        let _ = writeln!(s, "model.classes = {}", self.num_classes);
        let _ = writeln!(s, "model.segments = {}", self.segments);
        let _ = writeln!(s, "model.mode = {}", self.mode.as_str());
        let _ = writeln!(s, "model.hidden = {}", self.hidden);
        let _ = writeln!(s, "model.dropout = {}", self.dropout);
        let _ = writeln!(s, "model.diff_channels = {}", join(&e.diff_channels));
        let _ = writeln!(s, "model.frame_channels = {}", join(&e.frame_channels));
        let _ = writeln!(s, "model.out_channels = {}", join(&e.out_channels));
        let _ = writeln!(s, "model.diff2_channels = {}", join(&e.diff2_channels));
        let _ = writeln!(s, "model.kernel = {}", e.kernel);
        s
    }

    /// FNV-1a over [`ModelConfig::canonical`].
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Recurrent state carried between segments of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub h: Tensor,
    pub c: Tensor,
    pub segments_seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Tensor,
    /// Segments observed so far.
    pub k: usize,
    /// `k / K` for the model's segment count.
    pub ratio: f64,
}

impl StepOutput {
    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(self.logits.data())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Tape outputs of one training or checking pass over a clip.
#[derive(Debug, Clone)]
pub struct ClipForward {
    /// Mean cross-entropy over all `K` steps.
    pub loss: Var,
    pub logits: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: SegmentEncoderSpec,
    pub lstm: Option<LstmSpec>,
    pub head: LinearSpec,
    pub params: ParamStore,
}

impl Model {
    fn specs(config: &ModelConfig) -> Result<(SegmentEncoderSpec, Option<LstmSpec>, LinearSpec)> {
        if config.num_classes == 0 || config.segments == 0 {
            return Err(Error::Config("classes and segments must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", config.dropout)));
        }
        let encoder = SegmentEncoderSpec::new(config.frame, &config.encoder)?;
        let (lstm, head_in) = match config.mode {
            Mode::Full => {
                if config.hidden == 0 {
                    return Err(Error::Config("hidden size must be positive".into()));
                }
                (Some(LstmSpec::new("global.lstm", encoder.feature_dim, config.hidden)), config.hidden)
            }
            Mode::SegmentOnly => (None, encoder.feature_dim),
        };
        let head = LinearSpec::new("head", head_in, config.num_classes);
        Ok((encoder, lstm, head))
    }

    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (encoder, lstm, head) = Self::specs(&config)?;
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, &[0x1417]);
        encoder.init(&mut params, &mut rng)?;
        if let Some(l) = &lstm {
            l.init(&mut params, &mut rng)?;
        }
        head.init(&mut params, &mut rng)?;
        Ok(Self {
            config,
            encoder,
            lstm,
            head,
            params,
        })
    }

    /// Wraps existing parameters, checking that names and shapes match the
    /// configuration exactly.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::Config(format!(
                "parameters do not match the model configuration ({} expected, {} given)",
                expected.len(),
                got.len()
            )));
        }
        Ok(Self { params, ..reference })
    }

    pub fn init_state(&self) -> PredictorState {
        let h = self.config.hidden;
        PredictorState {
            h: Tensor::zeros(&[h]),
            c: Tensor::zeros(&[h]),
            segments_seen: 0,
        }
    }

    fn lstm(&self) -> Result<&LstmSpec> {
        self.lstm
            .as_ref()
            .ok_or_else(|| Error::Config("segment_only models have no recurrent state".into()))
    }

    fn head_logits(&self, tape: &mut Tape, bound: &Bound, x: Var, rng: Option<&mut Rng>) -> Result<Var> {
        let x = match rng {
            Some(r) => tape.dropout(x, self.config.dropout, true, r)?,
            None => x,
        };
        self.head.apply(tape, bound, x)
    }

    fn output(&self, logits: Tensor, k: usize) -> Result<StepOutput> {
        if !logits.is_finite() {
            return Err(Error::Contract(format!("non-finite logits at step {k}")));
        }
        Ok(StepOutput {
            logits,
            k,
            ratio: k as f64 / self.config.segments as f64,
        })
    }

    /// Advances `state` by one segment. Passing `rng` selects training mode
    /// (dropout active); `None` is evaluation. The input state is untouched.
    pub fn step(&self, state: &PredictorState, feature: &SegmentFeature, rng: Option<&mut Rng>) -> Result<(PredictorState, StepOutput)> {
        let lstm = self.lstm()?;
        if feature.index != state.segments_seen + 1 {
            return Err(Error::Contract(format!(
                "feature for segment {} does not follow {} observed segments",
                feature.index, state.segments_seen
            )));
        }
        if feature.vector.shape() != [lstm.input_dim] {
            return Err(Error::Config(format!(
                "feature has shape {:?}, the recurrent layer expects [{}]",
                feature.vector.shape(),
                lstm.input_dim
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(feature.vector.clone());
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let (h, c) = lstm.cell(&mut tape, &bound, x, h, c)?;
        let logits = self.head_logits(&mut tape, &bound, h, rng)?;
        let k = state.segments_seen + 1;
        Ok((
            PredictorState {
                h: tape.value(h).clone(),
                c: tape.value(c).clone(),
                segments_seen: k,
            },
            self.output(tape.value(logits).clone(), k)?,
        ))
    }

    /// Whole-sequence evaluation fold over features `1..=k` in one pass.
    pub fn fold_sequence(&self, features: &[SegmentFeature]) -> Result<Vec<StepOutput>> {
        let lstm = self.lstm()?;
        if features.is_empty() {
            return Ok(Vec::new());
        }
        for (i, f) in features.iter().enumerate() {
            if f.index != i + 1 {
                return Err(Error::Contract(format!("feature {i} carries segment index {}", f.index)));
            }
        }
        let mut data = Vec::with_capacity(features.len() * lstm.input_dim);
        for f in features {
            data.extend_from_slice(f.vector.data());
        }
        let xs = Tensor::new(&[features.len(), data.len() / features.len()], data)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xs = tape.constant(xs);
        let hs = lstm.sequence(&mut tape, &bound, xs)?;
        hs.into_iter()
            .enumerate()
            .map(|(j, h)| {
                let logits = self.head_logits(&mut tape, &bound, h, None)?;
                self.output(tape.value(logits).clone(), j + 1)
            })
            .collect()
    }

    /// Encodes one sampled window as segment `index`.
    pub fn encode(&self, sampled: &SampledSegment, index: usize) -> Result<SegmentFeature> {
        Ok(self.encoder.encode_segment(&self.params, sampled, index)?.0)
    }

    /// Evaluation-mode outputs after each of the first `k` of `segments`
    /// segments. Only the frames of `partial(video, k, segments)` are read.
    pub fn predict_partial(&self, video: &FullVideo, k: usize, segments: usize) -> Result<Vec<StepOutput>> {
        let prefix = partial(video, k, segments)?;
        let ratio = |j: usize| j as f64 / segments as f64;
        match self.config.mode {
            Mode::Full => {
                let mut state = self.init_state();
                let mut out = Vec::with_capacity(k);
                for seg in &prefix.segments {
                    let sampled = sample_frames(prefix.segment_frames(seg), seg.start, SampleMode::Deterministic)?;
                    let feature = self.encode(&sampled, seg.index)?;
                    let (next, mut o) = self.step(&state, &feature, None)?;
                    o.ratio = ratio(o.k);
                    out.push(o);
                    state = next;
                }
                Ok(out)
            }
            Mode::SegmentOnly => (1..=k)
                .map(|j| {
                    let end = prefix.segments[j - 1].end;
                    let sampled = sample_span(&prefix.frames[..end], SampleMode::Deterministic)?;
                    let feature = self.encode(&sampled, j)?;
                    let logits = self.classify_feature(&feature.vector)?;
                    let mut o = self.output(logits, j)?;
                    o.ratio = ratio(j);
                    Ok(o)
                })
                .collect(),
        }
    }

    fn classify_feature(&self, feature: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(feature.clone());
        let logits = self.head.apply(&mut tape, &bound, x)?;
        Ok(tape.value(logits).clone())
    }

    /// Differentiable pass over all `K` segments of a full clip with loss
    /// `(1/K) Σ_j CE(logits_j, label)`.
    ///
    /// With `rng`, windows are drawn at random and dropout is active; without
    /// it, sampling is deterministic and dropout off.
    pub fn clip_forward(&self, tape: &mut Tape, bound: &Bound, video: &FullVideo, mut rng: Option<&mut Rng>) -> Result<ClipForward> {
        let k_total = self.config.segments;
        let samples = self.training_windows(video, rng.as_deref_mut())?;
        let (diffs, centers) = stack_inputs(&samples)?;
        let diffs = tape.constant(diffs);
        let centers = tape.constant(centers);
        let features = self.encoder.forward(tape, bound, diffs, centers)?.feature;
        let inputs = match self.config.mode {
            Mode::Full => self.lstm()?.sequence(tape, bound, features)?,
            Mode::SegmentOnly => (0..k_total).map(|j| tape.row(features, j)).collect::<Result<_>>()?,
        };
        let mut logits = Vec::with_capacity(k_total);
        let mut total = None;
        for x in inputs {
            let z = self.head_logits(tape, bound, x, rng.as_deref_mut())?;
            let ce = tape.softmax_cross_entropy(z, video.label)?;
            total = Some(match total {
                None => ce,
                Some(t) => tape.add(t, ce)?,
            });
            logits.push(z);
        }
        let total = total.ok_or_else(|| Error::Config("no segments".into()))?;
        Ok(ClipForward {
            loss: tape.scale(total, 1.0 / k_total as f64),
            logits,
        })
    }

    /// One window per step: segment `j`'s own window in full mode, a window
    /// spanning segments `1..=j` in segment-only mode.
    fn training_windows(&self, video: &FullVideo, mut rng: Option<&mut Rng>) -> Result<Vec<SampledSegment>> {
        if video.label >= self.config.num_classes {
            return Err(Error::Input(format!("label {} out of range", video.label)));
        }
        if video.frame_shape() != [self.config.frame.0, self.config.frame.1, self.config.frame.2] {
            return Err(Error::Input(format!("clip frames {:?} do not match the model", video.frame_shape())));
        }
        let segs = split_segments(video, self.config.segments)?;
        segs.iter()
            .map(|seg| {
                let mode = match rng.as_deref_mut() {
                    Some(r) => SampleMode::Random(r),
                    None => SampleMode::Deterministic,
                };
                match self.config.mode {
                    Mode::Full => sample_frames(seg.frames(video), seg.start, mode),
                    Mode::SegmentOnly => sample_span(&video.frames[..seg.end], mode),
                }
            })
            .collect()
    }
}
