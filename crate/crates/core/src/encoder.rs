//! Segment-scale encoder.
//!
//! For a sampled window `I = [I_{t-2} .. I_{t+2}]` with differences `D`:
//!
//! ```text
//! S_short = Upsample(CNN_diff(Downsample(D)))
//! S_fuse  = S_short + CNN_frame(I_t)
//! S_out   = CNN_out(S_fuse) + CNN_diff2(Downsample(D))
//! feature = GlobalAvgPool(S_out)
//! ```
//!
//! Every `CNN` is a stack of 3×3 convolutions, each followed by ReLU, with
//! its own parameters. `CNN_out` halves the resolution at every layer; the
//! first `len(CNN_out) - 1` layers of `CNN_diff2` do the same, so both terms
//! of `S_out` land on the same grid.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::Conv2dSpec;
use crate::params::{Bound, ParamStore, Rng};
use crate::tensor::Tensor;
use crate::video::{quantize, SampledSegment, WINDOW};

/// Resampling factor of the Downsample/Upsample pair.
pub const RESAMPLE: usize = 2;

/// Channel plan of the four convolution stacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub diff_channels: Vec<usize>,
    pub frame_channels: Vec<usize>,
    pub out_channels: Vec<usize>,
    pub diff2_channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            diff_channels: vec![64, 64],
            frame_channels: vec![64],
            out_channels: vec![128, 128],
            diff2_channels: vec![128],
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentEncoderSpec {
    /// Frame shape `(C, H, W)`.
    pub frame: (usize, usize, usize),
    pub cnn_diff: Vec<Conv2dSpec>,
    pub cnn_frame: Vec<Conv2dSpec>,
    pub cnn_out: Vec<Conv2dSpec>,
    pub cnn_diff2: Vec<Conv2dSpec>,
    pub feature_dim: usize,
}

fn stack(prefix: &str, input: usize, channels: &[usize], kernel: usize, stride_of: impl Fn(usize) -> usize) -> Vec<Conv2dSpec> {
    let mut c_in = input;
    channels
        .iter()
        .enumerate()
        .map(|(i, &c_out)| {
            let spec = Conv2dSpec::new(format!("{prefix}.{i}"), c_in, c_out, kernel, stride_of(i));
            c_in = c_out;
            spec
        })
        .collect()
}

fn trace_shape(stage: &str, layers: &[Conv2dSpec], mut shape: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
    for l in layers {
        l.validate()?;
        if l.in_channels != shape.0 {
            return Err(Error::Config(format!(
                "{stage}: layer {} expects {} channels, receives {}",
                l.name, l.in_channels, shape.0
            )));
        }
        let (h, w) = l.output_hw(shape.1, shape.2).ok_or_else(|| {
            Error::Config(format!("{stage}: {}x{} too small for layer {}", shape.1, shape.2, l.name))
        })?;
        shape = (l.out_channels, h, w);
    }
    Ok(shape)
}

impl SegmentEncoderSpec {
    pub fn new(frame: (usize, usize, usize), cfg: &EncoderConfig) -> Result<Self> {
        let (c, h, w) = frame;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("frame shape {frame:?} has a zero extent")));
        }
        if cfg.diff_channels.is_empty() || cfg.frame_channels.is_empty() || cfg.out_channels.is_empty() || cfg.diff2_channels.is_empty() {
            return Err(Error::Config("every encoder stack needs at least one layer".into()));
        }
        let n_out = cfg.out_channels.len();
        if cfg.diff2_channels.len() + 1 < n_out {
            return Err(Error::Config(format!(
                "cnn_diff2 needs at least {} layers to match cnn_out's {n_out} stride-2 stages",
                n_out - 1
            )));
        }
        let k = cfg.kernel;
        let spec = Self {
            frame,
            cnn_diff: stack("segment.cnn_diff", 4 * c, &cfg.diff_channels, k, |_| 1),
            cnn_frame: stack("segment.cnn_frame", c, &cfg.frame_channels, k, |_| 1),
            cnn_out: stack("segment.cnn_out", *cfg.frame_channels.last().unwrap(), &cfg.out_channels, k, |_| 2),
            cnn_diff2: stack("segment.cnn_diff2", 4 * c, &cfg.diff2_channels, k, |i| if i + 1 < n_out { 2 } else { 1 }),
            feature_dim: *cfg.out_channels.last().unwrap(),
        };
        spec.check_shapes()?;
        Ok(spec)
    }

    /// Walks the shape of every stage and verifies the two additions.
    pub fn check_shapes(&self) -> Result<()> {
        let (c, h, w) = self.frame;
        if h % RESAMPLE != 0 || w % RESAMPLE != 0 {
            return Err(Error::Config(format!("Downsample: {h}x{w} frames not divisible by {RESAMPLE}")));
        }
        let down = (4 * c, h / RESAMPLE, w / RESAMPLE);
        let short = trace_shape("short-term difference path", &self.cnn_diff, down)?;
        let short = (short.0, short.1 * RESAMPLE, short.2 * RESAMPLE);
        let appearance = trace_shape("appearance path", &self.cnn_frame, (c, h, w))?;
        if short != appearance {
            return Err(Error::Config(format!(
                "fusion S_short + CNN(I_t): shapes {short:?} and {appearance:?} differ"
            )));
        }
        let fused = trace_shape("output path", &self.cnn_out, appearance)?;
        let diff2 = trace_shape("second difference path", &self.cnn_diff2, down)?;
        if fused != diff2 {
            return Err(Error::Config(format!(
                "output sum CNN(S_fuse) + CNN(Downsample(D)): shapes {fused:?} and {diff2:?} differ"
            )));
        }
        if fused.0 != self.feature_dim {
            return Err(Error::Config("feature_dim disagrees with cnn_out".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv2dSpec> {
        self.cnn_diff
            .iter()
            .chain(&self.cnn_frame)
            .chain(&self.cnn_out)
            .chain(&self.cnn_diff2)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.layers().try_for_each(|l| l.init(store, rng))
    }

    fn run_stack(tape: &mut Tape, bound: &Bound, layers: &[Conv2dSpec], mut x: Var) -> Result<Var> {
        for l in layers {
            let y = l.apply(tape, bound, x)?;
            x = tape.relu(y);
        }
        Ok(x)
    }

    /// Encodes on the tape. `diffs` is `[4C,H,W]` or `[N,4C,H,W]` and
    /// `centers` the matching `[C,H,W]` / `[N,C,H,W]`; the feature is `[F]`
    /// or `[N,F]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, diffs: Var, centers: Var) -> Result<EncodingVars> {
        let down = tape.avg_pool2d(diffs, RESAMPLE)?;
        let short = Self::run_stack(tape, bound, &self.cnn_diff, down)?;
        let s_short = tape.upsample_bilinear(short, RESAMPLE)?;
        let appearance = Self::run_stack(tape, bound, &self.cnn_frame, centers)?;
        let s_fuse = tape.add(s_short, appearance).map_err(|e| stage_error("S_fuse", e))?;
        let out = Self::run_stack(tape, bound, &self.cnn_out, s_fuse)?;
        let diff2 = Self::run_stack(tape, bound, &self.cnn_diff2, down)?;
        let s_out_map = tape.add(out, diff2).map_err(|e| stage_error("S_out", e))?;
        let feature = tape.global_avg_pool(s_out_map)?;
        Ok(EncodingVars {
            s_short,
            s_fuse,
            s_out_map,
            feature,
        })
    }

    /// Encodes one sampled segment outside of training.
    pub fn encode_segment(&self, params: &ParamStore, sampled: &SampledSegment, index: usize) -> Result<(SegmentFeature, SegmentEncodingTrace)> {
        let diff = temporal_difference(sampled)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let d = tape.constant(diff);
        let c = tape.constant(sampled.center_frame().clone());
        let vars = self.forward(&mut tape, &bound, d, c)?;
        Ok((
            SegmentFeature {
                vector: tape.value(vars.feature).clone(),
                index,
            },
            SegmentEncodingTrace {
                s_short: tape.value(vars.s_short).clone(),
                s_fuse: tape.value(vars.s_fuse).clone(),
                s_out_map: tape.value(vars.s_out_map).clone(),
            },
        ))
    }
}

fn stage_error(stage: &str, e: Error) -> Error {
    Error::Config(format!("{stage}: {e}"))
}

/// Tape handles of the intermediate maps.
#[derive(Debug, Clone, Copy)]
pub struct EncodingVars {
    pub s_short: Var,
    pub s_fuse: Var,
    pub s_out_map: Var,
    pub feature: Var,
}

/// Pooled segment representation, tagged with its 1-based segment index.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeature {
    pub vector: Tensor,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEncodingTrace {
    pub s_short: Tensor,
    pub s_fuse: Tensor,
    pub s_out_map: Tensor,
}

/// Channel stack `[I_{t-1}−I_{t-2}, I_t−I_{t-1}, I_{t+1}−I_t, I_{t+2}−I_{t+1}]`,
/// shape `[4C,H,W]`.
///
/// Each difference is rounded to the pixel grid. For frames on the grid this
/// is the exact difference, and adding a constant to all frames leaves the
/// result bitwise unchanged: the rounding error of the shifted subtraction is
/// far below half a grid step.
pub fn temporal_difference(sampled: &SampledSegment) -> Result<Tensor> {
    let f = &sampled.frames;
    if f.len() != WINDOW {
        return Err(Error::Input(format!("expected {WINDOW} frames, got {}", f.len())));
    }
    let shape = f[0].shape();
    if shape.len() != 3 || f.iter().any(|x| x.shape() != shape) {
        return Err(Error::Input("sampled frames must share one [C,H,W] shape".into()));
    }
    let mut data = Vec::with_capacity(4 * f[0].len());
    for pair in f.windows(2) {
        data.extend(pair[1].data().iter().zip(pair[0].data()).map(|(b, a)| quantize(b - a)));
    }
    Tensor::new(&[4 * shape[0], shape[1], shape[2]], data)
}

/// Stacks a batch of windows into `([N,4C,H,W], [N,C,H,W])`.
pub fn stack_inputs(samples: &[SampledSegment]) -> Result<(Tensor, Tensor)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Input("empty batch".into()))?;
    let s = first.center_frame().shape().to_vec();
    let mut diffs = Vec::new();
    let mut centers = Vec::new();
    for sample in samples {
        diffs.extend_from_slice(temporal_difference(sample)?.data());
        let c = sample.center_frame();
        if c.shape() != s {
            return Err(Error::Input("batch frames differ in shape".into()));
        }
        centers.extend_from_slice(c.data());
    }
    let n = samples.len();
    Ok((
        Tensor::new(&[n, 4 * s[0], s[1], s[2]], diffs)?,
        Tensor::new(&[n, s[0], s[1], s[2]], centers)?,
    ))
}
