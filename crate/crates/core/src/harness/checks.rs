//! Gradient and invariant suites shared by the CLI and the tests.

use rand::Rng as _;

use crate::autodiff::{grad_check, Tape, Var};
use crate::encoder::{temporal_difference, EncoderConfig};
use crate::error::Result;
use crate::params::{rng_for, uniform, Bound, ParamStore, Rng};
use crate::predictor::{Mode, Model, ModelConfig};
use crate::synth::{generate_clip, generate_corpus, CorpusConfig};
use crate::tensor::Tensor;
use crate::video::{partial, sample_frames, split_segments, FullVideo, SampleMode};

/// Finite-difference step of the gradient suite.
pub const GRAD_EPS: f64 = 1e-4;
/// Largest relative error the gradient suite accepts.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst relative error for gradient checks.
    pub value: Option<f64>,
    pub detail: String,
}

impl CheckResult {
    fn from_bool(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value: None,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        match self.value {
            Some(v) => write!(f, "{status} {:<28} max_rel_err={v:.3e} {}", self.name, self.detail),
            None => write!(f, "{status} {:<28} {}", self.name, self.detail),
        }
    }
}

/// Uniform values on `[-1, 1]` pushed at least `margin` away from zero, so
/// that piecewise-linear ops are checked away from their kinks.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut Rng) -> Tensor {
    uniform(shape, 1.0, rng).map(|v| if v.abs() < margin { v.signum() * margin + v } else { v })
}

/// `Σ r ⊙ y` with a fixed random `r`, turning any output into a scalar whose
/// gradient reaches every entry.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(uniform(&shape, 1.0, &mut rng_for(seed, &[7])));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

type Check = (&'static str, ParamStore, Box<dyn Fn(&mut Tape, &Bound) -> Result<Var>>);

fn store(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t.clone()).expect("distinct names");
    }
    s
}

fn op_checks(rng: &mut Rng) -> Vec<Check> {
    let a = uniform(&[3, 4], 1.0, rng);
    let b = uniform(&[3, 4], 1.0, rng);
    let m = uniform(&[4, 5], 1.0, rng);
    let v = uniform(&[4], 1.0, rng);
    let s = uniform(&[1], 1.0, rng).reshape(&[]).expect("scalar");
    let img = uniform(&[2, 3, 6, 6], 1.0, rng);
    let w = uniform(&[4, 3, 3, 3], 0.5, rng);
    let bias = uniform(&[4], 0.5, rng);
    let logits = uniform(&[5], 2.0, rng);
    let kinked = away_from_zero(&[3, 4], 0.05, rng);
    let binary = store(&[("a", a.clone()), ("b", b.clone())]);
    vec![
        ("add", binary.clone(), Box::new(|t, p| {
            let y = t.add(p.get("a")?, p.get("b")?)?;
            project(t, y, 1)
        })),
        ("sub", binary.clone(), Box::new(|t, p| {
            let y = t.sub(p.get("a")?, p.get("b")?)?;
            project(t, y, 2)
        })),
        ("mul", binary, Box::new(|t, p| {
            let y = t.mul(p.get("a")?, p.get("b")?)?;
            project(t, y, 3)
        })),
        ("scalar_broadcast", store(&[("a", a.clone()), ("s", s)]), Box::new(|t, p| {
            let y = t.mul(p.get("s")?, p.get("a")?)?;
            let y = t.add(y, p.get("s")?)?;
            project(t, y, 4)
        })),
        ("scale", store(&[("a", a.clone())]), Box::new(|t, p| {
            let y = t.scale(p.get("a")?, -2.5);
            project(t, y, 5)
        })),
        ("relu", store(&[("a", kinked)]), Box::new(|t, p| {
            let y = t.relu(p.get("a")?);
            project(t, y, 6)
        })),
        ("sigmoid", store(&[("a", a.clone())]), Box::new(|t, p| {
            let y = t.sigmoid(p.get("a")?);
            project(t, y, 7)
        })),
        ("tanh", store(&[("a", a.clone())]), Box::new(|t, p| {
            let y = t.tanh(p.get("a")?);
            project(t, y, 8)
        })),
        ("matmul", store(&[("a", a.clone()), ("m", m.clone())]), Box::new(|t, p| {
            let y = t.matmul(p.get("a")?, p.get("m")?)?;
            project(t, y, 9)
        })),
        ("matvec", store(&[("a", a.clone()), ("v", v)]), Box::new(|t, p| {
            let y = t.matmul(p.get("a")?, p.get("v")?)?;
            project(t, y, 10)
        })),
        ("transpose_reshape_slice", store(&[("m", m)]), Box::new(|t, p| {
            let y = t.transpose(p.get("m")?)?;
            let y = t.reshape(y, &[20])?;
            let y = t.slice(y, 3, &[2, 5])?;
            let y = t.row(y, 1)?;
            project(t, y, 11)
        })),
        ("sum_mean", store(&[("a", a.clone())]), Box::new(|t, p| {
            let x = p.get("a")?;
            let sq = t.mul(x, x)?;
            let s = t.sum(sq);
            let m = t.mean(x);
            let y = t.mul(s, m)?;
            Ok(y)
        })),
        ("conv2d", store(&[("x", img.clone()), ("w", w.clone()), ("b", bias.clone())]), Box::new(|t, p| {
            let y = t.conv2d("check", p.get("x")?, p.get("w")?, p.get("b")?, 1, 1)?;
            project(t, y, 12)
        })),
        ("conv2d_stride2", store(&[("x", img.clone()), ("w", w), ("b", bias)]), Box::new(|t, p| {
            let y = t.conv2d("check", p.get("x")?, p.get("w")?, p.get("b")?, 2, 1)?;
            project(t, y, 13)
        })),
        ("avg_pool2d", store(&[("x", img.clone())]), Box::new(|t, p| {
            let y = t.avg_pool2d(p.get("x")?, 2)?;
            project(t, y, 14)
        })),
        ("upsample_bilinear", store(&[("x", img.clone())]), Box::new(|t, p| {
            let y = t.upsample_bilinear(p.get("x")?, 2)?;
            project(t, y, 15)
        })),
        ("global_avg_pool", store(&[("x", img)]), Box::new(|t, p| {
            let y = t.global_avg_pool(p.get("x")?)?;
            project(t, y, 16)
        })),
        ("linear_dropout", store(&[("a", a.clone()), ("x", uniform(&[4], 1.0, rng))]), Box::new(|t, p| {
            let b = t.constant(Tensor::vector(&[0.1, -0.2, 0.3]));
            let y = t.linear(p.get("x")?, p.get("a")?, b)?;
            let y = t.dropout(y, 0.5, true, &mut rng_for(3, &[]))?;
            project(t, y, 17)
        })),
        ("softmax_cross_entropy", store(&[("z", logits)]), Box::new(|t, p| t.softmax_cross_entropy(p.get("z")?, 3))),
    ]
}

fn small_model(mode: Mode) -> Result<(Model, FullVideo)> {
    let mut corpus = CorpusConfig::staircase(0.3, 5);
    corpus.frames = 12;
    corpus.shape = (3, 8, 8);
    corpus.classes.iter_mut().for_each(|c| c.sprite.size = 2.0);
    let video = generate_clip(&corpus.classes[1], &corpus, 77)?;
    let config = ModelConfig {
        frame: corpus.shape,
        num_classes: 4,
        segments: 4,
        hidden: 5,
        dropout: 0.5,
        encoder: EncoderConfig {
            diff_channels: vec![3],
            frame_channels: vec![3],
            out_channels: vec![4, 4],
            diff2_channels: vec![4],
            kernel: 3,
        },
        mode,
    };
    Ok((Model::new(config, 21)?, video))
}

fn model_checks() -> Result<Vec<Check>> {
    let mut out: Vec<Check> = Vec::new();
    let (model, video) = small_model(Mode::Full)?;
    let lstm = model.lstm.clone().expect("full model");
    let mut rng = rng_for(13, &[]);
    let mut lstm_params = ParamStore::new();
    lstm.init(&mut lstm_params, &mut rng)?;
    let bias = lstm.bias_name();
    lstm_params.get_mut(&bias).expect("bias").data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    lstm_params.insert("x", uniform(&[3, lstm.input_dim], 1.0, &mut rng))?;
    {
        let lstm = lstm.clone();
        out.push(("lstm_cell", lstm_params.clone(), Box::new(move |t, p| {
            let h = t.constant(uniform(&[lstm.hidden_dim], 0.5, &mut rng_for(1, &[])));
            let c = t.constant(uniform(&[lstm.hidden_dim], 0.5, &mut rng_for(2, &[])));
            let x = t.row(p.get("x")?, 0)?;
            let (h, c) = lstm.cell(t, p, x, h, c)?;
            let y = t.add(h, c)?;
            project(t, y, 18)
        })));
    }
    out.push(("lstm_sequence", lstm_params, Box::new(move |t, p| {
        let hs = lstm.sequence(t, p, p.get("x")?)?;
        let mut acc = project(t, hs[0], 19)?;
        for &h in &hs[1..] {
            let s = project(t, h, 20)?;
            acc = t.add(acc, s)?;
        }
        Ok(acc)
    })));

    let encoder = model.encoder.clone();
    let segs = split_segments(&video, 4)?;
    let sampled = sample_frames(segs[1].frames(&video), segs[1].start, SampleMode::Deterministic)?;
    let diff = temporal_difference(&sampled)?;
    let center = sampled.center_frame().clone();
    let mut enc_params = ParamStore::new();
    for (name, t) in model.params.iter().filter(|(n, _)| n.starts_with("segment.")) {
        enc_params.insert(name, t.clone())?;
    }
    out.push(("segment_encoder", enc_params, Box::new(move |t, p| {
        let d = t.constant(diff.clone());
        let c = t.constant(center.clone());
        let vars = encoder.forward(t, p, d, c)?;
        project(t, vars.feature, 21)
    })));

    for mode in [Mode::Full, Mode::SegmentOnly] {
        let (model, video) = small_model(mode)?;
        let name = match mode {
            Mode::Full => "clip_loss_full",
            Mode::SegmentOnly => "clip_loss_segment_only",
        };
        let point = model.params.clone();
        out.push((name, point, Box::new(move |t, p| {
            let mut rng = rng_for(99, &[]);
            Ok(model.clip_forward(t, p, &video, Some(&mut rng))?.loss)
        })));
    }
    Ok(out)
}

/// Central-difference checks of every op and of the composed clip loss.
pub fn gradient_suite() -> Result<Vec<CheckResult>> {
    let mut rng = rng_for(2024, &[]);
    let mut checks = op_checks(&mut rng);
    checks.extend(model_checks()?);
    checks
        .into_iter()
        .map(|(name, point, f)| {
            let report = grad_check(&point, GRAD_EPS, f)?;
            let worst = report.worst.map(|(n, i)| format!("worst={n}[{i}]")).unwrap_or_default();
            Ok(CheckResult {
                name: name.into(),
                passed: report.max_rel_error < GRAD_TOLERANCE,
                value: Some(report.max_rel_error),
                detail: format!("entries={} kinks={} {worst}", report.entries, report.kinks),
            })
        })
        .collect()
}

fn noisy_suffix(video: &FullVideo, keep: usize, seed: u64) -> FullVideo {
    let mut rng = rng_for(seed, &[]);
    let mut v = video.clone();
    for f in &mut v.frames[keep..] {
        f.data_mut().iter_mut().for_each(|x| *x = rng.random());
    }
    v
}

/// Quick structural invariants on a small untrained model.
pub fn selftest() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let (model, video) = small_model(Mode::Full)?;
    let k_total = model.config.segments;

    let segs = split_segments(&video, k_total)?;
    let covered: Vec<usize> = segs.iter().flat_map(|s| s.start..s.end).collect();
    out.push(CheckResult::from_bool(
        "segment_coverage",
        covered == (0..video.len()).collect::<Vec<_>>(),
        format!("{} frames in {k_total} segments", video.len()),
    ));

    let mut monotone = true;
    for k in 1..k_total {
        let a = partial(&video, k, k_total)?;
        let b = partial(&video, k + 1, k_total)?;
        monotone &= a.frames.len() <= b.frames.len() && a.frames[..] == b.frames[..a.frames.len()];
    }
    out.push(CheckResult::from_bool("prefix_monotonicity", monotone, ""));

    let full = model.predict_partial(&video, k_total, k_total)?;
    let mut causal = true;
    let mut prefix = true;
    for k in 1..=k_total {
        let own = model.predict_partial(&video, k, k_total)?;
        prefix &= own[..] == full[..k];
        let end = segs[k - 1].end;
        let noisy = noisy_suffix(&video, end, k as u64);
        causal &= model.predict_partial(&noisy, k, k_total)? == own;
    }
    out.push(CheckResult::from_bool("causality", causal, "noise after segment k"));
    out.push(CheckResult::from_bool("prefix_consistency", prefix, ""));

    let features = segs
        .iter()
        .map(|s| model.encode(&sample_frames(s.frames(&video), s.start, SampleMode::Deterministic)?, s.index))
        .collect::<Result<Vec<_>>>()?;
    let batch = model.fold_sequence(&features)?;
    let mut state = model.init_state();
    let mut worst = 0.0f64;
    for (f, b) in features.iter().zip(&batch) {
        let (next, o) = model.step(&state, f, None)?;
        worst = worst.max(o.logits.max_abs_diff(&b.logits));
        state = next;
    }
    out.push(CheckResult::from_bool("incremental_vs_batch", worst <= 1e-9, format!("max_abs_diff={worst:.3e}")));

    let sampled = sample_frames(segs[0].frames(&video), 0, SampleMode::Deterministic)?;
    let mut shifted = sampled.clone();
    shifted.frames.iter_mut().for_each(|f| *f = f.map(|x| x + 0.2));
    let invariant = temporal_difference(&sampled)?.bitwise_eq(&temporal_difference(&shifted)?);
    out.push(CheckResult::from_bool("difference_brightness", invariant, "offset 0.2"));

    let mut corpus = CorpusConfig::staircase(0.3, 3);
    corpus.train_per_class = 2;
    corpus.test_per_class = 1;
    let same = generate_corpus(&corpus)? == generate_corpus(&corpus)?;
    out.push(CheckResult::from_bool("corpus_determinism", same, ""));

    let mut buf = Vec::new();
    crate::checkpoint::write(&mut buf, &model, 0)?;
    let back = crate::checkpoint::read(&mut buf.as_slice())?;
    out.push(CheckResult::from_bool("checkpoint_round_trip", back.model.params.bitwise_eq(&model.params), format!("{} bytes", buf.len())));
    Ok(out)
}
