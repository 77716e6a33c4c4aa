//! Procedural moving-sprite clips.
//!
//! Each class is a piecewise-constant velocity program driving one sprite
//! across a uniform background. Classes in the same prefix group follow the
//! same program up to the ambiguity point, so their clips are pixel-identical
//! over that stretch and no causal classifier can separate them there.

use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{derive_seed, rng_for};
use crate::tensor::Tensor;
use crate::video::{quantize, segment_bounds, FullVideo};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpriteKind {
    Square,
    Disc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sprite {
    pub kind: SpriteKind,
    /// Side length or diameter in pixels.
    pub size: f64,
}

/// One stretch of constant velocity covering `fraction` of the clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub fraction: f64,
    /// `(dx, dy)` in pixels per frame; `+y` points down.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClassSpec {
    pub id: usize,
    pub name: String,
    pub program: Vec<Phase>,
    pub sprite: Sprite,
    pub prefix_group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub classes: Vec<MotionClassSpec>,
    pub ambiguity_ratio: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    /// `(C, H, W)`.
    pub shape: (usize, usize, usize),
    pub noise_sigma: f64,
    /// Relative speed jitter: every clip scales its program by a factor drawn
    /// uniformly from `[1 - j, 1 + j]`.
    pub speed_jitter: f64,
    pub background: f64,
    pub foreground: f64,
    pub seed: u64,
}

/// Horizontal and vertical speeds of the staircase programs, in px/frame.
const STAIR_H: f64 = 1.2;
const STAIR_V: f64 = 0.5;
/// Longest vertical phase; the sprite rests for whatever remains.
const STAIR_V_FRACTION: f64 = 0.35;

impl CorpusConfig {
    /// Four classes in two pairs: right-then-up / right-then-down and
    /// left-then-up / left-then-down, switching direction at
    /// `ambiguity_ratio` of the clip.
    pub fn staircase(ambiguity_ratio: f64, seed: u64) -> Self {
        let sprite = Sprite {
            kind: SpriteKind::Square,
            size: 6.0,
        };
        let classes = [("right_up", 1.0, -1.0), ("right_down", 1.0, 1.0), ("left_up", -1.0, -1.0), ("left_down", -1.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(id, &(name, sx, sy))| MotionClassSpec {
                id,
                name: name.into(),
                program: {
                    let vertical = STAIR_V_FRACTION.min(1.0 - ambiguity_ratio);
                    let mut program = vec![
                        Phase {
                            fraction: ambiguity_ratio,
                            velocity: (sx * STAIR_H, 0.0),
                        },
                        Phase {
                            fraction: vertical,
                            velocity: (0.0, sy * STAIR_V),
                        },
                    ];
                    let rest = 1.0 - ambiguity_ratio - vertical;
                    if rest > 0.0 {
                        program.push(Phase {
                            fraction: rest,
                            velocity: (0.0, 0.0),
                        });
                    }
                    program
                },
                sprite,
                prefix_group: id / 2,
            })
            .collect();
        Self {
            classes,
            ambiguity_ratio,
            train_per_class: 100,
            test_per_class: 50,
            frames: 60,
            shape: (3, 32, 32),
            noise_sigma: 0.02,
            speed_jitter: 0.15,
            background: 0.1,
            foreground: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.shape;
        if self.classes.is_empty() || c == 0 || h == 0 || w == 0 || self.frames == 0 {
            return Err(Error::Config("corpus needs classes, frames and a non-empty frame shape".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_ratio) {
            return Err(Error::Config(format!("ambiguity_ratio {} outside [0, 1]", self.ambiguity_ratio)));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("speed_jitter must be in [0, 1) and noise_sigma non-negative".into()));
        }
        for (i, cls) in self.classes.iter().enumerate() {
            if cls.id != i {
                return Err(Error::Config(format!("class {} listed at position {i}", cls.id)));
            }
            let total: f64 = cls.program.iter().map(|p| p.fraction).sum();
            if cls.program.is_empty() || (total - 1.0).abs() > 1e-9 || cls.program.iter().any(|p| p.fraction < 0.0) {
                return Err(Error::Config(format!("class {}: phase fractions must be non-negative and sum to 1", cls.name)));
            }
            if !(cls.sprite.size > 0.0) {
                return Err(Error::Config(format!("class {}: sprite size must be positive", cls.name)));
            }
        }
        for a in &self.classes {
            for b in self.classes.iter().filter(|b| b.prefix_group == a.prefix_group && b.id > a.id) {
                let n = self.ambiguity_frames();
                if a.sprite != b.sprite || (0..=n).any(|t| self.nominal(a, 1.0, t) != self.nominal(b, 1.0, t)) {
                    return Err(Error::Config(format!(
                        "classes {} and {} share a prefix group but differ before the ambiguity point",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Last frame index that paired classes must render identically.
    fn ambiguity_frames(&self) -> usize {
        ((self.ambiguity_ratio * self.frames as f64).round() as usize).saturating_sub(1)
    }

    /// Phase boundaries in frames, rounded to the nearest frame.
    fn switch_frames(&self, cls: &MotionClassSpec) -> Vec<usize> {
        let mut acc = 0.0;
        cls.program
            .iter()
            .map(|p| {
                acc += p.fraction;
                (acc * self.frames as f64).round() as usize
            })
            .collect()
    }

    /// Displacement from the start position after `t` frames, with the
    /// program scaled by `speed`.
    fn nominal(&self, cls: &MotionClassSpec, speed: f64, t: usize) -> (f64, f64) {
        let (mut x, mut y) = (0.0, 0.0);
        let mut begin = 0;
        for (phase, end) in cls.program.iter().zip(self.switch_frames(cls)) {
            let steps = t.min(end).saturating_sub(begin) as f64;
            x += steps * phase.velocity.0 * speed;
            y += steps * phase.velocity.1 * speed;
            begin = end;
        }
        (x, y)
    }

    /// Range of displacements `(min_x, max_x, min_y, max_y)` over the clip.
    fn extent(&self, cls: &MotionClassSpec, speed: f64) -> (f64, f64, f64, f64) {
        (0..self.frames).fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), t| {
            let (x, y) = self.nominal(cls, speed, t);
            (f64::min(a, x), f64::max(b, x), f64::min(c, y), f64::max(d, y))
        })
    }

    /// Train clips get seed indices `0..n_train`, test clips follow, so the
    /// two splits never share a clip seed.
    pub fn clip_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, &[index as u64])
    }

    pub fn num_train(&self) -> usize {
        self.classes.len() * self.train_per_class
    }

    pub fn num_test(&self) -> usize {
        self.classes.len() * self.test_per_class
    }
}

/// Renders one clip of `cls`.
///
/// The speed factor and start position are the first draws from the clip's
/// stream and depend only on the prefix group, so two classes of one group
/// given the same `clip_seed` move identically until their programs diverge.
/// Noise for frame `t` comes from its own stream, also shared across the group.
/// Pixels are clamped to `[0, 1]` and rounded to the pixel grid.
pub fn generate_clip(cls: &MotionClassSpec, cfg: &CorpusConfig, clip_seed: u64) -> Result<FullVideo> {
    let (c, h, w) = cfg.shape;
    let mut rng = rng_for(clip_seed, &[0]);
    let speed = 1.0 + cfg.speed_jitter * rng.random_range(-1.0..=1.0);
    let group: Vec<&MotionClassSpec> = cfg.classes.iter().filter(|o| o.prefix_group == cls.prefix_group).collect();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for member in group.iter().chain(std::iter::once(&cls)) {
        let (min_x, max_x, min_y, max_y) = cfg.extent(member, speed);
        lo_x = lo_x.max(-min_x);
        hi_x = hi_x.min(w as f64 - cls.sprite.size - max_x);
        lo_y = lo_y.max(-min_y);
        hi_y = hi_y.min(h as f64 - cls.sprite.size - max_y);
    }
    if lo_x > hi_x || lo_y > hi_y {
        return Err(Error::Config(format!("class {}: sprite cannot stay inside a {h}x{w} frame", cls.name)));
    }
    let x0 = rng.random_range(lo_x..=hi_x);
    let y0 = rng.random_range(lo_y..=hi_y);

    let normal = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let frames = (0..cfg.frames)
        .map(|t| {
            let (dx, dy) = cfg.nominal(cls, speed, t);
            let plane = render(cls.sprite, x0 + dx, y0 + dy, h, w);
            let mut noise = rng_for(clip_seed, &[1, t as u64]);
            let mut data = Vec::with_capacity(c * h * w);
            for _ in 0..c {
                for &cov in &plane {
                    let v = cfg.background + (cfg.foreground - cfg.background) * cov;
                    let n = if cfg.noise_sigma > 0.0 { normal.sample(&mut noise) } else { 0.0 };
                    data.push(quantize((v + n).clamp(0.0, 1.0)));
                }
            }
            Tensor::new(&[c, h, w], data)
        })
        .collect::<Result<Vec<_>>>()?;
    FullVideo::new(format!("{}-{clip_seed:016x}", cls.name), cls.id, frames)
}

/// Fraction of each pixel covered by the sprite whose bounding box starts at
/// `(x, y)`.
fn render(sprite: Sprite, x: f64, y: f64, h: usize, w: usize) -> Vec<f64> {
    let overlap = |lo: f64, len: f64, i: usize| ((lo + len).min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
    match sprite.kind {
        SpriteKind::Square => {
            let cols: Vec<f64> = (0..w).map(|j| overlap(x, sprite.size, j)).collect();
            (0..h)
                .flat_map(|i| {
                    let row = overlap(y, sprite.size, i);
                    cols.iter().map(move |&cx| row * cx)
                })
                .collect()
        }
        SpriteKind::Disc => {
            const SUB: usize = 4;
            let r = sprite.size / 2.0;
            let (cx, cy) = (x + r, y + r);
            let mut out = Vec::with_capacity(h * w);
            for i in 0..h {
                for j in 0..w {
                    let mut hits = 0;
                    for a in 0..SUB {
                        for b in 0..SUB {
                            let py = i as f64 + (a as f64 + 0.5) / SUB as f64;
                            let px = j as f64 + (b as f64 + 0.5) / SUB as f64;
                            if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                                hits += 1;
                            }
                        }
                    }
                    out.push(hits as f64 / (SUB * SUB) as f64);
                }
            }
            out
        }
    }
}

/// A labelled clip together with the seed that regenerates it.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub seed: u64,
    pub video: FullVideo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Clip>,
    pub test: Vec<Clip>,
}

/// Class-balanced train and test splits. Clips are ordered by class, then by
/// index within the class.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let n_train = cfg.num_train();
    let plan = |count: usize, base: usize| -> Vec<(usize, usize)> {
        (0..cfg.classes.len())
            .flat_map(|class| (0..count).map(move |i| (class, base + class * count + i)))
            .collect()
    };
    let build = |jobs: Vec<(usize, usize)>| -> Result<Vec<Clip>> {
        jobs.into_par_iter()
            .map(|(class, index)| {
                let seed = cfg.clip_seed(index);
                Ok(Clip {
                    seed,
                    video: generate_clip(&cfg.classes[class], cfg, seed)?,
                })
            })
            .collect()
    };
    Ok(Corpus {
        train: build(plan(cfg.train_per_class, 0))?,
        test: build(plan(cfg.test_per_class, n_train))?,
    })
}

/// Accuracy ceiling at `k` of `segments` observed segments: the mean over
/// classes of `1 / |classes whose noiseless clips agree on every observed
/// frame|`.
pub fn bayes_bound(cfg: &CorpusConfig, k: usize, segments: usize) -> Result<f64> {
    cfg.validate()?;
    let bounds = segment_bounds(cfg.frames, segments)?;
    if k == 0 || k > segments {
        return Err(Error::Input(format!("observed segment count {k} outside 1..={segments}")));
    }
    let last = bounds[k - 1].1;
    let agree = |a: &MotionClassSpec, b: &MotionClassSpec| {
        a.sprite == b.sprite && (0..last).all(|t| cfg.nominal(a, 1.0, t) == cfg.nominal(b, 1.0, t))
    };
    let total: f64 = cfg
        .classes
        .iter()
        .map(|a| 1.0 / cfg.classes.iter().filter(|b| agree(a, b)).count() as f64)
        .sum();
    Ok(total / cfg.classes.len() as f64)
}

const DUMP_MAGIC: &[u8; 8] = b"EACORPUS";
const DUMP_VERSION: u32 = 1;

/// Writes clips as: magic, version (u32), C, H, W, T, count (u64 each), then
/// per clip label (u32), seed (u64) and every frame as row-major `f32`. All
/// little-endian.
pub fn write_dump(out: &mut impl Write, clips: &[Clip]) -> Result<()> {
    let first = clips.first().ok_or_else(|| Error::Input("nothing to dump".into()))?;
    let s = first.video.frame_shape().to_vec();
    let t = first.video.len();
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&DUMP_VERSION.to_le_bytes())?;
    for v in [s[0], s[1], s[2], t, clips.len()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    for clip in clips {
        if clip.video.frame_shape() != s || clip.video.len() != t {
            return Err(Error::Input(format!("clip {} differs in shape", clip.video.id)));
        }
        out.write_all(&(clip.video.label as u32).to_le_bytes())?;
        out.write_all(&clip.seed.to_le_bytes())?;
        for f in &clip.video.frames {
            for &v in f.data() {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dump(input: &mut impl Read) -> Result<Vec<Clip>> {
    let bad = |detail: &str| Error::Format {
        what: "corpus dump",
        detail: detail.to_string(),
    };
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != DUMP_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        input.read_exact(&mut b8)?;
        *d = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| bad("dimension overflow"))?;
    }
    let [c, h, w, t, count] = dims;
    if c == 0 || h == 0 || w == 0 || t == 0 {
        return Err(bad("zero dimension"));
    }
    let plane = c * h * w;
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        input.read_exact(&mut b4)?;
        let label = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut raw = vec![0u8; plane * 4];
        let frames = (0..t)
            .map(|_| {
                input.read_exact(&mut raw)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                    .collect();
                Tensor::new(&[c, h, w], data)
            })
            .collect::<Result<Vec<_>>>()?;
        clips.push(Clip {
            seed,
            video: FullVideo::new(format!("clip-{seed:016x}"), label, frames)?,
        });
    }
    Ok(clips)
}
