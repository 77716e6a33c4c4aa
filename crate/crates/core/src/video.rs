//! Full videos, their `K`-way segmentation, partial (prefix) videos and the
//! 5-frame per-segment sampling policy.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::params::Rng;
use crate::tensor::Tensor;

/// Frames sampled per segment.
pub const WINDOW: usize = 5;

/// Pixel values live on a grid of `2^-PIXEL_BITS`; every grid value in
/// `[0, 1]` is exact in `f32`.
pub const PIXEL_BITS: i32 = 24;

/// Rounds to the nearest pixel grid value.
pub fn quantize(x: f64) -> f64 {
    let scale = f64::from(1u32 << PIXEL_BITS);
    (x * scale).round() / scale
}

/// A clip with one complete action. Frames are `[C,H,W]` with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullVideo {
    pub id: String,
    pub label: usize,
    pub frames: Vec<Tensor>,
}

impl FullVideo {
    pub fn new(id: impl Into<String>, label: usize, frames: Vec<Tensor>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Input("video has no frames".into()));
        };
        if first.rank() != 3 {
            return Err(Error::Input(format!("frames must be [C,H,W], got {:?}", first.shape())));
        }
        if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(Error::Input(format!(
                "frame shapes differ: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(Self {
            id: id.into(),
            label,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_shape(&self) -> &[usize] {
        self.frames[0].shape()
    }
}

/// Segment `index` (1-based) covering frames `[start, end)` of its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub parent: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn frames<'a>(&self, video: &'a FullVideo) -> &'a [Tensor] {
        &video.frames[self.start..self.end]
    }
}

/// Frame ranges of a `t`-frame video split into `k` segments. Lengths are
/// `floor(t/k)` or one more; the `t mod k` longer segments come first.
pub fn segment_bounds(t: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::Input("segment count must be at least 1".into()));
    }
    if t < k {
        return Err(Error::Input(format!("{t} frames cannot form {k} segments")));
    }
    let (base, extra) = (t / k, t % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = (start, start + len);
            start += len;
            r
        })
        .collect())
}

pub fn split_segments(video: &FullVideo, k: usize) -> Result<Vec<Segment>> {
    Ok(segment_bounds(video.len(), k)?
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| Segment {
            parent: video.id.clone(),
            index: i + 1,
            start,
            end,
        })
        .collect())
}

/// `r = k / K`.
pub fn observation_ratio(k: usize, segments: usize) -> Result<f64> {
    if k == 0 || k > segments {
        return Err(Error::Input(format!("observed segment count {k} outside 1..={segments}")));
    }
    Ok(k as f64 / segments as f64)
}

/// The first `k` of `segments` segments of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialVideo {
    pub parent: String,
    pub observed: usize,
    pub total_segments: usize,
    pub segments: Vec<Segment>,
    pub frames: Vec<Tensor>,
}

impl PartialVideo {
    pub fn ratio(&self) -> f64 {
        self.observed as f64 / self.total_segments as f64
    }

    pub fn segment_frames(&self, seg: &Segment) -> &[Tensor] {
        &self.frames[seg.start..seg.end]
    }
}

pub fn partial(video: &FullVideo, k: usize, segments: usize) -> Result<PartialVideo> {
    observation_ratio(k, segments)?;
    let mut segs = split_segments(video, segments)?;
    segs.truncate(k);
    let end = segs.last().map_or(0, |s| s.end);
    Ok(PartialVideo {
        parent: video.id.clone(),
        observed: k,
        total_segments: segments,
        segments: segs,
        frames: video.frames[..end].to_vec(),
    })
}

/// Five frames in temporal order; `center` is the parent-relative index of
/// the middle frame (for padded short segments, the frame it duplicates).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSegment {
    pub frames: Vec<Tensor>,
    pub center: usize,
}

impl SampledSegment {
    pub fn center_frame(&self) -> &Tensor {
        &self.frames[WINDOW / 2]
    }
}

pub enum SampleMode<'a> {
    Random(&'a mut Rng),
    Deterministic,
}

/// Picks a consecutive 5-frame window from a segment whose first frame sits
/// at `offset` in the parent video.
///
/// Segments shorter than five frames are padded by repeating the edge frames
/// (`floor(pad/2)` copies of the first frame, the rest of the last) so the
/// window is the whole padded segment. Otherwise the window start is drawn
/// uniformly in random mode, or `floor((len - 5) / 2)` in deterministic mode.
pub fn sample_frames(frames: &[Tensor], offset: usize, mode: SampleMode<'_>) -> Result<SampledSegment> {
    let len = frames.len();
    if len == 0 {
        return Err(Error::Input("cannot sample an empty segment".into()));
    }
    if len < WINDOW {
        let pad = WINDOW - len;
        let left = pad / 2;
        let idx: Vec<usize> = (0..WINDOW).map(|i| i.saturating_sub(left).min(len - 1)).collect();
        return Ok(SampledSegment {
            frames: idx.iter().map(|&i| frames[i].clone()).collect(),
            center: offset + idx[WINDOW / 2],
        });
    }
    let start = match mode {
        SampleMode::Random(rng) => rng.random_range(0..=len - WINDOW),
        SampleMode::Deterministic => (len - WINDOW) / 2,
    };
    Ok(SampledSegment {
        frames: frames[start..start + WINDOW].to_vec(),
        center: offset + start + WINDOW / 2,
    })
}

/// Five frames spread over a whole prefix, used when a single window must
/// summarise every observed segment. The prefix is cut into five equal
/// chunks; deterministic mode takes each chunk's middle frame, random mode a
/// uniform frame within each chunk.
pub fn sample_span(frames: &[Tensor], mode: SampleMode<'_>) -> Result<SampledSegment> {
    let n = frames.len();
    if n == 0 {
        return Err(Error::Input("cannot sample an empty prefix".into()));
    }
    let mut rng = match mode {
        SampleMode::Random(rng) => Some(rng),
        SampleMode::Deterministic => None,
    };
    let idx: Vec<usize> = (0..WINDOW)
        .map(|i| {
            let lo = i * n / WINDOW;
            let hi = ((i + 1) * n / WINDOW).max(lo + 1).min(n);
            let lo = lo.min(n - 1);
            match rng.as_deref_mut() {
                Some(r) => r.random_range(lo..hi.max(lo + 1)),
                None => ((2 * i + 1) * n / (2 * WINDOW)).min(n - 1),
            }
        })
        .collect();
    Ok(SampledSegment {
        frames: idx.iter().map(|&i| frames[i].clone()).collect(),
        center: idx[WINDOW / 2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::rng_for;

    fn video(t: usize) -> FullVideo {
        let frames = (0..t).map(|i| Tensor::full(&[1, 2, 2], i as f64)).collect();
        FullVideo::new("v", 0, frames).unwrap()
    }

    fn ids(frames: &[Tensor]) -> Vec<usize> {
        frames.iter().map(|f| f.data()[0] as usize).collect()
    }

    #[test]
    fn split_sixty_into_ten() {
        let segs = split_segments(&video(60), 10).unwrap();
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().all(|s| s.len() == 6));
        assert_eq!(segs[0].index, 1);
        assert_eq!(segs[9].index, 10);
    }

    #[test]
    fn split_exact_and_remainder() {
        let segs = split_segments(&video(10), 10).unwrap();
        assert!(segs.iter().all(|s| s.len() == 1));
        let lens: Vec<usize> = split_segments(&video(23), 10).unwrap().iter().map(Segment::len).collect();
        assert_eq!(lens, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert!(split_segments(&video(9), 10).is_err());
        assert!(split_segments(&video(9), 0).is_err());
    }

    #[test]
    fn ratios() {
        assert_eq!(observation_ratio(2, 10).unwrap(), 0.2);
        assert_eq!(observation_ratio(7, 7).unwrap(), 1.0);
        assert_eq!(observation_ratio(1, 4).unwrap(), 0.25);
        assert!(observation_ratio(0, 4).is_err());
        assert!(observation_ratio(5, 4).is_err());
    }

    #[test]
    fn partial_prefixes() {
        let v = video(60);
        assert_eq!(partial(&v, 10, 10).unwrap().frames.len(), 60);
        let p = partial(&v, 2, 10).unwrap();
        assert_eq!(ids(&p.frames), (0..12).collect::<Vec<_>>());
        assert_eq!(p.ratio(), 0.2);
        assert!(partial(&v, 0, 10).is_err());
        assert!(partial(&v, 11, 10).is_err());
    }

    #[test]
    fn sample_exact_window() {
        let v = video(5);
        let s = sample_frames(&v.frames, 0, SampleMode::Deterministic).unwrap();
        assert_eq!(ids(&s.frames), vec![0, 1, 2, 3, 4]);
        let mut rng = rng_for(1, &[]);
        let s = sample_frames(&v.frames, 0, SampleMode::Random(&mut rng)).unwrap();
        assert_eq!(ids(&s.frames), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sample_centering_and_padding() {
        let v = video(6);
        let s = sample_frames(&v.frames, 30, SampleMode::Deterministic).unwrap();
        assert_eq!(ids(&s.frames), vec![0, 1, 2, 3, 4]);
        assert_eq!(s.center, 32);
        let v = video(3);
        let s = sample_frames(&v.frames, 0, SampleMode::Deterministic).unwrap();
        assert_eq!(ids(&s.frames), vec![0, 0, 1, 2, 2]);
        let v = video(1);
        let s = sample_frames(&v.frames, 0, SampleMode::Deterministic).unwrap();
        assert_eq!(ids(&s.frames), vec![0; 5]);
        assert!(sample_frames(&[], 0, SampleMode::Deterministic).is_err());
    }

    #[test]
    fn random_windows_stay_inside_and_are_consecutive() {
        let v = video(9);
        let mut rng = rng_for(5, &[]);
        let mut starts = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let s = sample_frames(&v.frames, 0, SampleMode::Random(&mut rng)).unwrap();
            let f = ids(&s.frames);
            assert!(f.windows(2).all(|w| w[1] == w[0] + 1));
            assert!(*f.last().unwrap() < 9);
            starts.insert(f[0]);
        }
        assert_eq!(starts.len(), 5);
    }

    #[test]
    fn span_sampling_covers_prefix() {
        let v = video(18);
        let s = sample_span(&v.frames, SampleMode::Deterministic).unwrap();
        let f = ids(&s.frames);
        assert_eq!(f, vec![1, 5, 9, 12, 16]);
        let mut rng = rng_for(2, &[]);
        for _ in 0..50 {
            let s = sample_span(&v.frames, SampleMode::Random(&mut rng)).unwrap();
            let f = ids(&s.frames);
            assert!(f.windows(2).all(|w| w[0] <= w[1]) && f[4] < 18);
        }
        let short = video(2);
        let s = sample_span(&short.frames, SampleMode::Deterministic).unwrap();
        assert_eq!(ids(&s.frames), vec![0, 0, 1, 1, 1]);
    }
}
