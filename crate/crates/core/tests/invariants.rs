use earlyact::encoder::temporal_difference;
use earlyact::params::rng_for;
use earlyact::predictor::{Model, ModelConfig};
use earlyact::video::{observation_ratio, partial, quantize, sample_frames, segment_bounds, split_segments, FullVideo, SampleMode, SampledSegment};
use earlyact::Tensor;
use proptest::prelude::*;
use rand::Rng as _;

fn video(t: usize, seed: u64) -> FullVideo {
    let mut rng = rng_for(seed, &[]);
    let frames = (0..t)
        .map(|_| Tensor::new(&[1, 4, 4], (0..16).map(|_| quantize(rng.random())).collect()).unwrap())
        .collect();
    FullVideo::new("p", 0, frames).unwrap()
}

proptest! {
    #[test]
    fn segments_tile_the_clip(t in 1usize..200, k in 1usize..40) {
        prop_assume!(k <= t);
        let b = segment_bounds(t, k).unwrap();
        prop_assert_eq!(b.len(), k);
        prop_assert_eq!(b[0].0, 0);
        prop_assert_eq!(b[k - 1].1, t);
        for w in b.windows(2) {
            prop_assert_eq!(w[0].1, w[1].0);
        }
        let lens: Vec<usize> = b.iter().map(|(s, e)| e - s).collect();
        prop_assert!(lens.iter().all(|&l| l == t / k || l == t / k + 1));
        prop_assert!(lens.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn too_many_segments_is_an_error(t in 0usize..50, extra in 1usize..10) {
        prop_assert!(segment_bounds(t, t + extra).is_err());
    }

    #[test]
    fn prefixes_grow_monotonically(t in 10usize..80, k_total in 1usize..10, seed in any::<u64>()) {
        let v = video(t, seed);
        let mut last = 0;
        for k in 1..=k_total {
            let p = partial(&v, k, k_total).unwrap();
            prop_assert!(p.frames.len() > last);
            prop_assert_eq!(&p.frames[..], &v.frames[..p.frames.len()]);
            prop_assert_eq!(p.ratio(), observation_ratio(k, k_total).unwrap());
            last = p.frames.len();
        }
        prop_assert_eq!(last, t);
        prop_assert!(partial(&v, k_total + 1, k_total).is_err());
        prop_assert!(partial(&v, 0, k_total).is_err());
    }

    #[test]
    fn sampling_stays_inside_the_segment(t in 10usize..80, k_total in 1usize..10, seed in any::<u64>()) {
        prop_assume!(k_total <= t);
        let v = video(t, seed);
        let mut rng = rng_for(seed, &[1]);
        for seg in split_segments(&v, k_total).unwrap() {
            let frames = seg.frames(&v);
            for s in [
                sample_frames(frames, seg.start, SampleMode::Random(&mut rng)).unwrap(),
                sample_frames(frames, seg.start, SampleMode::Deterministic).unwrap(),
            ] {
                prop_assert_eq!(s.frames.len(), 5);
                prop_assert!((seg.start..seg.end).contains(&s.center));
                prop_assert!(s.frames.iter().all(|f| frames.contains(f)));
                prop_assert_eq!(s.center_frame(), &v.frames[s.center]);
            }
        }
    }

    #[test]
    fn brightness_offset_leaves_differences_unchanged(seed in any::<u64>(), c in 0.0f64..0.5) {
        let v = video(5, seed);
        let s = SampledSegment { frames: v.frames.clone(), center: 2 };
        let shifted = SampledSegment { frames: v.frames.iter().map(|f| f.map(|x| x + c)).collect(), center: 2 };
        prop_assert!(temporal_difference(&shifted).unwrap().bitwise_eq(&temporal_difference(&s).unwrap()));
    }
}

#[test]
fn prediction_ignores_frames_after_the_prefix() {
    let cfg = ModelConfig { frame: (1, 4, 4), hidden: 6, ..ModelConfig::default() };
    let mut small = cfg.clone();
    small.encoder.diff_channels = vec![3];
    small.encoder.frame_channels = vec![3];
    small.encoder.out_channels = vec![4, 4];
    small.encoder.diff2_channels = vec![4];
    let model = Model::new(small, 2).unwrap();
    let v = video(33, 6);
    let segs = split_segments(&v, 10).unwrap();
    for k in 1..=10 {
        let mut altered = v.clone();
        for f in &mut altered.frames[segs[k - 1].end..] {
            *f = f.map(|x| 1.0 - x);
        }
        assert_eq!(model.predict_partial(&v, k, 10).unwrap(), model.predict_partial(&altered, k, 10).unwrap());
    }
}
