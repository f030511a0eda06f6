//! Desk-scale synthetic stand-in for precomputed AVE features.
//!
//! Each event class owns a fixed audio prototype and a fixed visual
//! prototype. Event segments draw `prototype + noise`; background segments
//! draw around class-independent background prototypes. The visual map places
//! the class signal at a handful of spatial positions so audio-guided
//! attention has something to find. In partially-labelled videos some
//! background segments carry the class in only one modality, which is
//! exactly the case an audio-visual event detector has to reject.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::split::{assign_partitions, build_split};
use super::{Dataset, LabelSet, VideoSample};
use crate::error::{Error, Result};

const LATENT_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Event classes, background excluded.
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub t: usize,
    pub d_a: usize,
    pub d_v: usize,
    /// Spatial positions per visual map (`H·W`).
    pub n: usize,
    /// Inclusive range of event lengths for partially-labelled videos.
    pub event_span_range: (usize, usize),
    pub feature_noise_sigma: f64,
    /// Probability that a segment's audio and visual noise share one latent
    /// direction.
    pub cross_modal_corr: f64,
    pub seed: u64,
    /// Visual positions carrying the class signal in an event segment.
    pub signal_positions: usize,
    /// Chance that a background segment of a mixed video still shows the
    /// class in exactly one modality.
    pub mismatch_prob: f64,
    /// Weight of the component all class prototypes share; higher is harder.
    pub class_similarity: f64,
    /// Train and validation fractions; the rest is test.
    pub split_fractions: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 6,
            videos_per_class: 100,
            t: 10,
            d_a: 128,
            d_v: 512,
            n: 49,
            event_span_range: (2, 8),
            feature_noise_sigma: 1.0,
            cross_modal_corr: 0.5,
            seed: 0,
            signal_positions: 5,
            mismatch_prob: 0.3,
            class_similarity: 0.5,
            split_fractions: (0.7, 0.15),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.event_span_range;
        if self.t == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if lo < 1 || lo > hi || hi > self.t {
            return Err(Error::Config(format!(
                "event_span_range ({lo}, {hi}) must lie within [1, {}]",
                self.t
            )));
        }
        if self.num_classes == 0 || self.videos_per_class == 0 {
            return Err(Error::Config("need at least one class and one video".into()));
        }
        if self.d_a == 0 || self.d_v == 0 || self.n == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        if !(self.feature_noise_sigma >= 0.0) {
            return Err(Error::Config("feature_noise_sigma must be >= 0".into()));
        }
        for (name, p) in [
            ("cross_modal_corr", self.cross_modal_corr),
            ("mismatch_prob", self.mismatch_prob),
            ("class_similarity", self.class_similarity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.signal_positions == 0 || self.signal_positions > self.n {
            return Err(Error::Config(format!(
                "signal_positions must lie in [1, {}]",
                self.n
            )));
        }
        let (tr, va) = self.split_fractions;
        if tr < 0.0 || va < 0.0 || tr + va > 1.0 {
            return Err(Error::Config("split fractions must be nonnegative and sum <= 1".into()));
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<String> {
        let mut cats: Vec<String> = (0..self.num_classes).map(|c| format!("event_{c}")).collect();
        cats.push("background".into());
        cats
    }
}

/// Fixed prototypes drawn once per generation.
#[derive(Debug, Clone)]
pub struct Prototypes {
    pub audio: Array2<f32>,
    pub visual: Array2<f32>,
    pub background_audio: Array1<f32>,
    pub background_visual: Array1<f32>,
    mix_audio: Array2<f32>,
    mix_visual: Array2<f32>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

impl Prototypes {
    fn draw(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let s = cfg.class_similarity as f32;
        let (ws, wu) = (s.sqrt(), (1.0 - s).sqrt());
        let shared_a = normal_vec(rng, cfg.d_a);
        let shared_v = normal_vec(rng, cfg.d_v);
        let mut audio = Array2::zeros((cfg.num_classes, cfg.d_a));
        let mut visual = Array2::zeros((cfg.num_classes, cfg.d_v));
        for c in 0..cfg.num_classes {
            let ua = normal_vec(rng, cfg.d_a);
            let uv = normal_vec(rng, cfg.d_v);
            audio.row_mut(c).assign(&(&shared_a * ws + &ua * wu));
            visual.row_mut(c).assign(&(&shared_v * ws + &uv * wu));
        }
        let background_audio = normal_vec(rng, cfg.d_a);
        let background_visual = normal_vec(rng, cfg.d_v);
        let scale = 1.0 / (LATENT_DIM as f32).sqrt();
        let mix_audio = Array2::from_shape_fn((LATENT_DIM, cfg.d_a), |_| {
            rng.sample::<f32, _>(StandardNormal) * scale
        });
        let mix_visual = Array2::from_shape_fn((LATENT_DIM, cfg.d_v), |_| {
            rng.sample::<f32, _>(StandardNormal) * scale
        });
        Prototypes {
            audio,
            visual,
            background_audio,
            background_visual,
            mix_audio,
            mix_visual,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SegmentContent {
    Event,
    AudioOnly,
    VisualOnly,
    Background,
}

/// Generates the dataset and its split. Deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    Ok(generate_with_prototypes(cfg)?.0)
}

pub fn generate_with_prototypes(cfg: &SynthConfig) -> Result<(Dataset, Prototypes)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = Prototypes::draw(cfg, &mut rng);
    let categories = cfg.categories();
    let bg = cfg.num_classes;
    let sigma = cfg.feature_noise_sigma as f32;
    let half = std::f32::consts::FRAC_1_SQRT_2;
    let (span_lo, span_hi) = cfg.event_span_range;
    let partial_hi = span_hi.min(cfg.t.saturating_sub(1));

    let mut videos = Vec::with_capacity(cfg.num_classes * cfg.videos_per_class);
    for c in 0..cfg.num_classes {
        for v in 0..cfg.videos_per_class {
            // even-numbered videos are full-span so the two subsets stay balanced
            let full = v % 2 == 0 || span_lo > partial_hi;
            let (start, len) = if full {
                (0, cfg.t)
            } else {
                let len = rng.random_range(span_lo..=partial_hi);
                (rng.random_range(0..=cfg.t - len), len)
            };
            let mut audio = Array2::<f32>::zeros((cfg.t, cfg.d_a));
            let mut visual = Array3::<f32>::zeros((cfg.t, cfg.n, cfg.d_v));
            let mut classes = Vec::with_capacity(cfg.t);
            for t in 0..cfg.t {
                let content = if t >= start && t < start + len {
                    SegmentContent::Event
                } else if rng.random::<f64>() < cfg.mismatch_prob {
                    if rng.random::<bool>() {
                        SegmentContent::AudioOnly
                    } else {
                        SegmentContent::VisualOnly
                    }
                } else {
                    SegmentContent::Background
                };
                classes.push(if content == SegmentContent::Event { c } else { bg });

                let z_a = normal_vec(&mut rng, LATENT_DIM);
                let z_v = if rng.random::<f64>() < cfg.cross_modal_corr {
                    z_a.clone()
                } else {
                    normal_vec(&mut rng, LATENT_DIM)
                };
                let latent_a = z_a.dot(&protos.mix_audio);
                let latent_v = z_v.dot(&protos.mix_visual);

                let audio_base: ArrayView1<f32> = match content {
                    SegmentContent::Event | SegmentContent::AudioOnly => protos.audio.row(c),
                    _ => protos.background_audio.view(),
                };
                let iid = normal_vec(&mut rng, cfg.d_a);
                audio
                    .row_mut(t)
                    .assign(&(&audio_base + &((&latent_a + &iid) * (sigma * half))));

                let shows_class =
                    matches!(content, SegmentContent::Event | SegmentContent::VisualOnly);
                let signal: Vec<usize> = if shows_class {
                    sample(&mut rng, cfg.n, cfg.signal_positions).into_vec()
                } else {
                    Vec::new()
                };
                for pos in 0..cfg.n {
                    let iid = normal_vec(&mut rng, cfg.d_v);
                    let row = if signal.contains(&pos) {
                        &protos.visual.row(c) + &((&latent_v + &iid) * (sigma * half))
                    } else {
                        &protos.background_visual + &(&iid * sigma)
                    };
                    visual.slice_mut(ndarray::s![t, pos, ..]).assign(&row);
                }
            }
            videos.push(VideoSample {
                id: format!("c{c:02}_v{v:04}"),
                audio,
                visual,
                labels: LabelSet::from_classes(&classes, categories.clone())?,
            });
        }
    }
    let partitions = assign_partitions(&videos, cfg.split_fractions, cfg.seed);
    let split = build_split(&videos, &partitions);
    let dataset = Dataset::new(videos, categories, split)?;
    Ok((dataset, protos))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            videos_per_class: 6,
            t: 6,
            d_a: 8,
            d_v: 12,
            n: 9,
            event_span_range: (2, 4),
            signal_positions: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.videos, b.videos);
        assert_eq!(a.split, b.split);
        let mut other = small();
        other.seed = 1;
        let (_, p0) = generate_with_prototypes(&small()).unwrap();
        let (_, p1) = generate_with_prototypes(&other).unwrap();
        assert_ne!(p0.audio, p1.audio);
        assert_ne!(p0.visual, p1.visual);
    }

    #[test]
    fn zero_noise_collapses_each_class() {
        let mut cfg = small();
        cfg.feature_noise_sigma = 0.0;
        let (ds, protos) = generate_with_prototypes(&cfg).unwrap();
        for v in &ds.videos {
            let classes = v.labels.classes();
            for (t, &k) in classes.iter().enumerate() {
                if k == v.labels.background_index {
                    continue;
                }
                assert_eq!(v.audio.row(t), protos.audio.row(k));
                let mean = v.visual.index_axis(ndarray::Axis(0), t).mean_axis(ndarray::Axis(0)).unwrap();
                let expect = (&protos.visual.row(k) * cfg.signal_positions as f32
                    + &protos.background_visual * (cfg.n - cfg.signal_positions) as f32)
                    / cfg.n as f32;
                for (a, b) in mean.iter().zip(expect.iter()) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn prototypes_are_pairwise_distinct() {
        let (_, protos) = generate_with_prototypes(&SynthConfig::default()).unwrap();
        for m in [&protos.audio, &protos.visual] {
            for i in 0..m.nrows() {
                for j in 0..i {
                    let d: f32 = m
                        .row(i)
                        .iter()
                        .zip(m.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    assert!(d.sqrt() > 1.0, "classes {i} and {j} too close: {d}");
                }
            }
        }
    }

    #[test]
    fn span_outside_t_is_a_config_error() {
        let mut cfg = small();
        cfg.event_span_range = (0, 3);
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        cfg.event_span_range = (2, 7);
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn half_the_videos_are_full_span() {
        let ds = generate_synthetic(&small()).unwrap();
        assert_eq!(ds.split.d_ae.len(), 9);
        assert_eq!(ds.split.d_bg.len(), 9);
        assert!(ds.split.residual.is_empty());
    }
}
