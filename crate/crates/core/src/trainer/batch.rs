//! Epoch ordering and batch tensor assembly.

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{event_mask, weak_label, Dataset, VideoSample};
use crate::error::{Error, Result};

/// Seeded shuffle of `ids` cut into batches; the last batch may be short.
pub fn build_batches(ids: &[String], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut order = ids.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Dense tensors for one batch of videos.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `B×T×d_a`
    pub audio: Tensor,
    /// `B×T×N×d_v`
    pub visual: Tensor,
    /// `B×T×C` one-hot labels.
    pub y_full: Tensor,
    /// `B×C` video-level soft labels.
    pub y_weak: Tensor,
    /// `B×T` ℓ1-normalized event masks.
    pub g_normalized: Tensor,
    /// Host copy of the event masks.
    pub event: Vec<Vec<bool>>,
    /// Host copy of the segment classes.
    pub classes: Vec<Vec<usize>>,
    /// Video category for mining; `None` for videos without an event, which
    /// stay out of the contrastive pool.
    pub categories: Vec<Option<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn build(data: &Dataset, ids: &[String], dtype: DType) -> Result<Self> {
        let videos = data.select(ids)?;
        Self::from_videos(&videos, dtype)
    }

    pub fn from_videos(videos: &[&VideoSample], dtype: DType) -> Result<Self> {
        let Some(first) = videos.first() else {
            return Err(Error::Data("empty batch".into()));
        };
        let b = videos.len();
        let (t, d_a) = first.audio.dim();
        let (_, n, d_v) = first.visual.dim();
        let c = first.labels.num_classes();
        let mut audio = Vec::with_capacity(b * t * d_a);
        let mut visual = Vec::with_capacity(b * t * n * d_v);
        let mut y_full = Vec::with_capacity(b * t * c);
        let mut y_weak = Vec::with_capacity(b * c);
        let mut g = Vec::with_capacity(b * t);
        let mut event = Vec::with_capacity(b);
        let mut classes = Vec::with_capacity(b);
        let mut categories = Vec::with_capacity(b);
        for v in videos.iter() {
            if v.audio.dim() != (t, d_a) || v.visual.dim() != (t, n, d_v) || v.labels.num_classes() != c {
                return Err(Error::DimensionMismatch(format!("video {} differs in shape from the batch", v.id)));
            }
            audio.extend(v.audio.iter().copied());
            visual.extend(v.visual.iter().copied());
            y_full.extend(v.labels.y_full.iter().map(|&x| x as f64));
            y_weak.extend(weak_label(v.labels.y_full.view())?.iter().copied());
            let mask = event_mask(&v.labels);
            let count = mask.iter().filter(|&&m| m == 1).count();
            g.extend(mask.iter().map(|&m| if count > 0 { m as f64 / count as f64 } else { 0.0 }));
            event.push(mask.iter().map(|&m| m == 1).collect());
            classes.push(v.labels.classes());
            categories.push(v.labels.video_category());
        }
        let dev = Device::Cpu;
        Ok(Batch {
            ids: videos.iter().map(|v| v.id.clone()).collect(),
            audio: Tensor::from_vec(audio, (b, t, d_a), &dev)?.to_dtype(dtype)?,
            visual: Tensor::from_vec(visual, (b, t, n, d_v), &dev)?.to_dtype(dtype)?,
            y_full: Tensor::from_vec(y_full, (b, t, c), &dev)?.to_dtype(dtype)?,
            y_weak: Tensor::from_vec(y_weak, (b, c), &dev)?.to_dtype(dtype)?,
            g_normalized: Tensor::from_vec(g, (b, t), &dev)?.to_dtype(dtype)?,
            event,
            classes,
            categories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::nn::to_host;
    use rand::SeedableRng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn fixed_seed_fixed_order() {
        let a = build_batches(&ids(20), 6, &mut ChaCha8Rng::seed_from_u64(3));
        let b = build_batches(&ids(20), 6, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a[3].len(), 2);
    }

    #[test]
    fn epoch_visits_every_video_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for epoch in 0..3 {
            let batches = build_batches(&ids(37), 8, &mut rng);
            let mut seen: Vec<String> = batches.concat();
            seen.sort();
            let mut expect = ids(37);
            expect.sort();
            assert_eq!(seen, expect, "epoch {epoch}");
        }
    }

    #[test]
    fn batch_tensors_match_videos() {
        let cfg = SynthConfig {
            videos_per_class: 2,
            d_a: 3,
            d_v: 4,
            n: 2,
            signal_positions: 1,
            t: 5,
            event_span_range: (2, 4),
            ..Default::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let chosen: Vec<String> = data.videos.iter().take(3).map(|v| v.id.clone()).collect();
        let batch = Batch::build(&data, &chosen, DType::F64).unwrap();
        assert_eq!(batch.audio.dims(), &[3, 5, 3]);
        assert_eq!(batch.visual.dims(), &[3, 5, 2, 4]);
        assert_eq!(batch.y_full.dims(), &[3, 5, 7]);
        for (row, ev) in to_host(&batch.g_normalized).unwrap().chunks(5).zip(&batch.event) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12 || ev.iter().all(|e| !e));
        }
        let single = Batch::build(&data, &chosen[..1], DType::F32).unwrap();
        assert_eq!(single.len(), 1);
    }
}
