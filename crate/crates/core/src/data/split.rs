use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSample;

/// Which held-out partition a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "val" | "valid" | "validation" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

/// Video type by label content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoKind {
    /// At least one event segment and at least one background segment.
    Mixed,
    /// Every segment is the same non-background event.
    AllEvent,
    /// All background, or all-event with more than one category.
    Residual,
}

pub fn classify(video: &VideoSample) -> VideoKind {
    let labels = &video.labels;
    let classes = labels.classes();
    let has_bg = classes.iter().any(|&k| k == labels.background_index);
    let has_event = classes.iter().any(|&k| k != labels.background_index);
    if has_event && has_bg {
        VideoKind::Mixed
    } else if has_event && classes.iter().all(|&k| k == classes[0]) {
        VideoKind::AllEvent
    } else {
        VideoKind::Residual
    }
}

/// Train/val/test membership plus the label-type subsets used by the staged
/// training protocol.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub d_bg: Vec<String>,
    pub d_ae: Vec<String>,
    pub residual: Vec<String>,
}

impl DatasetSplit {
    pub fn ids(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn partition_of(&self, id: &str) -> Option<Partition> {
        [Partition::Train, Partition::Val, Partition::Test]
            .into_iter()
            .find(|&p| self.ids(p).iter().any(|v| v == id))
    }
}

/// Assigns every video to exactly one of `d_bg`, `d_ae` or `residual`.
/// Leaves train/val/test untouched.
pub fn split_subsets(videos: &[VideoSample]) -> DatasetSplit {
    let mut split = DatasetSplit::default();
    for v in videos {
        match classify(v) {
            VideoKind::Mixed => split.d_bg.push(v.id.clone()),
            VideoKind::AllEvent => split.d_ae.push(v.id.clone()),
            VideoKind::Residual => split.residual.push(v.id.clone()),
        }
    }
    split
}

/// Seeded train/val/test assignment, stratified by video category so every
/// class shows up in each partition when it has enough videos.
pub fn assign_partitions(
    videos: &[VideoSample],
    fractions: (f64, f64),
    seed: u64,
) -> BTreeMap<String, Partition> {
    let mut by_cat: BTreeMap<Option<usize>, Vec<&str>> = BTreeMap::new();
    for v in videos {
        by_cat
            .entry(v.labels.video_category())
            .or_default()
            .push(v.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b11);
    let mut out = BTreeMap::new();
    for (_, mut ids) in by_cat {
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = ((n as f64) * fractions.0).round() as usize;
        let n_val = ((n as f64) * fractions.1).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            let part = if i < n_train {
                Partition::Train
            } else if i < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
            out.insert(id.to_string(), part);
        }
    }
    out
}

/// Full split: label-type subsets plus the given partition assignment,
/// listed in input order.
pub fn build_split(
    videos: &[VideoSample],
    partitions: &BTreeMap<String, Partition>,
) -> DatasetSplit {
    let mut split = split_subsets(videos);
    for v in videos {
        match partitions.get(&v.id) {
            Some(Partition::Train) => split.train.push(v.id.clone()),
            Some(Partition::Val) => split.val.push(v.id.clone()),
            Some(Partition::Test) => split.test.push(v.id.clone()),
            None => {}
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSet;
    use ndarray::{Array2, Array3};

    fn video(id: &str, classes: &[usize]) -> VideoSample {
        let cats = vec!["a".into(), "b".into(), "background".into()];
        VideoSample {
            id: id.into(),
            audio: Array2::zeros((classes.len(), 2)),
            visual: Array3::zeros((classes.len(), 1, 2)),
            labels: LabelSet::from_classes(classes, cats).unwrap(),
        }
    }

    #[test]
    fn subset_examples() {
        let vids = vec![
            video("bg", &[2; 10]),
            video("mixed", &[0, 0, 0, 0, 0, 2, 2, 2, 2, 2]),
            video("ae", &[1; 10]),
            video("two_events", &[0, 0, 1, 1]),
        ];
        let s = split_subsets(&vids);
        assert_eq!(s.residual, vec!["bg".to_string(), "two_events".into()]);
        assert_eq!(s.d_bg, vec!["mixed".to_string()]);
        assert_eq!(s.d_ae, vec!["ae".to_string()]);
    }

    #[test]
    fn partitions_cover_every_video_once() {
        let vids: Vec<_> = (0..40)
            .map(|i| video(&format!("v{i}"), &[i % 2, 2, i % 2]))
            .collect();
        let parts = assign_partitions(&vids, (0.7, 0.15), 3);
        let split = build_split(&vids, &parts);
        let total = split.train.len() + split.val.len() + split.test.len();
        assert_eq!(total, 40);
        assert_eq!(parts, assign_partitions(&vids, (0.7, 0.15), 3));
        assert_eq!(split.train.len(), 28);
    }
}
