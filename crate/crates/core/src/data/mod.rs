//! Videos, labels, subsets, the synthetic generator and feature-pack I/O.

mod labels;
mod pack;
mod split;
mod synth;

use std::collections::HashMap;

use ndarray::{Array2, Array3};

pub use labels::{event_mask, weak_label, LabelSet};
pub use pack::{read_feature_pack, write_feature_pack, PackManifest, VideoEntry, VideoFiles};
pub use split::{
    assign_partitions, build_split, classify, split_subsets, DatasetSplit, Partition, VideoKind,
};
pub use synth::{generate_synthetic, generate_with_prototypes, Prototypes, SynthConfig};

use crate::error::{Error, Result};

/// One video: audio `T × d_a`, visual maps `T × N × d_v`, segment labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub audio: Array2<f32>,
    pub visual: Array3<f32>,
    pub labels: LabelSet,
}

impl VideoSample {
    pub fn num_segments(&self) -> usize {
        self.audio.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.audio.nrows();
        if t == 0 {
            return Err(Error::Data(format!("{}: zero segments", self.id)));
        }
        if self.visual.dim().0 != t || self.labels.num_segments() != t {
            return Err(Error::DimensionMismatch(format!(
                "{}: audio has T={t}, visual T={}, labels T={}",
                self.id,
                self.visual.dim().0,
                self.labels.num_segments()
            )));
        }
        if !self.audio.iter().chain(self.visual.iter()).all(|v| v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite feature value", self.id)));
        }
        Ok(())
    }
}

/// Feature shapes shared by every video of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeatureDims {
    pub t: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub n: usize,
    pub c: usize,
}

/// Videos plus vocabulary and split. All videos share the same feature
/// dimensions and segment count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<VideoSample>,
    pub categories: Vec<String>,
    pub background_index: usize,
    pub split: DatasetSplit,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(videos: Vec<VideoSample>, categories: Vec<String>, split: DatasetSplit) -> Result<Self> {
        if categories.len() < 2 {
            return Err(Error::Data("need at least one event category plus background".into()));
        }
        let mut index = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            v.validate()?;
            if v.labels.categories != categories {
                return Err(Error::Data(format!("{}: category list differs from dataset", v.id)));
            }
            if index.insert(v.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate video id {}", v.id)));
            }
        }
        let ds = Dataset {
            background_index: categories.len() - 1,
            videos,
            categories,
            split,
            index,
        };
        ds.dims()?;
        Ok(ds)
    }

    /// Common dimensions; errors when videos disagree.
    pub fn dims(&self) -> Result<FeatureDims> {
        let first = self
            .videos
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let (t, n, d_v) = first.visual.dim();
        let dims = FeatureDims {
            t,
            d_a: first.audio.ncols(),
            d_v,
            n,
            c: self.categories.len(),
        };
        for v in &self.videos {
            let (vt, vn, vd) = v.visual.dim();
            if vt != dims.t || vn != dims.n || vd != dims.d_v || v.audio.ncols() != dims.d_a {
                return Err(Error::DimensionMismatch(format!(
                    "{}: shape differs from the first video ({dims:?})",
                    v.id
                )));
            }
        }
        Ok(dims)
    }

    pub fn get(&self, id: &str) -> Option<&VideoSample> {
        self.index.get(id).map(|&i| &self.videos[i])
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    /// Looks up every id, failing on unknown ids.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a VideoSample>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Data(format!("unknown video id {id}")))
            })
            .collect()
    }

    /// Videos in `part` that also belong to the given label-type subsets.
    pub fn subset_ids(&self, part: Partition, kinds: &[VideoKind]) -> Vec<String> {
        self.split
            .ids(part)
            .iter()
            .filter(|id| {
                let kind = self.get(id).map(classify);
                kind.is_some_and(|k| kinds.contains(&k))
            })
            .cloned()
            .collect()
    }
}
