//! Feature pack: a directory holding `manifest.json` plus three binary
//! tensors per video (`<id>.audio.bin`, `<id>.visual.bin`, `<id>.labels.bin`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::split::{assign_partitions, build_split, Partition};
use super::{Dataset, LabelSet, VideoSample};
use crate::error::{Error, Result};
use crate::tensor_io;

pub const PACK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFiles {
    pub audio: String,
    pub visual: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub files: VideoFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Partition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub version: u32,
    #[serde(rename = "C")]
    pub c: usize,
    pub categories: Vec<String>,
    pub background_index: usize,
    pub videos: Vec<VideoEntry>,
}

pub fn write_feature_pack(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let files = VideoFiles {
            audio: format!("{}.audio.bin", v.id),
            visual: format!("{}.visual.bin", v.id),
            labels: format!("{}.labels.bin", v.id),
        };
        let audio = v.audio.as_standard_layout();
        let visual = v.visual.as_standard_layout();
        let labels = v.labels.y_full.as_standard_layout();
        tensor_io::write_f32(
            &dir.join(&files.audio),
            v.audio.shape(),
            audio.as_slice().expect("standard layout"),
        )?;
        tensor_io::write_f32(
            &dir.join(&files.visual),
            v.visual.shape(),
            visual.as_slice().expect("standard layout"),
        )?;
        tensor_io::write_u8(
            &dir.join(&files.labels),
            v.labels.y_full.shape(),
            labels.as_slice().expect("standard layout"),
        )?;
        entries.push(VideoEntry {
            id: v.id.clone(),
            t: v.num_segments(),
            files,
            split: dataset.split.partition_of(&v.id),
        });
    }
    let manifest = PackManifest {
        version: PACK_VERSION,
        c: dataset.categories.len(),
        categories: dataset.categories.clone(),
        background_index: dataset.background_index,
        videos: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<PackManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PackManifest = serde_json::from_str(&text)?;
    if manifest.version != PACK_VERSION {
        return Err(Error::Data(format!(
            "unsupported pack version {}",
            manifest.version
        )));
    }
    if manifest.categories.len() != manifest.c {
        return Err(Error::DimensionMismatch(format!(
            "manifest C={} but {} category names",
            manifest.c,
            manifest.categories.len()
        )));
    }
    if manifest.c < 2 || manifest.background_index != manifest.c - 1 {
        return Err(Error::Data(format!(
            "background_index must be C-1 = {}",
            manifest.c.saturating_sub(1)
        )));
    }
    Ok(manifest)
}

/// Reads a pack. Videos without a stored partition are assigned one with a
/// fixed seed so repeated reads agree.
pub fn read_feature_pack(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    let mut stored: BTreeMap<String, Partition> = BTreeMap::new();
    for entry in &manifest.videos {
        let (a_shape, a_data) = tensor_io::read_f32(&dir.join(&entry.files.audio))?;
        let (v_shape, v_data) = tensor_io::read_f32(&dir.join(&entry.files.visual))?;
        let (l_shape, l_data) = tensor_io::read_u8(&dir.join(&entry.files.labels))?;
        let check = |what: &str, shape: &[usize], rank: usize| -> Result<()> {
            if shape.len() != rank || shape[0] != entry.t {
                return Err(Error::DimensionMismatch(format!(
                    "{}: {what} tensor shape {shape:?} disagrees with manifest T={}",
                    entry.id, entry.t
                )));
            }
            Ok(())
        };
        check("audio", &a_shape, 2)?;
        check("visual", &v_shape, 3)?;
        check("labels", &l_shape, 2)?;
        if l_shape[1] != manifest.c {
            return Err(Error::DimensionMismatch(format!(
                "{}: labels have {} columns but manifest C={}",
                entry.id, l_shape[1], manifest.c
            )));
        }
        let audio = Array2::from_shape_vec((a_shape[0], a_shape[1]), a_data)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let visual = Array3::from_shape_vec((v_shape[0], v_shape[1], v_shape[2]), v_data)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let y = Array2::from_shape_vec((l_shape[0], l_shape[1]), l_data)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        let labels = LabelSet::new(y, manifest.categories.clone())?;
        if let Some(p) = entry.split {
            stored.insert(entry.id.clone(), p);
        }
        videos.push(VideoSample {
            id: entry.id.clone(),
            audio,
            visual,
            labels,
        });
    }
    let partitions = if stored.len() == videos.len() {
        stored
    } else {
        let mut derived = assign_partitions(&videos, (0.7, 0.15), 0);
        derived.extend(stored);
        derived
    };
    let split = build_split(&videos, &partitions);
    Dataset::new(videos, manifest.categories, split)
}
