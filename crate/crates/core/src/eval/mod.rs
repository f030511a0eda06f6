//! Segment accuracy, clustering diagnostics of the fused features, event
//! versus background centroid distances and report export.

mod cluster;
mod export;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use cluster::{
    calinski_harabasz, clustering_metrics, davies_bouldin, pairwise_distances, silhouette, ClusterMetrics,
};
pub use export::{bar_chart_svg, read_matrix_csv, write_heatmap_png, write_matrix_csv};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::{infer, Inference};

/// Fraction of segments whose predicted class equals the label.
pub fn segment_accuracy(pred: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        correct += p.iter().zip(t).filter(|(a, b)| a == b).count();
        total += t.len();
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Event versus background segments per category, averaged.
    Mean,
    /// Event segments of all categories, one cluster per category.
    All,
}

/// Per-video features with segment classes.
pub struct SegmentFeatures<'a> {
    pub features: &'a [Array2<f32>],
    pub classes: &'a [Vec<usize>],
    pub background: usize,
}

impl SegmentFeatures<'_> {
    fn stack(&self, keep: impl Fn(usize, usize) -> Option<usize>) -> (Array2<f64>, Vec<usize>) {
        let d = self.features.first().map(|f| f.ncols()).unwrap_or(0);
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for (v, (f, cls)) in self.features.iter().zip(self.classes).enumerate() {
            for (t, &c) in cls.iter().enumerate() {
                if let Some(id) = keep(v, c) {
                    rows.extend(f.row(t).iter().map(|&x| x as f64));
                    ids.push(id);
                }
            }
        }
        (Array2::from_shape_vec((ids.len(), d), rows).expect("row width"), ids)
    }

    /// Majority event class of each video, if any.
    fn video_categories(&self) -> Vec<Option<usize>> {
        self.classes
            .iter()
            .map(|cls| {
                let mut counts = BTreeMap::new();
                for &c in cls.iter().filter(|&&c| c != self.background) {
                    *counts.entry(c).or_insert(0usize) += 1;
                }
                counts
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(c, _)| c)
            })
            .collect()
    }

    /// Event (id 0) and background (id 1) segments of the videos whose
    /// category is `category`.
    pub fn two_clusters(&self, category: usize) -> (Array2<f64>, Vec<usize>) {
        let cats = self.video_categories();
        self.stack(|v, c| {
            if cats[v] != Some(category) {
                None
            } else if c == self.background {
                Some(1)
            } else if c == category {
                Some(0)
            } else {
                None
            }
        })
    }

    /// Event segments of every category, labeled by class.
    pub fn event_clusters(&self) -> (Array2<f64>, Vec<usize>) {
        self.stack(|_, c| (c != self.background).then_some(c))
    }

    fn categories(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self.video_categories().into_iter().flatten().collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

/// Clustering scores in one of the two modes. `Mean` averages over the
/// categories whose two clusters are both present and scorable.
pub fn clustering_by_mode(seg: &SegmentFeatures, mode: ClusterMode) -> Result<ClusterMetrics> {
    match mode {
        ClusterMode::All => {
            let (x, ids) = seg.event_clusters();
            clustering_metrics(x.view(), &ids)
        }
        ClusterMode::Mean => {
            let mut per = Vec::new();
            for c in seg.categories() {
                let (x, ids) = seg.two_clusters(c);
                match clustering_metrics(x.view(), &ids) {
                    Ok(m) => per.push(m),
                    Err(Error::UndefinedMetric(why)) => log::debug!("category {c} skipped: {why}"),
                    Err(e) => return Err(e),
                }
            }
            if per.is_empty() {
                return Err(Error::UndefinedMetric("no category has both event and background segments".into()));
            }
            let n = per.len() as f64;
            Ok(ClusterMetrics {
                sc: per.iter().map(|m| m.sc).sum::<f64>() / n,
                ch: per.iter().map(|m| m.ch).sum::<f64>() / n,
                dbi: per.iter().map(|m| m.dbi).sum::<f64>() / n,
            })
        }
    }
}

/// Distance between the mean event row and the mean background row, or
/// `None` when either set is empty.
pub fn centroid_distance(features: ArrayView2<f64>, event_mask: &[bool]) -> Option<f64> {
    let ev: Vec<usize> = (0..event_mask.len()).filter(|&i| event_mask[i]).collect();
    let bg: Vec<usize> = (0..event_mask.len()).filter(|&i| !event_mask[i]).collect();
    if ev.is_empty() || bg.is_empty() {
        return None;
    }
    let ce = features.select(Axis(0), &ev).mean_axis(Axis(0))?;
    let cb = features.select(Axis(0), &bg).mean_axis(Axis(0))?;
    Some((&ce - &cb).mapv(|x| x * x).sum().sqrt())
}

/// Centroid distance per category over the segments of that category's
/// videos.
pub fn centroid_distances(seg: &SegmentFeatures) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for c in seg.categories() {
        let (x, ids) = seg.two_clusters(c);
        let mask: Vec<bool> = ids.iter().map(|&i| i == 0).collect();
        if let Some(d) = centroid_distance(x.view(), &mask) {
            out.insert(c, d);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub videos: usize,
    pub segment_accuracy: f64,
    pub per_category_accuracy: BTreeMap<String, f64>,
    pub sc_mean: Option<f64>,
    pub sc_all: Option<f64>,
    pub ch_mean: Option<f64>,
    pub ch_all: Option<f64>,
    pub dbi_mean: Option<f64>,
    pub dbi_all: Option<f64>,
    pub centroid_distances: BTreeMap<String, f64>,
    pub checkpoint_mode: Option<String>,
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn cluster(&self, mode: ClusterMode) -> Option<ClusterMetrics> {
        let (sc, ch, dbi) = match mode {
            ClusterMode::Mean => (self.sc_mean, self.ch_mean, self.dbi_mean),
            ClusterMode::All => (self.sc_all, self.ch_all, self.dbi_all),
        };
        Some(ClusterMetrics { sc: sc?, ch: ch?, dbi: dbi? })
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Runs `model` on `ids` and scores it.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    ids: &[String],
    split: &str,
    tau: f64,
    batch_size: usize,
) -> Result<(EvalReport, Inference)> {
    let inf = infer(model, data, ids, tau, batch_size)?;
    let videos = data.select(ids)?;
    let classes: Vec<Vec<usize>> = videos.iter().map(|v| v.labels.classes()).collect();
    let seg = SegmentFeatures {
        features: &inf.features,
        classes: &classes,
        background: data.background_index,
    };
    let name = |c: usize| data.categories.get(c).cloned().unwrap_or_else(|| c.to_string());

    let mut per_category = BTreeMap::new();
    let cats = seg.video_categories();
    for c in seg.categories() {
        let sel: Vec<usize> = (0..ids.len()).filter(|&i| cats[i] == Some(c)).collect();
        let p: Vec<Vec<usize>> = sel.iter().map(|&i| inf.predictions[i].clone()).collect();
        let t: Vec<Vec<usize>> = sel.iter().map(|&i| classes[i].clone()).collect();
        per_category.insert(name(c), segment_accuracy(&p, &t));
    }
    let score = |mode| match clustering_by_mode(&seg, mode) {
        Ok(m) => Ok(Some(m)),
        Err(Error::UndefinedMetric(why)) => {
            log::warn!("{mode:?} clustering undefined: {why}");
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let mean = score(ClusterMode::Mean)?;
    let all = score(ClusterMode::All)?;
    let report = EvalReport {
        split: split.to_string(),
        videos: ids.len(),
        segment_accuracy: segment_accuracy(&inf.predictions, &classes),
        per_category_accuracy: per_category,
        sc_mean: mean.map(|m| m.sc),
        sc_all: all.map(|m| m.sc),
        ch_mean: mean.and_then(|m| finite(m.ch)),
        ch_all: all.and_then(|m| finite(m.ch)),
        dbi_mean: mean.map(|m| m.dbi),
        dbi_all: all.map(|m| m.dbi),
        centroid_distances: centroid_distances(&seg)
            .into_iter()
            .map(|(c, d)| (name(c), d))
            .collect(),
        checkpoint_mode: None,
        config_hash: None,
    };
    Ok((report, inf))
}

/// Writes `report.json`, per-video probability maps (CSV and PNG) for the
/// first `maps` videos, and SVG bar charts.
pub fn write_report(
    dir: &Path,
    report: &EvalReport,
    inf: &Inference,
    categories: &[String],
    maps: usize,
) -> Result<()> {
    fs::create_dir_all(dir.join("maps")).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&path, e))?;
    for (id, scores) in inf.ids.iter().zip(&inf.scores).take(maps) {
        write_matrix_csv(&dir.join("maps").join(format!("{id}.csv")), scores, categories)?;
        write_heatmap_png(&dir.join("maps").join(format!("{id}.png")), scores, 16)?;
    }
    let (labels, values): (Vec<String>, Vec<f64>) = report
        .per_category_accuracy
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .unzip();
    let svg = bar_chart_svg("segment accuracy per category", &labels, &values);
    let path = dir.join("accuracy.svg");
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    let (labels, values): (Vec<String>, Vec<f64>) = report
        .centroid_distances
        .iter()
        .map(|(k, v)| (k.clone(), *v))
        .unzip();
    let svg = bar_chart_svg("event/background centroid distance", &labels, &values);
    let path = dir.join("centroid_distance.svg");
    fs::write(&path, svg).map_err(|e| Error::io(&path, e))
}
