//! Segment label semantics.
//!
//! Each video carries a `T × C` one-hot matrix. The background class always
//! sits at the last column (`C − 1`).

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Per-segment one-hot labels plus the category vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub y_full: Array2<u8>,
    pub background_index: usize,
    pub categories: Vec<String>,
}

impl LabelSet {
    pub fn new(y_full: Array2<u8>, categories: Vec<String>) -> Result<Self> {
        let c = categories.len();
        if c < 2 {
            return Err(Error::InvalidLabel(format!(
                "need at least one event category plus background, got C={c}"
            )));
        }
        if y_full.ncols() != c {
            return Err(Error::InvalidLabel(format!(
                "label matrix has {} columns but {c} categories",
                y_full.ncols()
            )));
        }
        if y_full.nrows() == 0 {
            return Err(Error::InvalidLabel("video has zero segments".into()));
        }
        validate_one_hot(y_full.view())?;
        Ok(LabelSet {
            y_full,
            background_index: c - 1,
            categories,
        })
    }

    /// Builds labels from per-segment class indices.
    pub fn from_classes(classes: &[usize], categories: Vec<String>) -> Result<Self> {
        let c = categories.len();
        let mut y = Array2::<u8>::zeros((classes.len(), c));
        for (t, &k) in classes.iter().enumerate() {
            if k >= c {
                return Err(Error::InvalidLabel(format!(
                    "segment {t} has class {k} but C={c}"
                )));
            }
            y[[t, k]] = 1;
        }
        LabelSet::new(y, categories)
    }

    pub fn num_segments(&self) -> usize {
        self.y_full.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.y_full.ncols()
    }

    /// Class index of every segment.
    pub fn classes(&self) -> Vec<usize> {
        self.y_full
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&v| v == 1).unwrap_or(0))
            .collect()
    }

    pub fn is_event(&self, t: usize) -> bool {
        self.y_full[[t, self.background_index]] == 0
    }

    /// Most frequent non-background class (lowest index on ties), or `None`
    /// for an all-background video.
    pub fn video_category(&self) -> Option<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for k in self.classes() {
            if k != self.background_index {
                counts[k] += 1;
            }
        }
        let (best, &n) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (n > 0).then_some(best)
    }

    /// Set of event categories present in the video.
    pub fn event_categories(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self
            .classes()
            .into_iter()
            .filter(|&k| k != self.background_index)
            .collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

fn validate_one_hot(y: ArrayView2<u8>) -> Result<()> {
    for (t, row) in y.rows().into_iter().enumerate() {
        let mut ones = 0;
        for &v in row {
            match v {
                0 => {}
                1 => ones += 1,
                other => {
                    return Err(Error::InvalidLabel(format!(
                        "segment {t} holds non-binary entry {other}"
                    )))
                }
            }
        }
        if ones != 1 {
            return Err(Error::InvalidLabel(format!(
                "segment {t} row sums to {ones}, expected exactly 1"
            )));
        }
    }
    Ok(())
}

/// Video-level weak label: the column-wise mean of the one-hot matrix.
pub fn weak_label(y_full: ArrayView2<u8>) -> Result<Array1<f64>> {
    if y_full.nrows() == 0 {
        return Err(Error::InvalidLabel("empty label matrix".into()));
    }
    validate_one_hot(y_full)?;
    let t = y_full.nrows() as f64;
    Ok(y_full
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|&v| v as f64).sum::<f64>() / t)
        .collect())
}

/// `G[t] = 1` iff segment `t` is not background.
pub fn event_mask(labels: &LabelSet) -> Array1<u8> {
    (0..labels.num_segments())
        .map(|t| u8::from(labels.is_event(t)))
        .collect()
}
