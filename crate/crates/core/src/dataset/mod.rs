//! Dataset indexing, training-pair sampling, gallery/probe splits and a
//! synthetic two-camera generator.
//!
//! Supported on-disk layouts:
//!
//! * per-subject directories: `root/<subject_id>/<camera_id>/<frame>.png`
//! * two-camera directories: `root/<camera_id>/<subject_id>_<anything>.png`
//!   (VIPeR / CUHK style)
//!
//! Either layout may carry a `<frame>_mask.png` next to each frame.

mod pairs;
mod scan;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use pairs::{load_pairs, make_pairs, PairSample, PairSet};
pub use scan::{scan_dataset, sequence_frames, Layout};
pub use split::{split_gallery_probe, SplitPolicy};
pub use synth::{synth_generate, SynthConfig, SynthSummary, CAMERAS, MANIFEST_FILE};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::silhouette::{extract_silhouette, normalize, NormalizedSilhouette, RgbFrame};

/// Frames per camera per subject, each list sorted lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub subjects: BTreeMap<String, BTreeMap<String, Vec<PathBuf>>>,
    /// Files that could not be read while scanning.
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(String::as_str)
    }

    /// All frames of a subject, camera by camera.
    pub fn frames(&self, subject: &str) -> Vec<&Path> {
        self.subjects
            .get(subject)
            .map(|cams| cams.values().flatten().map(PathBuf::as_path).collect())
            .unwrap_or_default()
    }

    pub fn n_frames(&self, subject: &str) -> usize {
        self.subjects
            .get(subject)
            .map_or(0, |cams| cams.values().map(Vec::len).sum())
    }

    pub fn total_frames(&self) -> usize {
        self.subjects
            .values()
            .flat_map(|c| c.values())
            .map(Vec::len)
            .sum()
    }

    pub fn insert(&mut self, subject: &str, camera: &str, frame: PathBuf) {
        let list = self
            .subjects
            .entry(subject.to_string())
            .or_default()
            .entry(camera.to_string())
            .or_default();
        let pos = list.binary_search(&frame).unwrap_or_else(|p| p);
        list.insert(pos, frame);
    }
}

/// Default luminance threshold for frames without a mask file.
pub const DEFAULT_FG_THRESHOLD: f64 = 0.1;

/// Loads and normalizes one frame.
pub fn load_silhouette<T: Scalar>(
    path: &Path,
    subject: &str,
    frame_index: usize,
    dims: (usize, usize),
    threshold: f64,
) -> Result<NormalizedSilhouette<T>> {
    let frame = extract_silhouette(RgbFrame::open(path)?, threshold)?;
    normalize(&frame, dims.0, dims.1, subject, frame_index)
}

/// Loads and normalizes every frame of one subject.
pub fn load_subject<T: Scalar>(
    index: &DatasetIndex,
    subject: &str,
    dims: (usize, usize),
    threshold: f64,
) -> Result<Vec<NormalizedSilhouette<T>>> {
    index
        .frames(subject)
        .into_iter()
        .enumerate()
        .map(|(i, p)| load_silhouette(p, subject, i, dims, threshold))
        .collect()
}
