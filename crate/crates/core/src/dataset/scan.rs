use std::fs;
use std::path::{Path, PathBuf};

use super::DatasetIndex;
use crate::error::{Error, Result};
use crate::silhouette::is_mask_path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `root/<subject>/<camera>/<frame>`
    PerSubjectDirs,
    /// `root/<camera>/<subject>_<rest>`
    TwoCameraDirs,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-subject-dirs" => Ok(Layout::PerSubjectDirs),
            "two-camera-dirs" => Ok(Layout::TwoCameraDirs),
            other => Err(Error::BadConfig(format!("unknown layout {other:?}"))),
        }
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Every frame below `dir`, recursively, sorted by path. Mask files are skipped.
pub fn sequence_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in sorted_entries(dir)? {
        if entry.is_dir() {
            out.extend(sequence_frames(&entry)?);
        } else if is_image(&entry) && !is_mask_path(&entry) {
            out.push(entry);
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string()
}

/// Checks that the image header decodes; unreadable frames become warnings.
fn readable(path: &Path) -> std::result::Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn admit(index: &mut DatasetIndex, subject: &str, camera: &str, frame: PathBuf) {
    match readable(&frame) {
        Ok(()) => index.insert(subject, camera, frame),
        Err(e) => {
            log::warn!("skipping unreadable frame {}: {e}", frame.display());
            index.warnings.push(format!("{}: {e}", frame.display()));
        }
    }
}

/// Builds a deterministic index of a dataset directory.
pub fn scan_dataset(root: &Path, layout: Layout) -> Result<DatasetIndex> {
    let mut index = DatasetIndex::default();
    match layout {
        Layout::PerSubjectDirs => {
            for subject_dir in sorted_entries(root)? {
                if !subject_dir.is_dir() {
                    continue;
                }
                let subject = file_name(&subject_dir);
                for cam_dir in sorted_entries(&subject_dir)? {
                    if !cam_dir.is_dir() {
                        if is_image(&cam_dir) {
                            return Err(Error::LayoutMismatch {
                                path: cam_dir,
                                detail: "expected camera directories inside each subject directory"
                                    .into(),
                            });
                        }
                        continue;
                    }
                    let camera = file_name(&cam_dir);
                    for frame in sorted_entries(&cam_dir)? {
                        if frame.is_file() && is_image(&frame) && !is_mask_path(&frame) {
                            admit(&mut index, &subject, &camera, frame);
                        }
                    }
                }
            }
        }
        Layout::TwoCameraDirs => {
            for cam_dir in sorted_entries(root)? {
                if !cam_dir.is_dir() {
                    continue;
                }
                let camera = file_name(&cam_dir);
                for frame in sorted_entries(&cam_dir)? {
                    if frame.is_dir() {
                        return Err(Error::LayoutMismatch {
                            path: frame,
                            detail: "expected image files directly inside each camera directory"
                                .into(),
                        });
                    }
                    if !is_image(&frame) || is_mask_path(&frame) {
                        continue;
                    }
                    let name = file_name(&frame);
                    let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s);
                    let Some((subject, _)) = stem.split_once('_') else {
                        return Err(Error::LayoutMismatch {
                            path: frame.clone(),
                            detail: "file name lacks a `<subject>_` prefix".into(),
                        });
                    };
                    let subject = subject.to_string();
                    admit(&mut index, &subject, &camera, frame);
                }
            }
        }
    }
    if index.total_frames() == 0 {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    Ok(index)
}
