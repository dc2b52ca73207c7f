use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPolicy {
    /// First camera (lexicographic) is the gallery, second the probe.
    CameraSplit,
    /// Each subject's frames are shuffled and halved.
    FrameSplit,
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "camera-split" | "camera" => Ok(SplitPolicy::CameraSplit),
            "frame-split" | "frame" => Ok(SplitPolicy::FrameSplit),
            other => Err(Error::BadConfig(format!("unknown split policy {other:?}"))),
        }
    }
}

/// Closed-set gallery/probe split: every probe identity is in the gallery and
/// no frame is shared.
pub fn split_gallery_probe(
    index: &DatasetIndex,
    policy: SplitPolicy,
    seed: u64,
) -> Result<(DatasetIndex, DatasetIndex)> {
    let mut gallery = DatasetIndex::default();
    let mut probe = DatasetIndex::default();
    match policy {
        SplitPolicy::CameraSplit => {
            for (subject, cams) in &index.subjects {
                let mut it = cams.iter().filter(|(_, f)| !f.is_empty());
                let (Some((c1, f1)), Some((c2, f2))) = (it.next(), it.next()) else {
                    return Err(Error::PolicyInfeasible(format!(
                        "camera split needs two cameras, subject {subject:?} has {}",
                        cams.len()
                    )));
                };
                for f in f1 {
                    gallery.insert(subject, c1, f.clone());
                }
                for f in f2 {
                    probe.insert(subject, c2, f.clone());
                }
            }
        }
        SplitPolicy::FrameSplit => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (subject, cams) in &index.subjects {
                let mut frames: Vec<(&String, &std::path::PathBuf)> = cams
                    .iter()
                    .flat_map(|(c, fs)| fs.iter().map(move |f| (c, f)))
                    .collect();
                if frames.len() < 2 {
                    return Err(Error::PolicyInfeasible(format!(
                        "frame split needs two frames, subject {subject:?} has {}",
                        frames.len()
                    )));
                }
                frames.shuffle(&mut rng);
                let half = frames.len().div_ceil(2);
                for (i, (c, f)) in frames.into_iter().enumerate() {
                    let side = if i < half { &mut gallery } else { &mut probe };
                    side.insert(subject, c, f.clone());
                }
            }
        }
    }
    if gallery.n_subjects() == 0 {
        return Err(Error::PolicyInfeasible("no subjects to split".into()));
    }
    Ok((gallery, probe))
}
