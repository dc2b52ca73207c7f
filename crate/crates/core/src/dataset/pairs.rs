use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{load_silhouette, DatasetIndex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::siamese::LabeledPair;
use crate::silhouette::NormalizedSilhouette;

/// Two frame references with a same-identity label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub subject_a: String,
    pub subject_b: String,
    pub label: u8,
}

struct Frame<'a> {
    subject: &'a str,
    camera: &'a str,
    path: &'a PathBuf,
}

fn sample(a: &Frame<'_>, b: &Frame<'_>, label: u8) -> PairSample {
    PairSample {
        path_a: a.path.clone(),
        path_b: b.path.clone(),
        subject_a: a.subject.to_string(),
        subject_b: b.subject.to_string(),
        label,
    }
}

/// Samples `n_pos` same-subject and `n_neg` cross-subject frame pairs without
/// replacement.
///
/// Positive pairs spanning two cameras are used before same-camera ones.
/// The returned list is shuffled.
pub fn make_pairs(
    index: &DatasetIndex,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_subject: Vec<Vec<Frame<'_>>> = index
        .subjects
        .iter()
        .map(|(s, cams)| {
            cams.iter()
                .flat_map(|(c, frames)| {
                    frames.iter().map(move |p| Frame {
                        subject: s,
                        camera: c,
                        path: p,
                    })
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(n_pos + n_neg);
    if n_pos > 0 {
        let mut cross = Vec::new();
        let mut same = Vec::new();
        for frames in &per_subject {
            for i in 0..frames.len() {
                for j in i + 1..frames.len() {
                    let bucket = if frames[i].camera != frames[j].camera {
                        &mut cross
                    } else {
                        &mut same
                    };
                    bucket.push((&frames[i], &frames[j]));
                }
            }
        }
        if cross.len() + same.len() < n_pos {
            return Err(Error::InsufficientFrames(format!(
                "{n_pos} positive pairs (only {} available)",
                cross.len() + same.len()
            )));
        }
        cross.shuffle(&mut rng);
        same.shuffle(&mut rng);
        for (a, b) in cross.into_iter().chain(same).take(n_pos) {
            let (a, b) = if rng.random::<bool>() { (a, b) } else { (b, a) };
            out.push(sample(a, b, 1));
        }
    }

    if n_neg > 0 {
        let n_subjects = per_subject.iter().filter(|f| !f.is_empty()).count();
        if n_subjects < 2 {
            return Err(Error::InsufficientSubjects(n_subjects));
        }
        let sizes: Vec<usize> = per_subject.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().sum();
        let available = (total * total - sizes.iter().map(|s| s * s).sum::<usize>()) / 2;
        if available < n_neg {
            return Err(Error::InsufficientFrames(format!(
                "{n_neg} negative pairs (only {available} available)"
            )));
        }
        let flat: Vec<(usize, &Frame<'_>)> = per_subject
            .iter()
            .enumerate()
            .flat_map(|(s, f)| f.iter().map(move |fr| (s, fr)))
            .collect();
        let mut seen = HashSet::new();
        if n_neg * 2 > available {
            let mut all = Vec::with_capacity(available);
            for i in 0..flat.len() {
                for j in i + 1..flat.len() {
                    if flat[i].0 != flat[j].0 {
                        all.push((i, j));
                    }
                }
            }
            all.shuffle(&mut rng);
            for &(i, j) in all.iter().take(n_neg) {
                let (i, j) = if rng.random::<bool>() { (i, j) } else { (j, i) };
                out.push(sample(flat[i].1, flat[j].1, 0));
            }
        } else {
            while seen.len() < n_neg {
                let i = rng.random_range(0..flat.len());
                let j = rng.random_range(0..flat.len());
                if flat[i].0 == flat[j].0 || !seen.insert((i.min(j), i.max(j))) {
                    continue;
                }
                out.push(sample(flat[i].1, flat[j].1, 0));
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Loaded training pairs; each distinct frame is normalized once.
#[derive(Debug, Clone)]
pub struct PairSet<T> {
    pub silhouettes: Vec<NormalizedSilhouette<T>>,
    /// `(index_a, index_b, label)` into `silhouettes`.
    pub pairs: Vec<(usize, usize, u8)>,
}

impl<T> PairSet<T> {
    pub fn labeled(&self) -> Vec<LabeledPair<'_, T>> {
        self.pairs
            .iter()
            .map(|&(a, b, label)| LabeledPair {
                a: &self.silhouettes[a],
                b: &self.silhouettes[b],
                label,
            })
            .collect()
    }
}

pub fn load_pairs<T: Scalar>(
    samples: &[PairSample],
    dims: (usize, usize),
    fg_threshold: f64,
) -> Result<PairSet<T>> {
    let mut slot = HashMap::new();
    let mut frames: Vec<(&PathBuf, &str)> = Vec::new();
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let mut ends = [0usize; 2];
        for (end, (p, id)) in ends
            .iter_mut()
            .zip([(&s.path_a, &s.subject_a), (&s.path_b, &s.subject_b)])
        {
            *end = *slot.entry(p).or_insert_with(|| {
                frames.push((p, id.as_str()));
                frames.len() - 1
            });
        }
        pairs.push((ends[0], ends[1], s.label));
    }
    let silhouettes = frames
        .into_par_iter()
        .enumerate()
        .map(|(i, (p, id))| load_silhouette(p, id, i, dims, fg_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairSet { silhouettes, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(subjects: usize, cams: usize, frames: usize) -> DatasetIndex {
        let mut idx = DatasetIndex::default();
        for s in 0..subjects {
            for c in 0..cams {
                for f in 0..frames {
                    idx.insert(
                        &format!("s{s}"),
                        &format!("c{c}"),
                        PathBuf::from(format!("s{s}/c{c}/f{f}.png")),
                    );
                }
            }
        }
        idx
    }

    fn check_labels(pairs: &[PairSample]) {
        for p in pairs {
            assert_ne!(p.path_a, p.path_b);
            let sa = p.path_a.components().next().unwrap();
            let sb = p.path_b.components().next().unwrap();
            assert_eq!(p.label == 1, sa == sb);
            assert_eq!(p.label == 1, p.subject_a == p.subject_b);
        }
    }

    #[test]
    fn exhaustive_small_case() {
        let idx = index(2, 1, 2);
        let pairs = make_pairs(&idx, 2, 2, 1).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 2);
        assert_eq!(pairs.iter().filter(|p| p.label == 0).count(), 2);
        check_labels(&pairs);
    }

    #[test]
    fn single_subject_has_no_negatives() {
        assert!(matches!(
            make_pairs(&index(1, 2, 3), 1, 1, 0),
            Err(Error::InsufficientSubjects(1))
        ));
    }

    #[test]
    fn too_many_requested() {
        assert!(matches!(
            make_pairs(&index(2, 1, 2), 3, 0, 0),
            Err(Error::InsufficientFrames(_))
        ));
        assert!(matches!(
            make_pairs(&index(2, 1, 2), 0, 5, 0),
            Err(Error::InsufficientFrames(_))
        ));
    }

    #[test]
    fn deterministic_and_unique() {
        let idx = index(5, 2, 4);
        let a = make_pairs(&idx, 20, 40, 9).unwrap();
        assert_eq!(a, make_pairs(&idx, 20, 40, 9).unwrap());
        assert_ne!(a, make_pairs(&idx, 20, 40, 10).unwrap());
        check_labels(&a);
        let keys: HashSet<_> = a
            .iter()
            .map(|p| {
                let (x, y) = (p.path_a.clone(), p.path_b.clone());
                if x < y {
                    (x, y)
                } else {
                    (y, x)
                }
            })
            .collect();
        assert_eq!(keys.len(), 60);
    }

    #[test]
    fn positives_prefer_cross_camera() {
        // 5 subjects x 4 cross-camera pairs each = 20 available.
        let idx = index(5, 2, 2);
        let pairs = make_pairs(&idx, 20, 0, 4).unwrap();
        for p in &pairs {
            let cam = |q: &PathBuf| q.components().nth(1).unwrap().as_os_str().to_owned();
            assert_ne!(cam(&p.path_a), cam(&p.path_b));
        }
    }
}
