//! Gallery enrollment and two-level identification.
//!
//! A probe's color descriptor selects the `kappa` nearest color clusters; only
//! gallery subjects in those clusters are scored by the Siamese network, and
//! the highest similarity wins.
//!
//! Gallery archive layout (little-endian):
//!
//! ```text
//! magic       b"HRGA"
//! version     u32 (= 1)
//! header_len  u32
//! header      JSON: { format_version, dtype, n, k, height, width, model }
//!             model = { path, sha256 } or null
//! table       descriptor table (HRDT)
//! clusters    cluster model (HRKM)
//! n entries   id (u32 len + UTF-8), then 3*H*W f64 pixels, then H*W mask bytes
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{
    fit_kmeans, reduced_set, top_k_clusters, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::dataset::{load_subject, DatasetIndex};
use crate::descriptor::{
    build_feature_matrix, read_str, sequence_descriptor, write_str, ColorDescriptor, FeatureMatrix,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::siamese::SiameseModel;
use crate::silhouette::{average_silhouette, MaskedImage, NormalizedSilhouette, CHANNELS};

const MAGIC: &[u8; 4] = b"HRGA";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry<T> {
    pub subject_id: String,
    pub descriptor: ColorDescriptor<T>,
    pub avg_silhouette: NormalizedSilhouette<T>,
    pub cluster: usize,
}

/// Where the scoring network was loaded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ModelRef {
    /// References a checkpoint file by path and content hash.
    pub fn of_file(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Enrolled subjects, sorted by id, with their color clusters and the
/// network used to score them.
#[derive(Debug, Clone)]
pub struct Gallery<T> {
    entries: Vec<GalleryEntry<T>>,
    cluster_model: ClusterModel<T>,
    siamese: Arc<SiameseModel<T>>,
    pub model_ref: Option<ModelRef>,
}

impl<T: Scalar> Gallery<T> {
    pub fn entries(&self) -> &[GalleryEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cluster_model(&self) -> &ClusterModel<T> {
        &self.cluster_model
    }

    pub fn siamese(&self) -> &SiameseModel<T> {
        &self.siamese
    }

    pub fn entry(&self, id: &str) -> Option<&GalleryEntry<T>> {
        self.entries
            .binary_search_by(|e| e.subject_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn features(&self) -> Result<FeatureMatrix<T>> {
        let descs: Vec<ColorDescriptor<T>> =
            self.entries.iter().map(|e| e.descriptor.clone()).collect();
        build_feature_matrix(&descs)
    }
}

/// Subject ids with their frame sequences.
pub type SubjectSequences<T> = Vec<(String, Vec<NormalizedSilhouette<T>>)>;

/// Enrolls pre-loaded sequences: one descriptor and one average silhouette per
/// subject, then k-means with `k` clusters. `k > N` is clamped to `N`.
pub fn enroll_sequences<T: Scalar>(
    sequences: SubjectSequences<T>,
    k: usize,
    seed: u64,
    siamese: Arc<SiameseModel<T>>,
) -> Result<Gallery<T>> {
    let n = sequences.len();
    if k == 0 || n == 0 {
        return Err(Error::BadK { k, n });
    }
    let k = if k > n {
        log::warn!("K={k} exceeds the {n} gallery subjects; using K={n}");
        n
    } else {
        k
    };
    let mut prepared = sequences
        .into_par_iter()
        .map(|(id, seq)| {
            let descriptor = sequence_descriptor(&seq, id.clone())?;
            let mut avg = average_silhouette(&seq)?;
            avg.source_id = id.clone();
            Ok((id, descriptor, avg))
        })
        .collect::<Result<Vec<_>>>()?;
    prepared.sort_by(|a, b| a.0.cmp(&b.0));
    let descs: Vec<ColorDescriptor<T>> = prepared.iter().map(|p| p.1.clone()).collect();
    let features = build_feature_matrix(&descs)?;
    let cluster_model = fit_kmeans(&features, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let entries = prepared
        .into_iter()
        .map(|(id, descriptor, avg_silhouette)| {
            let cluster = cluster_model
                .cluster_of(&id)
                .ok_or_else(|| Error::UnassignedId(id.clone()))?;
            Ok(GalleryEntry {
                subject_id: id,
                descriptor,
                avg_silhouette,
                cluster,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Gallery {
        entries,
        cluster_model,
        siamese,
        model_ref: None,
    })
}

/// Loads every gallery subject at the network's input size and enrolls it.
pub fn enroll_gallery<T: Scalar>(
    index: &DatasetIndex,
    k: usize,
    seed: u64,
    siamese: Arc<SiameseModel<T>>,
    fg_threshold: f64,
) -> Result<Gallery<T>> {
    let dims = siamese.input_dims();
    let sequences = index
        .subject_ids()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|id| {
            Ok((
                id.to_string(),
                load_subject::<T>(index, id, dims, fg_threshold)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    enroll_sequences(sequences, k, seed, siamese)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub subject_id: String,
    pub sim: f64,
}

/// Outcome of one probe query with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub predicted_id: String,
    /// Reduced-set members by descending similarity; ties by ascending id.
    pub ranked: Vec<RankedMatch>,
    /// Selected clusters, nearest first; empty when clustering was bypassed.
    pub clusters: Vec<usize>,
    pub reduced_set_ids: Vec<String>,
    pub n_comparisons: usize,
    pub probe_descriptor: Vec<f64>,
    /// Wall time of the whole query.
    pub elapsed_ms: f64,
}

impl MatchResult {
    /// 1-based rank of `id`, or `None` when it is not in the reduced set.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.ranked
            .iter()
            .position(|r| r.subject_id == id)
            .map(|p| p + 1)
    }

    pub fn ms_per_comparison(&self) -> f64 {
        self.elapsed_ms / self.n_comparisons.max(1) as f64
    }
}

fn score<T: Scalar>(
    gallery: &Gallery<T>,
    probe: &NormalizedSilhouette<T>,
    ids: &[String],
) -> Result<Vec<RankedMatch>> {
    let mut ranked = ids
        .par_iter()
        .map(|id| {
            let entry = gallery
                .entry(id)
                .ok_or_else(|| Error::UnassignedId(id.clone()))?;
            let sim = gallery.siamese.similarity(&entry.avg_silhouette, probe)?;
            Ok(RankedMatch {
                subject_id: id.clone(),
                sim: sim.f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.sim
            .total_cmp(&a.sim)
            .then_with(|| a.subject_id.cmp(&b.subject_id))
    });
    Ok(ranked)
}

fn run<T: Scalar>(
    gallery: &Gallery<T>,
    probe_seq: &[NormalizedSilhouette<T>],
    kappa: Option<usize>,
) -> Result<MatchResult> {
    let start = Instant::now();
    if probe_seq.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let descriptor = sequence_descriptor(probe_seq, "probe")?;
    let (clusters, reduced) = match kappa {
        Some(kappa) => {
            let clusters = top_k_clusters(&gallery.cluster_model, &descriptor.values, kappa)?;
            let ids: Vec<String> = reduced_set(&gallery.cluster_model, &clusters)?
                .into_iter()
                .collect();
            (clusters, ids)
        }
        None => (
            Vec::new(),
            gallery
                .entries
                .iter()
                .map(|e| e.subject_id.clone())
                .collect(),
        ),
    };
    let probe_avg = average_silhouette(probe_seq)?;
    let ranked = score(gallery, &probe_avg, &reduced)?;
    let predicted_id = ranked
        .first()
        .map(|r| r.subject_id.clone())
        .ok_or_else(|| Error::BadConfig("reduced set is empty".into()))?;
    Ok(MatchResult {
        predicted_id,
        n_comparisons: ranked.len(),
        ranked,
        clusters,
        reduced_set_ids: reduced,
        probe_descriptor: descriptor.values.iter().map(|v| v.f64()).collect(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Scores the probe against the members of its `kappa` nearest color clusters.
pub fn identify<T: Scalar>(
    gallery: &Gallery<T>,
    probe_seq: &[NormalizedSilhouette<T>],
    kappa: usize,
) -> Result<MatchResult> {
    run(gallery, probe_seq, Some(kappa))
}

/// Scores the probe against the whole gallery.
pub fn rank_all<T: Scalar>(
    gallery: &Gallery<T>,
    probe_seq: &[NormalizedSilhouette<T>],
) -> Result<MatchResult> {
    run(gallery, probe_seq, None)
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    n: usize,
    k: usize,
    height: usize,
    width: usize,
    model: Option<ModelRef>,
}

impl<T: Scalar> Gallery<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (height, width) = self.siamese.input_dims();
        let header = Header {
            format_version: VERSION,
            dtype: T::DTYPE.into(),
            n: self.entries.len(),
            k: self.cluster_model.k(),
            height,
            width,
            model: self.model_ref.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(json.len() as u32)?;
        w.write_all(&json)?;
        self.features()?.write_table(&mut w)?;
        self.cluster_model.write_to(&mut w)?;
        for e in &self.entries {
            write_str(&mut w, &e.subject_id)?;
            for v in &e.avg_silhouette.image.pixels {
                w.write_f64::<LE>(v.f64())?;
            }
            let mask: Vec<u8> = e
                .avg_silhouette
                .image
                .mask
                .iter()
                .map(|&m| m as u8)
                .collect();
            w.write_all(&mask)?;
        }
        Ok(())
    }

    /// Reads an archive, attaching `siamese` as the scoring network.
    pub fn read_from<R: Read>(mut r: R, siamese: Arc<SiameseModel<T>>) -> Result<Self> {
        let (header, features, cluster_model) = read_parts::<T, _>(&mut r)?;
        if siamese.input_dims() != (header.height, header.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", header.height, header.width),
                got: format!("{:?}", siamese.input_dims()),
            });
        }
        let (h, w) = (header.height, header.width);
        let mut entries = Vec::with_capacity(header.n);
        for i in 0..header.n {
            let id = read_str(&mut r)?;
            if id != features.ids()[i] {
                return Err(Error::format(
                    "gallery archive",
                    format!("entry {i} is {id:?}, table has {:?}", features.ids()[i]),
                ));
            }
            let pixels = (0..CHANNELS * h * w)
                .map(|_| r.read_f64::<LE>().map(T::of))
                .collect::<std::io::Result<Vec<_>>>()?;
            let mut mask = vec![0u8; h * w];
            r.read_exact(&mut mask)?;
            let image = MaskedImage {
                height: h,
                width: w,
                pixels,
                mask: mask.iter().map(|&m| m != 0).collect(),
            };
            let cluster = cluster_model
                .cluster_of(&id)
                .ok_or_else(|| Error::UnassignedId(id.clone()))?;
            entries.push(GalleryEntry {
                avg_silhouette: NormalizedSilhouette::new(image, id.clone(), 0)?,
                descriptor: features.descriptor(i),
                subject_id: id,
                cluster,
            });
        }
        Ok(Self {
            entries,
            cluster_model,
            siamese,
            model_ref: header.model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Loads an archive together with the checkpoint it references. A relative
    /// checkpoint path is resolved against the archive's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, _, _) = read_parts::<T, _>(&mut &bytes[..])?;
        let model_ref = header
            .model
            .ok_or_else(|| Error::format("gallery archive", "no model reference"))?;
        let ckpt = if model_ref.path.is_relative() {
            path.parent()
                .unwrap_or(Path::new("."))
                .join(&model_ref.path)
        } else {
            model_ref.path.clone()
        };
        let digest = sha256_file(&ckpt)?;
        if digest != model_ref.sha256 {
            return Err(Error::format(
                "gallery archive",
                format!(
                    "checkpoint {} hash {digest} does not match {}",
                    ckpt.display(),
                    model_ref.sha256
                ),
            ));
        }
        let model = SiameseModel::<T>::load(&ckpt)?;
        Self::read_from(&bytes[..], Arc::new(model))
    }
}

fn read_parts<T: Scalar, R: Read>(
    r: &mut R,
) -> Result<(Header, FeatureMatrix<T>, ClusterModel<T>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("gallery archive", "bad magic"));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::format(
            "gallery archive",
            format!("unsupported version {version}"),
        ));
    }
    let len = r.read_u32::<LE>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let features = FeatureMatrix::<T>::read_table(&mut *r)?;
    let clusters = ClusterModel::<T>::read_from(&mut *r)?;
    if features.len() != header.n || clusters.k() != header.k {
        return Err(Error::format(
            "gallery archive",
            "header disagrees with payload",
        ));
    }
    Ok((header, features, clusters))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::siamese::{init_model, ConvSpec, ScbConfig};

    fn small_model() -> Arc<SiameseModel<f64>> {
        let cfg = ScbConfig {
            convs: [
                ConvSpec {
                    kernel: 5,
                    filters: 4,
                    pool: true,
                },
                ConvSpec {
                    kernel: 5,
                    filters: 5,
                    pool: true,
                },
                ConvSpec {
                    kernel: 5,
                    filters: 5,
                    pool: false,
                },
                ConvSpec {
                    kernel: 3,
                    filters: 5,
                    pool: false,
                },
            ],
            fc_width: 16,
            ..ScbConfig::default()
        };
        Arc::new(init_model([3, 40, 42], cfg, 3).unwrap())
    }

    /// A uniformly colored body per subject with small per-frame noise.
    fn sequence(
        color: [f64; 3],
        frames: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<NormalizedSilhouette<f64>> {
        (0..frames)
            .map(|f| {
                let (h, w) = (120, 42);
                let mut img = MaskedImage::<f64>::zeros(h, w);
                for y in 4..h - 4 {
                    for x in 10..32 {
                        img.mask[y * w + x] = true;
                        for (c, &v) in color.iter().enumerate() {
                            img.set(c, y, x, (v + rng.random_range(-0.01..0.01)).clamp(0.0, 1.0));
                        }
                    }
                }
                NormalizedSilhouette::new(img, "x", f).unwrap()
            })
            .collect()
    }

    fn gallery(n: usize, k: usize) -> (Gallery<f64>, Vec<Vec<NormalizedSilhouette<f64>>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let colors: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                [0.1 + 0.8 * t, 0.9 - 0.8 * t, 0.5]
            })
            .collect();
        let seqs: Vec<_> = colors.iter().map(|&c| sequence(c, 3, &mut rng)).collect();
        let enroll = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("s{i:02}"), s.clone()))
            .collect();
        (enroll_sequences(enroll, k, 1, small_model()).unwrap(), seqs)
    }

    #[test]
    fn k_equal_n_gives_singleton_clusters() {
        let (g, _) = gallery(5, 5);
        let clusters: std::collections::BTreeSet<usize> =
            g.entries().iter().map(|e| e.cluster).collect();
        assert_eq!(clusters.len(), 5);
        let err =
            crate::cluster::clustering_error(g.cluster_model(), &g.features().unwrap()).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn k_above_n_is_clamped() {
        let (g, _) = gallery(4, 10);
        assert_eq!(g.cluster_model().k(), 4);
    }

    #[test]
    fn entries_agree_with_cluster_model() {
        let (g, _) = gallery(12, 3);
        for e in g.entries() {
            assert_eq!(Some(e.cluster), g.cluster_model().cluster_of(&e.subject_id));
            assert!(e.cluster < 3);
        }
    }

    #[test]
    fn full_kappa_equals_rank_all() {
        let (g, seqs) = gallery(8, 3);
        for s in &seqs {
            let a = identify(&g, s, 3).unwrap();
            let b = rank_all(&g, s).unwrap();
            assert_eq!(a.ranked, b.ranked);
            assert_eq!(a.n_comparisons, 8);
            assert_eq!(b.n_comparisons, 8);
        }
    }

    #[test]
    fn pruned_ranking_is_a_restriction() {
        let (g, seqs) = gallery(10, 4);
        for s in &seqs {
            let pruned = identify(&g, s, 1).unwrap();
            let full = rank_all(&g, s).unwrap();
            let restricted: Vec<_> = full
                .ranked
                .iter()
                .filter(|r| pruned.reduced_set_ids.contains(&r.subject_id))
                .cloned()
                .collect();
            assert_eq!(pruned.ranked, restricted);
            assert_eq!(pruned.n_comparisons, pruned.reduced_set_ids.len());
            assert_eq!(pruned.predicted_id, pruned.ranked[0].subject_id);
            assert!(full.ranked.windows(2).all(|w| w[0].sim >= w[1].sim));
        }
    }

    #[test]
    fn singleton_gallery_always_predicts_its_member() {
        let (g, _) = gallery(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let probe = sequence([0.3, 0.3, 0.9], 2, &mut rng);
        assert_eq!(identify(&g, &probe, 1).unwrap().predicted_id, "s00");
    }

    #[test]
    fn probe_errors() {
        let (g, seqs) = gallery(3, 2);
        assert!(matches!(identify(&g, &[], 1), Err(Error::EmptyProbe)));
        assert!(matches!(rank_all(&g, &[]), Err(Error::EmptyProbe)));
        assert!(matches!(
            identify(&g, &seqs[0], 3),
            Err(Error::BadKappa { .. })
        ));
        assert!(matches!(
            identify(&g, &seqs[0], 0),
            Err(Error::BadKappa { .. })
        ));
    }

    #[test]
    fn result_json_has_audit_fields() {
        let (g, seqs) = gallery(3, 2);
        let r = identify(&g, &seqs[1], 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in [
            "predicted_id",
            "ranked",
            "reduced_set_ids",
            "n_comparisons",
            "probe_descriptor",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn archive_round_trip_and_determinism() {
        let (g, seqs) = gallery(6, 2);
        let (g2, _) = gallery(6, 2);
        let mut a = Vec::new();
        let mut b = Vec::new();
        g.write_to(&mut a).unwrap();
        g2.write_to(&mut b).unwrap();
        assert_eq!(a, b);
        let back = Gallery::read_from(&a[..], small_model()).unwrap();
        assert_eq!(back.entries(), g.entries());
        assert_eq!(
            identify(&back, &seqs[2], 1).unwrap().ranked,
            identify(&g, &seqs[2], 1).unwrap().ranked
        );
    }

    #[test]
    fn load_verifies_checkpoint_hash() {
        let dir = tempfile::tempdir().unwrap();
        let (mut g, _) = gallery(3, 2);
        let ckpt = dir.path().join("model.hrsn");
        g.siamese().save(&ckpt).unwrap();
        g.model_ref = Some(ModelRef {
            path: PathBuf::from("model.hrsn"),
            sha256: sha256_file(&ckpt).unwrap(),
        });
        let archive = dir.path().join("gallery.hrga");
        g.save(&archive).unwrap();
        assert_eq!(
            Gallery::<f64>::load(&archive).unwrap().entries(),
            g.entries()
        );
        fs::write(&ckpt, b"tampered").unwrap();
        assert!(matches!(
            Gallery::<f64>::load(&archive),
            Err(Error::Format { .. })
        ));
    }
}
