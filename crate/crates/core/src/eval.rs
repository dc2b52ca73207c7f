//! Rank-n accuracy, CMC curves, the (K, kappa) sweep and the clustering ablation.
//!
//! Output files:
//!
//! * `cmc_<K>_<kappa>.csv`: `rank,accuracy`
//! * `sweep_summary.csv`: `K,kappa,rank1,mean_comparisons,mean_ms,median_ms,ms_per_comparison,cluster_recall`
//! * `cmc_with_clustering.csv`, `cmc_without_clustering.csv`: `rank,accuracy`
//! * `ablation.csv`: `arm,rank1,mean_comparisons,mean_ms,median_ms`
//!
//! Everything except the `*_ms` columns is a deterministic function of the inputs.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_subject, scan_dataset, split_gallery_probe, DatasetIndex, Layout, SplitPolicy,
    DEFAULT_FG_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::matcher::{
    enroll_sequences, identify, rank_all, Gallery, MatchResult, SubjectSequences,
};
use crate::scalar::Scalar;
use crate::siamese::SiameseModel;
use crate::silhouette::NormalizedSilhouette;

pub const DEFAULT_MAX_RANK: usize = 10;

/// One labelled probe sequence.
#[derive(Debug, Clone)]
pub struct Probe<T> {
    pub truth: String,
    pub frames: Vec<NormalizedSilhouette<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub truth: String,
    pub result: MatchResult,
}

impl ProbeOutcome {
    /// Whether the true identity survived cluster pruning.
    pub fn truth_retained(&self) -> bool {
        self.result.reduced_set_ids.contains(&self.truth)
    }
}

/// Fraction of probes whose true id is within the top `r` ranks, for
/// `r = 1..=max_rank`. A pruned true id is a miss at every rank.
pub fn cmc(
    outcomes: &[ProbeOutcome],
    gallery_ids: &BTreeSet<String>,
    max_rank: usize,
) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; max_rank];
    for o in outcomes {
        if !gallery_ids.contains(&o.truth) {
            return Err(Error::UnknownGroundTruth(o.truth.clone()));
        }
        if let Some(r) = o.result.rank_of(&o.truth) {
            for h in hits.iter_mut().skip(r - 1) {
                *h += 1;
            }
        }
    }
    let n = outcomes.len().max(1) as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Accuracy and cost of one gallery configuration over a probe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    /// `None` when cluster pruning was bypassed.
    pub kappa: Option<usize>,
    pub cmc: Vec<f64>,
    pub rank1: f64,
    pub mean_comparisons: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub ms_per_comparison: f64,
    /// Fraction of probes whose true id was in the reduced set.
    pub cluster_recall: f64,
    pub outcomes: Vec<ProbeOutcome>,
}

/// Runs every probe against `gallery`, with pruning at `kappa` or without.
pub fn evaluate<T: Scalar>(
    gallery: &Gallery<T>,
    probes: &[Probe<T>],
    kappa: Option<usize>,
    max_rank: usize,
) -> Result<EvalReport> {
    if probes.is_empty() {
        return Err(Error::BadConfig("no probes to evaluate".into()));
    }
    let outcomes = probes
        .iter()
        .map(|p| {
            let result = match kappa {
                Some(kappa) => identify(gallery, &p.frames, kappa)?,
                None => rank_all(gallery, &p.frames)?,
            };
            Ok(ProbeOutcome {
                truth: p.truth.clone(),
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ids: BTreeSet<String> = gallery
        .entries()
        .iter()
        .map(|e| e.subject_id.clone())
        .collect();
    let curve = cmc(&outcomes, &ids, max_rank.max(1))?;
    let n = outcomes.len() as f64;
    let times: Vec<f64> = outcomes.iter().map(|o| o.result.elapsed_ms).collect();
    let comparisons: usize = outcomes.iter().map(|o| o.result.n_comparisons).sum();
    Ok(EvalReport {
        k: gallery.cluster_model().k(),
        kappa,
        rank1: curve[0],
        cmc: curve,
        mean_comparisons: comparisons as f64 / n,
        mean_ms: times.iter().sum::<f64>() / n,
        median_ms: median(&times),
        ms_per_comparison: times.iter().sum::<f64>() / comparisons.max(1) as f64,
        cluster_recall: outcomes.iter().filter(|o| o.truth_retained()).count() as f64 / n,
        outcomes,
    })
}

pub fn write_cmc_csv(curve: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "accuracy"])?;
    for (r, a) in curve.iter().enumerate() {
        w.write_record([(r + 1).to_string(), a.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summary(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "K",
        "kappa",
        "rank1",
        "mean_comparisons",
        "mean_ms",
        "median_ms",
        "ms_per_comparison",
        "cluster_recall",
    ])?;
    for r in reports {
        w.write_record([
            r.k.to_string(),
            r.kappa.map_or_else(|| "all".into(), |k| k.to_string()),
            r.rank1.to_string(),
            r.mean_comparisons.to_string(),
            format!("{:.3}", r.mean_ms),
            format!("{:.3}", r.median_ms),
            format!("{:.4}", r.ms_per_comparison),
            r.cluster_recall.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Re-enrolls the gallery at every K and evaluates every kappa. Cells with
/// `kappa > K` are skipped. With `out_dir`, each cell's CMC is written as it
/// completes and the summary is rewritten after each cell.
#[allow(clippy::too_many_arguments)]
pub fn sweep<T: Scalar>(
    gallery_seqs: &SubjectSequences<T>,
    probes: &[Probe<T>],
    model: Arc<SiameseModel<T>>,
    k_list: &[usize],
    kappa_list: &[usize],
    seed: u64,
    max_rank: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    if k_list.is_empty() || kappa_list.is_empty() {
        return Err(Error::BadConfig(
            "K and kappa lists must be nonempty".into(),
        ));
    }
    let mut reports = Vec::new();
    for &k in k_list {
        let gallery = enroll_sequences(gallery_seqs.to_vec(), k, seed, model.clone())?;
        for &kappa in kappa_list {
            if kappa > gallery.cluster_model().k() {
                log::warn!("skipping kappa={kappa} > K={}", gallery.cluster_model().k());
                continue;
            }
            let report = evaluate(&gallery, probes, Some(kappa), max_rank)?;
            log::info!(
                "K={k} kappa={kappa}: rank1 {:.3}, {:.1} comparisons per probe",
                report.rank1,
                report.mean_comparisons
            );
            if let Some(dir) = out_dir {
                write_cmc_csv(&report.cmc, &dir.join(format!("cmc_{k}_{kappa}.csv")))?;
            }
            reports.push(report);
            if let Some(dir) = out_dir {
                write_summary(&reports, &dir.join("sweep_summary.csv"))?;
            }
        }
    }
    Ok(reports)
}

/// With-clustering and without-clustering arms over the same probes and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub with_clustering: EvalReport,
    pub without_clustering: EvalReport,
}

pub fn ablation<T: Scalar>(
    gallery: &Gallery<T>,
    probes: &[Probe<T>],
    kappa: usize,
    max_rank: usize,
    out_dir: Option<&Path>,
) -> Result<Ablation> {
    let with_clustering = evaluate(gallery, probes, Some(kappa), max_rank)?;
    let without_clustering = evaluate(gallery, probes, None, max_rank)?;
    if let Some(dir) = out_dir {
        write_cmc_csv(&with_clustering.cmc, &dir.join("cmc_with_clustering.csv"))?;
        write_cmc_csv(
            &without_clustering.cmc,
            &dir.join("cmc_without_clustering.csv"),
        )?;
        let path = dir.join("ablation.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["arm", "rank1", "mean_comparisons", "mean_ms", "median_ms"])?;
        for (arm, r) in [
            ("with_clustering", &with_clustering),
            ("without_clustering", &without_clustering),
        ] {
            w.write_record([
                arm.to_string(),
                r.rank1.to_string(),
                r.mean_comparisons.to_string(),
                format!("{:.3}", r.mean_ms),
                format!("{:.3}", r.median_ms),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(Ablation {
        with_clustering,
        without_clustering,
    })
}

/// A complete evaluation run described on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub layout: String,
    pub split: String,
    pub k_list: Vec<usize>,
    pub kappa_list: Vec<usize>,
    /// Probe subjects to draw at random; all when `None`.
    pub probe_count: Option<usize>,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub max_rank: usize,
    pub ablation: bool,
    pub fg_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            layout: "per-subject-dirs".into(),
            split: "camera-split".into(),
            k_list: vec![crate::cluster::DEFAULT_K],
            kappa_list: vec![crate::cluster::DEFAULT_KAPPA],
            probe_count: None,
            seed: 0,
            checkpoint: PathBuf::new(),
            out_dir: PathBuf::new(),
            max_rank: DEFAULT_MAX_RANK,
            ablation: false,
            fg_threshold: DEFAULT_FG_THRESHOLD,
        }
    }
}

/// Reports produced by [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub sweep: Vec<EvalReport>,
    pub ablation: Option<Ablation>,
}

/// Loads gallery and probe sequences for a split of `index`, keeping
/// `probe_count` randomly chosen probe subjects.
pub fn load_split<T: Scalar>(
    index: &DatasetIndex,
    policy: SplitPolicy,
    probe_count: Option<usize>,
    seed: u64,
    dims: (usize, usize),
    fg_threshold: f64,
) -> Result<(SubjectSequences<T>, Vec<Probe<T>>)> {
    let (gallery_idx, probe_idx) = split_gallery_probe(index, policy, seed)?;
    let gallery = gallery_idx
        .subject_ids()
        .map(|id| {
            Ok((
                id.to_string(),
                load_subject(&gallery_idx, id, dims, fg_threshold)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut probe_ids: Vec<&str> = probe_idx.subject_ids().collect();
    if let Some(count) = probe_count {
        if count == 0 || count > probe_ids.len() {
            return Err(Error::BadConfig(format!(
                "probe count {count} outside 1..={}",
                probe_ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = sample(&mut rng, probe_ids.len(), count).into_vec();
        chosen.sort_unstable();
        probe_ids = chosen.into_iter().map(|i| probe_ids[i]).collect();
    }
    let probes = probe_ids
        .into_iter()
        .map(|id| {
            Ok(Probe {
                truth: id.to_string(),
                frames: load_subject(&probe_idx, id, dims, fg_threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gallery, probes))
}

/// Sweep, and optionally the ablation at the first (K, kappa), with all
/// outputs under `cfg.out_dir`.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let layout: Layout = cfg.layout.parse()?;
    let policy: SplitPolicy = cfg.split.parse()?;
    let model = Arc::new(SiameseModel::<T>::load(&cfg.checkpoint)?);
    let index = scan_dataset(&cfg.data, layout)?;
    let (gallery_seqs, probes) = load_split::<T>(
        &index,
        policy,
        cfg.probe_count,
        cfg.seed,
        model.input_dims(),
        cfg.fg_threshold,
    )?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let sweep_reports = sweep(
        &gallery_seqs,
        &probes,
        model.clone(),
        &cfg.k_list,
        &cfg.kappa_list,
        cfg.seed,
        cfg.max_rank,
        Some(&cfg.out_dir),
    )?;
    let ablation = if cfg.ablation {
        let gallery = enroll_sequences(gallery_seqs, cfg.k_list[0], cfg.seed, model)?;
        let kappa = cfg.kappa_list[0].min(gallery.cluster_model().k());
        Some(ablation(
            &gallery,
            &probes,
            kappa,
            cfg.max_rank,
            Some(&cfg.out_dir),
        )?)
    } else {
        None
    };
    Ok(ExperimentReport {
        sweep: sweep_reports,
        ablation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::RankedMatch;

    fn outcome(truth: &str, ranked: &[&str]) -> ProbeOutcome {
        let ranked: Vec<RankedMatch> = ranked
            .iter()
            .enumerate()
            .map(|(i, id)| RankedMatch {
                subject_id: id.to_string(),
                sim: 1.0 - i as f64 * 0.1,
            })
            .collect();
        ProbeOutcome {
            truth: truth.into(),
            result: MatchResult {
                predicted_id: ranked[0].subject_id.clone(),
                reduced_set_ids: ranked.iter().map(|r| r.subject_id.clone()).collect(),
                n_comparisons: ranked.len(),
                ranked,
                clusters: vec![0],
                probe_descriptor: vec![],
                elapsed_ms: 1.0,
            },
        }
    }

    fn ids(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn all_correct() {
        let o = vec![outcome("s0", &["s0", "s1"]), outcome("s1", &["s1", "s0"])];
        assert_eq!(cmc(&o, &ids(2), 5).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn hand_counted_curve() {
        let o = vec![
            outcome("s0", &["s0", "s1", "s2"]),
            outcome("s1", &["s2", "s0", "s1"]),
        ];
        assert_eq!(cmc(&o, &ids(3), 4).unwrap(), vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn pruned_truth_is_a_miss_everywhere() {
        let o = vec![outcome("s3", &["s0", "s1"])];
        assert!(!o[0].truth_retained());
        assert_eq!(cmc(&o, &ids(4), 10).unwrap(), vec![0.0; 10]);
    }

    #[test]
    fn unknown_truth() {
        let o = vec![outcome("zz", &["s0"])];
        assert!(matches!(
            cmc(&o, &ids(2), 3),
            Err(Error::UnknownGroundTruth(_))
        ));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
