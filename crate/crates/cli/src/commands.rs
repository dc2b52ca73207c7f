use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use hier_reid::cluster::{elbow_curve, write_elbow_csv};
use hier_reid::dataset::{
    load_pairs, load_silhouette, load_subject, make_pairs, scan_dataset, sequence_frames,
    split_gallery_probe, synth_generate, Layout, SplitPolicy, MANIFEST_FILE,
};
use hier_reid::descriptor::{build_feature_matrix, sequence_descriptor};
use hier_reid::eval::{run_experiment, ExperimentConfig};
use hier_reid::matcher::{enroll_gallery, identify as identify_probe, Gallery, ModelRef};
use hier_reid::siamese::{init_model, train as train_model, ScbConfig};
use hier_reid::{Error, Model, Real};

use crate::manifest::RunManifest;
use crate::settings::{ElbowArgs, EnrollArgs, EvalArgs, IdentifyArgs, SynthArgs, TrainArgs};
use crate::usage;

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn required<T>(v: Option<T>, flag: &str) -> T {
    v.unwrap_or_else(|| usage(format!("{flag} is required (flag or config file)")))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> T {
    s.parse().unwrap_or_else(|e| usage(e))
}

/// Manifest path for a single-file output: `model.hrsn` -> `model.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

/// Runs `body`, then records the outcome in the manifest.
fn tracked(
    mut manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let result = body(&mut manifest);
    manifest.finish(result.as_ref().err().map(|e| format!("{e:#}")))?;
    result
}

pub fn synth(args: SynthArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let out = required(s.out.clone(), "--out");
    let cfg = s.to_config().unwrap_or_else(|e| usage(e));
    if let Err(e) = cfg.validate() {
        usage(e);
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = RunManifest::begin("synth", &s, &[("seed", s.seed)], out.join(RUN_MANIFEST))?;
    tracked(manifest, |m| {
        let summary = synth_generate(&cfg, &out)?;
        m.add_artifact(&out.join(MANIFEST_FILE))?;
        println!(
            "{} subjects, {} frames, {} masks written to {}",
            summary.subjects.len(),
            summary.frames,
            summary.masks,
            out.display()
        );
        Ok(())
    })
}

pub fn train(args: TrainArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let data = required(s.data.clone(), "--data");
    let out = required(s.out.clone(), "--out");
    let layout: Layout = parse(&s.layout);
    let cfg = s.train_config();
    if let Err(e) = cfg.validate() {
        usage(e);
    }
    if !s.height.is_multiple_of(3) {
        usage(format!("--height must be divisible by 3, got {}", s.height));
    }
    let manifest = RunManifest::begin("train", &s, &[("seed", s.seed)], sidecar(&out))?;
    tracked(manifest, |m| {
        let index = scan_dataset(&data, layout)?;
        let samples = make_pairs(&index, s.pos_pairs, s.neg_pairs, s.seed)?;
        let set = load_pairs::<Real>(&samples, (s.height, s.width), s.fg_threshold)?;
        let model = init_model::<Real>([3, s.height / 3, s.width], ScbConfig::default(), s.seed)?;
        let (model, report) = train_model(model, &set.labeled(), &cfg)?;
        model.save(&out)?;
        m.add_artifact(&out)?;
        let log = out.with_extension("train.csv");
        report.write_csv(fs::File::create(&log).map_err(|e| Error::io(&log, e))?)?;
        m.add_artifact(&log)?;
        let last = report.final_stats().copied().unwrap_or_default();
        println!(
            "trained on {} pairs for {} epochs ({:?}): loss {:.3e}, error rate {:.4}; checkpoint {}",
            report.pairs,
            report.epochs.len(),
            report.stop_reason,
            last.loss,
            last.error_rate,
            out.display()
        );
        Ok(())
    })
}

pub fn enroll(args: EnrollArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let data = required(s.data.clone(), "--data");
    let model_path = required(s.model.clone(), "--model");
    let out = required(s.out.clone(), "--out");
    let layout: Layout = parse(&s.layout);
    let policy: SplitPolicy = parse(&s.split);
    if s.k == 0 {
        usage("--K must be at least 1");
    }
    let manifest = RunManifest::begin("enroll", &s, &[("seed", s.seed)], sidecar(&out))?;
    tracked(manifest, |m| {
        let model = Arc::new(Model::load(&model_path)?);
        let index = scan_dataset(&data, layout)?;
        let (gallery_idx, _) = split_gallery_probe(&index, policy, s.seed)?;
        let mut gallery = enroll_gallery(&gallery_idx, s.k, s.seed, model, s.fg_threshold)?;
        let abs = fs::canonicalize(&model_path).map_err(|e| Error::io(&model_path, e))?;
        gallery.model_ref = Some(ModelRef::of_file(&abs)?);
        gallery.save(&out)?;
        m.add_artifact(&out)?;
        println!(
            "enrolled {} subjects into {} clusters: {}",
            gallery.len(),
            gallery.cluster_model().k(),
            out.display()
        );
        Ok(())
    })
}

pub fn identify(args: IdentifyArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let gallery_path = required(s.gallery.clone(), "--gallery");
    let probe_dir = required(s.probe.clone(), "--probe");
    let out = required(s.out.clone(), "--out");
    if s.kappa == 0 {
        usage("--kappa must be at least 1");
    }
    let manifest = RunManifest::begin("identify", &s, &[], sidecar(&out))?;
    tracked(manifest, |m| {
        let gallery = Gallery::<Real>::load(&gallery_path)?;
        let dims = gallery.siamese().input_dims();
        let frames = sequence_frames(&probe_dir)?
            .iter()
            .enumerate()
            .map(|(i, p)| load_silhouette::<Real>(p, "probe", i, dims, s.fg_threshold))
            .collect::<hier_reid::Result<Vec<_>>>()?;
        let result = identify_probe(&gallery, &frames, s.kappa)?;
        let json = serde_json::to_string_pretty(&result)?;
        fs::write(&out, &json).map_err(|e| Error::io(&out, e))?;
        m.add_artifact(&out)?;
        println!("{json}");
        Ok(())
    })
}

pub fn eval(args: EvalArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let data = required(s.data.clone(), "--data");
    let model = required(s.model.clone(), "--model");
    let out = required(s.out.clone(), "--out");
    let _: Layout = parse(&s.layout);
    let _: SplitPolicy = parse(&s.split);
    if s.k.is_empty() || s.kappa.is_empty() || s.k.contains(&0) || s.kappa.contains(&0) {
        usage("--K and --kappa need at least one positive value");
    }
    if s.max_rank == 0 {
        usage("--max-rank must be at least 1");
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = RunManifest::begin("eval", &s, &[("seed", s.seed)], out.join(RUN_MANIFEST))?;
    let cfg = ExperimentConfig {
        data,
        layout: s.layout.clone(),
        split: s.split.clone(),
        k_list: s.k.clone(),
        kappa_list: s.kappa.clone(),
        probe_count: s.probes,
        seed: s.seed,
        checkpoint: model,
        out_dir: out.clone(),
        max_rank: s.max_rank,
        ablation: s.ablation,
        fg_threshold: s.fg_threshold,
    };
    tracked(manifest, |m| {
        let result = run_experiment::<Real>(&cfg);
        let mut written: Vec<PathBuf> = fs::read_dir(&out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        written.sort();
        for p in &written {
            m.add_artifact(p)?;
        }
        let report = result?;
        println!("K\tkappa\trank1\tcomparisons\tmean_ms");
        for r in &report.sweep {
            println!(
                "{}\t{}\t{:.3}\t{:.2}\t{:.2}",
                r.k,
                r.kappa.unwrap_or(r.k),
                r.rank1,
                r.mean_comparisons,
                r.mean_ms
            );
        }
        if let Some(a) = &report.ablation {
            println!(
                "ablation: rank1 {:.3} with clustering ({:.2} comparisons), {:.3} without ({:.2})",
                a.with_clustering.rank1,
                a.with_clustering.mean_comparisons,
                a.without_clustering.rank1,
                a.without_clustering.mean_comparisons
            );
        }
        Ok(())
    })
}

pub fn elbow(args: ElbowArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let s = args.resolve(config).unwrap_or_else(|e| usage(e));
    let data = required(s.data.clone(), "--data");
    let out = required(s.out.clone(), "--out");
    let layout: Layout = parse(&s.layout);
    if s.k_list.is_empty() {
        usage("--k-list needs at least one value");
    }
    let manifest = RunManifest::begin("elbow", &s, &[("seed", s.seed)], sidecar(&out))?;
    tracked(manifest, |m| {
        let index = scan_dataset(&data, layout)?;
        let descs = index
            .subject_ids()
            .map(|id| {
                let seq = load_subject::<Real>(&index, id, (s.height, s.width), s.fg_threshold)?;
                sequence_descriptor(&seq, id)
            })
            .collect::<hier_reid::Result<Vec<_>>>()?;
        let features = build_feature_matrix(&descs)?;
        let points = elbow_curve(&features, &s.k_list, s.seed)?;
        write_elbow_csv(
            &points,
            fs::File::create(&out).map_err(|e| Error::io(&out, e))?,
        )?;
        m.add_artifact(&out)?;
        for p in &points {
            println!("K={}\terror={:.6}", p.k, p.error);
        }
        Ok(())
    })
}
