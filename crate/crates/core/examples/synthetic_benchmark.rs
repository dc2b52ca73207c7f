//! End-to-end run on a generated dataset: synthesize, train, enroll, identify.
//!
//! `cargo run --release -p hier-reid --example synthetic_benchmark [subjects] [pairs]`

use std::sync::Arc;
use std::time::Instant;

use hier_reid::dataset::{
    make_pairs, scan_dataset, synth_generate, Layout, SplitPolicy, SynthConfig,
    DEFAULT_FG_THRESHOLD,
};
use hier_reid::eval::{ablation, load_split};
use hier_reid::matcher::enroll_sequences;
use hier_reid::siamese::{init_model, train, LabeledPair, ScbConfig, TrainConfig};
use hier_reid::silhouette::{DEFAULT_HEIGHT, DEFAULT_WIDTH};
use hier_reid::{dataset, Real, Result, Silhouette};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let subjects: usize = args
        .next()
        .map_or(20, |s| s.parse().expect("subject count"));
    let pairs_per_label: usize = args.next().map_or(200, |s| s.parse().expect("pair count"));

    let dir = tempfile::tempdir()?;
    let t = Instant::now();
    let synth = SynthConfig {
        n_subjects: subjects,
        seed: 7,
        ..SynthConfig::default()
    };
    synth_generate(&synth, dir.path())?;
    let index = scan_dataset(dir.path(), Layout::PerSubjectDirs)?;
    println!(
        "synth: {} frames in {:.1?}",
        index.total_frames(),
        t.elapsed()
    );

    let t = Instant::now();
    let dims = (DEFAULT_HEIGHT, DEFAULT_WIDTH);
    let samples = make_pairs(&index, pairs_per_label, pairs_per_label, 1)?;
    let mut cache = std::collections::HashMap::new();
    for s in &samples {
        for (p, id) in [(&s.path_a, &s.subject_a), (&s.path_b, &s.subject_b)] {
            if !cache.contains_key(p) {
                let sil: Silhouette =
                    dataset::load_silhouette(p, id, 0, dims, DEFAULT_FG_THRESHOLD)?;
                cache.insert(p.clone(), sil);
            }
        }
    }
    let pairs: Vec<LabeledPair<'_, Real>> = samples
        .iter()
        .map(|s| LabeledPair {
            a: &cache[&s.path_a],
            b: &cache[&s.path_b],
            label: s.label,
        })
        .collect();
    let model = init_model::<Real>(
        [3, DEFAULT_HEIGHT / 3, DEFAULT_WIDTH],
        ScbConfig::default(),
        3,
    )?;
    let (model, report) = train(model, &pairs, &TrainConfig::default())?;
    println!(
        "train: {} pairs, {} epochs, stop {:?}, final {:?} in {:.1?}",
        pairs.len(),
        report.epochs.len(),
        report.stop_reason,
        report.final_stats(),
        t.elapsed()
    );

    let t = Instant::now();
    let (gallery_seqs, probes) = load_split::<Real>(
        &index,
        SplitPolicy::CameraSplit,
        None,
        0,
        dims,
        DEFAULT_FG_THRESHOLD,
    )?;
    let gallery = enroll_sequences(gallery_seqs, 5, 0, Arc::new(model))?;
    let arms = ablation(&gallery, &probes, 1, 10, None)?;
    for (name, r) in [
        ("with", &arms.with_clustering),
        ("without", &arms.without_clustering),
    ] {
        println!(
            "{name} clustering: rank1 {:.3} recall {:.3} comparisons {:.2} cmc {:?}",
            r.rank1, r.cluster_recall, r.mean_comparisons, r.cmc
        );
    }
    for o in &arms.without_clustering.outcomes {
        if o.result.predicted_id != o.truth {
            println!("miss {}: {:?}", o.truth, &o.result.ranked[..3]);
        }
    }
    println!("eval in {:.1?}", t.elapsed());
    Ok(())
}
