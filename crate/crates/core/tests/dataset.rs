use std::fs;
use std::path::{Path, PathBuf};

use hier_reid::dataset::{
    load_silhouette, load_subject, scan_dataset, sequence_frames, synth_generate, Layout,
    SynthConfig, CAMERAS, MANIFEST_FILE,
};
use hier_reid::Error;
use image::{Rgb, RgbImage};

/// A 12x8 frame: a colored block on black.
fn write_frame(path: &Path, color: [u8; 3]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let img = RgbImage::from_fn(8, 12, |x, y| {
        if (2..6).contains(&x) && (1..11).contains(&y) {
            Rgb(color)
        } else {
            Rgb([0, 0, 0])
        }
    });
    img.save(path).unwrap();
}

fn names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn per_subject_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_frame(&root.join("bob/cam1/f1.png"), [200, 10, 10]);
    write_frame(&root.join("bob/cam1/f0.png"), [200, 10, 10]);
    write_frame(&root.join("bob/cam1/f0_mask.png"), [255, 255, 255]);
    write_frame(&root.join("bob/cam2/g0.png"), [180, 20, 10]);
    write_frame(&root.join("amy/cam2/x.png"), [10, 200, 10]);
    fs::write(root.join("README.txt"), "not a subject").unwrap();

    let index = scan_dataset(root, Layout::PerSubjectDirs).unwrap();
    assert_eq!(index.subject_ids().collect::<Vec<_>>(), ["amy", "bob"]);
    let bob = &index.subjects["bob"];
    assert_eq!(bob.keys().collect::<Vec<_>>(), ["cam1", "cam2"]);
    assert_eq!(names(&bob["cam1"]), ["f0.png", "f1.png"]);
    assert_eq!(index.total_frames(), 4);
    assert!(index.warnings.is_empty());

    let seq = load_subject::<f32>(&index, "bob", (12, 9), 0.1).unwrap();
    assert_eq!(seq.len(), 3);
    assert!(seq.iter().all(|s| s.dims() == (12, 9)));
}

#[test]
fn two_camera_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_frame(&root.join("a/p1_001.png"), [200, 10, 10]);
    write_frame(&root.join("a/p2_001.png"), [10, 10, 200]);
    write_frame(&root.join("b/p1_017.png"), [190, 20, 10]);
    write_frame(&root.join("b/p1_017_mask.png"), [255, 255, 255]);

    let index = scan_dataset(root, Layout::TwoCameraDirs).unwrap();
    assert_eq!(index.subject_ids().collect::<Vec<_>>(), ["p1", "p2"]);
    assert_eq!(index.subjects["p1"].keys().collect::<Vec<_>>(), ["a", "b"]);
    assert_eq!(index.n_frames("p1"), 2);
    assert_eq!(index.n_frames("p2"), 1);
}

#[test]
fn layout_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("cam1/p1_001.png"), [200, 10, 10]);
    let err = scan_dataset(dir.path(), Layout::PerSubjectDirs).unwrap_err();
    assert!(matches!(err, Error::LayoutMismatch { .. }), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("bob/cam1/f0.png"), [200, 10, 10]);
    let err = scan_dataset(dir.path(), Layout::TwoCameraDirs).unwrap_err();
    assert!(matches!(err, Error::LayoutMismatch { .. }), "{err}");

    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("cam1/nounderscore.png"), [200, 10, 10]);
    let err = scan_dataset(dir.path(), Layout::TwoCameraDirs).unwrap_err();
    assert!(matches!(err, Error::LayoutMismatch { .. }), "{err}");
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("bob/cam1")).unwrap();
    assert!(matches!(
        scan_dataset(dir.path(), Layout::PerSubjectDirs),
        Err(Error::EmptyDataset(_))
    ));
    assert!(matches!(
        scan_dataset(&dir.path().join("missing"), Layout::PerSubjectDirs),
        Err(Error::Io { .. })
    ));
}

#[test]
fn unreadable_frames_become_warnings() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("bob/cam1/f0.png"), [200, 10, 10]);
    fs::write(dir.path().join("bob/cam1/f1.png"), b"not an image").unwrap();
    let index = scan_dataset(dir.path(), Layout::PerSubjectDirs).unwrap();
    assert_eq!(index.total_frames(), 1);
    assert_eq!(index.warnings.len(), 1);
    assert!(index.warnings[0].contains("f1.png"));
}

#[test]
fn sequence_frames_recurses_and_skips_masks() {
    let dir = tempfile::tempdir().unwrap();
    write_frame(&dir.path().join("b/2.png"), [200, 10, 10]);
    write_frame(&dir.path().join("a/1.png"), [200, 10, 10]);
    write_frame(&dir.path().join("a/1_mask.png"), [255, 255, 255]);
    let frames = sequence_frames(dir.path()).unwrap();
    assert_eq!(names(&frames), ["1.png", "2.png"]);
}

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_subjects: 3,
        frames_per_camera: 4,
        height: 60,
        width: 30,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_output_matches_counts() {
    let dir = tempfile::tempdir().unwrap();
    let summary = synth_generate(&small_synth(1), dir.path()).unwrap();
    assert_eq!(
        (summary.frames, summary.masks, summary.manifest_rows),
        (24, 24, 24)
    );
    assert_eq!(summary.subjects, ["s000", "s001", "s002"]);

    let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(
        lines.next().unwrap(),
        "subject_id,camera_id,frame,head_rgb,torso_rgb,leg_rgb"
    );
    assert_eq!(lines.count(), 24);

    let index = scan_dataset(dir.path(), Layout::PerSubjectDirs).unwrap();
    assert_eq!(index.n_subjects(), 3);
    for id in index.subject_ids() {
        assert_eq!(
            index.subjects[id]
                .keys()
                .map(String::as_str)
                .collect::<Vec<_>>(),
            CAMERAS
        );
        assert_eq!(index.n_frames(id), 8);
    }
    let frame = index.frames("s001")[0];
    let sil = load_silhouette::<f64>(frame, "s001", 0, (162, 64), 0.1).unwrap();
    assert!(sil.image.foreground_count() > 162 * 64 / 4);
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic_per_seed() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    synth_generate(&small_synth(5), a.path()).unwrap();
    synth_generate(&small_synth(5), b.path()).unwrap();
    synth_generate(&small_synth(6), c.path()).unwrap();
    let ta = tree(a.path());
    assert_eq!(ta.len(), 49);
    assert_eq!(ta, tree(b.path()));
    assert_ne!(ta, tree(c.path()));
}
