use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CAMERAS: [&str; 2] = ["cam1", "cam2"];

/// Parameters of the synthetic two-camera walking dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub frames_per_camera: usize,
    /// Rendered frame size.
    pub height: usize,
    pub width: usize,
    /// Minimum L-infinity distance between independent palettes, in intensity units.
    pub palette_spread: f64,
    /// Additive brightness change applied to every camera-2 frame.
    pub illumination_shift: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Fraction of subjects that copy another subject's palette.
    pub similar_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 20,
            frames_per_camera: 10,
            height: 160,
            width: 80,
            palette_spread: 0.3,
            illumination_shift: 0.03,
            noise: 0.01,
            similar_fraction: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.n_subjects < 2 {
            return bad(format!("need at least 2 subjects, got {}", self.n_subjects));
        }
        if self.frames_per_camera < 1 {
            return bad("need at least 1 frame per camera".into());
        }
        if self.height < 30 || self.width < 16 {
            return bad(format!(
                "frame size {}x{} is below 30x16",
                self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.similar_fraction) {
            return bad(format!(
                "similar fraction {} outside [0,1]",
                self.similar_fraction
            ));
        }
        if !(0.0..=0.8).contains(&self.palette_spread) {
            return bad(format!(
                "palette spread {} outside [0,0.8]",
                self.palette_spread
            ));
        }
        if !(self.noise >= 0.0) || !(self.illumination_shift.abs() <= 1.0) {
            return bad("noise must be >= 0 and |illumination shift| <= 1".into());
        }
        Ok(())
    }

    pub fn subject_id(&self, i: usize) -> String {
        let digits = self.n_subjects.saturating_sub(1).to_string().len().max(3);
        format!("s{i:0digits$}")
    }
}

type Palette = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub frames: usize,
    pub masks: usize,
    pub manifest_rows: usize,
    pub subjects: Vec<String>,
}

#[derive(Serialize)]
struct ManifestRow<'a> {
    subject_id: &'a str,
    camera_id: &'a str,
    frame: String,
    head_rgb: String,
    torso_rgb: String,
    leg_rgb: String,
}

fn linf(a: &Palette, b: &Palette) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn palettes(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Palette>> {
    let n = cfg.n_subjects;
    let followers = ((cfg.similar_fraction * n as f64).round() as usize).min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (follower_ids, leader_ids) = order.split_at(followers);

    let mut out = vec![[[0.0; 3]; 3]; n];
    let mut leaders: Vec<Palette> = Vec::new();
    for &i in leader_ids {
        let mut attempts = 0;
        let p = loop {
            let cand: Palette =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.15..0.95)));
            if leaders.iter().all(|l| linf(l, &cand) >= cfg.palette_spread) {
                break cand;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::BadConfig(format!(
                    "cannot place {} palettes {} apart",
                    leader_ids.len(),
                    cfg.palette_spread
                )));
            }
        };
        leaders.push(p);
        out[i] = p;
    }
    for &i in follower_ids {
        let base = leaders[rng.random_range(0..leaders.len())];
        out[i] = base.map(|c| c.map(|v| (v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0)));
    }
    Ok(out)
}

fn hex(rgb: [f64; 3]) -> String {
    let b = rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    format!("#{:02x}{:02x}{:02x}", b[0], b[1], b[2])
}

/// Paints one walking figure; returns pixels and mask.
fn render(
    cfg: &SynthConfig,
    palette: &Palette,
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
) -> (RgbImage, GrayImage) {
    let (h, w) = (cfg.height as i64, cfg.width as i64);
    let body_h = ((h as f64) * rng.random_range(0.8..0.95)).round() as i64;
    let body_w = ((body_h as f64 * 0.4).round() as i64).min(w - 4);
    let top = rng.random_range(1..=(h - body_h - 1).max(1));
    let cx = w as f64 / 2.0 + rng.random_range(-0.08..0.08) * w as f64;
    let gait = rng.random_range(0.0..std::f64::consts::TAU);
    let bh = body_h as f64;
    let bw = body_w as f64;

    let mut img = RgbImage::new(cfg.width as u32, cfg.height as u32);
    let mut mask = GrayImage::new(cfg.width as u32, cfg.height as u32);
    for y in top..(top + body_h).min(h) {
        let t = (y - top) as f64 / bh;
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let part = if t < 1.0 / 3.0 {
                let r = 0.13 * bh;
                let dy = (y - top) as f64 + 0.5 - r;
                let in_head = dx * dx + dy * dy <= r * r;
                let in_shoulders = t >= 0.24 && dx.abs() <= 0.4 * bw;
                (in_head || in_shoulders).then_some(0)
            } else if t < 2.0 / 3.0 {
                (dx.abs() <= 0.5 * bw).then_some(1)
            } else {
                let gap = 0.05 * bw * (1.0 + gait.sin());
                let leg_w = 0.35 * bw;
                (dx.abs() >= gap && dx.abs() <= gap + leg_w).then_some(2)
            };
            let Some(p) = part else { continue };
            let px = palette[p].map(|v| {
                let v = v + noise.sample(rng);
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
            mask.put_pixel(x as u32, y as u32, image::Luma([255]));
        }
    }
    (img, mask)
}

/// Renders the dataset under `root` in the per-subject layout and writes the
/// ground-truth manifest. The output is a pure function of the config.
pub fn synth_generate(cfg: &SynthConfig, root: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = palettes(cfg, &mut rng)?;
    let noise =
        Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::BadConfig(e.to_string()))?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let manifest_path = root.join(MANIFEST_FILE);
    let mut manifest = csv::Writer::from_path(&manifest_path)?;
    let mut summary = SynthSummary {
        root: root.to_path_buf(),
        frames: 0,
        masks: 0,
        manifest_rows: 0,
        subjects: Vec::new(),
    };
    for (i, palette) in base.iter().enumerate() {
        let subject = cfg.subject_id(i);
        for (c, camera) in CAMERAS.iter().enumerate() {
            let shift = if c == 1 { cfg.illumination_shift } else { 0.0 };
            let seen: Palette = palette.map(|col| col.map(|v| (v + shift).clamp(0.0, 1.0)));
            let dir = root.join(&subject).join(camera);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for f in 0..cfg.frames_per_camera {
                let (img, mask) = render(cfg, &seen, &mut rng, &noise);
                let name = format!("frame_{f:04}");
                let frame_path = dir.join(format!("{name}.png"));
                let mask_path = dir.join(format!("{name}_mask.png"));
                img.save(&frame_path).map_err(|source| Error::Image {
                    path: frame_path.clone(),
                    source,
                })?;
                mask.save(&mask_path).map_err(|source| Error::Image {
                    path: mask_path.clone(),
                    source,
                })?;
                summary.frames += 1;
                summary.masks += 1;
                manifest.serialize(ManifestRow {
                    subject_id: &subject,
                    camera_id: camera,
                    frame: format!("{subject}/{camera}/{name}.png"),
                    head_rgb: hex(seen[0]),
                    torso_rgb: hex(seen[1]),
                    leg_rgb: hex(seen[2]),
                })?;
                summary.manifest_rows += 1;
            }
        }
        summary.subjects.push(subject);
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(summary)
}
