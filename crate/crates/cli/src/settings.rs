//! Command settings: built-in defaults, overlaid by a `[command]` table of the
//! TOML config file, overlaid by explicit flags.

use std::path::{Path, PathBuf};

use clap::Args;
use hier_reid::cluster::{DEFAULT_K, DEFAULT_KAPPA};
use hier_reid::dataset::{SynthConfig, DEFAULT_FG_THRESHOLD};
use hier_reid::eval::DEFAULT_MAX_RANK;
use hier_reid::siamese::TrainConfig;
use hier_reid::silhouette::{DEFAULT_HEIGHT, DEFAULT_WIDTH};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads the `[section]` table of a config file, or defaults without one.
pub fn from_file<S: DeserializeOwned + Default>(
    config: Option<&Path>,
    section: &str,
) -> anyhow::Result<S> {
    let Some(path) = config else {
        return Ok(S::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let mut table: toml::Table = toml::from_str(&text)?;
    match table.remove(section) {
        Some(v) => Ok(v.try_into()?),
        None => Ok(S::default()),
    }
}

macro_rules! overlay {
    ($settings:expr, $args:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field { $settings.$field = v.into(); })+
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synth {
    pub subjects: usize,
    pub frames: usize,
    /// `HEIGHTxWIDTH` of rendered frames.
    pub size: String,
    pub illum_shift: f64,
    pub noise: f64,
    pub similar_frac: f64,
    pub spread: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Synth {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            subjects: d.n_subjects,
            frames: d.frames_per_camera,
            size: format!("{}x{}", d.height, d.width),
            illum_shift: d.illumination_shift,
            noise: d.noise,
            similar_frac: d.similar_fraction,
            spread: d.palette_spread,
            seed: d.seed,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of subjects
    #[arg(long)]
    subjects: Option<usize>,
    /// Frames per camera per subject
    #[arg(long)]
    frames: Option<usize>,
    /// Frame size as HEIGHTxWIDTH
    #[arg(long)]
    size: Option<String>,
    /// Additive brightness shift of camera 2
    #[arg(long = "illum-shift", allow_negative_numbers = true)]
    illum_shift: Option<f64>,
    /// Per-pixel Gaussian noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// Fraction of subjects sharing another subject's palette
    #[arg(long = "similar-frac")]
    similar_frac: Option<f64>,
    /// Minimum L-infinity distance between independent palettes
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SynthArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Synth> {
        let mut s: Synth = from_file(config, "synth")?;
        overlay!(s, self; subjects, frames, size, illum_shift, noise, similar_frac, spread, seed);
        if self.out.is_some() {
            s.out = self.out;
        }
        Ok(s)
    }
}

impl Synth {
    pub fn to_config(&self) -> Result<SynthConfig, String> {
        let (h, w) = self
            .size
            .split_once(['x', 'X'])
            .and_then(|(h, w)| Some((h.trim().parse().ok()?, w.trim().parse().ok()?)))
            .ok_or_else(|| format!("--size must look like 160x80, got {:?}", self.size))?;
        Ok(SynthConfig {
            n_subjects: self.subjects,
            frames_per_camera: self.frames,
            height: h,
            width: w,
            palette_spread: self.spread,
            illumination_shift: self.illum_shift,
            noise: self.noise,
            similar_fraction: self.similar_frac,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    pub data: Option<PathBuf>,
    pub layout: String,
    pub eta: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub batch: usize,
    pub loss_thresh: f64,
    pub err_thresh: f64,
    pub pos_pairs: usize,
    pub neg_pairs: usize,
    pub height: usize,
    pub width: usize,
    pub fg_threshold: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Train {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            data: None,
            layout: "per-subject-dirs".into(),
            eta: d.eta,
            gamma: d.gamma,
            epochs: d.max_epochs,
            batch: d.batch_size,
            loss_thresh: d.loss_threshold,
            err_thresh: d.error_threshold,
            pos_pairs: 200,
            neg_pairs: 200,
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            seed: d.seed,
            out: None,
        }
    }
}

impl Train {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eta: self.eta,
            gamma: self.gamma,
            batch_size: self.batch,
            max_epochs: self.epochs,
            loss_threshold: self.loss_thresh,
            error_threshold: self.err_thresh,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset root
    #[arg(long)]
    data: Option<PathBuf>,
    /// per-subject-dirs or two-camera-dirs
    #[arg(long)]
    layout: Option<String>,
    /// Adam learning rate [default: 0.01]
    #[arg(long)]
    eta: Option<f64>,
    /// Weight-decay factor [default: 0.0005]
    #[arg(long)]
    gamma: Option<f64>,
    /// Maximum number of epochs [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Stop when the epoch loss falls below this [default: 1e-5]
    #[arg(long = "loss-thresh")]
    loss_thresh: Option<f64>,
    /// Stop when the epoch error rate falls below this [default: 1e-4]
    #[arg(long = "err-thresh")]
    err_thresh: Option<f64>,
    /// Positive training pairs [default: 200]
    #[arg(long = "pos-pairs")]
    pos_pairs: Option<usize>,
    /// Negative training pairs [default: 200]
    #[arg(long = "neg-pairs")]
    neg_pairs: Option<usize>,
    /// Normalized silhouette height, divisible by 3 [default: 162]
    #[arg(long)]
    height: Option<usize>,
    /// Normalized silhouette width [default: 64]
    #[arg(long)]
    width: Option<usize>,
    /// Luminance threshold for frames without a mask
    #[arg(long = "fg-threshold")]
    fg_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Train> {
        let mut s: Train = from_file(config, "train")?;
        overlay!(s, self; layout, eta, gamma, epochs, batch, loss_thresh, err_thresh, pos_pairs, neg_pairs,
            height, width, fg_threshold, seed);
        s.data = self.data.or(s.data);
        s.out = self.out.or(s.out);
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Enroll {
    pub data: Option<PathBuf>,
    pub layout: String,
    pub split: String,
    pub model: Option<PathBuf>,
    #[serde(rename = "K")]
    pub k: usize,
    pub fg_threshold: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Enroll {
    fn default() -> Self {
        Self {
            data: None,
            layout: "per-subject-dirs".into(),
            split: "camera-split".into(),
            model: None,
            k: DEFAULT_K,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    /// Dataset root; the gallery side of the split is enrolled
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    layout: Option<String>,
    /// camera-split or frame-split
    #[arg(long)]
    split: Option<String>,
    /// Trained checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of color clusters [default: 100]
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "fg-threshold")]
    fg_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gallery archive path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EnrollArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Enroll> {
        let mut s: Enroll = from_file(config, "enroll")?;
        overlay!(s, self; layout, split, k, fg_threshold, seed);
        s.data = self.data.or(s.data);
        s.model = self.model.or(s.model);
        s.out = self.out.or(s.out);
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Identify {
    pub gallery: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub kappa: usize,
    pub fg_threshold: f64,
    pub out: Option<PathBuf>,
}

impl Default for Identify {
    fn default() -> Self {
        Self {
            gallery: None,
            probe: None,
            kappa: DEFAULT_KAPPA,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Gallery archive written by `enroll`
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Directory holding one probe sequence
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Nearest color clusters to search [default: 1]
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long = "fg-threshold")]
    fg_threshold: Option<f64>,
    /// Result JSON path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl IdentifyArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Identify> {
        let mut s: Identify = from_file(config, "identify")?;
        overlay!(s, self; kappa, fg_threshold);
        s.gallery = self.gallery.or(s.gallery);
        s.probe = self.probe.or(s.probe);
        s.out = self.out.or(s.out);
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub data: Option<PathBuf>,
    pub layout: String,
    pub split: String,
    pub model: Option<PathBuf>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub kappa: Vec<usize>,
    pub probes: Option<usize>,
    pub max_rank: usize,
    pub ablation: bool,
    pub fg_threshold: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Eval {
    fn default() -> Self {
        Self {
            data: None,
            layout: "per-subject-dirs".into(),
            split: "camera-split".into(),
            model: None,
            k: vec![DEFAULT_K],
            kappa: vec![DEFAULT_KAPPA],
            probes: None,
            max_rank: DEFAULT_MAX_RANK,
            ablation: false,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated cluster counts [default: 100]
    #[arg(long = "K", value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Comma-separated kappa values [default: 1]
    #[arg(long, value_delimiter = ',')]
    kappa: Option<Vec<usize>>,
    /// Number of probe subjects to sample [default: all]
    #[arg(long)]
    probes: Option<usize>,
    /// Highest CMC rank [default: 10]
    #[arg(long = "max-rank")]
    max_rank: Option<usize>,
    /// Also compare against matching without clustering
    #[arg(long)]
    ablation: bool,
    #[arg(long = "fg-threshold")]
    fg_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Eval> {
        let mut s: Eval = from_file(config, "eval")?;
        overlay!(s, self; layout, split, k, kappa, max_rank, fg_threshold, seed);
        s.data = self.data.or(s.data);
        s.model = self.model.or(s.model);
        s.probes = self.probes.or(s.probes);
        s.out = self.out.or(s.out);
        s.ablation |= self.ablation;
        Ok(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Elbow {
    pub data: Option<PathBuf>,
    pub layout: String,
    pub k_list: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub fg_threshold: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for Elbow {
    fn default() -> Self {
        Self {
            data: None,
            layout: "per-subject-dirs".into(),
            k_list: vec![1, 2, 5, 10, 20, 50, 100],
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
            fg_threshold: DEFAULT_FG_THRESHOLD,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct ElbowArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    layout: Option<String>,
    /// Comma-separated K values
    #[arg(long = "k-list", value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long = "fg-threshold")]
    fg_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ElbowArgs {
    pub fn resolve(self, config: Option<&Path>) -> anyhow::Result<Elbow> {
        let mut s: Elbow = from_file(config, "elbow")?;
        overlay!(s, self; layout, k_list, height, width, fg_threshold, seed);
        s.data = self.data.or(s.data);
        s.out = self.out.or(s.out);
        Ok(s)
    }
}
