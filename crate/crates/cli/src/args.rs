use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sessd::augment::AugConfig;
use sessd::eval::{Difficulty, EvalConfig, EvalMode, RecallPoints};
use sessd::geom::IouKind;
use sessd::losses::LossWeights;
use sessd::matching::{MatchConfig, MatchStrategy};

#[derive(Debug, Parser)]
#[command(name = "sessd", version, about = "Self-ensembling 3D detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shape-aware augmentation of one scene, with a replayable op log.
    Augment(AugmentArgs),
    /// BEV/3D IoU and ODIoU terms of two boxes.
    Iou(IouArgs),
    /// Train the toy detector.
    Train(TrainArgs),
    /// Average precision of KITTI-format predictions.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Scene in the native text format.
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Where to write the op log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Apply a recorded log instead of drawing new ops.
    #[arg(long, conflicts_with_all = ["seed", "global"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply a random global transform before the shape-aware ops.
    #[arg(long)]
    pub global: bool,
    #[command(flatten)]
    pub aug: AugFlags,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct IouArgs {
    /// Two boxes, 7 values each: cx cy cz w l h r.
    #[arg(num_args = 14, value_names = ["BOX"])]
    pub values: Vec<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Sessd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with `[train]`, `[synth]`, `[data]` and `[eval]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sessd")]
    pub mode: Mode,
    /// Output directory for checkpoints and metrics.
    #[arg(short, long, default_value = "sessd-run")]
    pub out: PathBuf,
    /// Epochs of the selected phase.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory of native scene files to train on instead of synthetic data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of native scene files to evaluate on.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Retrain for each gamma in `start:stop:step` and tabulate validation AP.
    #[arg(long, value_name = "START:STOP:STEP")]
    pub gamma_sweep: Option<String>,
    #[arg(long)]
    pub no_consistency: bool,
    #[arg(long)]
    pub no_sada: bool,
    #[arg(long)]
    pub no_odiou: bool,
    #[arg(long)]
    pub no_global_aug: bool,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Write validation ground truth and predictions as KITTI label files.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[command(flatten)]
    pub aug: AugFlags,
    #[command(flatten)]
    pub matching: MatchFlags,
    #[command(flatten)]
    pub loss: LossFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `<id>.txt` prediction files (16 fields, score last).
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Directory of `<id>.txt` ground-truth label files.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Directory of `<id>.txt` calibration files; identity-like default otherwise.
    #[arg(long)]
    pub calib_dir: Option<PathBuf>,
    /// Print the table as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Write the PR curve of the selected configuration as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args, Default)]
pub struct AugFlags {
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    #[arg(long)]
    pub p3: Option<f64>,
    #[arg(long)]
    pub keep_ratio: Option<f64>,
    #[arg(long)]
    pub global_rotation: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3, value_name = "X,Y,Z")]
    pub global_translation: Option<Vec<f64>>,
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
    #[arg(long)]
    pub flip_prob: Option<f64>,
    #[arg(long)]
    pub local_rotation: Option<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3, value_name = "X,Y,Z")]
    pub local_translation: Option<Vec<f64>>,
}

fn triple(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

impl AugFlags {
    pub fn apply(&self, c: &mut AugConfig) {
        set(&mut c.p1, self.p1);
        set(&mut c.p2, self.p2);
        set(&mut c.p3, self.p3);
        set(&mut c.sparsify_keep_ratio, self.keep_ratio);
        set(&mut c.global.rotation, self.global_rotation);
        set(&mut c.global.translation, self.global_translation.as_deref().map(triple));
        set(&mut c.global.scale_min, self.scale_min);
        set(&mut c.global.scale_max, self.scale_max);
        set(&mut c.global.flip_prob, self.flip_prob);
        set(&mut c.local.rotation, self.local_rotation);
        set(&mut c.local.translation, self.local_translation.as_deref().map(triple));
    }
}

fn parse_strategy(s: &str) -> Result<MatchStrategy, String> {
    s.parse()
}

fn parse_iou_kind(s: &str) -> Result<IouKind, String> {
    match s {
        "bev" => Ok(IouKind::Bev),
        "3d" => Ok(IouKind::ThreeD),
        _ => Err(format!("expected `bev` or `3d`, got `{s}`")),
    }
}

#[derive(Debug, Args, Default)]
pub struct MatchFlags {
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub tau_i: Option<f64>,
    /// stu, nms or gt.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<MatchStrategy>,
    /// bev or 3d.
    #[arg(long, value_parser = parse_iou_kind)]
    pub match_iou: Option<IouKind>,
    #[arg(long)]
    pub match_nms_iou: Option<f64>,
}

impl MatchFlags {
    pub fn apply(&self, c: &mut MatchConfig) {
        set(&mut c.tau_c, self.tau_c);
        set(&mut c.tau_i, self.tau_i);
        set(&mut c.strategy, self.strategy);
        set(&mut c.iou_kind, self.match_iou);
        set(&mut c.nms_iou, self.match_nms_iou);
    }
}

#[derive(Debug, Args, Default)]
pub struct LossFlags {
    #[arg(long)]
    pub omega1: Option<f64>,
    #[arg(long)]
    pub omega2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fixed consistency weight instead of the ramp.
    #[arg(long)]
    pub mu_t: Option<f64>,
}

impl LossFlags {
    pub fn apply(&self, w: &mut LossWeights, mu_override: &mut Option<f64>) {
        set(&mut w.omega1, self.omega1);
        set(&mut w.omega2, self.omega2);
        set(&mut w.gamma, self.gamma);
        if let Some(m) = self.mu_t {
            w.mu_t = m;
            *mu_override = Some(m);
        }
    }
}

fn parse_recall(s: &str) -> Result<RecallPoints, String> {
    s.trim_start_matches(['R', 'r'])
        .parse::<usize>()
        .ok()
        .and_then(RecallPoints::from_count)
        .ok_or_else(|| format!("expected 11 or 40, got `{s}`"))
}

fn parse_difficulty(s: &str) -> Result<Difficulty, String> {
    match s {
        "easy" => Ok(Difficulty::Easy),
        "moderate" => Ok(Difficulty::Moderate),
        "hard" => Ok(Difficulty::Hard),
        _ => Err(format!("expected easy, moderate or hard, got `{s}`")),
    }
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    match s {
        "bev" => Ok(EvalMode::Bev),
        "3d" => Ok(EvalMode::ThreeD),
        _ => Err(format!("expected `bev` or `3d`, got `{s}`")),
    }
}

#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    /// 11 or 40.
    #[arg(long, value_parser = parse_recall)]
    pub recall_points: Option<RecallPoints>,
    #[arg(long, value_parser = parse_difficulty)]
    pub difficulty: Option<Difficulty>,
    /// bev or 3d.
    #[arg(long, value_parser = parse_mode)]
    pub eval_mode: Option<EvalMode>,
    #[arg(long)]
    pub class: Option<String>,
}

impl EvalFlags {
    pub fn apply(&self, c: &mut EvalConfig) {
        set(&mut c.iou_threshold, self.iou_threshold);
        set(&mut c.recall_points, self.recall_points);
        set(&mut c.difficulty, self.difficulty);
        set(&mut c.mode, self.eval_mode);
        set(&mut c.class, self.class.clone());
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
