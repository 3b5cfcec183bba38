//! Pretraining and the teacher/student self-ensembling loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::detector::{DetectorError, DetectorSpec, ToyDetector};
use super::params::{adam_step, ema_update, AdamState, EmaState, ParamError, ParamVector};
use super::targets::{assign_anchors, supervised_loss, AssignConfig, BoxLossKind};
use super::voxel::voxelize;
use crate::augment::{draw_global_transform, shape_aware_augment, AugConfig, AugError, GlobalAugRanges};
use crate::eval::{average_precision_with, EvalConfig, ScoredBox};
use crate::exec::Exec;
use crate::geom::{Box3D, Transform};
use crate::losses::{
    consistency_box_loss, consistency_cls_loss, cosine_lr, mu_ramp, student_total_loss, LossError, LossWeights,
    StudentLossParts,
};
use crate::matching::{match_with_strategy, rotated_nms, MatchConfig};
use crate::scene::{Detection, Scene};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training scenes")]
    NoScenes,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    pub ramp_epochs: f64,
    /// Replaces the ramp when set.
    pub mu_override: Option<f64>,
    pub ema_decay: f64,
    pub matching: MatchConfig,
    pub aug: AugConfig,
    pub assign: AssignConfig,
    pub detector: DetectorSpec,
    pub use_consistency: bool,
    pub use_sada: bool,
    pub use_global_aug: bool,
    pub box_loss: BoxLossKind,
    /// Run rotated NMS on teacher predictions before matching.
    pub teacher_nms: bool,
    pub score_thresh: f64,
    pub nms_iou: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugConfig {
            // the synthetic scenes are 20 m wide, so keep global motion small
            global: GlobalAugRanges {
                rotation: std::f64::consts::PI / 16.0,
                translation: [0.25, 0.25, 0.0],
                ..GlobalAugRanges::default()
            },
            ..AugConfig::default()
        };
        Self {
            seed: 0,
            pretrain_epochs: 30,
            epochs: 60,
            batch_size: 4,
            lr_max: 3e-3,
            lr_min: 3e-5,
            weights: LossWeights::default(),
            ramp_epochs: 15.0,
            mu_override: None,
            ema_decay: 0.999,
            matching: MatchConfig::default(),
            aug,
            assign: AssignConfig::default(),
            detector: DetectorSpec::default(),
            use_consistency: true,
            use_sada: true,
            use_global_aug: true,
            box_loss: BoxLossKind::ODIoU,
            teacher_nms: false,
            score_thresh: 0.05,
            nms_iou: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_max >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!("lr_min/lr_max must satisfy 0 <= lr_min <= lr_max, got {}/{}", self.lr_min, self.lr_max));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must be in [0,1), got {}", self.ema_decay));
        }
        if let Some(m) = self.mu_override {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("mu_override must be in [0,1], got {m}"));
            }
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return bad(format!("score_thresh must be in [0,1], got {}", self.score_thresh));
        }
        self.weights.validate().map_err(TrainError::Config)?;
        self.matching.validate().map_err(TrainError::Config)?;
        self.aug.validate()?;
        self.detector.voxel.validate().map_err(|e| TrainError::Config(format!("voxel: {e}")))?;
        if self.detector.hidden == 0 || self.detector.cells.contains(&0) {
            return bad("detector.hidden and detector.cells must be nonzero".into());
        }
        Ok(())
    }
}

/// One optimizer step of metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_cls: f64,
    pub loss_box: f64,
    pub loss_dir: f64,
    pub loss_cons_cls: f64,
    pub loss_cons_box: f64,
    pub mu_t: f64,
    pub lr: f64,
}

impl MetricsRow {
    pub fn total(&self, w: &LossWeights) -> f64 {
        let parts = StudentLossParts {
            cls: self.loss_cls,
            bbox: self.loss_box,
            dir: self.loss_dir,
            cons_cls: self.loss_cons_cls,
            cons_box: self.loss_cons_box,
        };
        student_total_loss(&parts, &LossWeights { mu_t: self.mu_t, ..*w })
    }
}

pub const METRICS_HEADER: &str = "step,loss_cls,loss_box,loss_dir,loss_cons_cls,loss_cons_box,mu_t,lr";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.loss_cls, r.loss_box, r.loss_dir, r.loss_cons_cls, r.loss_cons_box, r.mu_t, r.lr
        ));
    }
    s
}

/// Called after every optimizer step.
pub trait StepObserver {
    fn on_step(&mut self, _step: usize, _student: &ParamVector, _teacher: Option<&ParamVector>) {}
    fn on_epoch(&mut self, _epoch: usize, _student: &ParamVector, _teacher: Option<&ParamVector>) {}
}

pub struct NoObserver;
impl StepObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub trace: Vec<MetricsRow>,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub student: ToyDetector,
    pub teacher: ToyDetector,
    pub report: PhaseReport,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for p in parts {
        h = splitmix(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

const TAG_SHUFFLE: u64 = 1;
const TAG_SCENE: u64 = 2;

struct SceneOut {
    grads: ParamVector,
    parts: StudentLossParts,
}

fn map_detections(dets: Vec<Detection>, t: &Transform) -> Vec<Detection> {
    if t.is_identity() {
        return dets;
    }
    dets.into_iter().map(|d| Detection::new(t.apply_box(&d.bbox), d.logit)).collect()
}

fn scene_step(
    student: &ToyDetector,
    teacher: Option<&ToyDetector>,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
    cfg: &TrainConfig,
    mu: f64,
) -> Result<SceneOut, TrainError> {
    let t = if cfg.use_global_aug { draw_global_transform(&cfg.aug.global, rng) } else { Transform::identity() };
    let moved = if t.is_identity() { scene.clone() } else { scene.transformed(&t) };
    let input = if cfg.use_sada { shape_aware_augment(&moved, &cfg.aug, rng)?.0 } else { moved };

    let grid = voxelize(&input.points, &student.spec.voxel);
    let (out, cache) = student.forward(&grid);
    let anchors = student.anchors();
    let gts: Vec<Box3D> = input.labels.iter().map(|l| l.bbox).collect();
    let targets = assign_anchors(&anchors, &gts, &cfg.assign);
    let mut sup = supervised_loss(&out, &anchors, &targets, &gts, cfg.box_loss, &cfg.weights);
    let mut parts = StudentLossParts { cls: sup.cls, bbox: sup.bbox, dir: sup.dir, ..Default::default() };

    if let (Some(teacher), true) = (teacher, mu > 0.0) {
        let (tout, _) = teacher.forward(&voxelize(&scene.points, &teacher.spec.voxel));
        let mut tdets = map_detections(tout.detections, &t);
        if cfg.teacher_nms {
            let keep = rotated_nms(&tdets, cfg.matching.nms_iou);
            tdets = keep.into_iter().map(|i| tdets[i]).collect();
        }
        let matches = match_with_strategy(&out.detections, &tdets, &gts, &cfg.matching);
        let (cb, gb) = consistency_box_loss(&matches, &out.detections, &tdets)?;
        let (cc, gc) = consistency_cls_loss(&matches, &out.detections, &tdets)?;
        parts.cons_box = cb;
        parts.cons_cls = cc;
        for (a, g) in sup.grads.iter_mut().enumerate() {
            for k in 0..7 {
                g.bbox[k] += mu * gb[a][k];
            }
            g.logit += mu * gc[a];
        }
    }
    let grads = student.backward(&cache, &sup.grads)?;
    Ok(SceneOut { grads, parts })
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    student: &mut ToyDetector,
    mut ema: Option<&mut EmaState>,
    scenes: &[Scene],
    epochs: usize,
    cfg: &TrainConfig,
    consistency: bool,
    observer: &mut dyn StepObserver,
    exec: Exec,
) -> Result<PhaseReport, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::NoScenes);
    }
    cfg.validate()?;
    let steps_per_epoch = scenes.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * epochs;
    let mut adam = AdamState::new(student.params.len());
    let mut trace = Vec::with_capacity(total_steps);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        let mu = if !consistency {
            0.0
        } else {
            cfg.mu_override.unwrap_or_else(|| mu_ramp(epoch as f64, cfg.ramp_epochs))
        };
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let teacher = ema.as_ref().map(|e| ToyDetector { spec: student.spec, params: e.teacher.clone() });
            let outs = exec.map(batch, |&i| {
                let mut rng = rng_for(cfg.seed, &[TAG_SCENE, epoch as u64, i as u64]);
                scene_step(student, teacher.as_ref(), &scenes[i], &mut rng, cfg, mu)
            });
            let inv = 1.0 / batch.len() as f64;
            let mut grads = ParamVector::zeros(student.params.layout.clone());
            let mut parts = StudentLossParts::default();
            for o in outs {
                let o = o?;
                grads.add_scaled(&o.grads, inv);
                parts.cls += inv * o.parts.cls;
                parts.bbox += inv * o.parts.bbox;
                parts.dir += inv * o.parts.dir;
                parts.cons_cls += inv * o.parts.cons_cls;
                parts.cons_box += inv * o.parts.cons_box;
            }
            let lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
            adam_step(&mut student.params, &grads, &mut adam, lr)?;
            if let Some(e) = ema.as_deref_mut() {
                ema_update(e, &student.params)?;
            }
            let row = MetricsRow {
                step,
                loss_cls: parts.cls,
                loss_box: parts.bbox,
                loss_dir: parts.dir,
                loss_cons_cls: parts.cons_cls,
                loss_cons_box: parts.cons_box,
                mu_t: mu,
                lr,
            };
            epoch_sum += row.total(&cfg.weights);
            trace.push(row);
            observer.on_step(step, &student.params, ema.as_ref().map(|e| &e.teacher));
            step += 1;
        }
        epoch_losses.push(epoch_sum / steps_per_epoch as f64);
        observer.on_epoch(epoch, &student.params, ema.as_ref().map(|e| &e.teacher));
    }
    Ok(PhaseReport { trace, epoch_losses })
}

/// Supervised training only: no teacher and no consistency term.
pub fn pretrain(student: &mut ToyDetector, scenes: &[Scene], epochs: usize, cfg: &TrainConfig) -> Result<PhaseReport, TrainError> {
    pretrain_with(student, scenes, epochs, cfg, &mut NoObserver, Exec::default())
}

pub fn pretrain_with(
    student: &mut ToyDetector,
    scenes: &[Scene],
    epochs: usize,
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver,
    exec: Exec,
) -> Result<PhaseReport, TrainError> {
    run_phase(student, None, scenes, epochs, cfg, false, observer, exec)
}

/// Self-ensembling phase. Student and teacher both start from `init`.
pub fn train_se_ssd(init: &ToyDetector, scenes: &[Scene], cfg: &TrainConfig) -> Result<TrainResult, TrainError> {
    train_se_ssd_with(init, scenes, cfg, &mut NoObserver, Exec::default())
}

pub fn train_se_ssd_with(
    init: &ToyDetector,
    scenes: &[Scene],
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver,
    exec: Exec,
) -> Result<TrainResult, TrainError> {
    let mut student = init.clone();
    let mut ema = EmaState::new(init.params.clone(), cfg.ema_decay)?;
    let report = run_phase(&mut student, Some(&mut ema), scenes, cfg.epochs, cfg, cfg.use_consistency, observer, exec)?;
    let teacher = ToyDetector { spec: init.spec, params: ema.teacher };
    Ok(TrainResult { student, teacher, report })
}

/// Score-filtered, NMS-suppressed detections for one scene.
pub fn predict(model: &ToyDetector, scene: &Scene, score_thresh: f64, nms_iou: f64) -> Vec<Detection> {
    let (out, _) = model.forward(&voxelize(&scene.points, &model.spec.voxel));
    let dets: Vec<Detection> = out.detections.into_iter().filter(|d| d.score() >= score_thresh).collect();
    rotated_nms(&dets, nms_iou).into_iter().map(|i| dets[i]).collect()
}

/// Average precision of `model` over `scenes`.
pub fn evaluate(model: &ToyDetector, scenes: &[Scene], cfg: &TrainConfig, eval: &EvalConfig, exec: Exec) -> f64 {
    let preds: Vec<Vec<ScoredBox>> = exec.map(scenes, |s| {
        predict(model, s, cfg.score_thresh, cfg.nms_iou).iter().map(ScoredBox::from).collect()
    });
    let gts: Vec<_> = scenes.iter().map(|s| s.labels.clone()).collect();
    average_precision_with(&preds, &gts, eval, exec).ap
}

/// Which of the three ablated components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub consistency: bool,
    pub sada: bool,
    pub odiou: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation { consistency: true, sada: true, odiou: true };
    pub const BASELINE: Ablation = Ablation { consistency: false, sada: false, odiou: false };

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_consistency: self.consistency,
            use_sada: self.sada,
            box_loss: if self.odiou { BoxLossKind::ODIoU } else { BoxLossKind::SmoothL1 },
            ..*cfg
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub pretrained_ap: f64,
    pub student_ap: f64,
    pub teacher_ap: f64,
    pub result: TrainResult,
}

/// Pretraining followed by the self-ensembling phase, evaluated on `val`.
/// Every variant spends the same number of steps; without consistency the
/// second phase simply continues supervised training.
pub fn run_variant(
    train: &[Scene],
    val: &[Scene],
    cfg: &TrainConfig,
    eval: &EvalConfig,
    exec: Exec,
) -> Result<VariantResult, TrainError> {
    let mut m = ToyDetector::new(cfg.detector, cfg.seed);
    pretrain_with(&mut m, train, cfg.pretrain_epochs, cfg, &mut NoObserver, exec)?;
    let pretrained_ap = evaluate(&m, val, cfg, eval, exec);
    let result = train_se_ssd_with(&m, train, cfg, &mut NoObserver, exec)?;
    let student_ap = evaluate(&result.student, val, cfg, eval, exec);
    let teacher_ap = evaluate(&result.teacher, val, cfg, eval, exec);
    Ok(VariantResult { pretrained_ap, student_ap, teacher_ap, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_dataset, SynthConfig};

    fn quick_cfg() -> TrainConfig {
        TrainConfig { detector: DetectorSpec { hidden: 8, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn zero_lr_keeps_params() {
        let scenes = synth_dataset(&SynthConfig::default(), 3, 1);
        let cfg = TrainConfig { lr_max: 0.0, lr_min: 0.0, ..quick_cfg() };
        let init = ToyDetector::new(cfg.detector, 2);
        let mut m = init.clone();
        let rep = pretrain(&mut m, &scenes, 2, &cfg).unwrap();
        assert_eq!(m, init);
        assert_eq!(rep.epoch_losses.len(), 2);
        assert_eq!(rep.trace.len(), 2);
    }

    #[test]
    fn empty_scene_set_rejected() {
        let cfg = quick_cfg();
        let mut m = ToyDetector::new(cfg.detector, 2);
        assert!(matches!(pretrain(&mut m, &[], 1, &cfg), Err(TrainError::NoScenes)));
    }

    #[test]
    fn csv_header() {
        assert!(metrics_csv(&[]).starts_with("step,loss_cls,loss_box,loss_dir,loss_cons_cls,loss_cons_box,mu_t,lr\n"));
    }
}
