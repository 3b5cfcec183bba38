//! Toy-scale training: voxelizer, detector, optimizer, EMA teacher and the
//! two-path self-ensembling loop.

pub mod checkpoint;
pub mod detector;
pub mod params;
pub mod synth;
pub mod targets;
pub mod train;
pub mod voxel;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError};
pub use detector::{decode, encode, DetectorError, DetectorOutput, DetectorSpec, ForwardCache, OutputGrad, ToyDetector};
pub use params::{adam_step, ema_update, AdamState, EmaState, Layout, ParamError, ParamVector};
pub use synth::{synth_dataset, synth_scene, SynthConfig};
pub use targets::{assign_anchors, supervised_loss, AnchorTarget, AssignConfig, BoxLossKind};
pub use train::{
    evaluate, metrics_csv, run_variant, Ablation, VariantResult, predict, pretrain, pretrain_with, train_se_ssd, train_se_ssd_with, MetricsRow, NoObserver,
    PhaseReport, StepObserver, TrainConfig, TrainError, TrainResult,
};
pub use voxel::{voxelize, GridSpec, VoxelFeature, VoxelGrid};
