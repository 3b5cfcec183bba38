//! Training-time machinery for a self-ensembling single-stage 3D detector:
//! oriented-box geometry, losses with gradients, soft-target matching,
//! shape-aware augmentation, a toy teacher/student loop and KITTI-style
//! evaluation.

pub mod augment;
pub mod eval;
pub mod exec;
pub mod geom;
pub mod losses;
pub mod matching;
pub mod pipeline;
pub mod scene;

pub use exec::Exec;
pub use geom::{Box3D, Point, Transform};
pub use scene::{Detection, ObjectLabel, Scene};
