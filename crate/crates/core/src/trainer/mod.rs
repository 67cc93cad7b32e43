//! Training with AdaGrad, head-averaged inference and VOC-style evaluation.

mod adagrad;
mod config;
mod eval;
mod gradcheck;
mod infer;
mod objective;
mod train;

pub use adagrad::AdaGrad;
pub use config::{LossMode, TrainConfig, DEFAULT_LAMBDA2};
pub use eval::{
    average_precision, evaluate, score_detections, DetectionScores, Metrics, ScoredScene, MATCH_IOU,
};
pub use gradcheck::{
    check_problem, gradcheck, random_problem, relative_error, GradProblem, GradcheckCase, GradcheckReport,
};
pub use infer::{detections_from_scores, infer, region_class_scores, Detection};
pub use objective::{frozen_objective, scene_objective, TrainingScene};
pub use train::{model_dims, prepare_scenes, train, train_from, StepLog, TrainOutput};
