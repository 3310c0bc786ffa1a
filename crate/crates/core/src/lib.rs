//! Online open-set semi-supervised object detection on a synthetic benchmark.
//!
//! A teacher–student detector learns from a few labeled scenes and a pool of
//! unlabeled scenes that mix in-distribution objects with objects from classes
//! it was never told about. A one-vs-all OOD head, trained online alongside
//! the detector, filters the teacher's pseudo-labels so that unknown objects
//! do not turn into confident wrong targets.

pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod math;
pub mod ood;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use config::{BenchConfig, ExperimentConfig, TrainerConfig};
pub use detector::{Detection, ModelParams};
pub use error::{Error, Result};
pub use eval::MetricsRecord;
pub use geometry::{iou, nms, BBox};
pub use ood::ScorerKind;
pub use synth::{DatasetSplits, Scene, SplitTag, UnlabeledScene, World};
pub use trainer::{run_experiment, ExperimentOutcome, PseudoLabelSet};
