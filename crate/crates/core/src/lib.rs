//! Probabilistic predictions from label-conditional conformal predictors.
//!
//! The pipeline runs a label-conditional conformal transducer
//! ([`transducer`]) over a conformity measure ([`conformity`]), fits a
//! non-increasing density to each label's p-values on an unlabelled
//! calibration sequence ([`grenander`]), and turns a test object's p-values
//! into normalised class probabilities ([`calibration`]). [`metrics`] scores
//! the output; [`idealized`] works out the exact known-distribution case on
//! small finite spaces.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod conformity;
pub mod dataset;
pub mod error;
pub mod grenander;
pub mod idealized;
pub mod metrics;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod transducer;

pub use calibration::{
    build_model, predict, predict_batch, CalibratedPrediction, CalibrationModel, DRule,
    ProbabilisticPrediction,
};
pub use conformity::{ConformityMeasure, Distance, Euclidean, KnnRatio, NnRatio};
pub use dataset::{Dataset, LabelId, LabelSpace, Observation};
pub use error::{Error, Result};
pub use grenander::AntitonicDensity;
pub use metrics::LossReport;
pub use transducer::{Criteria, PValueSystem, PredictionSet, TauSource, Transducer};
