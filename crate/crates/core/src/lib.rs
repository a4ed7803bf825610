//! Systemic road-safety risk modeling.
//!
//! The pipeline joins crash records with road inventory, reduces
//! multicollinearity among the encoded features, rebalances each
//! contributing-factor target, trains random forests, explains them with
//! Shapley values and scores road segments for heat-map export.
//!
//! Modules map onto pipeline stages:
//!
//! * [`dataset`]: typed frames, CSV ingestion, joins, dummy encoding
//! * [`collinearity`]: VIF and iterative multicollinearity reduction
//! * [`resample`]: RUMC, SMOTE-NC and the stratified split
//! * [`forest`]: CART trees and bagged random forests
//! * [`shap`]: exact and tree-based Shapley attributions
//! * [`risk`]: segment scoring and heat-map export
//! * [`syngen`]: synthetic crash/inventory data with planted effects
//! * [`pipeline`]: config-driven end-to-end runs with a run manifest

pub mod collinearity;
pub mod dataset;
pub mod fingerprint;
pub mod forest;
pub mod pipeline;
pub mod resample;
pub mod risk;
pub mod rng;
pub mod runlog;
pub mod shap;
pub mod svg;
pub mod syngen;
