//! The hybrid link-prediction model: configuration, parameters, and the
//! differentiable forward pass.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{Ablation, BetaMode, EthConfig, GammaKind, LossKind};
pub use forward::{
    BatchNodes, Forward, ForwardMode, ParamNodes, QueryBatch, QueryEmbeds, RRELU_LOWER,
    RRELU_UPPER,
};
pub use params::{Checkpoint, EthParams, GruParams, CURVATURE_RAW_INIT};
