//! Model hyperparameters and ablation switches.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EthError, Result};

/// Activation γ used inside the tangent-space transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    Relu,
    Identity,
}

impl FromStr for GammaKind {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(GammaKind::Relu),
            "identity" => Ok(GammaKind::Identity),
            other => Err(EthError::invalid(format!(
                "unknown gamma `{other}` (expected relu or identity)"
            ))),
        }
    }
}

/// How the hyperbolic/Euclidean mixing coefficient β is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// β = σ(⟨s_q, s_r⟩ / w), one scalar per query.
    QuerySpecific,
    /// Pure Euclidean scoring (β = 0).
    FixedZero,
    /// Pure hyperbolic scoring (β = 1).
    FixedOne,
    /// β = σ(scalar_r), one learnable scalar per relation.
    PerRelationLearned,
}

impl FromStr for BetaMode {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query_specific" | "query-specific" => Ok(BetaMode::QuerySpecific),
            "fixed_zero" | "zero" => Ok(BetaMode::FixedZero),
            "fixed_one" | "one" => Ok(BetaMode::FixedOne),
            "per_relation_learned" | "learned" => Ok(BetaMode::PerRelationLearned),
            other => Err(EthError::invalid(format!(
                "unknown beta mode `{other}` (expected query_specific, fixed_zero, \
                 fixed_one, or per_relation_learned)"
            ))),
        }
    }
}

/// Training objective over the per-query logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over queries of −log softmax(z)[gold].
    SoftmaxCe,
    /// Mean over all (query, candidate) pairs of the sigmoid cross-entropy.
    BinaryCe,
}

impl FromStr for LossKind {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "softmax_ce" => Ok(LossKind::SoftmaxCe),
            "binary" | "binary_ce" => Ok(LossKind::BinaryCe),
            other => Err(EthError::invalid(format!(
                "unknown loss `{other}` (expected softmax or binary)"
            ))),
        }
    }
}

/// Named ablations: each disables one component of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// `-se`: drop the temporal encoder; score from the raw entity table.
    NoSemanticEncoder,
    /// `-tst`: feed encoder output directly to the hyperbolic head.
    NoTangentTransform,
    /// `-q`: replace the query transform with `h_q + v_r`.
    NoQueryTransform,
    /// β fixed at 0 (Euclidean only).
    BetaZero,
    /// β fixed at 1 (hyperbolic only).
    BetaOne,
    /// β learned per relation instead of query-specific.
    BetaLearned,
}

impl FromStr for Ablation {
    type Err = EthError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" | "-se" => Ok(Ablation::NoSemanticEncoder),
            "tst" | "-tst" => Ok(Ablation::NoTangentTransform),
            "q" | "-q" => Ok(Ablation::NoQueryTransform),
            "beta0" | "beta=0" => Ok(Ablation::BetaZero),
            "beta1" | "beta=1" => Ok(Ablation::BetaOne),
            "beta-learned" | "beta_learned" | "beta=learned" => Ok(Ablation::BetaLearned),
            other => Err(EthError::invalid(format!(
                "unknown ablation `{other}` (expected se, tst, q, beta0, beta1, \
                 or beta-learned)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::NoSemanticEncoder => "-se",
            Ablation::NoTangentTransform => "-tst",
            Ablation::NoQueryTransform => "-q",
            Ablation::BetaZero => "beta=0",
            Ablation::BetaOne => "beta=1",
            Ablation::BetaLearned => "beta=learned",
        };
        f.write_str(s)
    }
}

/// Architecture settings for one model instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EthConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Mixing-vector dimension.
    pub w: usize,
    /// Graph-convolution layers per snapshot.
    pub layers: usize,
    /// History length: snapshots fed to the encoder per prediction.
    pub m: usize,
    pub gamma_kind: GammaKind,
    pub beta_mode: BetaMode,
    /// False = `-se` ablation.
    pub enable_semantic_encoder: bool,
    /// False = `-tst` ablation.
    pub enable_tangent_transform: bool,
    /// False = `-q` ablation.
    pub enable_query_transform: bool,
    pub loss_kind: LossKind,
}

impl Default for EthConfig {
    fn default() -> Self {
        EthConfig {
            d: 200,
            w: 200,
            layers: 2,
            m: 10,
            gamma_kind: GammaKind::Relu,
            beta_mode: BetaMode::QuerySpecific,
            enable_semantic_encoder: true,
            enable_tangent_transform: true,
            enable_query_transform: true,
            loss_kind: LossKind::SoftmaxCe,
        }
    }
}

impl EthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(EthError::invalid(
                "embedding dimension d must be at least 2 (row normalization needs it)",
            ));
        }
        if self.w < 1 || self.layers < 1 || self.m < 1 {
            return Err(EthError::invalid("w, layers, and m must all be at least 1"));
        }
        Ok(())
    }

    /// Returns a copy with one ablation applied.
    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        match ablation {
            Ablation::NoSemanticEncoder => c.enable_semantic_encoder = false,
            Ablation::NoTangentTransform => c.enable_tangent_transform = false,
            Ablation::NoQueryTransform => c.enable_query_transform = false,
            Ablation::BetaZero => c.beta_mode = BetaMode::FixedZero,
            Ablation::BetaOne => c.beta_mode = BetaMode::FixedOne,
            Ablation::BetaLearned => c.beta_mode = BetaMode::PerRelationLearned,
        }
        c
    }
}
