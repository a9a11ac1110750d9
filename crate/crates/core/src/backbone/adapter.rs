use serde::{Deserialize, Serialize};

use super::BackboneConfig;
use crate::params::{Group, ParamStore};
use crate::{Result, Rng, Tensor};

/// Which side of the pipeline an adapter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Compresses the trajectory into the draft.
    Extractor,
    /// Reads the decision from trajectory plus draft.
    Reasoner,
}

impl Role {
    pub fn group(self) -> Group {
        match self {
            Role::Extractor => Group::ExtractorAdapter,
            Role::Reasoner => Group::ReasonerAdapter,
        }
    }
}

/// Backbone matrices an adapter can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMatrix {
    Query,
    Value,
}

impl TargetMatrix {
    pub fn key(self) -> &'static str {
        match self {
            TargetMatrix::Query => "wq",
            TargetMatrix::Value => "wv",
        }
    }
}

/// Low-rank deltas `alpha / rank · down · up` on the query and value
/// projections of every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub role: Role,
    pub rank: usize,
    pub alpha: f64,
    pub prefix: String,
    pub layers: usize,
    pub targets: Vec<TargetMatrix>,
}

impl AdapterSet {
    pub fn new(role: Role, prefix: impl Into<String>, cfg: &BackboneConfig, rank: usize, alpha: f64) -> Self {
        Self {
            role,
            rank,
            alpha,
            prefix: prefix.into(),
            layers: cfg.n_layers,
            targets: vec![TargetMatrix::Query, TargetMatrix::Value],
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn down_name(&self, layer: usize, target: TargetMatrix) -> String {
        format!("{}.l{layer}.{}.down", self.prefix, target.key())
    }

    pub fn up_name(&self, layer: usize, target: TargetMatrix) -> String {
        format!("{}.l{layer}.{}.up", self.prefix, target.key())
    }

    /// Registers the adapter in `store`: small Gaussian down-projections,
    /// zero up-projections, so the adapted model starts equal to the base.
    pub fn init(&self, cfg: &BackboneConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let d = cfg.d_model;
        let std = 1.0 / (d as f64).sqrt();
        for l in 0..self.layers {
            for &t in &self.targets {
                store.insert(self.down_name(l, t), self.role.group(), Tensor::randn(&[d, self.rank], std, rng))?;
                store.insert(self.up_name(l, t), self.role.group(), Tensor::zeros(&[self.rank, d]))?;
            }
        }
        Ok(())
    }
}
