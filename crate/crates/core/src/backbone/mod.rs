//! Tiny post-norm causal transformer with low-rank adapter hooks.
//!
//! Weights live in a [`ParamStore`] under a per-instance prefix so two
//! backbones (reasoner and extractor) can coexist in one store.

mod adapter;
mod mask;
mod pretrain;

pub use adapter::{AdapterSet, Role, TargetMatrix};
pub use mask::{causal_accessibility_check, AccessibilityReport, AttentionMask};
pub use pretrain::{lm_pretrain_step, pretrain, PretrainConfig};

use serde::{Deserialize, Serialize};

use crate::numerics::Var;
use crate::params::{Bound, Group, ParamStore};
use crate::{Error, Result, Rng, Tensor};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub d_ff: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 336,
            d_ff: 64,
        }
    }
}

impl BackboneConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
            ("d_ff", self.d_ff),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("backbone {k} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// One transformer instance addressed by its parameter prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub prefix: String,
    pub group: Group,
    pub frozen: bool,
}

impl Backbone {
    pub fn new(config: BackboneConfig, prefix: impl Into<String>, group: Group) -> Self {
        Self {
            config,
            prefix: prefix.into(),
            group,
            frozen: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.prefix)
    }

    fn layer_name(&self, layer: usize, suffix: &str) -> String {
        format!("{}.l{layer}.{suffix}", self.prefix)
    }

    /// Registers freshly initialized weights.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (d, f) = (c.d_model, c.d_ff);
        let g = self.group;
        let wstd = 1.0 / (d as f64).sqrt();
        store.insert(self.name("tok_emb"), g, Tensor::randn(&[c.vocab_size, d], 1.0, rng))?;
        store.insert(self.name("pos_emb"), g, Tensor::randn(&[c.max_seq_len, d], 0.5, rng))?;
        for l in 0..c.n_layers {
            for m in ["wq", "wk", "wv", "wo"] {
                store.insert(self.layer_name(l, m), g, Tensor::randn(&[d, d], wstd, rng))?;
            }
            store.insert(self.layer_name(l, "ln1_g"), g, Tensor::filled(&[d], 1.0))?;
            store.insert(self.layer_name(l, "ln1_b"), g, Tensor::zeros(&[d]))?;
            store.insert(self.layer_name(l, "w1"), g, Tensor::randn(&[d, f], wstd, rng))?;
            store.insert(self.layer_name(l, "b1"), g, Tensor::zeros(&[f]))?;
            store.insert(
                self.layer_name(l, "w2"),
                g,
                Tensor::randn(&[f, d], 1.0 / (f as f64).sqrt(), rng),
            )?;
            store.insert(self.layer_name(l, "b2"), g, Tensor::zeros(&[d]))?;
            store.insert(self.layer_name(l, "ln2_g"), g, Tensor::filled(&[d], 1.0))?;
            store.insert(self.layer_name(l, "ln2_b"), g, Tensor::zeros(&[d]))?;
        }
        store.insert(self.name("lm_head"), g, Tensor::randn(&[d, c.vocab_size], 0.02, rng))?;
        Ok(())
    }

    /// Token plus learned absolute position embedding, one row per token.
    pub fn embed<'t>(&self, bound: &Bound<'_, 't>, tokens: &[usize]) -> Result<Var<'t>> {
        let c = &self.config;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        if tokens.len() > c.max_seq_len {
            return Err(Error::Input(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                tokens.len(),
                c.max_seq_len
            )));
        }
        let tok = bound.var(&self.name("tok_emb"))?.gather_rows(tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos = bound.var(&self.name("pos_emb"))?.gather_rows(&positions)?;
        Ok(tok.add(pos)?)
    }

    /// Base weight, plus the adapter delta when one targets it.
    fn effective<'t>(
        &self,
        bound: &Bound<'_, 't>,
        layer: usize,
        matrix: &str,
        adapters: Option<&AdapterSet>,
    ) -> Result<Var<'t>> {
        let base = bound.var(&self.layer_name(layer, matrix))?;
        let Some(a) = adapters else {
            return Ok(base);
        };
        let Some(&t) = a.targets.iter().find(|t| t.key() == matrix) else {
            return Ok(base);
        };
        let down = bound.var(&a.down_name(layer, t))?;
        let up = bound.var(&a.up_name(layer, t))?;
        let delta = down.matmul(up)?.scale(a.scaling());
        Ok(base.add(delta)?)
    }

    fn check_adapters(&self, adapters: Option<&AdapterSet>) -> Result<()> {
        if let Some(a) = adapters {
            if a.layers != self.config.n_layers {
                return Err(Error::Usage(format!(
                    "adapter {} covers {} layers, backbone has {}",
                    a.prefix, a.layers, self.config.n_layers
                )));
            }
        }
        Ok(())
    }

    /// Multi-head attention sub-layer output (before the residual add):
    /// per-head attention, heads concatenated, then the output projection.
    pub fn attention_sublayer<'t>(
        &self,
        bound: &Bound<'_, 't>,
        layer: usize,
        x: Var<'t>,
        adapters: Option<&AdapterSet>,
        mask: &AttentionMask,
    ) -> Result<Var<'t>> {
        let q = x.matmul(self.effective(bound, layer, "wq", adapters)?)?;
        let k = x.matmul(self.effective(bound, layer, "wk", adapters)?)?;
        let v = x.matmul(self.effective(bound, layer, "wv", adapters)?)?;
        let heads = bound
            .tape()
            .attention(q, k, v, self.config.n_heads, mask.raw())?;
        Ok(heads.matmul(self.effective(bound, layer, "wo", adapters)?)?)
    }

    /// Runs every layer over `input` (`n×d_model`) under `mask`.
    pub fn forward<'t>(
        &self,
        bound: &Bound<'_, 't>,
        input: Var<'t>,
        adapters: Option<&AdapterSet>,
        mask: &AttentionMask,
    ) -> Result<Var<'t>> {
        self.check_adapters(adapters)?;
        let shape = input.shape();
        let n = shape.first().copied().unwrap_or(0);
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(Error::Input(format!(
                "forward expects n x {} input, got {shape:?}",
                self.config.d_model
            )));
        }
        if n > self.config.max_seq_len {
            return Err(Error::Input(format!(
                "{n} rows exceed max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        if mask.len() != n {
            return Err(crate::NumericsError::Shape {
                op: "forward mask",
                left: vec![mask.len(), mask.len()],
                right: vec![n, n],
            }
            .into());
        }
        let mut x = input;
        for l in 0..self.config.n_layers {
            let attn = self.attention_sublayer(bound, l, x, adapters, mask)?;
            x = x.add(attn)?.layer_norm(
                bound.var(&self.layer_name(l, "ln1_g"))?,
                bound.var(&self.layer_name(l, "ln1_b"))?,
                LN_EPS,
            )?;
            let hidden = x
                .matmul(bound.var(&self.layer_name(l, "w1"))?)?
                .add_row(bound.var(&self.layer_name(l, "b1"))?)?
                .gelu();
            let ff = hidden
                .matmul(bound.var(&self.layer_name(l, "w2"))?)?
                .add_row(bound.var(&self.layer_name(l, "b2"))?)?;
            x = x.add(ff)?.layer_norm(
                bound.var(&self.layer_name(l, "ln2_g"))?,
                bound.var(&self.layer_name(l, "ln2_b"))?,
                LN_EPS,
            )?;
        }
        Ok(x)
    }

    /// Next-token logits, `n×vocab_size`.
    pub fn lm_logits<'t>(&self, bound: &Bound<'_, 't>, hidden: Var<'t>) -> Result<Var<'t>> {
        Ok(hidden.matmul(bound.var(&self.name("lm_head"))?)?)
    }
}

/// Last row of a hidden-state matrix, the readout position.
pub fn terminal_hidden(hidden: Var<'_>) -> Result<Var<'_>> {
    let n = hidden.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::Input("terminal_hidden of an empty sequence".into()));
    }
    Ok(hidden.slice_rows(n - 1, n)?)
}
