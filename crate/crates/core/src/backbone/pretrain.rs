use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AttentionMask, Backbone};
use crate::numerics::Tape;
use crate::optim::{average_grads, Adam, AdamConfig};
use crate::params::ParamStore;
use crate::{parallel, rng_from_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 120,
            batch_size: 4,
            lr: 3e-3,
            seed: 7,
        }
    }
}

fn sequence_loss_grads(
    store: &ParamStore,
    backbone: &Backbone,
    tokens: &[usize],
) -> Result<(f64, Vec<Option<crate::Tensor>>)> {
    if tokens.len() < 2 {
        return Err(Error::Input("language-model step needs at least 2 tokens".into()));
    }
    let tape = Tape::new();
    let group = backbone.group;
    let bound = store.bind(&tape, move |g| g == group);
    let n = tokens.len() - 1;
    let x = backbone.embed(&bound, &tokens[..n])?;
    let h = backbone.forward(&bound, x, None, &AttentionMask::causal(n))?;
    let loss = backbone.lm_logits(&bound, h)?.cross_entropy(&tokens[1..])?;
    let value = loss.item();
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.collect_grads(&mut grads)))
}

/// One next-token cross-entropy step over `batch`; returns the mean loss
/// before the update.
pub fn lm_pretrain_step(
    store: &mut ParamStore,
    backbone: &Backbone,
    batch: &[Vec<usize>],
    adam: &mut Adam,
) -> Result<f64> {
    if backbone.frozen {
        return Err(Error::Usage(format!(
            "backbone {} is frozen; pretraining would modify it",
            backbone.prefix
        )));
    }
    if batch.is_empty() {
        return Err(Error::Usage("empty pretraining batch".into()));
    }
    let results = parallel::map_collect(batch, |seq| sequence_loss_grads(store, backbone, seq));
    let mut losses = Vec::with_capacity(results.len());
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        let (l, g) = r?;
        losses.push(l);
        grads.push(g);
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NanLoss {
            step: adam.steps_taken() as usize,
            batch: format!("{} sequences", batch.len()),
        });
    }
    adam.step(store, &average_grads(grads))?;
    Ok(mean)
}

/// Causal-LM pretraining over `corpus`; returns the per-step loss curve.
pub fn pretrain(
    store: &mut ParamStore,
    backbone: &Backbone,
    corpus: &[Vec<usize>],
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(cfg.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        store,
    );
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(corpus[order[cursor]].clone());
            cursor += 1;
        }
        curve.push(lm_pretrain_step(store, backbone, &batch, &mut adam)?);
    }
    Ok(curve)
}
