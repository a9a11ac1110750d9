use std::collections::HashMap;
use std::path::Path;

use serde_json::{json, Value};

use super::{ReadoutHead, TrainConfig, HEAD_B, HEAD_W};
use crate::backbone::{
    pretrain, terminal_hidden, AdapterSet, AttentionMask, Backbone, BackboneConfig, PretrainConfig, Role,
};
use crate::latent::{
    assemble, explicit_summarize, extract_draft, project_to_extractor, project_to_reasoner, DraftQueries,
    Insertion, ProjectorPair, DEC_EMBEDDING, DRAFT_QUERIES, PROJ_TO_EXTRACTOR, PROJ_TO_REASONER,
};
use crate::numerics::{Tape, Var};
use crate::params::{Bound, Group, ParamStore};
use crate::trajgen::{vocab, TrajectoryExample};
use crate::{checkpoint, derive_seed, parallel, rng_from_seed, Error, Result, Tensor};

pub const BASE_PREFIX: &str = "base";
pub const REASONER_PREFIX: &str = "reasoner";
pub const EXTRACTOR_PREFIX: &str = "extractor";

const INIT_SALT: u64 = 0x1417;
const EXTRACTOR_PRETRAIN_SALT: u64 = 0xe7;

/// Pretrains the frozen base weights. When both configs agree the two
/// instances are independent copies of one pretraining run; otherwise each
/// is pretrained separately on the same corpus.
pub fn build_bases(
    reasoner_cfg: &BackboneConfig,
    extractor_cfg: &BackboneConfig,
    corpus: &[Vec<usize>],
    pcfg: &PretrainConfig,
) -> Result<(ParamStore, Vec<f64>)> {
    let run = |cfg: &BackboneConfig, seed: u64| -> Result<(ParamStore, Vec<f64>)> {
        let mut store = ParamStore::new();
        let bb = Backbone::new(cfg.clone(), BASE_PREFIX, Group::ReasonerBase);
        bb.init(&mut store, &mut rng_from_seed(seed))?;
        let curve = pretrain(&mut store, &bb, corpus, &PretrainConfig { seed, ..pcfg.clone() })?;
        Ok((store, curve))
    };
    let from = format!("{BASE_PREFIX}.");
    let mut bases = ParamStore::new();
    let (reasoner_store, curve) = run(reasoner_cfg, pcfg.seed)?;
    bases.import_prefixed(&reasoner_store, &from, &format!("{REASONER_PREFIX}."), Group::ReasonerBase)?;
    if reasoner_cfg == extractor_cfg {
        bases.import_prefixed(&reasoner_store, &from, &format!("{EXTRACTOR_PREFIX}."), Group::ExtractorBase)?;
    } else {
        let (ext, _) = run(extractor_cfg, derive_seed(pcfg.seed, EXTRACTOR_PRETRAIN_SALT))?;
        bases.import_prefixed(&ext, &from, &format!("{EXTRACTOR_PREFIX}."), Group::ExtractorBase)?;
    }
    Ok((bases, curve))
}

/// Unsafe-probability readout `σ(wᵀ h_end + b)` over the reasoner pass on
/// `y`. Returns the `1×1` probability node.
pub fn readout_prob<'t>(
    bound: &Bound<'_, 't>,
    reasoner: &Backbone,
    y: Var<'t>,
    adapters: &AdapterSet,
) -> Result<Var<'t>> {
    Ok(readout_logit(bound, reasoner, y, adapters)?.sigmoid())
}

pub fn readout_logit<'t>(
    bound: &Bound<'_, 't>,
    reasoner: &Backbone,
    y: Var<'t>,
    adapters: &AdapterSet,
) -> Result<Var<'t>> {
    let h_end = reasoner_terminal(bound, reasoner, y, adapters)?;
    Ok(h_end.matmul(bound.var(HEAD_W)?)?.add(bound.var(HEAD_B)?)?)
}

fn reasoner_terminal<'t>(
    bound: &Bound<'_, 't>,
    reasoner: &Backbone,
    y: Var<'t>,
    adapters: &AdapterSet,
) -> Result<Var<'t>> {
    if adapters.role != Role::Reasoner {
        return Err(Error::Usage(format!(
            "readout needs a reasoner adapter, got {:?}",
            adapters.role
        )));
    }
    let n = y.shape()[0];
    let h = reasoner.forward(bound, y, Some(adapters), &AttentionMask::causal(n))?;
    terminal_hidden(h)
}

/// A complete judge: both backbone instances, both adapter sets, the draft
/// workspace parameters and the readout, all in one store.
#[derive(Debug, Clone)]
pub struct DraftModel {
    pub config: TrainConfig,
    pub reasoner: Backbone,
    pub extractor: Backbone,
    pub reasoner_adapters: AdapterSet,
    pub extractor_adapters: AdapterSet,
    pub store: ParamStore,
    summaries: HashMap<Vec<usize>, Vec<usize>>,
}

impl DraftModel {
    fn skeleton(
        store: ParamStore,
        reasoner_cfg: BackboneConfig,
        extractor_cfg: BackboneConfig,
        config: TrainConfig,
    ) -> Self {
        let reasoner_adapters = AdapterSet::new(
            Role::Reasoner,
            "adapter.reasoner",
            &reasoner_cfg,
            config.adapter_rank,
            config.adapter_alpha,
        );
        let extractor_adapters = AdapterSet::new(
            Role::Extractor,
            "adapter.extractor",
            &extractor_cfg,
            config.adapter_rank,
            config.adapter_alpha,
        );
        Self {
            reasoner: Backbone::new(reasoner_cfg, REASONER_PREFIX, Group::ReasonerBase).frozen(),
            extractor: Backbone::new(extractor_cfg, EXTRACTOR_PREFIX, Group::ExtractorBase).frozen(),
            reasoner_adapters,
            extractor_adapters,
            store,
            config,
            summaries: HashMap::new(),
        }
    }

    /// Copies the base weights from `bases` and freshly initializes every
    /// other parameter from `config.seed`.
    pub fn new(
        bases: &ParamStore,
        reasoner_cfg: BackboneConfig,
        extractor_cfg: BackboneConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        reasoner_cfg.validate()?;
        extractor_cfg.validate()?;
        let mut store = ParamStore::new();
        for p in bases.entries() {
            if matches!(p.group, Group::ReasonerBase | Group::ExtractorBase) {
                store.insert(p.name.clone(), p.group, p.value.clone())?;
            }
        }
        let mut model = Self::skeleton(store, reasoner_cfg, extractor_cfg, config);
        model.init_fresh()?;
        Ok(model)
    }

    fn init_fresh(&mut self) -> Result<()> {
        let mut rng = rng_from_seed(derive_seed(self.config.seed, INIT_SALT));
        let (rc, ec) = (self.reasoner.config.clone(), self.extractor.config.clone());
        self.reasoner_adapters.init(&rc, &mut self.store, &mut rng)?;
        self.extractor_adapters.init(&ec, &mut self.store, &mut rng)?;
        ProjectorPair {
            d_r: rc.d_model,
            d_w: ec.d_model,
        }
        .init(&mut self.store, &mut rng)?;
        DraftQueries {
            len: self.config.l_s,
            d_w: ec.d_model,
        }
        .init(&mut self.store, &mut rng)?;
        ReadoutHead { d_r: rc.d_model }.init(&mut self.store)?;
        let emb = self.store.get(&format!("{REASONER_PREFIX}.tok_emb"))?;
        let dec = emb.row(vocab::decision_token(rc.vocab_size)).to_vec();
        self.store
            .insert(DEC_EMBEDDING, Group::DecisionToken, Tensor::new(vec![1, rc.d_model], dec)?)?;
        Ok(())
    }

    pub fn trainable_groups(&self) -> Vec<Group> {
        self.config.mode.trainable_groups(self.config.insertion)
    }

    /// Binds the store on `tape`; with `grad` the mode's trainable groups
    /// become gradient leaves.
    pub fn bind<'s, 't>(&'s self, tape: &'t Tape, grad: bool) -> Bound<'s, 't> {
        let groups = if grad { self.trainable_groups() } else { Vec::new() };
        self.store.bind(tape, move |g| groups.contains(&g))
    }

    /// Latent draft `S` (`L_s × d_r`) for an embedded trajectory `P`.
    pub fn draft<'t>(&self, bound: &Bound<'_, 't>, p: Var<'t>) -> Result<Var<'t>> {
        let p_tilde = project_to_extractor(p, bound.var(PROJ_TO_EXTRACTOR)?)?;
        let s_w = extract_draft(
            bound,
            &self.extractor,
            p_tilde,
            bound.var(DRAFT_QUERIES)?,
            &self.extractor_adapters,
        )?;
        project_to_reasoner(s_w, bound.var(PROJ_TO_REASONER)?)
    }

    /// The reasoner input `Y` for this model's mode.
    pub fn reasoner_input<'t>(&self, bound: &Bound<'_, 't>, tokens: &[usize]) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Err(Error::Input("empty trajectory".into()));
        }
        if self.config.mode == super::Mode::ExplicitBaseline {
            let mut seq = tokens.to_vec();
            seq.extend(self.summary_for(tokens)?);
            return self.reasoner.embed(bound, &seq);
        }
        let p = self.reasoner.embed(bound, tokens)?;
        if !self.config.mode.uses_draft() {
            return Ok(p);
        }
        let s = self.draft(bound, p)?;
        let dec = match self.config.insertion {
            Insertion::PrefixDec => Some(bound.var(DEC_EMBEDDING)?),
            _ => None,
        };
        assemble(bound.tape(), p, s, self.config.insertion, dec)
    }

    pub fn logit<'t>(&self, bound: &Bound<'_, 't>, tokens: &[usize]) -> Result<Var<'t>> {
        let y = self.reasoner_input(bound, tokens)?;
        readout_logit(bound, &self.reasoner, y, &self.reasoner_adapters)
    }

    pub fn prob(&self, tokens: &[usize]) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let p = self.logit(&bound, tokens)?.sigmoid().item();
        Ok(p)
    }

    pub fn loss(&self, tokens: &[usize], label: u8) -> Result<f64> {
        Ok(super::bce_loss(self.prob(tokens)?, label))
    }

    /// Loss and store-aligned gradients of one example.
    pub fn loss_and_grads(&self, tokens: &[usize], label: u8) -> Result<(f64, Vec<Option<Tensor>>)> {
        let tape = Tape::new();
        let bound = self.bind(&tape, true);
        let loss = self.logit(&bound, tokens)?.sigmoid().bce(f64::from(label))?;
        let value = loss.item();
        let mut grads = tape.backward(loss)?;
        Ok((value, bound.collect_grads(&mut grads)))
    }

    /// Terminal reasoner hidden state `h_end` (length `d_r`).
    pub fn features(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let y = self.reasoner_input(&bound, tokens)?;
        let h = reasoner_terminal(&bound, &self.reasoner, y, &self.reasoner_adapters)?;
        let v = h.value().data().to_vec();
        Ok(v)
    }

    /// Greedy summary of `tokens` from the frozen summarizer, cached when
    /// prepared in advance.
    pub fn summary_for(&self, tokens: &[usize]) -> Result<Vec<usize>> {
        if let Some(s) = self.summaries.get(tokens) {
            return Ok(s.clone());
        }
        Ok(explicit_summarize(
            &self.store,
            &self.extractor,
            Some(&self.extractor_adapters),
            tokens,
            self.config.l_s,
        )?
        .tokens)
    }

    /// Decodes and caches summaries for every example not yet cached.
    pub fn prepare_summaries<'a>(&mut self, examples: impl Iterator<Item = &'a TrajectoryExample>) -> Result<()> {
        let mut todo: Vec<Vec<usize>> = Vec::new();
        for ex in examples {
            if !self.summaries.contains_key(&ex.tokens) && !todo.contains(&ex.tokens) {
                todo.push(ex.tokens.clone());
            }
        }
        let done = parallel::map_collect(&todo, |t| self.summary_for(t));
        for (t, s) in todo.into_iter().zip(done) {
            self.summaries.insert(t, s?);
        }
        Ok(())
    }

    /// Reuses summaries decoded by another model with the same summarizer.
    pub fn share_summaries(&mut self, other: &DraftModel) {
        if self.config.l_s == other.config.l_s {
            for (k, v) in &other.summaries {
                self.summaries.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
    }

    pub fn metadata(&self) -> Value {
        json!({
            "train": self.config,
            "reasoner": self.reasoner.config,
            "extractor": self.extractor.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.store, &self.metadata())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(path)?;
        Self::from_checkpoint(store, &meta)
    }

    pub fn from_checkpoint(store: ParamStore, meta: &Value) -> Result<Self> {
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Input(format!("checkpoint metadata has no {k:?}")))
        };
        let de = |e: serde_json::Error| Error::Input(format!("checkpoint metadata: {e}"));
        let config: TrainConfig = serde_json::from_value(field("train")?).map_err(de)?;
        let rc: BackboneConfig = serde_json::from_value(field("reasoner")?).map_err(de)?;
        let ec: BackboneConfig = serde_json::from_value(field("extractor")?).map_err(de)?;
        let model = Self::skeleton(store, rc, ec, config);
        for name in [HEAD_W, HEAD_B, DRAFT_QUERIES, PROJ_TO_EXTRACTOR, PROJ_TO_REASONER, DEC_EMBEDDING] {
            model.store.get(name)?;
        }
        Ok(model)
    }
}
