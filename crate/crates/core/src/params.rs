//! Named parameter storage shared by every trainable and frozen component.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{Gradients, Tape, Var};
use crate::{Error, Result, Tensor};

/// Ownership group of a parameter. Training modes decide trainability per
/// group, and the freeze contract is checked per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    ReasonerBase,
    ExtractorBase,
    ReasonerAdapter,
    ExtractorAdapter,
    Queries,
    ProjectorToExtractor,
    ProjectorToReasoner,
    Head,
    DecisionToken,
}

impl Group {
    pub const ALL: [Group; 9] = [
        Group::ReasonerBase,
        Group::ExtractorBase,
        Group::ReasonerAdapter,
        Group::ExtractorAdapter,
        Group::Queries,
        Group::ProjectorToExtractor,
        Group::ProjectorToReasoner,
        Group::Head,
        Group::DecisionToken,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::ReasonerBase => "reasoner_base",
            Group::ExtractorBase => "extractor_base",
            Group::ReasonerAdapter => "reasoner_adapter",
            Group::ExtractorAdapter => "extractor_adapter",
            Group::Queries => "queries",
            Group::ProjectorToExtractor => "projector_to_extractor",
            Group::ProjectorToReasoner => "projector_to_reasoner",
            Group::Head => "head",
            Group::DecisionToken => "decision_token",
        }
    }

    /// Extractor-side parameters (adapter, draft queries, both projectors).
    pub fn is_extractor_side(self) -> bool {
        matches!(
            self,
            Group::ExtractorAdapter
                | Group::Queries
                | Group::ProjectorToExtractor
                | Group::ProjectorToReasoner
        )
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Usage(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param { name, group, value });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].value)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].value),
            None => Err(Error::Usage(format!("unknown parameter {name}"))),
        }
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Usage(format!(
                "shape mismatch replacing {name}: {:?} vs {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn group_size(&self, group: Group) -> usize {
        self.entries
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// Copies every entry of `other` whose name starts with `from` into this
    /// store under the prefix `to` and the given group.
    pub fn import_prefixed(&mut self, other: &ParamStore, from: &str, to: &str, group: Group) -> Result<()> {
        for p in other.entries.iter().filter(|p| p.name.starts_with(from)) {
            let name = format!("{to}{}", &p.name[from.len()..]);
            self.insert(name, group, p.value.clone())?;
        }
        Ok(())
    }

    /// SHA-256 over the names, shapes and raw bits of one group, in storage
    /// order. Equal checksums mean bitwise-equal parameters.
    pub fn checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for p in self.entries.iter().filter(|p| p.group == group) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn checksums(&self) -> Vec<(Group, String)> {
        Group::ALL.iter().map(|&g| (g, self.checksum(g))).collect()
    }

    /// Lazily registers parameters on `tape` as they are requested. Groups
    /// for which `trainable` is true become gradient-tracking leaves.
    pub fn bind<'s, 't, F>(&'s self, tape: &'t Tape, trainable: F) -> Bound<'s, 't>
    where
        F: Fn(Group) -> bool + 's,
    {
        Bound {
            store: self,
            tape,
            trainable: Box::new(trainable),
            vars: RefCell::new(vec![None; self.entries.len()]),
        }
    }
}

/// Parameters of a [`ParamStore`] registered on one tape.
pub struct Bound<'s, 't> {
    store: &'s ParamStore,
    tape: &'t Tape,
    trainable: Box<dyn Fn(Group) -> bool + 's>,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'s, 't> Bound<'s, 't> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        let &i = self
            .store
            .index
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name}")))?;
        let mut vars = self.vars.borrow_mut();
        if let Some(v) = vars[i] {
            return Ok(v);
        }
        let p = &self.store.entries[i];
        let v = self.tape.leaf(p.value.clone(), (self.trainable)(p.group));
        vars[i] = Some(v);
        Ok(v)
    }

    /// Gradients of every bound trainable parameter, aligned with the store
    /// entries. Unbound or frozen entries are `None`.
    pub fn collect_grads(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.vars
            .borrow()
            .iter()
            .map(|v| v.and_then(|v| grads.take(v)))
            .collect()
    }
}
