//! Latent draft workspace: cross-space projectors, the single-pass
//! extractor draft, splicing the draft into the reasoner input, and the
//! token-decoding summary baseline.

use serde::{Deserialize, Serialize};

use crate::backbone::{AdapterSet, AttentionMask, Backbone, Role};
use crate::numerics::{Tape, Var};
use crate::params::{Group, ParamStore};
use crate::{Error, NumericsError, Result, Rng, Tensor};

pub const PROJ_TO_EXTRACTOR: &str = "proj.r2w";
pub const PROJ_TO_REASONER: &str = "proj.w2r";
pub const DRAFT_QUERIES: &str = "draft.queries";
pub const DEC_EMBEDDING: &str = "draft.dec";

/// The two linear bridges between reasoner width `d_r` and extractor
/// width `d_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectorPair {
    pub d_r: usize,
    pub d_w: usize,
}

impl ProjectorPair {
    /// Identity when the widths agree, scaled Gaussian otherwise.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let make = |rows: usize, cols: usize, rng: &mut Rng| {
            if rows == cols {
                Tensor::eye(rows)
            } else {
                Tensor::randn(&[rows, cols], 1.0 / (rows as f64).sqrt(), rng)
            }
        };
        store.insert(PROJ_TO_EXTRACTOR, Group::ProjectorToExtractor, make(self.d_r, self.d_w, rng))?;
        store.insert(PROJ_TO_REASONER, Group::ProjectorToReasoner, make(self.d_w, self.d_r, rng))?;
        Ok(())
    }
}

/// Learned query rows appended after the projected trajectory; their
/// last-layer states become the draft.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DraftQueries {
    pub len: usize,
    pub d_w: usize,
}

impl DraftQueries {
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        if self.len == 0 {
            return Err(Error::Config("draft length must be at least 1".into()));
        }
        store.insert(DRAFT_QUERIES, Group::Queries, Tensor::randn(&[self.len, self.d_w], 1.0, rng))
    }
}

/// Where the draft goes in the reasoner input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insertion {
    /// `[P; S]`
    Tail,
    /// `[P[..L/2]; S; P[L/2..]]`
    Middle,
    /// `[S; P]`
    Head,
    /// `[P; S; DEC]`
    PrefixDec,
}

impl Insertion {
    pub fn sequence_len(self, l: usize, l_s: usize) -> usize {
        match self {
            Insertion::PrefixDec => l + l_s + 1,
            _ => l + l_s,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Insertion::Tail => "tail",
            Insertion::Middle => "middle",
            Insertion::Head => "head",
            Insertion::PrefixDec => "prefix_dec",
        }
    }
}

fn check_cols(op: &'static str, x: Var<'_>, w: Var<'_>) -> Result<()> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(NumericsError::Shape {
            op,
            left: xs,
            right: ws,
        }
        .into());
    }
    Ok(())
}

/// `P̃ = P · W_r→w`
pub fn project_to_extractor<'t>(p: Var<'t>, w_r_to_w: Var<'t>) -> Result<Var<'t>> {
    check_cols("project_to_extractor", p, w_r_to_w)?;
    Ok(p.matmul(w_r_to_w)?)
}

/// `S = S^w · W_w→r`
pub fn project_to_reasoner<'t>(s_w: Var<'t>, w_w_to_r: Var<'t>) -> Result<Var<'t>> {
    check_cols("project_to_reasoner", s_w, w_w_to_r)?;
    Ok(s_w.matmul(w_w_to_r)?)
}

/// One extractor pass over `[P̃; Q]`; returns the last-layer states of the
/// query rows (`L_s × d_w`).
pub fn extract_draft<'t>(
    bound: &crate::params::Bound<'_, 't>,
    extractor: &Backbone,
    p_tilde: Var<'t>,
    queries: Var<'t>,
    adapters: &AdapterSet,
) -> Result<Var<'t>> {
    if adapters.role != Role::Extractor {
        return Err(Error::Usage(format!(
            "extract_draft needs an extractor adapter, got {:?}",
            adapters.role
        )));
    }
    let l = p_tilde.shape()[0];
    let l_s = queries.shape()[0];
    if l + l_s > extractor.config.max_seq_len {
        return Err(Error::Input(format!(
            "trajectory {l} + draft {l_s} exceeds extractor max_seq_len {}",
            extractor.config.max_seq_len
        )));
    }
    let tape = bound.tape();
    let input = tape.concat_rows(&[p_tilde, queries])?;
    let hidden = extractor.forward(bound, input, Some(adapters), &AttentionMask::causal(l + l_s))?;
    Ok(hidden.slice_rows(l, l + l_s)?)
}

/// Splices the draft into the trajectory rows. `dec` is required for
/// [`Insertion::PrefixDec`] and ignored otherwise.
pub fn assemble<'t>(
    tape: &'t Tape,
    p: Var<'t>,
    s: Var<'t>,
    insertion: Insertion,
    dec: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let l = p.shape()[0];
    let parts = match insertion {
        Insertion::Tail => vec![p, s],
        Insertion::Head => vec![s, p],
        Insertion::Middle => {
            let split = l / 2;
            vec![p.slice_rows(0, split)?, s, p.slice_rows(split, l)?]
        }
        Insertion::PrefixDec => {
            let dec = dec.ok_or_else(|| {
                Error::Usage("prefix_dec insertion needs a decision-token row".into())
            })?;
            let d = dec.shape().iter().product::<usize>();
            let dec = if dec.shape().len() == 1 {
                // reshape a length-d vector into a 1×d row
                let row = tape.concat_rows(&[dec])?;
                debug_assert_eq!(row.shape(), vec![1, d]);
                row
            } else {
                dec
            };
            vec![p, s, dec]
        }
    };
    Ok(tape.concat_rows(&parts)?)
}

/// Greedily decoded summary tokens plus the number of sequential forward
/// passes the decode took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub tokens: Vec<usize>,
    pub forward_passes: usize,
}

/// Token-by-token greedy summary of `tokens` from the extractor's LM head.
/// Each new token costs one full forward pass; nothing here is
/// differentiable.
pub fn explicit_summarize(
    store: &ParamStore,
    extractor: &Backbone,
    adapters: Option<&AdapterSet>,
    tokens: &[usize],
    l_s: usize,
) -> Result<Summary> {
    if l_s == 0 {
        return Err(Error::Usage("summary length must be at least 1".into()));
    }
    let mut seq = tokens.to_vec();
    let mut out = Vec::with_capacity(l_s);
    let mut forward_passes = 0;
    for _ in 0..l_s {
        let tape = Tape::new();
        let bound = store.bind(&tape, |_| false);
        let x = extractor.embed(&bound, &seq)?;
        let h = extractor.forward(&bound, x, adapters, &AttentionMask::causal(seq.len()))?;
        forward_passes += 1;
        let last = crate::backbone::terminal_hidden(h)?;
        let logits = extractor.lm_logits(&bound, last)?;
        let next = argmax(logits.value().data());
        out.push(next);
        seq.push(next);
    }
    Ok(Summary {
        tokens: out,
        forward_passes,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
