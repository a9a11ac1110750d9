use serde::Serialize;

use crate::{bayes_posterior, DiscreteWorld, DraftMap, Result, TheoryError};

/// Worlds with at most this many X states are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IbSearch {
    Exhaustive,
    /// Agglomerative merging; the reported `I(S;y)` is a lower bound on the
    /// best partition.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IbPoint {
    pub capacity: usize,
    /// Bits. `S` is a function of `X`, so this is `H(S)`.
    pub i_sx: f64,
    /// Bits.
    pub i_sy: f64,
    pub accuracy: f64,
    pub draft: DraftMap,
    pub search: IbSearch,
}

fn h2(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Joint `p(s, y)` induced by a draft, `[s][y]`.
fn joint_sy(world: &DiscreteWorld, post: &[f64], draft: &DraftMap) -> Vec<[f64; 2]> {
    let mut j = vec![[0.0; 2]; draft.n_s];
    for x in 0..world.n_x() {
        let s = draft.s_of[x];
        j[s][1] += world.p_x[x] * post[x];
        j[s][0] += world.p_x[x] * (1.0 - post[x]);
    }
    j
}

struct Scores {
    i_sx: f64,
    i_sy: f64,
    accuracy: f64,
}

fn scores(world: &DiscreteWorld, post: &[f64], draft: &DraftMap) -> Scores {
    let j = joint_sy(world, post, draft);
    let py1: f64 = j.iter().map(|c| c[1]).sum();
    let hy = h2(py1) + h2(1.0 - py1);
    let mut hs = 0.0;
    let mut hsy = 0.0;
    let mut accuracy = 0.0;
    for c in &j {
        hs += h2(c[0] + c[1]);
        hsy += h2(c[0]) + h2(c[1]);
        accuracy += c[0].max(c[1]);
    }
    // I(S;y) = H(S) + H(y) − H(S,y), clamped against rounding below zero
    Scores {
        i_sx: hs.max(0.0),
        i_sy: (hs + hy - hsy).max(0.0),
        accuracy,
    }
}

pub fn mutual_information_sx(world: &DiscreteWorld, draft: &DraftMap) -> Result<f64> {
    draft.check_total(world)?;
    let post: Vec<f64> = (0..world.n_x()).map(|x| bayes_posterior(world, x)).collect();
    Ok(scores(world, &post, draft).i_sx)
}

pub fn mutual_information_sy(world: &DiscreteWorld, draft: &DraftMap) -> Result<f64> {
    draft.check_total(world)?;
    let post: Vec<f64> = (0..world.n_x()).map(|x| bayes_posterior(world, x)).collect();
    Ok(scores(world, &post, draft).i_sy)
}

#[derive(Clone)]
struct Best {
    objective: f64,
    i_sx: f64,
    i_sy: f64,
    accuracy: f64,
    draft: DraftMap,
}

impl Best {
    fn better_than(&self, other: &Option<Best>) -> bool {
        match other {
            None => true,
            Some(o) => self.objective > o.objective || (self.objective == o.objective && self.i_sx < o.i_sx),
        }
    }
}

fn evaluate(world: &DiscreteWorld, post: &[f64], draft: DraftMap, beta: f64) -> Best {
    let sc = scores(world, post, &draft);
    Best {
        objective: sc.i_sy - beta * sc.i_sx,
        i_sx: sc.i_sx,
        i_sy: sc.i_sy,
        accuracy: sc.accuracy,
        draft,
    }
}

/// Best partition per exact block count, by restricted-growth enumeration.
fn exhaustive(world: &DiscreteWorld, post: &[f64], beta: f64) -> Vec<Option<Best>> {
    let n = world.n_x();
    let mut best: Vec<Option<Best>> = vec![None; n + 1];
    let mut rgs = vec![0usize; n];
    fn rec(
        i: usize,
        blocks: usize,
        rgs: &mut Vec<usize>,
        world: &DiscreteWorld,
        post: &[f64],
        beta: f64,
        best: &mut Vec<Option<Best>>,
    ) {
        if i == rgs.len() {
            let cand = evaluate(world, post, DraftMap { s_of: rgs.clone(), n_s: blocks }, beta);
            if cand.better_than(&best[blocks]) {
                best[blocks] = Some(cand);
            }
            return;
        }
        for b in 0..=blocks {
            rgs[i] = b;
            rec(i + 1, blocks.max(b + 1), rgs, world, post, beta, best);
        }
    }
    if n > 0 {
        rgs[0] = 0;
        rec(1, 1, &mut rgs, world, post, beta, &mut best);
    }
    best
}

/// Greedy agglomeration from the identity partition down to one cell; entry
/// `k` holds the partition with `k` cells along the merge path.
fn greedy(world: &DiscreteWorld, post: &[f64], beta: f64) -> Vec<Option<Best>> {
    let n = world.n_x();
    let mut best: Vec<Option<Best>> = vec![None; n + 1];
    let mut cur = DraftMap::identity(n);
    best[n] = Some(evaluate(world, post, cur.clone(), beta));
    for k in (1..n).rev() {
        let mut choice: Option<Best> = None;
        for a in 0..=k {
            for b in (a + 1)..=k {
                // merge cell b into a, then renumber cells above b down by one
                let s_of = cur
                    .s_of
                    .iter()
                    .map(|&s| match s {
                        s if s == b => a,
                        s if s > b => s - 1,
                        s => s,
                    })
                    .collect();
                let cand = evaluate(world, post, DraftMap { s_of, n_s: k }, beta);
                if cand.better_than(&choice) {
                    choice = Some(cand);
                }
            }
        }
        let chosen = choice.expect("at least one merge");
        cur = chosen.draft.clone();
        best[k] = Some(chosen);
    }
    best
}

/// For each capacity `k`, the draft with at most `k` states maximizing
/// `I(S;y) − β·I(S;X)` (ties to the smaller `I(S;X)`), with its exact
/// informations and Bayes accuracy.
pub fn ib_sweep(world: &DiscreteWorld, capacities: &[usize], beta: f64) -> Result<Vec<IbPoint>> {
    if capacities.iter().any(|&k| k < 1) {
        return Err(TheoryError::Config("capacities must be at least 1".into()));
    }
    if capacities.windows(2).any(|w| w[0] > w[1]) {
        return Err(TheoryError::Config("capacities must be sorted ascending".into()));
    }
    let post: Vec<f64> = (0..world.n_x()).map(|x| bayes_posterior(world, x)).collect();
    let (per_count, search) = if world.n_x() <= EXHAUSTIVE_LIMIT {
        (exhaustive(world, &post, beta), IbSearch::Exhaustive)
    } else {
        (greedy(world, &post, beta), IbSearch::Greedy)
    };
    let mut out = Vec::with_capacity(capacities.len());
    for &k in capacities {
        let mut chosen: Option<Best> = None;
        for b in per_count.iter().take(k.min(world.n_x()) + 1).flatten() {
            if b.better_than(&chosen) {
                chosen = Some(b.clone());
            }
        }
        let b = chosen.expect("the one-cell partition always exists");
        out.push(IbPoint {
            capacity: k,
            i_sx: b.i_sx,
            i_sy: b.i_sy,
            accuracy: b.accuracy,
            draft: b.draft,
            search,
        });
    }
    Ok(out)
}
