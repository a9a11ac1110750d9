use serde::Serialize;

use crate::{DiscreteWorld, DraftMap, Result, TOL};

/// `p(y = 1 | x) = Σ_R g(R) p(R | x)`.
pub fn bayes_posterior(world: &DiscreteWorld, x: usize) -> f64 {
    world.p_r_given_x[x]
        .iter()
        .zip(&world.p_y_given_r)
        .map(|(p, g)| p * g)
        .sum()
}

pub fn bayes_posterior_named(world: &DiscreteWorld, x: &str) -> Result<f64> {
    Ok(bayes_posterior(world, world.index_of(x)?))
}

/// `p(R | S = s)`, marginalizing `p_X` over the draft cell of `s`. A cell of
/// zero probability mass falls back to the unweighted average of its rows;
/// an empty cell has no posterior.
pub fn posterior_given_draft(world: &DiscreteWorld, draft: &DraftMap, s: usize) -> Option<Vec<f64>> {
    let members: Vec<usize> = (0..world.n_x()).filter(|&x| draft.s_of[x] == s).collect();
    if members.is_empty() {
        return None;
    }
    let mass: f64 = members.iter().map(|&x| world.p_x[x]).sum();
    let mut out = vec![0.0; world.n_r()];
    for &x in &members {
        let w = if mass > 0.0 {
            world.p_x[x] / mass
        } else {
            1.0 / members.len() as f64
        };
        for (o, p) in out.iter_mut().zip(&world.p_r_given_x[x]) {
            *o += w * p;
        }
    }
    Some(out)
}

/// `p(y = 1 | S = s) = Σ_R g(R) p(R | s)`.
pub fn label_given_draft(world: &DiscreteWorld, draft: &DraftMap, s: usize) -> Option<f64> {
    posterior_given_draft(world, draft, s).map(|row| row.iter().zip(&world.p_y_given_r).map(|(p, g)| p * g).sum())
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficiencyReport {
    /// `max_x max_R |p(R|x) − p(R|s(x))|`
    pub premise_gap: f64,
    /// `max_x |p(y=1|x) − p(y=1|s(x))|`
    pub conclusion_gap: f64,
    pub tolerance: f64,
    pub premise_holds: bool,
    pub conclusion_holds: bool,
    /// Premise within tolerance while the conclusion is not.
    pub violation: bool,
}

pub fn check_sufficiency(world: &DiscreteWorld, draft: &DraftMap) -> Result<SufficiencyReport> {
    draft.check_total(world)?;
    let mut premise_gap: f64 = 0.0;
    let mut conclusion_gap: f64 = 0.0;
    for x in 0..world.n_x() {
        let s = draft.s_of[x];
        let post_s = posterior_given_draft(world, draft, s).expect("x is in its own cell");
        for (a, b) in world.p_r_given_x[x].iter().zip(&post_s) {
            premise_gap = premise_gap.max((a - b).abs());
        }
        let lhs = bayes_posterior(world, x);
        let rhs = label_given_draft(world, draft, s).expect("x is in its own cell");
        conclusion_gap = conclusion_gap.max((lhs - rhs).abs());
    }
    let premise_holds = premise_gap <= TOL;
    let conclusion_holds = conclusion_gap <= TOL;
    Ok(SufficiencyReport {
        premise_gap,
        conclusion_gap,
        tolerance: TOL,
        premise_holds,
        conclusion_holds,
        violation: premise_holds && !conclusion_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvRow {
    pub x: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvReport {
    pub rows: Vec<TvRow>,
    pub violations: usize,
    /// Index into `rows` with the smallest `rhs − lhs`.
    pub tightest: usize,
    /// Index into `rows` with the largest `rhs − lhs`.
    pub loosest: usize,
}

/// Checks `|p(y=1|x) − p(y=1|s(x))| ≤ TV(p(R|x), p(R|s(x)))` for every `x`.
pub fn tv_bound_check(world: &DiscreteWorld, draft: &DraftMap) -> Result<TvReport> {
    draft.check_total(world)?;
    let rows: Vec<TvRow> = (0..world.n_x())
        .map(|x| {
            let s = draft.s_of[x];
            let post_s = posterior_given_draft(world, draft, s).expect("x is in its own cell");
            let lhs = (bayes_posterior(world, x) - label_given_draft(world, draft, s).expect("non-empty")).abs();
            let rhs = total_variation(&world.p_r_given_x[x], &post_s);
            TvRow { x, lhs, rhs }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.lhs > r.rhs + TOL).count();
    let slack = |r: &TvRow| r.rhs - r.lhs;
    let tightest = (0..rows.len())
        .min_by(|&a, &b| slack(&rows[a]).total_cmp(&slack(&rows[b])))
        .unwrap_or(0);
    let loosest = (0..rows.len())
        .max_by(|&a, &b| slack(&rows[a]).total_cmp(&slack(&rows[b])))
        .unwrap_or(0);
    Ok(TvReport {
        rows,
        violations,
        tightest,
        loosest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRow {
    pub x: usize,
    pub p_y_given_x: f64,
    pub p_y_given_s_x: f64,
    pub p_y_given_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub rows: Vec<ChainRow>,
    /// `max_x |p(y|x) − p(y|s(x))|`
    pub max_gap: f64,
    /// `p(y|S,X) = p(y|X)` held for every `x`.
    pub conditioning_identity: bool,
}

/// `p(y|X)`, `p(y|S,X)` and `p(y|S)` per state. `p(y|S,X)` is computed from
/// the joint over `(x, s, y)`; since `S` is a function of `X` it must equal
/// `p(y|X)`.
pub fn approximation_chain_report(world: &DiscreteWorld, draft: &DraftMap) -> Result<ChainReport> {
    draft.check_total(world)?;
    let mut rows = Vec::with_capacity(world.n_x());
    let mut max_gap: f64 = 0.0;
    let mut identity = true;
    for x in 0..world.n_x() {
        let s = draft.s_of[x];
        let p_y_x = bayes_posterior(world, x);
        // joint mass of (x, s, y) over all x' with s(x') = s, restricted to x' = x
        let mut joint = [0.0; 2];
        for xp in (0..world.n_x()).filter(|&xp| xp == x && draft.s_of[xp] == s) {
            let q = bayes_posterior(world, xp);
            joint[1] += world.p_x[xp] * q;
            joint[0] += world.p_x[xp] * (1.0 - q);
        }
        let total = joint[0] + joint[1];
        let p_y_sx = if total > 0.0 { joint[1] / total } else { p_y_x };
        let p_y_s = label_given_draft(world, draft, s).expect("non-empty");
        identity &= (p_y_sx - p_y_x).abs() <= TOL;
        max_gap = max_gap.max((p_y_x - p_y_s).abs());
        rows.push(ChainRow {
            x,
            p_y_given_x: p_y_x,
            p_y_given_s_x: p_y_sx,
            p_y_given_s: p_y_s,
        });
    }
    Ok(ChainReport {
        rows,
        max_gap,
        conditioning_identity: identity,
    })
}
