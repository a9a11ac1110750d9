use serde::{Deserialize, Serialize};

use crate::{bayes_posterior, DiscreteWorld, DraftMap, Result, TheoryError, TOL};

/// Reasoner readout mapping a draft state (and optionally the trajectory
/// state) to `P(y = 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Readout {
    /// `q[s]`
    OnDraft(Vec<f64>),
    /// `q[s][x]`
    OnDraftAndX(Vec<Vec<f64>>),
}

impl Readout {
    fn covers(&self, n_s: usize, n_x: usize) -> bool {
        match self {
            Readout::OnDraft(q) => q.len() >= n_s,
            Readout::OnDraftAndX(q) => q.len() >= n_s && q.iter().all(|r| r.len() >= n_x),
        }
    }

    pub fn predict(&self, s: usize, x: usize) -> f64 {
        match self {
            Readout::OnDraft(q) => q[s],
            Readout::OnDraftAndX(q) => q[s][x],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Cross-entropy with the prediction clamped to `[1e-12, 1 − 1e-12]`.
    Bce,
    /// `(q − y)²`
    Squared,
    /// Threshold 0.5, ties to 1.
    ZeroOne,
}

impl Loss {
    pub fn eval(self, q: f64, y: u8) -> f64 {
        let y = f64::from(y);
        match self {
            Loss::Bce => {
                let q = q.clamp(1e-12, 1.0 - 1e-12);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            }
            Loss::Squared => (q - y) * (q - y),
            Loss::ZeroOne => {
                let pred = if q >= 0.5 { 1.0 } else { 0.0 };
                f64::from(u8::from(pred != y))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClasses {
    pub phi: Vec<DraftMap>,
    pub h: Vec<Readout>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub phi: usize,
    pub h: usize,
    pub risk: f64,
    pub excess: f64,
    pub extraction_error: f64,
    pub readout_error: f64,
    /// `|excess − (extraction + readout)|`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub pairs: Vec<PairRow>,
    /// `R*(φ) = min_h R(h∘φ)` per extractor.
    pub best_per_phi: Vec<f64>,
    pub best_risk: f64,
    pub argmin: (usize, usize),
    pub max_residual: f64,
    pub identity_holds: bool,
}

/// Population risk of `x ↦ h(φ(x), x)`.
pub fn pair_risk(world: &DiscreteWorld, phi: &DraftMap, h: &Readout, loss: Loss) -> f64 {
    (0..world.n_x())
        .map(|x| {
            let q = h.predict(phi.s_of[x], x);
            let p1 = bayes_posterior(world, x);
            world.p_x[x] * (p1 * loss.eval(q, 1) + (1.0 - p1) * loss.eval(q, 0))
        })
        .sum()
}

/// Enumerates every `(φ, h)` pair and splits its excess risk over the best
/// pair into extraction and readout error.
pub fn risk_decomposition(world: &DiscreteWorld, classes: &HypothesisClasses, loss: Loss) -> Result<RiskReport> {
    if classes.phi.is_empty() || classes.h.is_empty() {
        return Err(TheoryError::Usage("both hypothesis classes must be non-empty".into()));
    }
    for (i, phi) in classes.phi.iter().enumerate() {
        phi.check_total(world)?;
        if let Some(j) = classes.h.iter().position(|h| !h.covers(phi.n_s, world.n_x())) {
            return Err(TheoryError::Usage(format!(
                "readout {j} does not cover the {} draft states of extractor {i}",
                phi.n_s
            )));
        }
    }
    let risks: Vec<Vec<f64>> = classes
        .phi
        .iter()
        .map(|phi| classes.h.iter().map(|h| pair_risk(world, phi, h, loss)).collect())
        .collect();
    let best_per_phi: Vec<f64> = risks
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let best_risk = best_per_phi.iter().copied().fold(f64::INFINITY, f64::min);
    let mut argmin = (0, 0);
    let mut pairs = Vec::with_capacity(classes.phi.len() * classes.h.len());
    let mut max_residual: f64 = 0.0;
    for (i, row) in risks.iter().enumerate() {
        for (j, &risk) in row.iter().enumerate() {
            if risk < risks[argmin.0][argmin.1] {
                argmin = (i, j);
            }
            let excess = risk - best_risk;
            let extraction_error = best_per_phi[i] - best_risk;
            let readout_error = risk - best_per_phi[i];
            let residual = (excess - (extraction_error + readout_error)).abs();
            max_residual = max_residual.max(residual);
            pairs.push(PairRow {
                phi: i,
                h: j,
                risk,
                excess,
                extraction_error,
                readout_error,
                residual,
            });
        }
    }
    Ok(RiskReport {
        pairs,
        best_per_phi,
        best_risk,
        argmin,
        max_residual,
        identity_holds: max_residual <= TOL,
    })
}
