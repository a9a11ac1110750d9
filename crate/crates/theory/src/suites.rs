//! Randomized verification suites over generated worlds. Each suite counts
//! individual checks and violations; a clean run has zero violations.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    approximation_chain_report, check_sufficiency, ib_sweep, mutual_information_sy, risk_decomposition,
    tv_bound_check, DiscreteWorld, DraftMap, HypothesisClasses, Loss, Readout, TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub sufficiency_worlds: usize,
    pub tv_triples: usize,
    pub decomposition_worlds: usize,
    pub ib_worlds: usize,
    pub chain_worlds: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            sufficiency_worlds: 200,
            tv_triples: 10_000,
            decomposition_worlds: 60,
            ib_worlds: 24,
            chain_worlds: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    /// Largest observed gap for the suite's identity (0 when not
    /// applicable).
    pub max_gap: f64,
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.checks > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub config: SuiteConfig,
    pub suites: Vec<SuiteResult>,
}

impl TheoryReport {
    pub fn total_violations(&self) -> usize {
        self.suites.iter().map(|s| s.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

pub fn run_all(cfg: &SuiteConfig) -> TheoryReport {
    TheoryReport {
        config: cfg.clone(),
        suites: vec![
            sufficiency_suite(cfg.seed, cfg.sufficiency_worlds),
            tv_suite(cfg.seed.wrapping_add(1), cfg.tv_triples),
            decomposition_suite(cfg.seed.wrapping_add(2), cfg.decomposition_worlds),
            ib_suite(cfg.seed.wrapping_add(3), cfg.ib_worlds),
            chain_suite(cfg.seed.wrapping_add(4), cfg.chain_worlds),
        ],
    }
}

/// A world whose X states share posterior rows in groups, plus the draft
/// that merges exactly those groups.
pub fn grouped_world<R: Rng + ?Sized>(rng: &mut R, n_x: usize, n_r: usize, n_groups: usize) -> (DiscreteWorld, DraftMap) {
    let base = DiscreteWorld::random(rng, n_groups, n_r);
    let assign: Vec<usize> = (0..n_x)
        .map(|x| if x < n_groups { x } else { rng.random_range(0..n_groups) })
        .collect();
    // a random simplex over X, borrowed from a one-state world's posterior row
    let marg = DiscreteWorld::random(rng, 1, n_x).p_r_given_x.remove(0);
    let rows = assign.iter().map(|&g| base.p_r_given_x[g].clone()).collect();
    let world = DiscreteWorld::from_tables(marg, rows, base.p_y_given_r.clone()).expect("valid by construction");
    (world, DraftMap { s_of: assign, n_s: n_groups })
}

pub fn sufficiency_suite(seed: u64, worlds: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut violations, mut premise_instances) = (0, 0, 0);
    let mut max_gap: f64 = 0.0;
    for _ in 0..worlds {
        let n_x = rng.random_range(3..=9);
        let n_r = rng.random_range(2..=5);
        let groups = rng.random_range(1..=n_x);
        let (world, respecting) = grouped_world(&mut rng, n_x, n_r, groups);
        let n_s = rng.random_range(1..=n_x);
        let arbitrary = DraftMap::random(&mut rng, n_x, n_s);
        for draft in [respecting, arbitrary] {
            let r = check_sufficiency(&world, &draft).expect("draft is total");
            checks += 1;
            if r.premise_holds {
                premise_instances += 1;
                max_gap = max_gap.max(r.conclusion_gap);
            }
            violations += usize::from(r.violation);
        }
    }
    SuiteResult {
        name: "posterior_sufficiency".into(),
        checks,
        violations,
        max_gap,
        detail: format!("{worlds} worlds, {premise_instances} drafts satisfying the premise"),
    }
}

pub fn tv_suite(seed: u64, triples: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut violations, mut worlds) = (0, 0, 0);
    let mut tightest = f64::INFINITY;
    while checks < triples {
        let n_x = rng.random_range(2..=8);
        let n_r = rng.random_range(2..=6);
        let world = DiscreteWorld::random(&mut rng, n_x, n_r);
        let n_s = rng.random_range(1..=n_x);
        let draft = DraftMap::random(&mut rng, n_x, n_s);
        let r = tv_bound_check(&world, &draft).expect("draft is total");
        worlds += 1;
        checks += r.rows.len();
        violations += r.violations;
        for row in &r.rows {
            tightest = tightest.min(row.rhs - row.lhs);
        }
    }
    SuiteResult {
        name: "tv_mismatch_bound".into(),
        checks,
        violations,
        max_gap: 0.0,
        detail: format!("{worlds} worlds; smallest slack {tightest:.3e}"),
    }
}

fn random_readout<R: Rng + ?Sized>(rng: &mut R, n_s: usize, n_x: usize) -> Readout {
    if rng.random_bool(0.5) {
        Readout::OnDraft((0..n_s).map(|_| rng.random::<f64>()).collect())
    } else {
        Readout::OnDraftAndX((0..n_s).map(|_| (0..n_x).map(|_| rng.random::<f64>()).collect()).collect())
    }
}

pub fn decomposition_suite(seed: u64, worlds: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut violations) = (0, 0);
    let mut max_gap: f64 = 0.0;
    for _ in 0..worlds {
        let n_x = rng.random_range(2..=6);
        let n_r = rng.random_range(2..=4);
        let world = DiscreteWorld::random(&mut rng, n_x, n_r);
        let n_s = rng.random_range(1..=n_x);
        let classes = HypothesisClasses {
            phi: (0..rng.random_range(1..=4)).map(|_| DraftMap::random(&mut rng, n_x, n_s)).collect(),
            h: (0..rng.random_range(1..=5)).map(|_| random_readout(&mut rng, n_s, n_x)).collect(),
        };
        for loss in [Loss::Bce, Loss::Squared, Loss::ZeroOne] {
            let r = risk_decomposition(&world, &classes, loss).expect("classes cover the drafts");
            checks += r.pairs.len();
            violations += r.pairs.iter().filter(|p| p.residual > TOL).count();
            max_gap = max_gap.max(r.max_residual);
        }
    }
    SuiteResult {
        name: "excess_risk_decomposition".into(),
        checks,
        violations,
        max_gap,
        detail: format!("{worlds} worlds x 3 losses"),
    }
}

pub fn ib_suite(seed: u64, worlds: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut violations) = (0, 0);
    let mut max_gap: f64 = 0.0;
    for _ in 0..worlds {
        let n_x = rng.random_range(2..=8);
        let n_r = rng.random_range(2..=4);
        let world = DiscreteWorld::random(&mut rng, n_x, n_r);
        let caps: Vec<usize> = (1..=n_x + 1).collect();
        let curve = ib_sweep(&world, &caps, 0.0).expect("valid capacities");
        let prior = world.prior();
        let full = mutual_information_sy(&world, &DraftMap::identity(n_x)).expect("total");
        let hy = -(prior * prior.log2() + (1.0 - prior) * (1.0 - prior).log2());
        let hy = if hy.is_nan() { 0.0 } else { hy };
        let mut bad = 0;
        // monotone in capacity
        bad += curve.windows(2).filter(|w| w[1].i_sy + TOL < w[0].i_sy).count();
        // constant draft at capacity 1
        let c1 = &curve[0];
        bad += usize::from(c1.i_sx.abs() > TOL || c1.i_sy.abs() > TOL);
        bad += usize::from((c1.accuracy - prior.max(1.0 - prior)).abs() > TOL);
        // no compression at capacity ≥ |X|
        for p in curve.iter().filter(|p| p.capacity >= n_x) {
            let gap = (p.i_sy - full).abs();
            max_gap = max_gap.max(gap);
            bad += usize::from(gap > TOL);
        }
        // entropy bound
        bad += curve.iter().filter(|p| p.i_sy > hy + TOL || hy > 1.0 + TOL).count();
        checks += curve.len() + 3;
        violations += bad;
    }
    SuiteResult {
        name: "information_bottleneck_sweep".into(),
        checks,
        violations,
        max_gap,
        detail: format!("{worlds} worlds, exhaustive partition search"),
    }
}

pub fn chain_suite(seed: u64, worlds: usize) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checks, mut violations) = (0, 0);
    let mut max_gap: f64 = 0.0;
    for _ in 0..worlds {
        let n_x = rng.random_range(2..=8);
        let n_r = rng.random_range(2..=5);
        let world = DiscreteWorld::random(&mut rng, n_x, n_r);
        let n_s = rng.random_range(1..=n_x);
        let draft = DraftMap::random(&mut rng, n_x, n_s);
        let chain = approximation_chain_report(&world, &draft).expect("total");
        let tv = tv_bound_check(&world, &draft).expect("total");
        for (c, t) in chain.rows.iter().zip(&tv.rows) {
            let gap = ((c.p_y_given_x - c.p_y_given_s).abs() - t.lhs).abs();
            max_gap = max_gap.max(gap);
            checks += 2;
            violations += usize::from(gap > TOL);
            violations += usize::from((c.p_y_given_s_x - c.p_y_given_x).abs() > TOL);
        }
    }
    SuiteResult {
        name: "approximation_chain".into(),
        checks,
        violations,
        max_gap,
        detail: format!("{worlds} worlds; p(y|S,X) = p(y|X) and chain gap = bound lhs"),
    }
}
