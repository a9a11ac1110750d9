use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{vocab, Meta, TrajectoryExample};
use crate::{derive_seed, rng_from_seed, Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Uniform,
    Markov,
}

/// Parameters of a synthetic trajectory corpus.
///
/// Unsafe trajectories contain a risk pattern; with `order_dependent` the
/// pattern is split in two halves and only the first-half-then-second-half
/// order is risky. Safe trajectories may carry a near miss (the halves in
/// reversed order, or a lone half).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_risk_patterns: usize,
    pub risk_pattern_len: usize,
    pub risk_density: f64,
    pub order_dependent: bool,
    pub noise_model: NoiseModel,
    /// Spread of the transition logits; larger means more predictable text.
    pub markov_sharpness: f64,
    pub distractor_rate: f64,
    pub unsafe_ratio: f64,
    pub min_turn_len: usize,
    pub max_turn_len: usize,
    /// Keep pattern tokens out of the background so evidence is marked by
    /// token identity rather than by n-gram context.
    pub reserve_pattern_tokens: bool,
    /// Seed of the pattern table.
    pub pattern_seed: u64,
    /// Slot offset into the shuffled content vocabulary where pattern
    /// tokens start; shifting it yields a disjoint pattern family.
    pub pattern_offset: usize,
    pub noise_seed: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    /// The hard configuration: long trajectories, about 3% evidence,
    /// order-dependent two-part patterns and near-miss distractors.
    fn default() -> Self {
        Self {
            vocab_size: 64,
            seq_len: 256,
            n_risk_patterns: 4,
            risk_pattern_len: 6,
            risk_density: 0.03,
            order_dependent: true,
            noise_model: NoiseModel::Uniform,
            markov_sharpness: 2.0,
            distractor_rate: 0.3,
            unsafe_ratio: 0.5,
            min_turn_len: 12,
            max_turn_len: 28,
            reserve_pattern_tokens: true,
            pattern_seed: 1,
            pattern_offset: 0,
            noise_seed: 2,
            seed: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn content_vocab(&self) -> usize {
        self.vocab_size.saturating_sub(vocab::RESERVED)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.vocab_size <= vocab::RESERVED + 1 {
            return err(format!("vocab_size must exceed {}", vocab::RESERVED + 1));
        }
        if self.risk_pattern_len == 0 || (self.order_dependent && self.risk_pattern_len < 2) {
            return err("risk_pattern_len too small for the pattern layout".into());
        }
        let needed = self.pattern_offset + self.n_risk_patterns * self.risk_pattern_len;
        if self.n_risk_patterns == 0 || needed > self.content_vocab() {
            return err(format!(
                "{} patterns of length {} from offset {} do not fit {} content tokens",
                self.n_risk_patterns,
                self.risk_pattern_len,
                self.pattern_offset,
                self.content_vocab()
            ));
        }
        if self.reserve_pattern_tokens && self.n_risk_patterns * self.risk_pattern_len >= self.content_vocab() {
            return err("reserved pattern tokens leave no background vocabulary".into());
        }
        if !(self.risk_density > 0.0 && self.risk_density < 1.0) {
            return err(format!("risk_density {} outside (0,1)", self.risk_density));
        }
        if self.risk_density * (self.seq_len as f64) < self.risk_pattern_len as f64 {
            return err(format!(
                "risk_density {} x seq_len {} cannot hold a pattern of length {}",
                self.risk_density, self.seq_len, self.risk_pattern_len
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) || !(0.0..=1.0).contains(&self.unsafe_ratio) {
            return err("distractor_rate and unsafe_ratio must lie in [0,1]".into());
        }
        if self.min_turn_len < 2 || self.max_turn_len < self.min_turn_len {
            return err("turn lengths must satisfy 2 <= min <= max".into());
        }
        if self.seq_len < 2 * (self.risk_pattern_len + 2) + self.max_turn_len {
            return err(format!("seq_len {} too short for the pattern layout", self.seq_len));
        }
        Ok(())
    }

    /// Short stable identifier derived from every field.
    pub fn id(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("gen-{hex}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The hidden pattern table of a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    /// For each pattern, its first and second halves. Without order
    /// dependence the second half is empty.
    pub patterns: Vec<(Vec<usize>, Vec<usize>)>,
    pub order_dependent: bool,
}

impl PatternTable {
    pub fn for_config(cfg: &GeneratorConfig) -> Self {
        let mut slots: Vec<usize> = (0..cfg.content_vocab()).collect();
        slots.shuffle(&mut rng_from_seed(cfg.pattern_seed));
        let mut patterns = Vec::with_capacity(cfg.n_risk_patterns);
        for p in 0..cfg.n_risk_patterns {
            let start = cfg.pattern_offset + p * cfg.risk_pattern_len;
            let toks = slots[start..start + cfg.risk_pattern_len].to_vec();
            if cfg.order_dependent {
                let half = cfg.risk_pattern_len / 2;
                patterns.push((toks[..half].to_vec(), toks[half..].to_vec()));
            } else {
                patterns.push((toks, Vec::new()));
            }
        }
        Self {
            patterns,
            order_dependent: cfg.order_dependent,
        }
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.patterns
            .iter()
            .flat_map(|(a, b)| a.iter().chain(b).copied())
            .collect()
    }

    /// Scans `tokens` with the hidden table: unsafe iff some pattern's first
    /// half occurs and its second half occurs after it.
    pub fn detect(&self, tokens: &[usize]) -> bool {
        self.patterns.iter().any(|(a, b)| {
            let Some(first_a) = find(tokens, a, 0) else {
                return false;
            };
            if b.is_empty() {
                return true;
            }
            find(tokens, b, first_a + a.len()).is_some()
        })
    }

    /// True when any half of any pattern occurs anywhere.
    fn any_fragment(&self, tokens: &[usize]) -> bool {
        self.patterns
            .iter()
            .flat_map(|(a, b)| [a, b])
            .filter(|p| !p.is_empty())
            .any(|p| find(tokens, p, 0).is_some())
    }
}

fn find(hay: &[usize], needle: &[usize], from: usize) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

fn transition_table(cfg: &GeneratorConfig) -> Vec<Vec<f64>> {
    let c = cfg.content_vocab();
    let mut rng = rng_from_seed(cfg.noise_seed);
    let normal = rand_distr::Normal::new(0.0, cfg.markov_sharpness.max(1e-9)).expect("finite");
    (0..c)
        .map(|_| {
            let logits: Vec<f64> = (0..c).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = w.iter().sum();
            let mut acc = 0.0;
            w.iter()
                .map(|x| {
                    acc += x / s;
                    acc
                })
                .collect()
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// Role-separated background: a user turn, then repeating
/// thought/action/feedback turns, each opened by its separator token.
fn background(
    cfg: &GeneratorConfig,
    table: &[Vec<f64>],
    reserved: &[bool],
    rng: &mut Rng,
) -> (Vec<usize>, Vec<bool>) {
    let c = cfg.content_vocab();
    let mut tokens = Vec::with_capacity(cfg.seq_len);
    let mut is_content = Vec::with_capacity(cfg.seq_len);
    let cycle = [vocab::THOUGHT, vocab::ACTION, vocab::FEEDBACK];
    let mut turn = 0usize;
    let mut prev = loop {
        let t = rng.random_range(0..c);
        if !reserved[t] {
            break t;
        }
    };
    while tokens.len() < cfg.seq_len {
        let role = if turn == 0 { vocab::USER } else { cycle[(turn - 1) % 3] };
        tokens.push(vocab::role_token(cfg.vocab_size, role));
        is_content.push(false);
        let len = rng.random_range(cfg.min_turn_len..=cfg.max_turn_len);
        for _ in 0..len {
            if tokens.len() == cfg.seq_len {
                break;
            }
            let t = loop {
                let t = match cfg.noise_model {
                    NoiseModel::Uniform => rng.random_range(0..c),
                    NoiseModel::Markov => sample_cdf(&table[prev], rng),
                };
                if !reserved[t] {
                    break t;
                }
            };
            prev = t;
            tokens.push(t);
            is_content.push(true);
        }
        turn += 1;
    }
    (tokens, is_content)
}

/// Random start in `lo..hi` where `len` consecutive content positions fit.
fn place(is_content: &[bool], len: usize, lo: usize, hi: usize, rng: &mut Rng) -> Option<usize> {
    let candidates: Vec<usize> = (lo..hi.min(is_content.len().saturating_sub(len) + 1))
        .filter(|&s| is_content[s..s + len].iter().all(|&c| c))
        .collect();
    candidates.choose(rng).copied()
}

#[derive(Clone, Copy)]
enum Kind {
    Unsafe,
    Clean,
    Distractor,
}

fn one_example(
    cfg: &GeneratorConfig,
    patterns: &PatternTable,
    table: &[Vec<f64>],
    reserved: &[bool],
    kind: Kind,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    loop {
        let (mut tokens, is_content) = background(cfg, table, reserved, rng);
        if patterns.any_fragment(&tokens) {
            continue;
        }
        let (a, b) = &patterns.patterns[rng.random_range(0..patterns.patterns.len())];
        let l = tokens.len();
        let mut risk = Vec::new();
        let ok = match kind {
            Kind::Clean => true,
            Kind::Unsafe if b.is_empty() => match place(&is_content, a.len(), 0, l, rng) {
                Some(s) => {
                    tokens[s..s + a.len()].copy_from_slice(a);
                    risk.extend(s..s + a.len());
                    true
                }
                None => false,
            },
            Kind::Unsafe => {
                let first = place(&is_content, a.len(), 0, l / 2, rng);
                let second = first.and_then(|s| place(&is_content, b.len(), s + a.len() + 1, l, rng));
                match (first, second) {
                    (Some(s), Some(t)) => {
                        tokens[s..s + a.len()].copy_from_slice(a);
                        tokens[t..t + b.len()].copy_from_slice(b);
                        risk.extend(s..s + a.len());
                        risk.extend(t..t + b.len());
                        true
                    }
                    _ => false,
                }
            }
            Kind::Distractor if b.is_empty() => {
                // a truncated pattern
                let part = &a[..a.len().div_ceil(2).min(a.len() - 1).max(1)];
                match place(&is_content, part.len(), 0, l, rng) {
                    Some(s) => {
                        tokens[s..s + part.len()].copy_from_slice(part);
                        true
                    }
                    None => false,
                }
            }
            Kind::Distractor => {
                // halves in reversed order
                let first = place(&is_content, b.len(), 0, l / 2, rng);
                let second = first.and_then(|s| place(&is_content, a.len(), s + b.len() + 1, l, rng));
                match (first, second) {
                    (Some(s), Some(t)) => {
                        tokens[s..s + b.len()].copy_from_slice(b);
                        tokens[t..t + a.len()].copy_from_slice(a);
                        true
                    }
                    _ => false,
                }
            }
        };
        if !ok {
            continue;
        }
        let detected = patterns.detect(&tokens);
        let want_unsafe = matches!(kind, Kind::Unsafe);
        if detected == want_unsafe {
            return (tokens, risk);
        }
    }
}

/// Generates `n` labelled trajectories. The unsafe count is exactly
/// `round(n · unsafe_ratio)`; example `i` depends only on `(cfg, i)`.
pub fn generate_corpus(cfg: &GeneratorConfig, n: usize) -> Result<Vec<TrajectoryExample>> {
    cfg.validate()?;
    if n < 2 {
        return Err(Error::Config(format!("corpus size must be at least 2, got {n}")));
    }
    let patterns = PatternTable::for_config(cfg);
    let table = transition_table(cfg);
    let mut reserved = vec![false; cfg.content_vocab()];
    if cfg.reserve_pattern_tokens {
        for t in patterns.tokens() {
            reserved[t] = true;
        }
    }
    let n_unsafe = (n as f64 * cfg.unsafe_ratio).round() as usize;
    let id = cfg.id();
    // label assignment shuffled once, examples generated independently
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_unsafe)).collect();
    labels.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 0xA11CE)));
    let jobs: Vec<(usize, u8)> = labels.into_iter().enumerate().collect();
    let examples = crate::parallel::map_collect(&jobs, |&(i, label)| {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, i as u64 + 1));
        let kind = if label == 1 {
            Kind::Unsafe
        } else if rng.random::<f64>() < cfg.distractor_rate {
            Kind::Distractor
        } else {
            Kind::Clean
        };
        let (tokens, risk) = one_example(cfg, &patterns, &table, &reserved, kind, &mut rng);
        TrajectoryExample {
            id: format!("{id}-{i:06}"),
            tokens,
            label,
            meta: Some(Meta {
                risk_positions: risk,
                generator_config_id: id.clone(),
                extra: Default::default(),
            }),
            extra: Default::default(),
        }
    });
    Ok(examples)
}

/// A configuration with a disjoint pattern family and a different noise
/// parameterization over the same vocabulary and label semantics. Uniform
/// background becomes Markov background.
pub fn make_shifted_config(cfg: &GeneratorConfig) -> GeneratorConfig {
    let mut shifted = cfg.clone();
    shifted.noise_model = NoiseModel::Markov;
    shifted.pattern_offset = cfg.pattern_offset + cfg.n_risk_patterns * cfg.risk_pattern_len;
    shifted.noise_seed = derive_seed(cfg.noise_seed, SHIFT_SALT);
    shifted.markov_sharpness = cfg.markov_sharpness * 0.75;
    shifted.seed = derive_seed(cfg.seed, SHIFT_SALT);
    shifted
}

const SHIFT_SALT: u64 = 0x5417;
