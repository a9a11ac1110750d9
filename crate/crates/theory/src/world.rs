use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, TheoryError, TOL};

/// Finite joint model over trajectories `X`, latent risk factors `R` and a
/// binary label drawn from `R` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWorld {
    pub x_states: Vec<String>,
    pub r_states: Vec<String>,
    pub p_x: Vec<f64>,
    /// `|X| × |R|`, row-stochastic.
    pub p_r_given_x: Vec<Vec<f64>>,
    /// `g(R) = P(y = 1 | R)`.
    pub p_y_given_r: Vec<f64>,
}

fn input(msg: String) -> TheoryError {
    TheoryError::Input(msg)
}

impl DiscreteWorld {
    pub fn new(
        x_states: Vec<String>,
        r_states: Vec<String>,
        p_x: Vec<f64>,
        p_r_given_x: Vec<Vec<f64>>,
        p_y_given_r: Vec<f64>,
    ) -> Result<Self> {
        let w = Self {
            x_states,
            r_states,
            p_x,
            p_r_given_x,
            p_y_given_r,
        };
        w.validate()?;
        Ok(w)
    }

    /// States named `x0..`, `r0..`.
    pub fn from_tables(p_x: Vec<f64>, p_r_given_x: Vec<Vec<f64>>, p_y_given_r: Vec<f64>) -> Result<Self> {
        let xs = (0..p_x.len()).map(|i| format!("x{i}")).collect();
        let rs = (0..p_y_given_r.len()).map(|i| format!("r{i}")).collect();
        Self::new(xs, rs, p_x, p_r_given_x, p_y_given_r)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, nr) = (self.x_states.len(), self.r_states.len());
        if nx == 0 || nr == 0 {
            return Err(input("world needs at least one X and one R state".into()));
        }
        if self.p_x.len() != nx || self.p_r_given_x.len() != nx || self.p_y_given_r.len() != nr {
            return Err(input(format!(
                "table sizes disagree with |X|={nx}, |R|={nr}"
            )));
        }
        let check_dist = |what: &str, row: &[f64]| -> Result<()> {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(input(format!("{what} has an entry outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > TOL {
                return Err(input(format!("{what} sums to {s}, not 1")));
            }
            Ok(())
        };
        check_dist("p_x", &self.p_x)?;
        for (i, row) in self.p_r_given_x.iter().enumerate() {
            if row.len() != nr {
                return Err(input(format!("p(R|{}) has {} entries, expected {nr}", self.x_states[i], row.len())));
            }
            check_dist(&format!("p(R|{})", self.x_states[i]), row)?;
        }
        if self.p_y_given_r.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(input("p(y=1|R) has an entry outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.x_states.len()
    }

    pub fn n_r(&self) -> usize {
        self.r_states.len()
    }

    pub fn index_of(&self, x: &str) -> Result<usize> {
        self.x_states
            .iter()
            .position(|s| s == x)
            .ok_or_else(|| input(format!("unknown X state {x:?}")))
    }

    /// `P(y = 1)`.
    pub fn prior(&self) -> f64 {
        (0..self.n_x())
            .map(|x| self.p_x[x] * crate::bayes_posterior(self, x))
            .sum()
    }

    /// Random world with strictly positive `p_x` and Dirichlet(1) posterior
    /// rows.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_x: usize, n_r: usize) -> Self {
        let simplex = |rng: &mut R, n: usize| -> Vec<f64> {
            let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            let mut v: Vec<f64> = e.iter().map(|x| x / s).collect();
            // push the rounding residue into the largest entry
            let resid = 1.0 - v.iter().sum::<f64>();
            let imax = (0..n).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
            v[imax] += resid;
            v
        };
        let p_x = simplex(rng, n_x);
        let rows = (0..n_x).map(|_| simplex(rng, n_r)).collect();
        let g = (0..n_r).map(|_| rng.random::<f64>()).collect();
        Self::from_tables(p_x, rows, g).expect("random world is valid")
    }

    /// Parses the textual world format:
    ///
    /// ```text
    /// # comment
    /// x_states: a b c
    /// r_states: r0 r1
    /// p_x: 0.2 0.3 0.5
    /// p_y_given_r: 0.1 0.9
    /// p_r_given_x:
    ///   a: 0.5 0.5
    ///   b: 1 0
    ///   c: 0.25 0.75
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut xs: Option<Vec<String>> = None;
        let mut rs: Option<Vec<String>> = None;
        let mut p_x: Option<Vec<f64>> = None;
        let mut g: Option<Vec<f64>> = None;
        let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
        let mut in_table = false;
        let nums = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| TheoryError::Parse {
                        line,
                        message: format!("{t:?} is not a number"),
                    })
                })
                .collect()
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once(':').ok_or_else(|| TheoryError::Parse {
                line,
                message: format!("expected `key: values`, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "x_states" => {
                    in_table = false;
                    xs = Some(value.split_whitespace().map(str::to_string).collect());
                }
                "r_states" => {
                    in_table = false;
                    rs = Some(value.split_whitespace().map(str::to_string).collect());
                }
                "p_x" => {
                    in_table = false;
                    p_x = Some(nums(line, value)?);
                }
                "p_y_given_r" => {
                    in_table = false;
                    g = Some(nums(line, value)?);
                }
                "p_r_given_x" => {
                    in_table = true;
                    if !value.is_empty() {
                        return Err(TheoryError::Parse {
                            line,
                            message: "p_r_given_x rows go on the following lines".into(),
                        });
                    }
                }
                state if in_table => rows.push((state.to_string(), nums(line, value)?)),
                other => {
                    return Err(TheoryError::Parse {
                        line,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        let missing = |k: &str| TheoryError::Parse {
            line: text.lines().count(),
            message: format!("missing {k}"),
        };
        let xs = xs.ok_or_else(|| missing("x_states"))?;
        let rs = rs.ok_or_else(|| missing("r_states"))?;
        let p_x = p_x.ok_or_else(|| missing("p_x"))?;
        let g = g.ok_or_else(|| missing("p_y_given_r"))?;
        let mut table = Vec::with_capacity(xs.len());
        for x in &xs {
            let row = rows
                .iter()
                .find(|(s, _)| s == x)
                .ok_or_else(|| missing(&format!("p_r_given_x row for {x}")))?;
            table.push(row.1.clone());
        }
        if let Some((s, _)) = rows.iter().find(|(s, _)| !xs.contains(s)) {
            return Err(input(format!("p_r_given_x row for unknown state {s:?}")));
        }
        Self::new(xs, rs, p_x, table, g)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(" ");
        let mut out = format!(
            "x_states: {}\nr_states: {}\np_x: {}\np_y_given_r: {}\np_r_given_x:\n",
            self.x_states.join(" "),
            self.r_states.join(" "),
            join(&self.p_x),
            join(&self.p_y_given_r)
        );
        for (x, row) in self.x_states.iter().zip(&self.p_r_given_x) {
            out.push_str(&format!("  {x}: {}\n", join(row)));
        }
        out
    }
}

/// Deterministic draft `s = s_of[x]` onto `n_s` draft states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftMap {
    pub s_of: Vec<usize>,
    pub n_s: usize,
}

impl DraftMap {
    pub fn new(s_of: Vec<usize>, n_s: usize) -> Result<Self> {
        if let Some(&bad) = s_of.iter().find(|&&s| s >= n_s) {
            return Err(input(format!("draft state {bad} outside 0..{n_s}")));
        }
        Ok(Self { s_of, n_s })
    }

    pub fn identity(n_x: usize) -> Self {
        Self {
            s_of: (0..n_x).collect(),
            n_s: n_x,
        }
    }

    pub fn constant(n_x: usize) -> Self {
        Self {
            s_of: vec![0; n_x],
            n_s: 1,
        }
    }

    pub fn check_total(&self, world: &DiscreteWorld) -> Result<()> {
        if self.s_of.len() != world.n_x() {
            return Err(input(format!(
                "draft covers {} X states, world has {}",
                self.s_of.len(),
                world.n_x()
            )));
        }
        Ok(())
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_x: usize, n_s: usize) -> Self {
        Self {
            s_of: (0..n_x).map(|_| rng.random_range(0..n_s)).collect(),
            n_s,
        }
    }
}
