use std::sync::Arc;

use serde::Serialize;

use crate::{Error, Result};

/// Boolean `n×n` visibility matrix; `allowed(i, j)` means query row `i` may
/// attend to key row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    n: usize,
    allowed: Arc<[bool]>,
}

impl AttentionMask {
    /// Standard lower-triangular mask.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        Self {
            n,
            allowed: allowed.into(),
        }
    }

    /// Builds a mask from an explicit matrix. Rejects entries above the
    /// diagonal and rows that cannot see themselves.
    pub fn from_matrix(n: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n * n {
            return Err(Error::Input(format!(
                "mask has {} entries, expected {n}x{n}",
                allowed.len()
            )));
        }
        for i in 0..n {
            if !allowed[i * n + i] {
                return Err(Error::Input(format!("mask row {i} cannot attend to itself")));
            }
            if let Some(j) = (i + 1..n).find(|&j| allowed[i * n + j]) {
                return Err(Error::Input(format!("mask allows future position {j} from {i}")));
            }
        }
        Ok(Self {
            n,
            allowed: allowed.into(),
        })
    }

    /// Copy of this mask with one entry cleared. Used to construct
    /// deliberately broken masks; the diagonal cannot be cleared.
    pub fn with_blocked(&self, i: usize, j: usize) -> Result<Self> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::Input(format!("cannot block ({i},{j})")));
        }
        let mut allowed = self.allowed.to_vec();
        allowed[i * self.n + j] = false;
        Ok(Self {
            n: self.n,
            allowed: allowed.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn raw(&self) -> Arc<[bool]> {
        self.allowed.clone()
    }
}

/// Outcome of [`causal_accessibility_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessibilityReport {
    pub readout_position: usize,
    pub pass: bool,
    /// First `(query, key)` pair the readout position cannot see.
    pub first_violation: Option<(usize, usize)>,
}

/// Checks that the decision position can attend to every row of the
/// trajectory block and the draft block.
///
/// Layout is `[P; S]` with the readout at the last row, or `[P; S; DEC]`
/// with the readout on the decision row when `dec` is set.
pub fn causal_accessibility_check(
    mask: &AttentionMask,
    p_len: usize,
    s_len: usize,
    dec: bool,
) -> Result<AccessibilityReport> {
    let total = p_len + s_len + usize::from(dec);
    if total == 0 || mask.len() < total {
        return Err(Error::Input(format!(
            "mask of size {} does not cover {total} positions",
            mask.len()
        )));
    }
    let readout = total - 1;
    let first_violation = (0..p_len + s_len)
        .find(|&j| !mask.allows(readout, j))
        .map(|j| (readout, j));
    Ok(AccessibilityReport {
        readout_position: readout,
        pass: first_violation.is_none(),
        first_violation,
    })
}
