//! Additive attention masks: causal, bidirectional, and the hybrid
//! context/span mask.
//!
//! Rows are query positions, columns are key positions. An allowed cell is
//! additive `0`; a blocked cell is `-inf`, realized as the most negative
//! finite value of the working precision when materialized.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Per-position label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRole {
    Context,
    Span(u32),
}

impl TokenRole {
    pub fn is_span(self) -> bool {
        matches!(self, TokenRole::Span(_))
    }
}

/// Checks the role invariants: each span index forms one contiguous run,
/// distinct spans neither touch nor overlap, and position 0 is context
/// unless the whole sequence is a single span.
pub fn validate_roles(roles: &[TokenRole]) -> Result<()> {
    if roles.is_empty() {
        return Err(Error::InvalidLength("roles must be non-empty".into()));
    }
    let mut seen = Vec::new();
    let mut prev = TokenRole::Context;
    for (i, &r) in roles.iter().enumerate() {
        if let TokenRole::Span(s) = r {
            if prev != r {
                if prev.is_span() {
                    return Err(Error::MalformedSpans(format!(
                        "span {s} touches another span at position {i}"
                    )));
                }
                if seen.contains(&s) {
                    return Err(Error::MalformedSpans(format!("span {s} is not contiguous")));
                }
                seen.push(s);
            }
        }
        prev = r;
    }
    if roles[0].is_span() && roles.iter().any(|&r| r != roles[0]) {
        return Err(Error::MalformedSpans(
            "position 0 may only be a span when every position is".into(),
        ));
    }
    Ok(())
}

/// `L×L` boolean attention pattern.
#[derive(Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    len: usize,
    allow: Vec<bool>,
}

impl MaskMatrix {
    fn from_fn(len: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidLength("mask length must be at least 1".into()));
        }
        let mut allow = Vec::with_capacity(len * len);
        for i in 0..len {
            for j in 0..len {
                allow.push(f(i, j));
            }
        }
        Ok(Self { len, allow })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Whether query `i` may attend to key `j`.
    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.len + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.len..(i + 1) * self.len]
    }

    /// Additive entry: `0` or the most negative finite value of `T`.
    pub fn entry<T: Real>(&self, i: usize, j: usize) -> T {
        if self.allowed(i, j) {
            T::zero()
        } else {
            T::min_value()
        }
    }

    pub fn to_additive<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(self.len, self.len, |i, j| self.entry(i, j))
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    /// Text grid: `.` for 0 and `#` for -inf, one line per query row.
    pub fn render(&self) -> String {
        let mut s = String::with_capacity(self.len * (self.len + 1));
        for i in 0..self.len {
            for &a in self.row(i) {
                s.push(if a { '.' } else { '#' });
            }
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for MaskMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaskMatrix({})\n{}", self.len, self.render())
    }
}

pub fn causal_mask(len: usize) -> Result<MaskMatrix> {
    MaskMatrix::from_fn(len, |i, j| j <= i)
}

pub fn bidirectional_mask(len: usize) -> Result<MaskMatrix> {
    MaskMatrix::from_fn(len, |_, _| true)
}

/// Context tokens see every context token; a span token sees every context
/// token plus the tokens of its own span up to and including itself.
pub fn magnet_mask(roles: &[TokenRole]) -> Result<MaskMatrix> {
    validate_roles(roles)?;
    MaskMatrix::from_fn(roles.len(), |i, j| match (roles[i], roles[j]) {
        (TokenRole::Context, TokenRole::Context) => true,
        (TokenRole::Context, TokenRole::Span(_)) => false,
        (TokenRole::Span(_), TokenRole::Context) => true,
        (TokenRole::Span(a), TokenRole::Span(b)) => a == b && j <= i,
    })
}

/// The three inference modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Causal,
    Bidirectional,
    Infill,
}

pub fn mode_mask(mode: AttentionMode, len: usize, roles: Option<&[TokenRole]>) -> Result<MaskMatrix> {
    match (mode, roles) {
        (AttentionMode::Causal, None) => causal_mask(len),
        (AttentionMode::Bidirectional, None) => bidirectional_mask(len),
        (AttentionMode::Infill, Some(r)) => {
            if r.len() != len {
                return Err(Error::InvalidLength(format!(
                    "roles cover {} positions, mask needs {len}",
                    r.len()
                )));
            }
            magnet_mask(r)
        }
        (AttentionMode::Infill, None) => Err(Error::InvalidArgument("infill mode requires roles".into())),
        (_, Some(_)) => Err(Error::InvalidArgument("roles are only accepted in infill mode".into())),
    }
}
