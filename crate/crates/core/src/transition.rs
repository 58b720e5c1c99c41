//! Transition matrices for parameter-free propagation, and `P^k X`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spgemm, spmm, CsrMatrix, DenseMatrix};

/// Diffusion entries below this magnitude are dropped after truncation.
pub const DIFFUSION_DROP_TOLERANCE: f32 = 1e-8;

pub const DEFAULT_DIFFUSION_TRUNCATION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionKind {
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`
    Sym,
    /// `D^{-1/2} A D^{-1/2}`; isolated nodes get zero rows.
    NoLoop,
    /// `D̃^{-1} (A + I)`
    Rw,
    /// Truncated heat-kernel series `Σ_{p=0}^{P} (D̃^{-1} Ã)^p / (e · p!)`.
    Diff,
}

impl TransitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sym => "sym",
            Self::NoLoop => "no-loop",
            Self::Rw => "rw",
            Self::Diff => "diff",
        }
    }

    /// Whether the built matrix is symmetric.
    pub fn is_symmetric(self) -> bool {
        matches!(self, Self::Sym | Self::NoLoop)
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sym" => Ok(Self::Sym),
            "no-loop" | "no_loop" => Ok(Self::NoLoop),
            "rw" => Ok(Self::Rw),
            "diff" => Ok(Self::Diff),
            other => Err(Error::InvalidConfig(format!(
                "unknown transition scheme `{other}` (expected sym, no-loop, rw or diff)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionScheme {
    pub kind: TransitionKind,
    /// Number of series terms beyond the identity; only used by `Diff`.
    pub diffusion_truncation: usize,
}

impl TransitionScheme {
    pub fn new(kind: TransitionKind) -> Self {
        Self {
            kind,
            diffusion_truncation: DEFAULT_DIFFUSION_TRUNCATION,
        }
    }

    pub fn diffusion(truncation: usize) -> Self {
        Self {
            kind: TransitionKind::Diff,
            diffusion_truncation: truncation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TransitionKind::Diff && self.diffusion_truncation == 0 {
            return Err(Error::InvalidConfig("diffusion truncation must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TransitionScheme {
    fn default() -> Self {
        Self::new(TransitionKind::Sym)
    }
}

fn check_adjacency(adjacency: &CsrMatrix) -> Result<()> {
    if adjacency.rows() != adjacency.cols() {
        return Err(Error::InvalidMatrix(format!(
            "adjacency must be square, got {:?}",
            adjacency.shape()
        )));
    }
    if !adjacency.has_zero_diagonal() {
        return Err(Error::InvalidMatrix("adjacency must not store self-loops".into()));
    }
    Ok(())
}

/// `D^{-1/2} M D^{-1/2}` with `D` the row sums of `m`; zero-degree rows stay empty.
fn symmetric_normalize(m: &CsrMatrix) -> Result<CsrMatrix> {
    let inv_sqrt: Vec<f64> = m
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let triplets = m
        .iter()
        .map(|(i, j, v)| (i, j, (v as f64 * inv_sqrt[i] * inv_sqrt[j]) as f32));
    CsrMatrix::from_triplets(m.rows(), m.cols(), triplets)
}

fn row_normalize(m: &CsrMatrix) -> Result<CsrMatrix> {
    let inv: Vec<f64> = m
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    let triplets = m.iter().map(|(i, j, v)| (i, j, (v as f64 * inv[i]) as f32));
    CsrMatrix::from_triplets(m.rows(), m.cols(), triplets)
}

fn heat_diffusion(adjacency: &CsrMatrix, truncation: usize) -> Result<CsrMatrix> {
    let n = adjacency.rows();
    let walk = row_normalize(&adjacency.add_identity()?)?;
    // Horner form: c_0 I + W (c_1 I + W (c_2 I + ...)), with c_p = 1 / (e p!).
    let coeffs: Vec<f64> = (0..=truncation)
        .scan((-1.0f64).exp(), |c, p| {
            if p > 0 {
                *c /= p as f64;
            }
            Some(*c)
        })
        .collect();
    let mut series = CsrMatrix::identity(n).scale(coeffs[truncation] as f32);
    for &c in coeffs[..truncation].iter().rev() {
        let product = spgemm(&walk, &series)?;
        let triplets = product.iter().chain((0..n).map(|i| (i, i, c as f32)));
        series = CsrMatrix::from_triplets(n, n, triplets)?;
    }
    let kept = series
        .iter()
        .filter(|&(_, _, v)| v.abs() >= DIFFUSION_DROP_TOLERANCE);
    CsrMatrix::from_triplets(n, n, kept)
}

/// Builds the transition matrix of `scheme` from a binary symmetric adjacency
/// matrix without self-loops.
pub fn build_transition(adjacency: &CsrMatrix, scheme: &TransitionScheme) -> Result<CsrMatrix> {
    check_adjacency(adjacency)?;
    scheme.validate()?;
    match scheme.kind {
        TransitionKind::Sym => symmetric_normalize(&adjacency.add_identity()?),
        TransitionKind::NoLoop => symmetric_normalize(adjacency),
        TransitionKind::Rw => row_normalize(&adjacency.add_identity()?),
        TransitionKind::Diff => heat_diffusion(adjacency, scheme.diffusion_truncation),
    }
}

/// `P^k X` by `k` repeated sparse products; `k = 0` returns `X` unchanged.
pub fn propagate(p: &CsrMatrix, x: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if p.cols() != x.rows() || (k > 0 && p.rows() != p.cols()) {
        return Err(Error::ShapeMismatch {
            op: "propagate",
            left: p.shape(),
            right: x.shape(),
        });
    }
    let mut out = x.clone();
    for _ in 0..k {
        out = spmm(p, &out)?;
    }
    Ok(out)
}
