//! Synthetic source/target graph pairs under covariate shift.
//!
//! Both domains are stochastic block models with the same block sizes and
//! edge probabilities. Node features are class-conditional Gaussians sharing
//! the same class means; the target domain's features are translated by
//! `feature_shift_magnitude` along one random unit direction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GraphDataset;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub nodes_per_domain: usize,
    pub num_classes: usize,
    pub feat_dim: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub feature_shift_magnitude: f64,
    /// Distance scale between class means.
    pub class_separation: f64,
    /// Per-coordinate standard deviation of the feature noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            nodes_per_domain: 200,
            num_classes: 2,
            feat_dim: 32,
            intra_edge_prob: 0.05,
            inter_edge_prob: 0.005,
            feature_shift_magnitude: 1.5,
            class_separation: 1.2,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.nodes_per_domain == 0 || self.num_classes == 0 || self.feat_dim == 0 {
            return bad("nodes_per_domain, num_classes and feat_dim must be positive".into());
        }
        for (name, p) in [("intra_edge_prob", self.intra_edge_prob), ("inter_edge_prob", self.inter_edge_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.num_classes > 1 && self.intra_edge_prob <= self.inter_edge_prob {
            return bad("intra_edge_prob must exceed inter_edge_prob".into());
        }
        if !(self.feature_shift_magnitude >= 0.0) || !self.feature_shift_magnitude.is_finite() {
            return bad("feature_shift_magnitude must be a finite non-negative number".into());
        }
        if !(self.noise_std >= 0.0) || !(self.class_separation >= 0.0) {
            return bad("noise_std and class_separation must be non-negative".into());
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_domain(
    cfg: &ShiftConfig,
    name: &str,
    means: &[Vec<f64>],
    offset: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<GraphDataset> {
    let n = cfg.nodes_per_domain;
    let mut classes: Vec<usize> = (0..n).map(|i| i % cfg.num_classes).collect();
    classes.shuffle(rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if classes[u] == classes[v] {
                cfg.intra_edge_prob
            } else {
                cfg.inter_edge_prob
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let d = cfg.feat_dim;
    let mut data = Vec::with_capacity(n * d);
    for &c in &classes {
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(rng);
            data.push((means[c][j] + offset[j] + cfg.noise_std * noise) as f32);
        }
    }
    let features = DenseMatrix::from_vec(n, d, data)?;
    let labels = classes.into_iter().map(Some).collect();
    GraphDataset::from_edges(name, &edges, features, labels, cfg.num_classes)
}

/// Generates a `(source, target)` pair. Deterministic in `cfg` (seed included).
pub fn generate_shifted_pair(cfg: &ShiftConfig) -> Result<(GraphDataset, GraphDataset)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.feat_dim;
    // Class means sit at distance ~class_separation from each other.
    let scale = cfg.class_separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| unit_vector(&mut rng, d).into_iter().map(|x| x * scale).collect())
        .collect();
    let shift: Vec<f64> = unit_vector(&mut rng, d)
        .into_iter()
        .map(|x| x * cfg.feature_shift_magnitude)
        .collect();
    let source = sample_domain(cfg, "synthetic-source", &means, &vec![0.0; d], &mut rng)?;
    let target = sample_domain(cfg, "synthetic-target", &means, &shift, &mut rng)?;
    Ok((source, target))
}
