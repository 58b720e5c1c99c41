use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Rows drawn for the median heuristic when the caller gives no cap.
pub const DEFAULT_MEDIAN_SAMPLE_CAP: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidths {
    /// `{σ/2, σ, 2σ}` with `σ` from [`median_bandwidth`] on the current inputs.
    Median,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    pub bandwidths: Bandwidths,
    /// Caps the rows of each domain that enter the kernel sums.
    pub subsample_limit: Option<usize>,
    pub median_sample_cap: usize,
    pub seed: u64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidths: Bandwidths::Median,
            subsample_limit: None,
            median_sample_cap: DEFAULT_MEDIAN_SAMPLE_CAP,
            seed: 0,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidths::Fixed(bw) = &self.bandwidths {
            check_bandwidths(bw)?;
        }
        if matches!(self.subsample_limit, Some(l) if l < 2) {
            return Err(Error::InvalidConfig("MMD subsample limit must be at least 2".into()));
        }
        if self.median_sample_cap < 2 {
            return Err(Error::InvalidConfig("median sample cap must be at least 2".into()));
        }
        Ok(())
    }
}

fn check_bandwidths(bw: &[f64]) -> Result<()> {
    if bw.is_empty() {
        return Err(Error::InvalidConfig("at least one MMD bandwidth is required".into()));
    }
    if let Some(b) = bw.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidConfig(format!("MMD bandwidth {b} must be positive")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdOutput {
    pub loss: f64,
    pub grad_hs: DenseMatrix,
    pub grad_ht: DenseMatrix,
    /// Bandwidths actually used.
    pub bandwidths: Vec<f64>,
    /// Set when the median heuristic hit identical points and fell back to 1.
    pub degenerate_bandwidth: bool,
}

/// Per-row kernel sums of `x` against all rows of `y`:
/// `k_i = Σ_b Σ_j k_b(x_i, y_j)`, `w_i = Σ_j w_ij` and `wy_i = Σ_j w_ij y_j`,
/// with `w_ij = Σ_b k_b(x_i, y_j) / σ_b²`.
struct PairStats {
    kernel_sums: Vec<f64>,
    weight_sums: Vec<f64>,
    weighted_y: Vec<f64>,
}

/// Squared Euclidean distance with eight independent partial sums, so the
/// loop is not bound by the latency of one long addition chain.
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            let diff = xa[l] - xb[l];
            acc[l] += diff * diff;
        }
    }
    acc.iter().map(|&v| v as f64).sum::<f64>() + tail
}

fn pair_stats(
    x: &DenseMatrix,
    y: &DenseMatrix,
    y64: &[f64],
    inv_two_sigma_sq: &[f64],
    inv_sigma_sq: &[f64],
) -> PairStats {
    let d = x.cols();
    let per_row: Vec<(f64, f64, Vec<f64>)> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut k_sum = 0.0;
            let mut w_sum = 0.0;
            let mut wy = vec![0.0; d];
            for (j, yj) in y64.chunks(d).enumerate() {
                let dist_sq = squared_distance(xi, y.row(j));
                let mut w = 0.0;
                for (c, inv_s2) in inv_two_sigma_sq.iter().zip(inv_sigma_sq) {
                    let k = (-dist_sq * c).exp();
                    k_sum += k;
                    w += k * inv_s2;
                }
                w_sum += w;
                for (acc, v) in wy.iter_mut().zip(yj) {
                    *acc += w * v;
                }
            }
            (k_sum, w_sum, wy)
        })
        .collect();
    let mut stats = PairStats {
        kernel_sums: Vec::with_capacity(per_row.len()),
        weight_sums: Vec::with_capacity(per_row.len()),
        weighted_y: Vec::with_capacity(per_row.len() * d),
    };
    for (k, w, wy) in per_row {
        stats.kernel_sums.push(k);
        stats.weight_sums.push(w);
        stats.weighted_y.extend(wy);
    }
    stats
}

/// Adds `coef * Σ_j w_ij (x_i - y_j)` to `grad`, using `stats` of `x` against `y`.
fn accumulate_grad(grad: &mut [f64], x: &[f64], stats: &PairStats, d: usize, coef: f64) {
    for (i, g) in grad.chunks_mut(d).enumerate() {
        let w = stats.weight_sums[i];
        let xi = &x[i * d..(i + 1) * d];
        let wy = &stats.weighted_y[i * d..(i + 1) * d];
        for c in 0..d {
            g[c] += coef * (w * xi[c] - wy[c]);
        }
    }
}

/// Biased (diagonal-inclusive) squared MMD with Gaussian kernels
/// `exp(-‖x - y‖² / (2σ²))`, summed over `bandwidths`, and its gradients.
pub fn mmd_squared(
    hs: &DenseMatrix,
    ht: &DenseMatrix,
    bandwidths: &[f64],
) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    if hs.rows() == 0 || ht.rows() == 0 {
        return Err(Error::EmptyInput("MMD domain"));
    }
    if hs.cols() != ht.cols() {
        return Err(Error::ShapeMismatch {
            op: "mmd_squared",
            left: hs.shape(),
            right: ht.shape(),
        });
    }
    check_bandwidths(bandwidths)?;
    let d = hs.cols();
    let (ns, nt) = (hs.rows() as f64, ht.rows() as f64);
    let inv_two: Vec<f64> = bandwidths.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
    let inv_sq: Vec<f64> = bandwidths.iter().map(|s| 1.0 / (s * s)).collect();
    let s: Vec<f64> = hs.data().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = ht.data().iter().map(|&v| v as f64).collect();

    let ss = pair_stats(hs, hs, &s, &inv_two, &inv_sq);
    let tt = pair_stats(ht, ht, &t, &inv_two, &inv_sq);
    let st = pair_stats(hs, ht, &t, &inv_two, &inv_sq);
    let ts = pair_stats(ht, hs, &s, &inv_two, &inv_sq);

    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let loss = sum(&ss.kernel_sums) / (ns * ns) + sum(&tt.kernel_sums) / (nt * nt)
        - 2.0 * sum(&st.kernel_sums) / (ns * nt);

    // ∂k(x, y)/∂x = -k(x, y) (x - y) / σ².
    let mut gs = vec![0.0; s.len()];
    accumulate_grad(&mut gs, &s, &ss, d, -2.0 / (ns * ns));
    accumulate_grad(&mut gs, &s, &st, d, 2.0 / (ns * nt));
    let mut gt = vec![0.0; t.len()];
    accumulate_grad(&mut gt, &t, &tt, d, -2.0 / (nt * nt));
    accumulate_grad(&mut gt, &t, &ts, d, 2.0 / (ns * nt));

    let to_dense = |rows: usize, g: Vec<f64>| DenseMatrix::from_vec(rows, d, g.into_iter().map(|v| v as f32).collect());
    Ok((loss, to_dense(hs.rows(), gs)?, to_dense(ht.rows(), gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianBandwidth {
    pub sigma: f64,
    /// All sampled points coincided; `sigma` is the fallback 1.
    pub degenerate: bool,
}

/// Median heuristic: `σ² = median` of squared pairwise distances among at most
/// `sample_cap` rows drawn (seeded) from the stacked inputs.
pub fn median_bandwidth(
    hs: &DenseMatrix,
    ht: &DenseMatrix,
    sample_cap: usize,
    seed: u64,
) -> Result<MedianBandwidth> {
    let n = hs.rows() + ht.rows();
    if n < 2 {
        return Err(Error::EmptyInput("median bandwidth needs two rows"));
    }
    if hs.cols() != ht.cols() {
        return Err(Error::ShapeMismatch {
            op: "median_bandwidth",
            left: hs.shape(),
            right: ht.shape(),
        });
    }
    let row = |i: usize| if i < hs.rows() { hs.row(i) } else { ht.row(i - hs.rows()) };
    let picked: Vec<usize> = if n > sample_cap.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, sample_cap.max(2)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for (a, &i) in picked.iter().enumerate() {
        for &j in &picked[a + 1..] {
            dists.push(squared_distance(row(i), row(j)));
        }
    }
    let m = dists.len();
    let (below, &mut upper, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        let lower = below.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if median > 0.0 && median.is_finite() {
        Ok(MedianBandwidth {
            sigma: median.sqrt(),
            degenerate: false,
        })
    } else {
        Ok(MedianBandwidth {
            sigma: 1.0,
            degenerate: true,
        })
    }
}

fn subsample_rows(m: &DenseMatrix, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    match limit {
        Some(l) if m.rows() > l => {
            let mut idx = sample(rng, m.rows(), l).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

fn scatter_rows(grad: DenseMatrix, idx: &[usize], rows: usize) -> DenseMatrix {
    let mut full = DenseMatrix::zeros(rows, grad.cols());
    for (k, &i) in idx.iter().enumerate() {
        full.row_mut(i).copy_from_slice(grad.row(k));
    }
    full
}

/// MMD loss under `cfg`: resolves bandwidths (treated as constants in the
/// gradient), applies the optional row subsample and maps gradients back to
/// every input row.
pub fn mmd_loss(hs: &DenseMatrix, ht: &DenseMatrix, cfg: &MmdConfig) -> Result<MmdOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s_idx = subsample_rows(hs, cfg.subsample_limit, &mut rng);
    let t_idx = subsample_rows(ht, cfg.subsample_limit, &mut rng);
    let s_sub = s_idx.as_ref().map(|i| hs.select_rows(i));
    let t_sub = t_idx.as_ref().map(|i| ht.select_rows(i));
    let s = s_sub.as_ref().unwrap_or(hs);
    let t = t_sub.as_ref().unwrap_or(ht);

    let (bandwidths, degenerate_bandwidth) = match &cfg.bandwidths {
        Bandwidths::Fixed(b) => (b.clone(), false),
        Bandwidths::Median => {
            let m = median_bandwidth(s, t, cfg.median_sample_cap, cfg.seed)?;
            (vec![m.sigma / 2.0, m.sigma, 2.0 * m.sigma], m.degenerate)
        }
    };
    let (loss, gs, gt) = mmd_squared(s, t, &bandwidths)?;
    let grad_hs = match &s_idx {
        Some(idx) => scatter_rows(gs, idx, hs.rows()),
        None => gs,
    };
    let grad_ht = match &t_idx {
        Some(idx) => scatter_rows(gt, idx, ht.rows()),
        None => gt,
    };
    Ok(MmdOutput {
        loss,
        grad_hs,
        grad_ht,
        bandwidths,
        degenerate_bandwidth,
    })
}
