//! Numeric versions of the quantities in the target-risk bound: operator
//! norms of transition matrices and their powers, the second eigenvalue,
//! edge perturbation, the Lipschitz assembly `K_f` and the sample-complexity
//! term.
//!
//! Spectral radii are proxied by operator norms (largest singular values).
//! They coincide for symmetric matrices and the norm is an upper bound
//! otherwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{median_bandwidth, mmd_squared, DEFAULT_MEDIAN_SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::transition::{build_transition, propagate, TransitionScheme};

pub const DEFAULT_POWER_TOL: f64 = 1e-10;
pub const DEFAULT_POWER_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out before the relative change fell below `tol`.
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

fn check_square(p: &CsrMatrix) -> Result<()> {
    if p.rows() != p.cols() {
        return Err(Error::InvalidMatrix(format!(
            "spectral quantities need a square matrix, got {:?}",
            p.shape()
        )));
    }
    Ok(())
}

fn check_power_params(tol: f64, max_iter: usize) -> Result<()> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidConfig(
            "power iteration needs tol > 0 and at least one iteration".into(),
        ));
    }
    Ok(())
}

/// Largest singular value of `P^k` by power iteration on `(P^k)ᵀ P^k`, applying
/// `P` and `Pᵀ` `k` times each instead of forming the power.
pub fn power_operator_norm(p: &CsrMatrix, k: usize, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
    check_square(p)?;
    check_power_params(tol, max_iter)?;
    let n = p.rows();
    if n == 0 {
        return Ok(NormEstimate { value: 0.0, iterations: 0, converged: true });
    }
    let pt = p.transpose();
    let forward = |v: &[f64]| (0..k).fold(v.to_vec(), |acc, _| p.matvec_f64(&acc));
    let back = |v: &[f64]| (0..k).fold(v.to_vec(), |acc, _| pt.matvec_f64(&acc));

    let mut v = random_unit(n, seed);
    let mut sigma = 0.0;
    for it in 1..=max_iter {
        let u = forward(&v);
        // ‖P^k v‖ for unit v is the Rayleigh estimate of σ_max.
        let estimate = norm(&u);
        if estimate == 0.0 {
            return Ok(NormEstimate { value: 0.0, iterations: it, converged: true });
        }
        let w = back(&u);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(NormEstimate { value: estimate, iterations: it, converged: true });
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if it > 1 && (estimate - sigma).abs() <= tol * estimate {
            return Ok(NormEstimate { value: estimate, iterations: it, converged: true });
        }
        sigma = estimate;
    }
    Ok(NormEstimate { value: sigma, iterations: max_iter, converged: false })
}

/// Largest singular value of `p`.
pub fn operator_norm(p: &CsrMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
    power_operator_norm(p, 1, tol, max_iter, seed)
}

/// Second-largest eigenvalue magnitude of a symmetric matrix, by power
/// iteration on `P²` restricted to the complement of the leading eigenvector.
pub fn second_eigenvalue_magnitude(p: &CsrMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<NormEstimate> {
    check_square(p)?;
    check_power_params(tol, max_iter)?;
    if !p.is_symmetric(1e-6) {
        return Err(Error::InvalidMatrix("second eigenvalue requires a symmetric matrix".into()));
    }
    let n = p.rows();
    if n < 2 {
        return Ok(NormEstimate { value: 0.0, iterations: 0, converged: true });
    }
    let square = |v: &[f64]| p.matvec_f64(&p.matvec_f64(v));
    let deflate = |v: &mut Vec<f64>, basis: &[f64]| {
        let dot: f64 = v.iter().zip(basis).map(|(a, b)| a * b).sum();
        for (x, b) in v.iter_mut().zip(basis) {
            *x -= dot * b;
        }
    };
    // Leading eigenvector of P² (eigenvalue λ₁²).
    let mut top = random_unit(n, seed);
    let mut prev = 0.0;
    for it in 1..=max_iter {
        let w = square(&top);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(NormEstimate { value: 0.0, iterations: it, converged: true });
        }
        top = w.into_iter().map(|x| x / nw).collect();
        if (nw - prev).abs() <= tol * nw {
            break;
        }
        prev = nw;
    }

    let mut v = random_unit(n, seed.wrapping_add(1));
    deflate(&mut v, &top);
    let nv = norm(&v);
    if nv == 0.0 {
        return Ok(NormEstimate { value: 0.0, iterations: 0, converged: true });
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let pv = p.matvec_f64(&v);
        // ‖P v‖ = |λ₂| once v lies in the λ₂ eigenspace.
        let estimate = norm(&pv);
        let mut w = p.matvec_f64(&pv);
        deflate(&mut w, &top);
        let nw = norm(&w);
        if nw == 0.0 || estimate == 0.0 {
            return Ok(NormEstimate { value: estimate, iterations: it, converged: true });
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if it > 1 && (estimate - lambda).abs() <= tol * estimate {
            return Ok(NormEstimate { value: estimate, iterations: it, converged: true });
        }
        lambda = estimate;
    }
    Ok(NormEstimate { value: lambda, iterations: max_iter, converged: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda2Report {
    pub lambda2: f64,
    pub lambda2_pow_k: f64,
    /// `|λ₂|^k < |λ₂|`; only meaningful when `0 < |λ₂| < 1`.
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub k: usize,
    /// `σ_max(P^k)`
    pub t2_k: f64,
    /// `σ_max(P)`
    pub t2_1: f64,
    /// `σ_max(P^k) ≤ σ_max(P)^k + tol ≤ σ_max(P) · max(1, σ_max(P)^(k-1)) + tol`
    pub holds: bool,
    /// Present for symmetric `P`.
    pub lambda2: Option<Lambda2Report>,
}

pub fn lemma2_check(p: &CsrMatrix, k: usize, tol: f64, seed: u64) -> Result<Lemma2Report> {
    if k == 0 {
        return Err(Error::InvalidConfig("the propagation chain needs k >= 1".into()));
    }
    let t2_1 = operator_norm(p, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, seed)?.value;
    let t2_k = if k == 1 {
        t2_1
    } else {
        power_operator_norm(p, k, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, seed)?.value
    };
    let kk = k as i32;
    let chained = t2_1.powi(kk);
    let relaxed = t2_1 * 1f64.max(t2_1.powi(kk - 1));
    let holds = t2_k <= chained + tol && chained + tol <= relaxed + tol;
    let lambda2 = if p.is_symmetric(1e-6) {
        let l2 = second_eigenvalue_magnitude(p, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, seed)?.value;
        let pow = l2.powi(kk);
        Some(Lambda2Report {
            lambda2: l2,
            lambda2_pow_k: pow,
            strictly_decreasing: pow < l2,
        })
    } else {
        None
    };
    Ok(Lemma2Report { k, t2_k, t2_1, holds, lambda2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePerturbation {
    /// `‖A_s − A_t‖_F`
    pub ep: f64,
    /// `‖I − A_t‖_F`
    pub ep_prime: f64,
}

/// Frobenius distances under the identity node correspondence; the smaller
/// matrix is padded with isolated nodes.
pub fn edge_perturbation(a_s: &CsrMatrix, a_t: &CsrMatrix) -> Result<EdgePerturbation> {
    check_square(a_s)?;
    check_square(a_t)?;
    let n = a_s.rows().max(a_t.rows());
    let mut ep_sq = 0.0f64;
    for i in 0..n {
        let (sc, sv) = if i < a_s.rows() { a_s.row(i) } else { (&[][..], &[][..]) };
        let (tc, tv) = if i < a_t.rows() { a_t.row(i) } else { (&[][..], &[][..]) };
        // Merge the two sorted rows.
        let (mut a, mut b) = (0, 0);
        while a < sc.len() || b < tc.len() {
            let diff = match (sc.get(a), tc.get(b)) {
                (Some(&ca), Some(&cb)) if ca == cb => {
                    a += 1;
                    b += 1;
                    sv[a - 1] as f64 - tv[b - 1] as f64
                }
                (Some(&ca), Some(&cb)) if ca < cb => {
                    a += 1;
                    sv[a - 1] as f64
                }
                (Some(_), None) => {
                    a += 1;
                    sv[a - 1] as f64
                }
                _ => {
                    b += 1;
                    -(tv[b - 1] as f64)
                }
            };
            ep_sq += diff * diff;
        }
    }
    let mut ep_prime_sq = 0.0f64;
    for i in 0..n {
        let mut diag = 0.0f64;
        if i < a_t.rows() {
            let (cols, vals) = a_t.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j == i {
                    diag = v as f64;
                } else {
                    ep_prime_sq += (v as f64).powi(2);
                }
            }
        }
        ep_prime_sq += (1.0 - diag).powi(2);
    }
    Ok(EdgePerturbation {
        ep: ep_sq.sqrt(),
        ep_prime: ep_prime_sq.sqrt(),
    })
}

fn check_nonnegative(name: &str, v: &[f64]) -> Result<()> {
    if let Some(x) = v.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidConfig(format!("{name} entries must be finite and non-negative, got {x}")));
    }
    Ok(())
}

/// `K_f = max{ T₁⁽ˡ⁾ + Σ_{i<l} (Π_{j>i} T₂⁽ʲ⁾) T₁⁽ⁱ⁾, Π_i T₂⁽ⁱ⁾ }`, with both
/// products running over the `l` supplied layers.
pub fn kf_bound(t1: &[f64], t2: &[f64]) -> Result<f64> {
    if t1.is_empty() || t1.len() != t2.len() {
        return Err(Error::InvalidConfig(format!(
            "need equal, non-empty layer terms (t1 has {}, t2 has {})",
            t1.len(),
            t2.len()
        )));
    }
    check_nonnegative("t1", t1)?;
    check_nonnegative("t2", t2)?;
    let l = t1.len();
    let mut first = t1[l - 1];
    for i in 0..l - 1 {
        let tail: f64 = t2[i + 1..].iter().product();
        first += tail * t1[i];
    }
    let second: f64 = t2.iter().product();
    Ok(first.max(second))
}

/// `√(4d/n · (1 + ln(n/d)) + ln(1/δ)/n)`, the sample term of the bound with
/// `ln(e n/d)` expanded so that `(1, 1, 1)` evaluates to exactly 2.
pub fn theorem1_sample_term(d_vc: usize, n_source: usize, delta: f64) -> Result<f64> {
    if d_vc == 0 || n_source < d_vc {
        return Err(Error::InvalidConfig(format!(
            "sample term needs 1 <= d_vc <= n_source (got d_vc = {d_vc}, n_source = {n_source})"
        )));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidConfig(format!("delta {delta} must lie in (0, 1]")));
    }
    let (d, n) = (d_vc as f64, n_source as f64);
    Ok((4.0 * d / n * (1.0 + (n / d).ln()) + (1.0 / delta).ln() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub scheme: TransitionScheme,
    /// Target-side propagation count.
    pub k: usize,
    /// Source-side propagation count; 0 for the asymmetric model.
    pub source_prop: usize,
    /// Number of layers entering `K_f`.
    pub layers: usize,
    pub delta: f64,
    pub d_vc: usize,
    /// Unmeasurable constants, user supplied and echoed.
    pub k_lambda: f64,
    pub tau: f64,
    pub epsilon: f64,
    /// Rows per domain entering the divergence estimate.
    pub divergence_sample_cap: usize,
    pub seed: u64,
}

impl BoundConfig {
    pub fn new(k: usize, d_vc: usize) -> Self {
        Self {
            scheme: TransitionScheme::default(),
            k,
            source_prop: 0,
            layers: 1,
            delta: 0.05,
            d_vc,
            k_lambda: 1.0,
            tau: 1.0,
            epsilon: 1.0,
            divergence_sample_cap: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub config: BoundConfig,
    /// `σ_max(P_t)`
    pub sigma_max_p: f64,
    /// `σ_max(P_t^k)`
    pub sigma_max_pk: f64,
    /// `|λ₂(P_t)|`, for symmetric schemes.
    pub lambda2_p: Option<f64>,
    pub t1_terms: Vec<f64>,
    pub t2_terms: Vec<f64>,
    pub ep: f64,
    pub ep_prime: f64,
    pub k_f: f64,
    /// MMD between the propagated raw features of the two domains.
    pub divergence: f64,
    pub sample_term: f64,
    pub delta: f64,
    pub d_vc: usize,
    pub n_source: usize,
    pub approximation_notes: Vec<String>,
}

fn capped_rows(x: &DenseMatrix, cap: usize) -> DenseMatrix {
    if x.rows() <= cap {
        return x.clone();
    }
    // Evenly spaced rows keep the estimate deterministic without a second RNG stream.
    let idx: Vec<usize> = (0..cap).map(|i| i * x.rows() / cap).collect();
    x.select_rows(&idx)
}

/// Evaluates every bound quantity for a source/target pair.
pub fn bound_report(source: &GraphDataset, target: &GraphDataset, cfg: &BoundConfig) -> Result<BoundReport> {
    if cfg.layers == 0 {
        return Err(Error::InvalidConfig("bound needs at least one layer".into()));
    }
    if source.feat_dim() != target.feat_dim() {
        return Err(Error::InvalidDataset {
            name: target.name.clone(),
            reason: "feature dimensions of the two domains differ".into(),
        });
    }
    for (name, v) in [("k_lambda", cfg.k_lambda), ("tau", cfg.tau), ("epsilon", cfg.epsilon)] {
        check_nonnegative(name, &[v])?;
    }
    let sample_term = theorem1_sample_term(cfg.d_vc, source.num_nodes(), cfg.delta)?;
    let ps = build_transition(&source.adjacency, &cfg.scheme)?;
    let pt = build_transition(&target.adjacency, &cfg.scheme)?;

    let sigma_max_p = operator_norm(&pt, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, cfg.seed)?.value;
    let sigma_max_pk = if cfg.k == 1 {
        sigma_max_p
    } else {
        power_operator_norm(&pt, cfg.k, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, cfg.seed)?.value
    };
    let lambda2_p = if cfg.scheme.kind.is_symmetric() {
        Some(second_eigenvalue_magnitude(&pt, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, cfg.seed)?.value)
    } else {
        None
    };

    let perturbation = edge_perturbation(&ps, &pt)?;
    let ep_used = if cfg.source_prop == 0 {
        perturbation.ep_prime
    } else {
        perturbation.ep
    };
    let n = ps.rows().max(pt.rows()) as f64;
    let t1 = cfg.k_lambda * (1.0 + cfg.tau * n.sqrt()) * ep_used + cfg.epsilon * ep_used * ep_used;
    let t1_terms = vec![t1; cfg.layers];
    let t2_terms = vec![sigma_max_pk; cfg.layers];
    let k_f = kf_bound(&t1_terms, &t2_terms)?;

    let xs = propagate(&ps, &source.features, cfg.source_prop)?;
    let xt = propagate(&pt, &target.features, cfg.k)?;
    let xs = capped_rows(&xs, cfg.divergence_sample_cap);
    let xt = capped_rows(&xt, cfg.divergence_sample_cap);
    let bw = median_bandwidth(&xs, &xt, DEFAULT_MEDIAN_SAMPLE_CAP, cfg.seed)?;
    let (divergence, _, _) = mmd_squared(&xs, &xt, &[bw.sigma / 2.0, bw.sigma, 2.0 * bw.sigma])?;

    let mut approximation_notes = vec![
        "edge perturbation uses the identity node correspondence after padding the smaller graph".to_string(),
        "edge perturbation compares the transition matrices of the two domains".to_string(),
        "spectral radius is proxied by the largest singular value".to_string(),
        format!(
            "k_lambda = {}, tau = {}, epsilon = {} are user-supplied constants",
            cfg.k_lambda, cfg.tau, cfg.epsilon
        ),
        "K_f products run over the supplied layers only".to_string(),
        format!("divergence is multi-bandwidth MMD on at most {} rows per domain", cfg.divergence_sample_cap),
    ];
    if cfg.source_prop == 0 {
        approximation_notes.push("T1 uses ep_prime because the source branch does not propagate".into());
    }
    if bw.degenerate {
        approximation_notes.push("median bandwidth fell back to 1 on identical points".into());
    }
    Ok(BoundReport {
        config: cfg.clone(),
        sigma_max_p,
        sigma_max_pk,
        lambda2_p,
        t1_terms,
        t2_terms,
        ep: perturbation.ep,
        ep_prime: perturbation.ep_prime,
        k_f,
        divergence,
        sample_term,
        delta: cfg.delta,
        d_vc: cfg.d_vc,
        n_source: source.num_nodes(),
        approximation_notes,
    })
}
