//! Dense f64 brute-force oracles.

use a2gnn::linalg::{CsrMatrix, DenseMatrix};
use a2gnn::transition::{TransitionKind, TransitionScheme};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn identity(n: usize) -> Mat {
    let mut m = zeros(n, n);
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn from_dense(m: &DenseMatrix) -> Mat {
    (0..m.rows()).map(|i| m.row(i).iter().map(|&v| v as f64).collect()).collect()
}

pub fn to_dense(m: &Mat) -> DenseMatrix {
    let cols = m.first().map_or(0, Vec::len);
    DenseMatrix::from_fn(m.len(), cols, |i, j| m[i][j] as f32)
}

pub fn from_csr(m: &CsrMatrix) -> Mat {
    let mut out = zeros(m.rows(), m.cols());
    for (i, j, v) in m.iter() {
        out[i][j] = v as f64;
    }
    out
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat, s: f64) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + s * v).collect())
        .collect()
}

pub fn power_apply(p: &Mat, x: &Mat, k: usize) -> Mat {
    (0..k).fold(x.clone(), |acc, _| matmul(p, &acc))
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max)
}

fn sym_normalize(m: &Mat) -> Mat {
    let d: Vec<f64> = m
        .iter()
        .map(|r| r.iter().sum::<f64>())
        .map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 })
        .collect();
    m.iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, v)| d[i] * v * d[j]).collect())
        .collect()
}

fn row_normalize(m: &Mat) -> Mat {
    m.iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect()
}

/// Every scheme written out directly from its definition.
pub fn dense_transition(adj: &Mat, scheme: &TransitionScheme) -> Mat {
    let n = adj.len();
    let looped = add(adj, &identity(n), 1.0);
    match scheme.kind {
        TransitionKind::Sym => sym_normalize(&looped),
        TransitionKind::NoLoop => sym_normalize(adj),
        TransitionKind::Rw => row_normalize(&looped),
        TransitionKind::Diff => {
            let w = row_normalize(&looped);
            let mut term = identity(n);
            let mut coef = (-1.0f64).exp();
            let mut sum = zeros(n, n);
            for p in 0..=scheme.diffusion_truncation {
                if p > 0 {
                    term = matmul(&w, &term);
                    coef /= p as f64;
                }
                sum = add(&sum, &term, coef);
            }
            sum
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut a = a.clone();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(1e-300);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values, descending, from the eigenvalues of `AᵀA`.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    let ata = matmul(&transpose(a), a);
    jacobi_eigenvalues(&ata).into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// Erdős–Rényi graph as a binary symmetric adjacency without self-loops.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> CsrMatrix {
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                triplets.push((i, j, 1.0));
                triplets.push((j, i, 1.0));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, triplets).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f32) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}
