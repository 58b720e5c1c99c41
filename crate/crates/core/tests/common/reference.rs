//! f64 reference forward passes and losses, written independently of the
//! crate's kernels, plus central finite differences.

use a2gnn::model::Arch;

use super::dense::{matmul, power_apply, Mat};

fn relu_tracked(z: Mat, pattern: &mut Vec<bool>) -> Mat {
    z.into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| {
                    pattern.push(v > 0.0);
                    v.max(0.0)
                })
                .collect()
        })
        .collect()
}

/// One branch of the encoder; `pattern` receives the sign of every
/// pre-activation so callers can detect ReLU kinks.
pub fn encode(arch: Arch, p: &Mat, prop: usize, x: &Mat, weights: &[Mat], pattern: &mut Vec<bool>) -> Mat {
    let mut h = match arch {
        Arch::A2gnn | Arch::PStackT => power_apply(p, x, prop),
        Arch::PtStack | Arch::TStackP => x.clone(),
    };
    for w in weights {
        if arch == Arch::PtStack {
            h = power_apply(p, &h, prop);
        }
        h = relu_tracked(matmul(&h, w), pattern);
    }
    if arch == Arch::TStackP {
        h = power_apply(p, &h, prop);
    }
    h
}

pub fn classify(h: &Mat, w: &Mat, b: &[f64]) -> Mat {
    matmul(h, w)
        .into_iter()
        .map(|row| row.into_iter().zip(b).map(|(v, bb)| v + bb).collect())
        .collect()
}

/// Mean softmax cross-entropy over the masked rows.
pub fn cross_entropy(logits: &Mat, labels: &[usize], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (i, row) in logits.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
        count += 1.0;
    }
    total / count
}

fn gaussian(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Biased squared MMD by explicit double sums, summed over bandwidths.
pub fn mmd(hs: &Mat, ht: &Mat, bandwidths: &[f64]) -> f64 {
    let mean_k = |a: &Mat, b: &Mat| {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += bandwidths.iter().map(|&sig| gaussian(x, y, sig)).sum::<f64>();
            }
        }
        s / (a.len() * b.len()) as f64
    };
    mean_k(hs, hs) + mean_k(ht, ht) - 2.0 * mean_k(hs, ht)
}

pub struct Disc {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Mean BCE with logits: label 0 for source rows, 1 for target rows.
pub fn domain_bce(hs: &Mat, ht: &Mat, disc: &Disc, pattern: &mut Vec<bool>) -> f64 {
    let mut total = 0.0;
    for (rows, d) in [(hs, 0.0), (ht, 1.0)] {
        for x in rows {
            let logit: f64 = (0..disc.b1.len())
                .map(|j| {
                    let z: f64 = x.iter().zip(&disc.w1).map(|(a, wrow)| a * wrow[j]).sum::<f64>() + disc.b1[j];
                    pattern.push(z > 0.0);
                    z.max(0.0) * disc.w2[j]
                })
                .sum::<f64>()
                + disc.b2;
            // -[d log σ(l) + (1 - d) log(1 - σ(l))]
            let sig = 1.0 / (1.0 + (-logit).exp());
            total -= d * sig.ln() + (1.0 - d) * (1.0 - sig).ln();
        }
    }
    total / (hs.len() + ht.len()) as f64
}

/// Central differences of `f` at `x`. `f` also returns its activation
/// pattern; coordinates whose `±h` evaluations change the pattern are
/// reported as `None`.
pub fn central_diff(f: impl Fn(&[f64]) -> (f64, Vec<bool>), x: &[f64], h: f64) -> Vec<Option<f64>> {
    let (_, base) = f(x);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let (up, pu) = f(&probe);
            probe[i] = x[i] - h;
            let (down, pd) = f(&probe);
            probe[i] = x[i];
            (pu == base && pd == base).then(|| (up - down) / (2.0 * h))
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over the coordinates where `fd` is defined.
pub fn relative_error(analytic: &[f64], fd: &[Option<f64>], floor: f64) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (a, b) in analytic.iter().zip(fd) {
        if let Some(b) = b {
            diff += (a - b) * (a - b);
            na += a * a;
            nb += b * b;
        }
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}

/// Splits a flat parameter vector back into matrices of the given shapes.
pub fn unflatten(flat: &[f64], shapes: &[(usize, usize)]) -> Vec<Mat> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = (0..r)
                .map(|i| flat[offset + i * c..offset + (i + 1) * c].to_vec())
                .collect();
            offset += r * c;
            m
        })
        .collect()
}
