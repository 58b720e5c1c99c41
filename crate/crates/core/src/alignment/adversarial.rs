use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, relu, relu_backward, DenseMatrix};
use crate::model::glorot_uniform;

pub const DEFAULT_DISC_HIDDEN: usize = 128;

/// Domain discriminator: `sigmoid(relu(H W_1 + b_1) w_2 + b_2)`.
///
/// Gradients are returned in the same type, one entry per tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorParams {
    /// `hidden_dim x disc_hidden`
    pub hidden_weight: DenseMatrix,
    /// `1 x disc_hidden`
    pub hidden_bias: DenseMatrix,
    /// `disc_hidden x 1`
    pub out_weight: DenseMatrix,
    /// `1 x 1`
    pub out_bias: DenseMatrix,
}

impl DiscriminatorParams {
    /// Glorot hidden layer, zero biases and a zero output layer, so every node
    /// starts at `d̂ = 0.5`.
    pub fn init(hidden_dim: usize, disc_hidden: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || disc_hidden == 0 {
            return Err(Error::InvalidConfig("discriminator dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            hidden_weight: glorot_uniform(&mut rng, hidden_dim, disc_hidden),
            hidden_bias: DenseMatrix::zeros(1, disc_hidden),
            out_weight: DenseMatrix::zeros(disc_hidden, 1),
            out_bias: DenseMatrix::zeros(1, 1),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            hidden_weight: z(&self.hidden_weight),
            hidden_bias: z(&self.hidden_bias),
            out_weight: z(&self.out_weight),
            out_bias: z(&self.out_bias),
        }
    }

    pub fn tensor_names(&self) -> [&'static str; 4] {
        ["disc.hidden_weight", "disc.hidden_bias", "disc.out_weight", "disc.out_bias"]
    }

    pub fn tensors(&self) -> [&DenseMatrix; 4] {
        [&self.hidden_weight, &self.hidden_bias, &self.out_weight, &self.out_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix; 4] {
        [
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.out_weight,
            &mut self.out_bias,
        ]
    }

    fn add_scaled(&mut self, other: &Self, s: f32) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    /// Discriminator logits, one per row of `h`.
    pub fn logits(&self, h: &DenseMatrix) -> Result<Vec<f64>> {
        Ok(self.forward(h)?.2)
    }

    fn forward(&self, h: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>)> {
        let mut z = gemm(h, &self.hidden_weight, false, false)?;
        let b = self.hidden_bias.row(0);
        for i in 0..z.rows() {
            for (v, bb) in z.row_mut(i).iter_mut().zip(b) {
                *v += bb;
            }
        }
        let a = relu(&z);
        let w = self.out_weight.data();
        let b2 = self.out_bias.get(0, 0) as f64;
        let logits = (0..a.rows())
            .map(|i| {
                a.row(i)
                    .iter()
                    .zip(w)
                    .map(|(x, y)| *x as f64 * *y as f64)
                    .sum::<f64>()
                    + b2
            })
            .collect();
        Ok((z, a, logits))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// BCE contributions of one domain whose rows all carry label `d`; `count` is
/// the total number of rows across both domains. Returns the summed loss and
/// accumulates the true gradients into `grads`; yields `dL/dH` for the rows.
fn domain_part(
    disc: &DiscriminatorParams,
    h: &DenseMatrix,
    d: f64,
    count: f64,
    grads: &mut DiscriminatorParams,
) -> Result<(f64, DenseMatrix)> {
    let (z, a, logits) = disc.forward(h)?;
    // BCE with logits: softplus(l) - d * l, derivative sigmoid(l) - d.
    let loss: f64 = logits.iter().map(|&l| softplus(l) - d * l).sum::<f64>() / count;
    let dlogit: Vec<f64> = logits.iter().map(|&l| (sigmoid(l) - d) / count).collect();

    let m = a.cols();
    let mut d_out_w = vec![0.0f64; m];
    for (i, &g) in dlogit.iter().enumerate() {
        for (acc, &x) in d_out_w.iter_mut().zip(a.row(i)) {
            *acc += g * x as f64;
        }
    }
    let d_out_b: f64 = dlogit.iter().sum();
    let w = disc.out_weight.data();
    let da = DenseMatrix::from_fn(a.rows(), m, |i, j| (dlogit[i] * w[j] as f64) as f32);
    let dz = relu_backward(&z, &da)?;

    grads
        .hidden_weight
        .add_scaled(&gemm(h, &dz, true, false)?, 1.0)?;
    grads.hidden_bias.add_scaled(&dz.column_sums(), 1.0)?;
    for (acc, g) in grads.out_weight.data_mut().iter_mut().zip(d_out_w) {
        *acc += g as f32;
    }
    grads.out_bias.data_mut()[0] += d_out_b as f32;
    let dh = gemm(&dz, &disc.hidden_weight, false, true)?;
    Ok((loss, dh))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainLoss {
    pub loss: f64,
    pub grad_disc: DiscriminatorParams,
    pub grad_hs: DenseMatrix,
    pub grad_ht: DenseMatrix,
}

/// Mean binary cross-entropy of the discriminator over all rows, with label 0
/// for source rows and 1 for target rows, and its plain gradients.
pub fn domain_loss(hs: &DenseMatrix, ht: &DenseMatrix, disc: &DiscriminatorParams) -> Result<DomainLoss> {
    if hs.rows() == 0 || ht.rows() == 0 {
        return Err(Error::EmptyInput("adversarial domain"));
    }
    let count = (hs.rows() + ht.rows()) as f64;
    let mut grad_disc = disc.zeros_like();
    let (ls, grad_hs) = domain_part(disc, hs, 0.0, count, &mut grad_disc)?;
    let (lt, grad_ht) = domain_part(disc, ht, 1.0, count, &mut grad_disc)?;
    Ok(DomainLoss {
        loss: ls + lt,
        grad_disc,
        grad_hs,
        grad_ht,
    })
}

/// [`domain_loss`] seen through a gradient reversal layer: the discriminator
/// gradient is unchanged, the encoder-side gradients are multiplied by
/// `-grl_scale`.
pub fn adversarial_loss(
    hs: &DenseMatrix,
    ht: &DenseMatrix,
    disc: &DiscriminatorParams,
    grl_scale: f64,
) -> Result<DomainLoss> {
    if !(grl_scale >= 0.0 && grl_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("grl scale {grl_scale} must be non-negative")));
    }
    let mut out = domain_loss(hs, ht, disc)?;
    let s = -grl_scale as f32;
    out.grad_hs = out.grad_hs.scale(s);
    out.grad_ht = out.grad_ht.scale(s);
    Ok(out)
}

/// Adds `s * grads` into `acc`; used when the trainer scales by `alpha`.
pub fn accumulate_disc_grads(acc: &mut DiscriminatorParams, grads: &DiscriminatorParams, s: f32) -> Result<()> {
    acc.add_scaled(grads, s)
}
