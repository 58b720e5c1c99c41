//! Encoder architectures, forward pass, hand-derived backward pass and prediction.
//!
//! Every architecture is built from two operations: propagation `P·H` with a
//! transition matrix, and transformation `relu(H W)`. They differ in where the
//! propagations sit relative to the transformations:
//!
//! | arch       | branch representation                                   |
//! |------------|----------------------------------------------------------|
//! | `a2gnn`    | `relu(P^p X W)`, one transformation, source `p = 0`      |
//! | `p_stack_t`| `T_L(...T_1(P^p X))`                                     |
//! | `t_stack_p`| `P^p T_L(...T_1(X))`                                     |
//! | `pt_stack` | `T_L(P^p ... T_1(P^p X))`                                |
//!
//! `p` is `source_prop_layers` on the source branch and `k` on the target
//! branch. All transformation weights are shared by the two branches. A linear
//! classifier with bias maps the representation to class logits.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, relu, relu_backward, CsrMatrix, DenseMatrix};
use crate::transition::propagate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    A2gnn,
    PtStack,
    PStackT,
    TStackP,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::A2gnn => "a2gnn",
            Self::PtStack => "pt",
            Self::PStackT => "p-t",
            Self::TStackP => "t-p",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2gnn" => Ok(Self::A2gnn),
            "pt" | "pt_stack" => Ok(Self::PtStack),
            "p-t" | "p_stack_t" => Ok(Self::PStackT),
            "t-p" | "t_stack_p" => Ok(Self::TStackP),
            other => Err(Error::InvalidConfig(format!(
                "unknown architecture `{other}` (expected a2gnn, pt, p-t or t-p)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Number of transformation layers.
    pub num_layers: usize,
    /// Propagation count on the target branch.
    pub k: usize,
    /// Propagation count on the source branch.
    pub source_prop_layers: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub feat_dim: usize,
}

impl ModelSpec {
    pub fn a2gnn(feat_dim: usize, hidden_dim: usize, num_classes: usize, k: usize) -> Self {
        Self {
            arch: Arch::A2gnn,
            num_layers: 1,
            k,
            source_prop_layers: 0,
            hidden_dim,
            num_classes,
            feat_dim,
        }
    }

    /// A symmetric family with the same propagation count on both branches.
    pub fn symmetric(
        arch: Arch,
        feat_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        num_layers: usize,
        k: usize,
    ) -> Self {
        Self {
            arch,
            num_layers,
            k,
            source_prop_layers: k,
            hidden_dim,
            num_classes,
            feat_dim,
        }
    }

    pub fn prop_layers(&self, domain: Domain) -> usize {
        match domain {
            Domain::Source => self.source_prop_layers,
            Domain::Target => self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.hidden_dim == 0 || self.num_classes == 0 || self.feat_dim == 0 {
            return bad("hidden_dim, num_classes and feat_dim must be positive".into());
        }
        if self.num_layers == 0 {
            return bad("at least one transformation layer is required".into());
        }
        if self.arch == Arch::A2gnn && (self.source_prop_layers != 0 || self.num_layers != 1) {
            return bad("a2gnn has no source propagation and exactly one transformation".into());
        }
        Ok(())
    }

    fn layer_shape(&self, layer: usize) -> (usize, usize) {
        let fan_in = if layer == 0 { self.feat_dim } else { self.hidden_dim };
        (fan_in, self.hidden_dim)
    }
}

/// Trainable tensors of the encoder and classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// One weight per transformation layer, shared by both branches.
    pub encoder_weights: Vec<DenseMatrix>,
    pub classifier_weight: DenseMatrix,
    /// `1 x num_classes`.
    pub classifier_bias: DenseMatrix,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder_weights: Vec<DenseMatrix>,
    pub classifier_weight: DenseMatrix,
    pub classifier_bias: DenseMatrix,
}

impl ModelParams {
    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.encoder_weights.len())
            .map(|l| format!("encoder.{l}"))
            .chain(["classifier.weight".to_string(), "classifier.bias".to_string()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.encoder_weights
            .iter_mut()
            .chain([&mut self.classifier_weight, &mut self.classifier_bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder_weights.iter().all(DenseMatrix::is_finite)
            && self.classifier_weight.is_finite()
            && self.classifier_bias.is_finite()
    }
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            encoder_weights: params.encoder_weights.iter().map(z).collect(),
            classifier_weight: z(&params.classifier_weight),
            classifier_bias: z(&params.classifier_bias),
        }
    }

    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        self.encoder_weights
            .iter()
            .chain([&self.classifier_weight, &self.classifier_bias])
            .collect()
    }
}

pub(crate) fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
}

/// Glorot-uniform weights and a zero classifier bias. Depends only on the
/// tensor shapes and `seed`, not on the architecture family.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder_weights = (0..spec.num_layers)
        .map(|l| {
            let (fan_in, fan_out) = spec.layer_shape(l);
            glorot_uniform(&mut rng, fan_in, fan_out)
        })
        .collect();
    let classifier_weight = glorot_uniform(&mut rng, spec.hidden_dim, spec.num_classes);
    Ok(ModelParams {
        encoder_weights,
        classifier_weight,
        classifier_bias: DenseMatrix::zeros(1, spec.num_classes),
    })
}

/// Where the branch's propagations are applied at forward time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PropPlan {
    /// Applied to the input before the first transformation (not differentiated).
    input: usize,
    /// Applied before every transformation.
    per_layer: usize,
    /// Applied to the last transformation's output.
    output: usize,
}

/// One branch's input: features plus whatever transition matrices the forward
/// pass still needs.
///
/// For `a2gnn` and `p_stack_t` the propagation is parameter-free and happens
/// before any transformation, so [`BranchInput::new`] can fold it into the
/// features once (`precompute = true`). The interleaved `pt_stack` and the
/// post-transformation `t_stack_p` always propagate inside the forward pass.
#[derive(Debug, Clone)]
pub struct BranchInput {
    features: DenseMatrix,
    transition: Option<CsrMatrix>,
    transition_t: Option<CsrMatrix>,
    plan: PropPlan,
}

impl BranchInput {
    pub fn new(
        spec: &ModelSpec,
        domain: Domain,
        transition: &CsrMatrix,
        raw_features: &DenseMatrix,
        precompute: bool,
    ) -> Result<Self> {
        let p = spec.prop_layers(domain);
        if raw_features.cols() != spec.feat_dim {
            return Err(Error::ShapeMismatch {
                op: "branch input",
                left: raw_features.shape(),
                right: (raw_features.rows(), spec.feat_dim),
            });
        }
        if p > 0 && (transition.rows() != raw_features.rows() || transition.cols() != raw_features.rows()) {
            return Err(Error::ShapeMismatch {
                op: "branch input",
                left: transition.shape(),
                right: raw_features.shape(),
            });
        }
        let (features, plan) = match spec.arch {
            Arch::A2gnn | Arch::PStackT if precompute => (
                propagate(transition, raw_features, p)?,
                PropPlan { input: 0, per_layer: 0, output: 0 },
            ),
            Arch::A2gnn | Arch::PStackT => (
                raw_features.clone(),
                PropPlan { input: p, per_layer: 0, output: 0 },
            ),
            Arch::PtStack => (
                raw_features.clone(),
                PropPlan { input: 0, per_layer: p, output: 0 },
            ),
            Arch::TStackP => (
                raw_features.clone(),
                PropPlan { input: 0, per_layer: 0, output: p },
            ),
        };
        let online = plan.input + plan.per_layer + plan.output > 0;
        Ok(Self {
            features,
            transition: online.then(|| transition.clone()),
            transition_t: (plan.per_layer + plan.output > 0).then(|| transition.transpose()),
            plan,
        })
    }

    /// The features fed to the first transformation, after any precomputed
    /// propagation.
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    /// Whether the forward pass applies any sparse products.
    pub fn propagates_online(&self) -> bool {
        self.transition.is_some()
    }

    fn prop(&self, x: &DenseMatrix, times: usize) -> Result<DenseMatrix> {
        let p = self.transition.as_ref().expect("transition kept for online propagation");
        propagate(p, x, times)
    }

    fn prop_t(&self, x: &DenseMatrix, times: usize) -> Result<DenseMatrix> {
        let p = self.transition_t.as_ref().expect("transpose kept for online propagation");
        propagate(p, x, times)
    }
}

/// Activations of one branch needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BranchCache<'a> {
    input: &'a BranchInput,
    /// Input of each transformation's matrix product.
    layer_inputs: Vec<Cow<'a, DenseMatrix>>,
    pre_activations: Vec<DenseMatrix>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<'a> {
    source: BranchCache<'a>,
    target: BranchCache<'a>,
    h_source: DenseMatrix,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<'a> {
    pub h_source: DenseMatrix,
    pub h_target: DenseMatrix,
    pub logits_source: DenseMatrix,
    pub logits_target: DenseMatrix,
    pub cache: ForwardCache<'a>,
}

fn check_params(params: &ModelParams, spec: &ModelSpec) -> Result<()> {
    if params.encoder_weights.len() != spec.num_layers {
        return Err(Error::InvalidConfig(format!(
            "spec has {} transformation layers, params have {}",
            spec.num_layers,
            params.encoder_weights.len()
        )));
    }
    for (l, w) in params.encoder_weights.iter().enumerate() {
        if w.shape() != spec.layer_shape(l) {
            return Err(Error::ShapeMismatch {
                op: "encoder weight",
                left: w.shape(),
                right: spec.layer_shape(l),
            });
        }
    }
    if params.classifier_weight.shape() != (spec.hidden_dim, spec.num_classes)
        || params.classifier_bias.shape() != (1, spec.num_classes)
    {
        return Err(Error::ShapeMismatch {
            op: "classifier",
            left: params.classifier_weight.shape(),
            right: (spec.hidden_dim, spec.num_classes),
        });
    }
    Ok(())
}

/// Runs the shared encoder on one branch.
pub fn encode<'a>(params: &ModelParams, input: &'a BranchInput) -> Result<(DenseMatrix, BranchCache<'a>)> {
    let plan = input.plan;
    let mut h: Cow<'a, DenseMatrix> = if plan.input > 0 {
        Cow::Owned(input.prop(&input.features, plan.input)?)
    } else {
        Cow::Borrowed(&input.features)
    };
    let layers = params.encoder_weights.len();
    let mut layer_inputs = Vec::with_capacity(layers);
    let mut pre_activations = Vec::with_capacity(layers);
    for w in &params.encoder_weights {
        let a = if plan.per_layer > 0 {
            Cow::Owned(input.prop(&h, plan.per_layer)?)
        } else {
            h
        };
        let z = gemm(&a, w, false, false)?;
        h = Cow::Owned(relu(&z));
        layer_inputs.push(a);
        pre_activations.push(z);
    }
    let mut out = h.into_owned();
    if plan.output > 0 {
        out = input.prop(&out, plan.output)?;
    }
    Ok((
        out,
        BranchCache {
            input,
            layer_inputs,
            pre_activations,
        },
    ))
}

/// `H W_c + b`.
pub fn classify(params: &ModelParams, h: &DenseMatrix) -> Result<DenseMatrix> {
    let mut logits = gemm(h, &params.classifier_weight, false, false)?;
    let bias = params.classifier_bias.row(0);
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(logits)
}

/// Forward pass over both branches with shared weights.
pub fn forward<'a>(
    params: &ModelParams,
    spec: &ModelSpec,
    source: &'a BranchInput,
    target: &'a BranchInput,
) -> Result<ForwardOutput<'a>> {
    check_params(params, spec)?;
    let (h_source, source_cache) = encode(params, source)?;
    let (h_target, target_cache) = encode(params, target)?;
    let logits_source = classify(params, &h_source)?;
    let logits_target = classify(params, &h_target)?;
    Ok(ForwardOutput {
        cache: ForwardCache {
            source: source_cache,
            target: target_cache,
            h_source: h_source.clone(),
        },
        h_source,
        h_target,
        logits_source,
        logits_target,
    })
}

/// Accumulates encoder weight gradients for one branch given `dL/dH`.
fn backward_branch(
    params: &ModelParams,
    cache: &BranchCache<'_>,
    grad_h: &DenseMatrix,
    grads: &mut [DenseMatrix],
) -> Result<()> {
    let plan = cache.input.plan;
    let mut dh = if plan.output > 0 {
        cache.input.prop_t(grad_h, plan.output)?
    } else {
        grad_h.clone()
    };
    for l in (0..params.encoder_weights.len()).rev() {
        let dz = relu_backward(&cache.pre_activations[l], &dh)?;
        let dw = gemm(&cache.layer_inputs[l], &dz, true, false)?;
        grads[l].add_scaled(&dw, 1.0)?;
        if l > 0 {
            let da = gemm(&dz, &params.encoder_weights[l], false, true)?;
            dh = if plan.per_layer > 0 {
                cache.input.prop_t(&da, plan.per_layer)?
            } else {
                da
            };
        }
    }
    Ok(())
}

/// Backward pass for `L_cls(logits_source) + alignment(H_source, H_target)`.
///
/// `grad_logits_source` is the classification gradient; `grad_h_source` and
/// `grad_h_target` are alignment gradients w.r.t. the branch representations
/// (already sign-flipped when they come through gradient reversal).
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache<'_>,
    grad_logits_source: &DenseMatrix,
    grad_h_source: &DenseMatrix,
    grad_h_target: &DenseMatrix,
) -> Result<ModelGrads> {
    let ns = cache.h_source.rows();
    let nt = cache.target.input.num_nodes();
    let hidden = params.classifier_weight.rows();
    let c = params.classifier_weight.cols();
    let expect = |op, m: &DenseMatrix, shape: (usize, usize)| {
        if m.shape() != shape {
            Err(Error::ShapeMismatch {
                op,
                left: m.shape(),
                right: shape,
            })
        } else {
            Ok(())
        }
    };
    expect("backward grad_logits_source", grad_logits_source, (ns, c))?;
    expect("backward grad_h_source", grad_h_source, (ns, hidden))?;
    expect("backward grad_h_target", grad_h_target, (nt, hidden))?;

    let mut grads = ModelGrads::zeros_like(params);
    grads.classifier_weight = gemm(&cache.h_source, grad_logits_source, true, false)?;
    grads.classifier_bias = grad_logits_source.column_sums();

    let mut dh_source = gemm(grad_logits_source, &params.classifier_weight, false, true)?;
    dh_source.add_scaled(grad_h_source, 1.0)?;
    backward_branch(params, &cache.source, &dh_source, &mut grads.encoder_weights)?;
    backward_branch(params, &cache.target, grad_h_target, &mut grads.encoder_weights)?;
    Ok(grads)
}

/// Row-wise argmax; ties go to the lower class index.
pub fn argmax_rows(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per node of one branch.
pub fn predict(params: &ModelParams, spec: &ModelSpec, input: &BranchInput) -> Result<Vec<usize>> {
    check_params(params, spec)?;
    let (h, _) = encode(params, input)?;
    Ok(argmax_rows(&classify(params, &h)?))
}
