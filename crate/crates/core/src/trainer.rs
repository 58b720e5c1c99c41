//! Full-batch training of `L = L_cls + α · L_align`, validation-based model
//! selection, the seed-repeat protocol and ablation grids.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    adversarial_loss, mmd_loss, AlignKind, DiscriminatorParams, MmdConfig, DEFAULT_DISC_HIDDEN,
};
use crate::error::{Error, Result};
use crate::graph::{split_source, GraphDataset};
use crate::linalg::{adam_step, softmax_cross_entropy, AdamConfig, AdamState, CsrMatrix, DenseMatrix, ParamGrad};
use crate::metrics::{masked_f1, F1Scores};
use crate::model::{
    argmax_rows, backward, forward, init_params, predict, Arch, BranchInput, Domain, ModelGrads, ModelParams,
    ModelSpec,
};
use crate::transition::{build_transition, TransitionKind, TransitionScheme};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub align: AlignKind,
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub scheme: TransitionScheme,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub train_fraction: f64,
    pub mmd: MmdConfig,
    pub grl_scale: f64,
    pub disc_hidden: usize,
    /// Fold parameter-free propagation into the features once before training.
    pub precompute: bool,
}

impl TrainConfig {
    pub fn new(spec: ModelSpec) -> Self {
        Self {
            spec,
            align: AlignKind::Mmd,
            alpha: 1.0,
            lr: 0.005,
            weight_decay: 0.001,
            epochs: 300,
            seeds: vec![0, 1, 2, 3, 4],
            scheme: TransitionScheme::default(),
            patience: None,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            mmd: MmdConfig::default(),
            grl_scale: 1.0,
            disc_hidden: DEFAULT_DISC_HIDDEN,
            precompute: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.spec.validate()?;
        self.scheme.validate()?;
        self.mmd.validate()?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be non-negative", self.alpha));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if !(self.grl_scale >= 0.0 && self.grl_scale.is_finite()) {
            return bad(format!("grl scale {} must be non-negative", self.grl_scale));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.disc_hidden == 0 {
            return bad("discriminator width must be positive".into());
        }
        if matches!(self.patience, Some(0)) {
            return bad("patience must be at least 1".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_align: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Source validation scores of the parameters that produced `loss`.
    pub val: F1Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: F1Scores,
    /// `None` when the target graph has no labels.
    pub target: Option<F1Scores>,
    /// Target scores of the parameters after the final step, for diagnostics.
    pub last_target: Option<F1Scores>,
    pub stratification_fallback: bool,
    /// Epochs where the median bandwidth heuristic fell back to 1.
    pub degenerate_bandwidth_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub source: String,
    pub target: String,
    pub seeds: Vec<SeedReport>,
    pub target_macro_f1: Option<Summary>,
    pub target_micro_f1: Option<Summary>,
}

/// Everything a run needs that does not depend on the seed.
struct Prepared {
    source: BranchInput,
    target: BranchInput,
    target_transition: CsrMatrix,
}

fn check_pair(cfg: &TrainConfig, source: &GraphDataset, target: &GraphDataset) -> Result<()> {
    if source.feat_dim() != target.feat_dim() {
        return Err(Error::InvalidDataset {
            name: target.name.clone(),
            reason: format!(
                "feature dimension {} differs from source's {}",
                target.feat_dim(),
                source.feat_dim()
            ),
        });
    }
    if source.num_classes != target.num_classes {
        return Err(Error::InvalidDataset {
            name: target.name.clone(),
            reason: format!(
                "{} classes but the source has {}",
                target.num_classes, source.num_classes
            ),
        });
    }
    if cfg.spec.feat_dim != source.feat_dim() || cfg.spec.num_classes != source.num_classes {
        return Err(Error::InvalidConfig(format!(
            "model expects {} features and {} classes, data has {} and {}",
            cfg.spec.feat_dim,
            cfg.spec.num_classes,
            source.feat_dim(),
            source.num_classes
        )));
    }
    Ok(())
}

fn prepare(cfg: &TrainConfig, source: &GraphDataset, target: &GraphDataset) -> Result<Prepared> {
    let ps = build_transition(&source.adjacency, &cfg.scheme)?;
    let pt = build_transition(&target.adjacency, &cfg.scheme)?;
    Ok(Prepared {
        source: BranchInput::new(&cfg.spec, Domain::Source, &ps, &source.features, cfg.precompute)?,
        target: BranchInput::new(&cfg.spec, Domain::Target, &pt, &target.features, cfg.precompute)?,
        target_transition: pt,
    })
}

/// Trains one seed and returns its report together with the restored
/// best-validation parameters.
fn train_seed(
    cfg: &TrainConfig,
    prepared: &Prepared,
    source: &GraphDataset,
    target: &GraphDataset,
    seed: u64,
) -> Result<(SeedReport, ModelParams)> {
    let split = split_source(source, cfg.train_fraction, seed)?;
    let mut params = init_params(&cfg.spec, seed)?;
    let mut disc = match cfg.align {
        AlignKind::Adv => Some(DiscriminatorParams::init(
            cfg.spec.hidden_dim,
            cfg.disc_hidden,
            seed.wrapping_add(0x5eed),
        )?),
        _ => None,
    };
    let mmd_cfg = MmdConfig { seed, ..cfg.mmd.clone() };
    let adam = cfg.adam();
    let mut state = AdamState::default();
    let alpha = cfg.alpha as f32;
    let (ns, nt, hidden) = (
        prepared.source.num_nodes(),
        prepared.target.num_nodes(),
        cfg.spec.hidden_dim,
    );

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, F1Scores, ModelParams)> = None;
    let mut degenerate_bandwidth_epochs = 0;
    for epoch in 0..cfg.epochs {
        let out = forward(&params, &cfg.spec, &prepared.source, &prepared.target)?;
        let val = masked_f1(
            &argmax_rows(&out.logits_source),
            &source.labels,
            Some(&split.val_mask),
            source.num_classes,
        )?;
        let (l_cls, grad_logits) = softmax_cross_entropy(&out.logits_source, &source.labels, &split.train_mask)?;

        let (l_align, grad_hs, grad_ht, disc_grads) = match cfg.align {
            AlignKind::Mmd => {
                let m = mmd_loss(&out.h_source, &out.h_target, &mmd_cfg)?;
                degenerate_bandwidth_epochs += usize::from(m.degenerate_bandwidth);
                (m.loss, m.grad_hs.scale(alpha), m.grad_ht.scale(alpha), None)
            }
            AlignKind::Adv => {
                let d = disc.as_ref().expect("discriminator initialized for adversarial runs");
                let a = adversarial_loss(&out.h_source, &out.h_target, d, cfg.grl_scale)?;
                let mut g = a.grad_disc;
                for t in g.tensors_mut() {
                    *t = t.scale(alpha);
                }
                (a.loss, a.grad_hs.scale(alpha), a.grad_ht.scale(alpha), Some(g))
            }
            AlignKind::None => (
                0.0,
                DenseMatrix::zeros(ns, hidden),
                DenseMatrix::zeros(nt, hidden),
                None,
            ),
        };
        let total = l_cls + cfg.alpha * l_align;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, seed });
        }
        records.push(EpochRecord {
            epoch,
            loss: LossBreakdown { l_cls, l_align, total },
            val,
        });
        // Ties go to the later epoch: alignment keeps improving after the
        // source validation score saturates.
        if best.as_ref().is_none_or(|(_, b, _)| val.macro_f1 >= b.macro_f1) {
            best = Some((epoch, val, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }

        let grads = backward(&params, &out.cache, &grad_logits, &grad_hs, &grad_ht)?;
        drop(out);
        apply_step(&mut params, &grads, disc.as_mut().zip(disc_grads.as_ref()), &mut state, &adam)?;
    }

    let (best_epoch, best_val, best_params) = best.expect("at least one epoch runs");
    let (target_scores, last_target) = if target.num_labeled() > 0 {
        (
            Some(evaluate(&best_params, &cfg.spec, target, &prepared.target_transition)?),
            Some(evaluate(&params, &cfg.spec, target, &prepared.target_transition)?),
        )
    } else {
        (None, None)
    };
    Ok((
        SeedReport {
            seed,
            epochs: records,
            best_epoch,
            best_val,
            target: target_scores,
            last_target,
            stratification_fallback: split.stratification_fallback,
            degenerate_bandwidth_epochs,
        },
        best_params,
    ))
}

fn apply_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    disc: Option<(&mut DiscriminatorParams, &DiscriminatorParams)>,
    state: &mut AdamState,
    adam: &AdamConfig,
) -> Result<()> {
    let names = params.tensor_names();
    let mut list: Vec<ParamGrad> = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(&names)
        .map(|((v, g), n)| ParamGrad::new(n, v, g))
        .collect();
    if let Some((d, g)) = disc {
        let disc_names = d.tensor_names();
        list.extend(
            d.tensors_mut()
                .into_iter()
                .zip(g.tensors())
                .zip(disc_names)
                .map(|((v, g), n)| ParamGrad::new(n, v, g)),
        );
    }
    adam_step(&mut list, state, adam)
}

/// Trains once per seed and aggregates target scores.
pub fn train(cfg: &TrainConfig, source: &GraphDataset, target: &GraphDataset) -> Result<TrainReport> {
    Ok(train_with_params(cfg, source, target)?.0)
}

/// Like [`train`], also returning the restored parameters of every seed.
pub fn train_with_params(
    cfg: &TrainConfig,
    source: &GraphDataset,
    target: &GraphDataset,
) -> Result<(TrainReport, Vec<ModelParams>)> {
    cfg.validate()?;
    check_pair(cfg, source, target)?;
    let prepared = prepare(cfg, source, target)?;
    let runs: Vec<(SeedReport, ModelParams)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(cfg, &prepared, source, target, seed))
        .collect::<Result<_>>()?;
    let (seeds, params): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let collect = |f: fn(&F1Scores) -> f64| -> Option<Summary> {
        let v: Option<Vec<f64>> = seeds.iter().map(|s| s.target.as_ref().map(f)).collect();
        v.map(|v| Summary::of(&v))
    };
    let target_macro_f1 = collect(|s| s.macro_f1);
    let target_micro_f1 = collect(|s| s.micro_f1);
    Ok((
        TrainReport {
            config: cfg.clone(),
            source: source.name.clone(),
            target: target.name.clone(),
            seeds,
            target_macro_f1,
            target_micro_f1,
        },
        params,
    ))
}

/// Macro/Micro-F1 over all labeled target nodes.
pub fn evaluate(
    params: &ModelParams,
    spec: &ModelSpec,
    target: &GraphDataset,
    p_target: &CsrMatrix,
) -> Result<F1Scores> {
    if target.num_labeled() == 0 {
        return Err(Error::InvalidDataset {
            name: target.name.clone(),
            reason: "no labeled nodes to evaluate".into(),
        });
    }
    let input = BranchInput::new(spec, Domain::Target, p_target, &target.features, true)?;
    let pred = predict(params, spec, &input)?;
    masked_f1(&pred, &target.labels, None, target.num_classes)
}

/// One change applied to a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigDelta {
    /// Also resets the propagation layout: `a2gnn` gets one layer and no
    /// source propagation, the symmetric families propagate `k` on both sides.
    Arch(Arch),
    /// Target propagation; on the symmetric families also the source's, so a
    /// later `SourceProp` is needed to break the symmetry.
    K(usize),
    SourceProp(usize),
    Layers(usize),
    Alpha(f64),
    Align(AlignKind),
    Scheme(TransitionKind),
}

impl ConfigDelta {
    pub fn field(&self) -> &'static str {
        match self {
            Self::Arch(_) => "arch",
            Self::K(_) => "k",
            Self::SourceProp(_) => "source_prop",
            Self::Layers(_) => "layers",
            Self::Alpha(_) => "alpha",
            Self::Align(_) => "align",
            Self::Scheme(_) => "scheme",
        }
    }

    pub fn value(&self) -> String {
        match self {
            Self::Arch(a) => a.to_string(),
            Self::K(v) | Self::SourceProp(v) | Self::Layers(v) => v.to_string(),
            Self::Alpha(a) => a.to_string(),
            Self::Align(a) => a.to_string(),
            Self::Scheme(s) => s.to_string(),
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        let spec = &mut cfg.spec;
        match *self {
            Self::Arch(arch) => {
                spec.arch = arch;
                if arch == Arch::A2gnn {
                    spec.num_layers = 1;
                    spec.source_prop_layers = 0;
                } else {
                    spec.source_prop_layers = spec.k;
                }
            }
            Self::K(k) => {
                if spec.arch != Arch::A2gnn {
                    spec.source_prop_layers = k;
                }
                spec.k = k;
            }
            Self::SourceProp(p) => spec.source_prop_layers = p,
            Self::Layers(l) => spec.num_layers = l,
            Self::Alpha(a) => cfg.alpha = a,
            Self::Align(a) => cfg.align = a,
            Self::Scheme(kind) => cfg.scheme.kind = kind,
        }
    }

    /// Parses `field=value`.
    pub fn parse(field: &str, value: &str) -> Result<Self> {
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("`{v}` is not a count for `{field}`")))
        };
        Ok(match field {
            "arch" => Self::Arch(value.parse()?),
            "k" => Self::K(num(value)?),
            "source_prop" | "source-prop" => Self::SourceProp(num(value)?),
            "layers" => Self::Layers(num(value)?),
            "alpha" => Self::Alpha(
                value
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("`{value}` is not a number for `alpha`")))?,
            ),
            "align" => Self::Align(value.parse()?),
            "scheme" => Self::Scheme(value.parse()?),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "cannot vary `{other}` (expected arch, k, source_prop, layers, alpha, align or scheme)"
                )))
            }
        })
    }
}

/// A grid point: a label plus the deltas applied in order to the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub label: String,
    pub deltas: Vec<ConfigDelta>,
}

impl GridPoint {
    pub fn new(label: impl Into<String>, deltas: Vec<ConfigDelta>) -> Self {
        Self {
            label: label.into(),
            deltas,
        }
    }

    pub fn resolve(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        for d in &self.deltas {
            d.apply(&mut cfg);
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PropagationLocation,
    Modules,
    K,
    Alpha,
    Schemes,
    Architectures,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Self::PropagationLocation,
        Self::Modules,
        Self::K,
        Self::Alpha,
        Self::Schemes,
        Self::Architectures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PropagationLocation => "propagation-location",
            Self::Modules => "modules",
            Self::K => "k",
            Self::Alpha => "alpha",
            Self::Schemes => "schemes",
            Self::Architectures => "architectures",
        }
    }

    /// Grid points for this preset; `k` is the propagation count used where
    /// the grid does not vary it.
    pub fn grid(self, k: usize) -> Vec<GridPoint> {
        use ConfigDelta as D;
        let pt = |s, t| {
            GridPoint::new(
                format!("source={s},target={t}"),
                vec![D::Arch(Arch::PStackT), D::Layers(1), D::K(t), D::SourceProp(s)],
            )
        };
        match self {
            Self::PropagationLocation => vec![pt(0, k), pt(k, k), pt(k, 0), pt(0, 0)],
            Self::Modules => {
                let gcn = |sp, tp, alpha| {
                    vec![
                        D::Arch(Arch::PStackT),
                        D::Layers(1),
                        D::K(tp),
                        D::SourceProp(sp),
                        D::Align(AlignKind::Mmd),
                        D::Alpha(alpha),
                    ]
                };
                vec![
                    GridPoint::new("cls", gcn(1, 1, 0.0)),
                    GridPoint::new("cls+mmd", gcn(1, 1, 1.0)),
                    GridPoint::new("cls+mmd+k", gcn(k, k, 1.0)),
                    GridPoint::new("cls+mmd+k+asym", gcn(0, k, 1.0)),
                ]
            }
            Self::K => [0, 1, 3, 5, 10]
                .into_iter()
                .map(|k| GridPoint::new(format!("k={k}"), vec![D::Arch(Arch::A2gnn), D::K(k)]))
                .collect(),
            Self::Alpha => [0.0, 0.5, 1.0]
                .into_iter()
                .map(|a| GridPoint::new(format!("alpha={a}"), vec![D::Alpha(a)]))
                .collect(),
            Self::Schemes => [TransitionKind::Sym, TransitionKind::NoLoop, TransitionKind::Rw, TransitionKind::Diff]
                .into_iter()
                .map(|s| GridPoint::new(format!("scheme={s}"), vec![D::Scheme(s)]))
                .collect(),
            Self::Architectures => {
                let mut points = vec![GridPoint::new("arch=a2gnn", vec![D::Arch(Arch::A2gnn), D::K(k)])];
                for arch in [Arch::PtStack, Arch::PStackT, Arch::TStackP] {
                    points.push(GridPoint::new(
                        format!("arch={arch}"),
                        vec![D::K(k), D::Arch(arch), D::Layers(2)],
                    ));
                }
                points
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation preset `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    /// `(field, value)` for every delta of the grid point.
    pub keys: Vec<(String, String)>,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One CSV line per grid point: label, varied fields, then target scores.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,keys,macro_f1_mean,macro_f1_std,micro_f1_mean,micro_f1_std\n");
        for row in &self.rows {
            let keys: Vec<String> = row.keys.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let fmt = |s: Option<Summary>| match s {
                Some(s) => (format!("{:.6}", s.mean), format!("{:.6}", s.std)),
                None => (String::new(), String::new()),
            };
            let (mm, ms) = fmt(row.report.target_macro_f1);
            let (im, is) = fmt(row.report.target_micro_f1);
            out.push_str(&format!(
                "\"{}\",\"{}\",{mm},{ms},{im},{is}\n",
                row.label,
                keys.join(";")
            ));
        }
        out
    }
}

/// Runs every grid point against `base`; rows keep the grid order.
pub fn run_ablation(
    base: &TrainConfig,
    grid: &[GridPoint],
    source: &GraphDataset,
    target: &GraphDataset,
) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    let rows = grid
        .par_iter()
        .map(|point| {
            let cfg = point.resolve(base);
            Ok(AblationRow {
                label: point.label.clone(),
                keys: point
                    .deltas
                    .iter()
                    .map(|d| (d.field().to_string(), d.value()))
                    .collect(),
                report: train(&cfg, source, target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}
