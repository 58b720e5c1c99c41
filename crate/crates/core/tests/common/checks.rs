//! Criterion-level checks. Each returns the worst observed error next to its
//! tolerance so callers can both assert and report.

use a2gnn::alignment::{adversarial_loss, domain_loss, mmd_loss, mmd_squared, DiscriminatorParams, MmdConfig};
use a2gnn::linalg::{softmax_cross_entropy, spmm, DenseMatrix};
use a2gnn::model::{backward, forward, Arch, BranchInput, Domain, ModelParams, ModelSpec};
use a2gnn::spectral::{lemma2_check, operator_norm, power_operator_norm, DEFAULT_POWER_MAX_ITER, DEFAULT_POWER_TOL};
use a2gnn::transition::{build_transition, propagate, TransitionKind, TransitionScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::{self, from_csr, from_dense, max_abs, max_abs_diff, random_graph, random_matrix, Mat};
use super::reference::{self as reference, central_diff, relative_error, unflatten, Disc};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tol: f64,
}

impl Check {
    fn new(name: impl Into<String>, tol: f64) -> Self {
        Self { name: name.into(), cases: 0, worst: 0.0, tol }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must never look like a pass.
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
    }

    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} cases, worst {:.2e} (tol {:.0e})", self.name, self.cases, self.worst, self.tol)
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn flat(m: &DenseMatrix) -> Vec<f64> {
    m.data().iter().map(|&v| v as f64).collect()
}

fn flat_all(ms: &[&DenseMatrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| flat(m)).collect()
}

fn frob_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum()
}

fn ce_case(r: &mut ChaCha8Rng) -> f64 {
    let (n, c) = (r.random_range(2..=10), r.random_range(2..=5));
    let logits = random_matrix(r, n, c, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.7)).collect();
    mask[0] = true;
    let opt: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &opt, &mask).unwrap();
    let f = |x: &[f64]| {
        let m = &unflatten(x, &[(n, c)])[0];
        (reference::cross_entropy(m, &labels, &mask), Vec::new())
    };
    relative_error(&flat(&grad), &central_diff(f, &flat(&logits), FD_STEP), FLOOR)
}

fn random_scheme(r: &mut ChaCha8Rng) -> TransitionScheme {
    match r.random_range(0..4) {
        0 => TransitionScheme::new(TransitionKind::Sym),
        1 => TransitionScheme::new(TransitionKind::NoLoop),
        2 => TransitionScheme::new(TransitionKind::Rw),
        _ => TransitionScheme::diffusion(r.random_range(1..=4)),
    }
}

fn encoder_case(r: &mut ChaCha8Rng, arch: Arch) -> f64 {
    let (ns, nt) = (r.random_range(2..=10), r.random_range(2..=10));
    let (d, hidden, c) = (r.random_range(1..=5), r.random_range(1..=5), r.random_range(2..=4));
    let k = r.random_range(1..=3);
    let (layers, source_prop) = match arch {
        Arch::A2gnn => (1, 0),
        _ => (r.random_range(1..=3), r.random_range(0..=k)),
    };
    let spec = ModelSpec {
        arch,
        num_layers: layers,
        k,
        source_prop_layers: source_prop,
        hidden_dim: hidden,
        num_classes: c,
        feat_dim: d,
    };
    let scheme = random_scheme(r);
    let ps = build_transition(&random_graph(r, ns, 0.4), &scheme).unwrap();
    let pt = build_transition(&random_graph(r, nt, 0.4), &scheme).unwrap();
    let (xs, xt) = (random_matrix(r, ns, d, 1.0), random_matrix(r, nt, d, 1.0));
    let params = ModelParams {
        encoder_weights: (0..layers)
            .map(|l| random_matrix(r, if l == 0 { d } else { hidden }, hidden, 1.0))
            .collect(),
        classifier_weight: random_matrix(r, hidden, c, 1.0),
        classifier_bias: random_matrix(r, 1, c, 1.0),
    };
    let precompute = r.random_bool(0.5);
    let src = BranchInput::new(&spec, Domain::Source, &ps, &xs, precompute).unwrap();
    let tgt = BranchInput::new(&spec, Domain::Target, &pt, &xt, precompute).unwrap();
    let out = forward(&params, &spec, &src, &tgt).unwrap();
    let (g, rs, rt) = (
        random_matrix(r, ns, c, 1.0),
        random_matrix(r, ns, hidden, 1.0),
        random_matrix(r, nt, hidden, 1.0),
    );
    let grads = backward(&params, &out.cache, &g, &rs, &rt).unwrap();

    let mut shapes: Vec<(usize, usize)> = params.encoder_weights.iter().map(DenseMatrix::shape).collect();
    shapes.extend([(hidden, c), (1, c)]);
    let (ps_d, pt_d, xs_d, xt_d) = (from_csr(&ps), from_csr(&pt), from_dense(&xs), from_dense(&xt));
    let (g_d, rs_d, rt_d) = (from_dense(&g), from_dense(&rs), from_dense(&rt));
    let f = |x: &[f64]| {
        let mats = unflatten(x, &shapes);
        let (ws, rest) = mats.split_at(layers);
        let mut pattern = Vec::new();
        let hs = reference::encode(arch, &ps_d, source_prop, &xs_d, ws, &mut pattern);
        let ht = reference::encode(arch, &pt_d, k, &xt_d, ws, &mut pattern);
        let logits = reference::classify(&hs, &rest[0], &rest[1][0]);
        let loss = frob_inner(&g_d, &logits) + frob_inner(&rs_d, &hs) + frob_inner(&rt_d, &ht);
        (loss, pattern)
    };
    let x0 = flat_all(&params.encoder_weights.iter().chain([&params.classifier_weight, &params.classifier_bias]).collect::<Vec<_>>());
    relative_error(&flat_all(&grads.tensors()), &central_diff(f, &x0, FD_STEP), FLOOR)
}

fn mmd_case(r: &mut ChaCha8Rng) -> f64 {
    let (ns, nt, d) = (r.random_range(1..=10), r.random_range(1..=10), r.random_range(1..=5));
    let hs = random_matrix(r, ns, d, 1.5);
    let ht = random_matrix(r, nt, d, 1.5);
    let bw: Vec<f64> = (0..r.random_range(1..=3)).map(|_| r.random_range(0.3..3.0)).collect();
    let (_, gs, gt) = mmd_squared(&hs, &ht, &bw).unwrap();
    let f = |x: &[f64]| {
        let m = unflatten(x, &[(ns, d), (nt, d)]);
        (reference::mmd(&m[0], &m[1], &bw), Vec::new())
    };
    relative_error(&flat_all(&[&gs, &gt]), &central_diff(f, &flat_all(&[&hs, &ht]), FD_STEP), FLOOR)
}

/// Returns (plain discriminator/encoder error, GRL encoder-side error).
fn adversarial_case(r: &mut ChaCha8Rng) -> (f64, f64) {
    let (ns, nt, d, m) = (
        r.random_range(1..=10),
        r.random_range(1..=10),
        r.random_range(1..=5),
        r.random_range(1..=6),
    );
    let hs = random_matrix(r, ns, d, 1.0);
    let ht = random_matrix(r, nt, d, 1.0);
    let disc = DiscriminatorParams {
        hidden_weight: random_matrix(r, d, m, 1.0),
        hidden_bias: random_matrix(r, 1, m, 0.5),
        out_weight: random_matrix(r, m, 1, 1.0),
        out_bias: random_matrix(r, 1, 1, 0.5),
    };
    let shapes = [(ns, d), (nt, d), (d, m), (1, m), (m, 1), (1, 1)];
    let f = |x: &[f64]| {
        let v = unflatten(x, &shapes);
        let disc = Disc {
            w1: v[2].clone(),
            b1: v[3][0].clone(),
            w2: v[4].iter().map(|row| row[0]).collect(),
            b2: v[5][0][0],
        };
        let mut pattern = Vec::new();
        let loss = reference::domain_bce(&v[0], &v[1], &disc, &mut pattern);
        (loss, pattern)
    };
    let x0 = flat_all(&[&hs, &ht, &disc.hidden_weight, &disc.hidden_bias, &disc.out_weight, &disc.out_bias]);
    let fd = central_diff(f, &x0, FD_STEP);

    let plain = domain_loss(&hs, &ht, &disc).unwrap();
    let mut analytic = flat_all(&[&plain.grad_hs, &plain.grad_ht]);
    analytic.extend(flat_all(&plain.grad_disc.tensors()));
    let plain_err = relative_error(&analytic, &fd, FLOOR);

    // Through the GRL the encoder side must equal -scale times the true gradient.
    let scale = r.random_range(0.1..2.0);
    let rev = adversarial_loss(&hs, &ht, &disc, scale).unwrap();
    let enc_len = (ns + nt) * d;
    let expected: Vec<Option<f64>> = fd[..enc_len].iter().map(|g| g.map(|g| -scale * g)).collect();
    let grl_err = relative_error(&flat_all(&[&rev.grad_hs, &rev.grad_ht]), &expected, FLOOR);
    (plain_err, grl_err)
}

/// Criterion 1: every differentiable operation against central differences.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut ce = Check::new("cross-entropy", GRAD_TOL);
    let mut archs: Vec<(Arch, Check)> = [Arch::A2gnn, Arch::PtStack, Arch::PStackT, Arch::TStackP]
        .into_iter()
        .map(|a| (a, Check::new(format!("encoder {}", a.as_str()), GRAD_TOL)))
        .collect();
    let mut mmd = Check::new("mmd", GRAD_TOL);
    let mut adv = Check::new("adversarial", GRAD_TOL);
    let mut grl = Check::new("grl sign and scale", GRAD_TOL);
    for _ in 0..instances {
        ce.record(ce_case(&mut r));
        for (arch, check) in &mut archs {
            check.record(encoder_case(&mut r, *arch));
        }
        mmd.record(mmd_case(&mut r));
        let (a, g) = adversarial_case(&mut r);
        adv.record(a);
        grl.record(g);
    }
    let mut out = vec![ce];
    out.extend(archs.into_iter().map(|(_, c)| c));
    out.extend([mmd, adv, grl]);
    out
}

fn scaled_err(got: &DenseMatrix, want: &Mat) -> f64 {
    max_abs_diff(&from_dense(got), want) / max_abs(want).max(1.0)
}

/// Criterion 2: sparse kernels, transitions and the operator norm against
/// dense brute force on random graphs of at most 64 nodes.
pub fn oracle_suite(cases: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut spmm_c = Check::new("spmm", 1e-5);
    let mut prop_c = Check::new("propagate", 1e-5);
    let mut trans_c = Check::new("build_transition", 1e-5);
    let mut norm_c = Check::new("operator_norm", 1e-3);
    for case in 0..cases {
        let n = r.random_range(1..=64);
        let density = r.random_range(0.02..0.3);
        let adj = random_graph(&mut r, n, density);
        let adj_d = from_csr(&adj);
        let d = r.random_range(1..=8);
        let x = random_matrix(&mut r, n, d, 1.0);
        let x_d = from_dense(&x);
        for scheme in [
            TransitionScheme::new(TransitionKind::Sym),
            TransitionScheme::new(TransitionKind::NoLoop),
            TransitionScheme::new(TransitionKind::Rw),
            TransitionScheme::diffusion(r.random_range(1..=10)),
        ] {
            let p = build_transition(&adj, &scheme).unwrap();
            let want = dense::dense_transition(&adj_d, &scheme);
            trans_c.record(max_abs_diff(&from_csr(&p), &want) / max_abs(&want).max(1.0));

            let p_d = from_csr(&p);
            spmm_c.record(scaled_err(&spmm(&p, &x).unwrap(), &dense::matmul(&p_d, &x_d)));
            let k = r.random_range(0..=5);
            prop_c.record(scaled_err(&propagate(&p, &x, k).unwrap(), &dense::power_apply(&p_d, &x_d, k)));

            let sv = dense::singular_values(&p_d)[0];
            let est = operator_norm(&p, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, case as u64).unwrap().value;
            norm_c.record((est - sv).abs() / sv.max(1e-12));
            let kp = r.random_range(2..=4);
            let svk = dense::singular_values(&dense::power_apply(&p_d, &p_d, kp - 1))[0];
            let estk = power_operator_norm(&p, kp, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, case as u64)
                .unwrap()
                .value;
            norm_c.record((estk - svk).abs() / svk.max(1e-12));
        }
        // A signed, non-transition matrix.
        let m = a2gnn::linalg::CsrMatrix::from_dense(&DenseMatrix::from_fn(n, n, |_, _| {
            if r.random_bool(0.2) { r.random_range(-2.0..2.0) } else { 0.0 }
        }));
        let sv = dense::singular_values(&from_csr(&m))[0];
        let est = operator_norm(&m, DEFAULT_POWER_TOL, DEFAULT_POWER_MAX_ITER, case as u64).unwrap().value;
        norm_c.record(if sv == 0.0 { est } else { (est - sv).abs() / sv });
    }
    vec![spmm_c, prop_c, trans_c, norm_c]
}

/// Criterion 3: identities of the biased MMD estimator.
pub fn mmd_identities(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut self_c = Check::new("MMD(X, X)", 1e-6);
    let mut sym_c = Check::new("symmetry", 1e-6);
    let mut closed_c = Check::new("1x1 closed form", 1e-6);
    let mut nonneg_c = Check::new("non-negativity", 1e-6);
    for _ in 0..100 {
        let (n, m, d) = (r.random_range(1..=20), r.random_range(1..=20), r.random_range(1..=6));
        let x = random_matrix(&mut r, n, d, 2.0);
        let y = random_matrix(&mut r, m, d, 2.0);
        let y_shift = DenseMatrix::from_fn(m, d, |i, j| y.get(i, j) + 0.5);
        let bw: Vec<f64> = (0..r.random_range(1..=3)).map(|_| r.random_range(0.2..4.0)).collect();

        self_c.record(mmd_squared(&x, &x, &bw).unwrap().0.abs());
        let cfg = MmdConfig::default();
        self_c.record(mmd_loss(&x, &x, &cfg).unwrap().loss.abs());

        let (a, _, _) = mmd_squared(&x, &y_shift, &bw).unwrap();
        let (b, _, _) = mmd_squared(&y_shift, &x, &bw).unwrap();
        sym_c.record((a - b).abs());
        nonneg_c.record((-a).max(0.0));
        nonneg_c.record((-mmd_loss(&x, &y_shift, &cfg).unwrap().loss).max(0.0));

        let px = random_matrix(&mut r, 1, d, 2.0);
        let py = random_matrix(&mut r, 1, d, 2.0);
        let sigma = r.random_range(0.2..4.0);
        let dist: f64 = px.data().iter().zip(py.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let closed = 2.0 - 2.0 * (-dist / (2.0 * sigma * sigma)).exp();
        closed_c.record((mmd_squared(&px, &py, &[sigma]).unwrap().0 - closed).abs());
    }
    vec![self_c, sym_c, closed_c, nonneg_c]
}

/// Criterion 6: the submultiplicative chain and the strict `|λ₂|^k` decrease,
/// with `|λ₂|` cross-checked against dense eigenvalues.
pub fn lemma2_suite(graphs: usize, seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut chain = Check::new("sigma(P^k) <= sigma(P)^k <= sigma(P) max(1, sigma(P)^(k-1))", 1e-4);
    let mut strict = Check::new("|l2|^k < |l2| for symmetric P", 0.5);
    let mut l2_oracle = Check::new("|l2| against dense eigenvalues", 1e-3);
    for g in 0..graphs {
        let n = r.random_range(2..=64);
        let density = r.random_range(0.05..0.4);
        let adj = random_graph(&mut r, n, density);
        for kind in [TransitionKind::Sym, TransitionKind::Rw] {
            let p = build_transition(&adj, &TransitionScheme::new(kind)).unwrap();
            for k in [2usize, 3, 5] {
                let rep = lemma2_check(&p, k, 1e-4, g as u64).unwrap();
                let chained = rep.t2_1.powi(k as i32);
                let relaxed = rep.t2_1 * 1f64.max(rep.t2_1.powi(k as i32 - 1));
                // Violation amounts; zero when the inequality holds.
                chain.record((rep.t2_k - (chained + 1e-4)).max(0.0).max(chained - relaxed).max(0.0));
                if let Some(l2) = rep.lambda2 {
                    if l2.lambda2 > 1e-9 && l2.lambda2 < 1.0 - 1e-9 {
                        strict.record(if l2.lambda2.powi(k as i32) < l2.lambda2 { 0.0 } else { 1.0 });
                    }
                    if k == 2 {
                        let mut ev: Vec<f64> = dense::jacobi_eigenvalues(&from_csr(&p)).iter().map(|v| v.abs()).collect();
                        ev.sort_by(|a, b| b.total_cmp(a));
                        l2_oracle.record((ev[1] - l2.lambda2).abs());
                    }
                }
            }
        }
    }
    vec![chain, strict, l2_oracle]
}
