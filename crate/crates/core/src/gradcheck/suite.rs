//! Finite-difference checks over every op family, on random shapes.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckOptions};
use crate::autodiff::{Graph, NormStats, Var};
use crate::error::Result;
use crate::heads::{Head, HeadKind};
use crate::nn::{
    Cbam, Declarations, Downsample, Fpn, Mode, Module, NonLocal, ResidualBlock, ResidualBlockSpec, SadmSpec,
    SadmVariant, Scope,
};
use crate::params::ParameterStore;
use crate::tensor::{Padding, Tensor};
use crate::text::{ce_loss, Alphabet, LabelBatch};

type Program = Box<dyn Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>>;

struct Case {
    store: ParameterStore<f64>,
    program: Program,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Primitive,
    Block,
    Head,
    Loss,
}

/// One checked family: a primitive op, a block, a head or a loss.
#[derive(Clone, Copy)]
pub struct Family {
    pub name: &'static str,
    pub kind: FamilyKind,
    build: fn(&mut ChaCha8Rng) -> Result<Case>,
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Family({})", self.name)
    }
}

pub const FAMILIES: &[Family] = &[
    Family { name: "conv2d", kind: FamilyKind::Primitive, build: conv2d },
    Family { name: "maxpool2d", kind: FamilyKind::Primitive, build: maxpool },
    Family { name: "global_avg_pool", kind: FamilyKind::Primitive, build: gap },
    Family { name: "matmul", kind: FamilyKind::Primitive, build: matmul },
    Family { name: "relu", kind: FamilyKind::Primitive, build: relu },
    Family { name: "sigmoid", kind: FamilyKind::Primitive, build: sigmoid },
    Family { name: "add_sub_mul", kind: FamilyKind::Primitive, build: broadcast },
    Family { name: "scale_add_scalar", kind: FamilyKind::Primitive, build: affine },
    Family { name: "softmax", kind: FamilyKind::Primitive, build: softmax },
    Family { name: "log_softmax", kind: FamilyKind::Primitive, build: log_softmax },
    Family { name: "batch_norm", kind: FamilyKind::Primitive, build: batch_norm },
    Family { name: "upsample_nearest", kind: FamilyKind::Primitive, build: upsample },
    Family { name: "concat", kind: FamilyKind::Primitive, build: concat },
    Family { name: "sum_mean_max", kind: FamilyKind::Primitive, build: reduce },
    Family { name: "reshape_permute", kind: FamilyKind::Primitive, build: reshape_permute },
    Family { name: "residual", kind: FamilyKind::Block, build: residual },
    Family { name: "cbam", kind: FamilyKind::Block, build: cbam },
    Family { name: "non_local", kind: FamilyKind::Block, build: non_local },
    Family { name: "sadm", kind: FamilyKind::Block, build: sadm },
    Family { name: "fpn", kind: FamilyKind::Block, build: fpn },
    Family { name: "shpn", kind: FamilyKind::Head, build: shpn },
    Family { name: "sepn", kind: FamilyKind::Head, build: sepn },
    Family { name: "sppn", kind: FamilyKind::Head, build: sppn },
    Family { name: "ce_loss", kind: FamilyKind::Loss, build: ce },
    Family { name: "ctc_loss", kind: FamilyKind::Loss, build: ctc },
];

pub fn family(name: &str) -> Option<&'static Family> {
    FAMILIES.iter().find(|f| f.name == name)
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    /// Random shapes per primitive family.
    pub primitive_cases: usize,
    /// Random configurations per block, head and loss family.
    pub composite_cases: usize,
    pub eps: f64,
    pub max_entries_per_param: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            primitive_cases: 40,
            composite_cases: 16,
            eps: 1e-5,
            max_entries_per_param: 48,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyReport {
    pub family: &'static str,
    pub cases: usize,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// `case i: parameter[index] analytic vs numeric` of the worst entry.
    pub worst: Option<String>,
}

impl Family {
    pub fn check(&self, opts: &SuiteOptions) -> Result<FamilyReport> {
        let cases = match self.kind {
            FamilyKind::Primitive => opts.primitive_cases,
            _ => opts.composite_cases,
        };
        let tag = self.name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(u64::from(b)));
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ tag);
        let mut report = FamilyReport {
            family: self.name,
            cases,
            entries_checked: 0,
            max_rel_error: 0.0,
            worst: None,
        };
        for i in 0..cases {
            let case = (self.build)(&mut rng)?;
            let r = grad_check(
                case.program,
                &case.store,
                GradCheckOptions {
                    eps: opts.eps,
                    max_entries_per_param: Some(opts.max_entries_per_param),
                    seed: rng.gen(),
                    floor: opts.floor,
                },
            )?;
            report.entries_checked += r.entries_checked;
            if r.max_rel_error >= report.max_rel_error {
                report.max_rel_error = r.max_rel_error;
                report.worst = r
                    .worst
                    .map(|(name, idx, a, n)| format!("case {i}: {name}[{idx}] analytic {a:.6e} vs numeric {n:.6e}"));
            }
        }
        Ok(report)
    }
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<FamilyReport>> {
    FAMILIES.iter().map(|f| f.check(opts)).collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).expect("valid shape")
}

/// Values bounded away from zero (kinks of relu, ties of max).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen() { m } else { -m }
    })
    .expect("valid shape")
}

fn random_shape(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=max)).collect()
}

fn store_of(entries: Vec<(&str, Tensor<f64>)>) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (name, t) in entries {
        s.insert(name, t, true).expect("unique names");
    }
    s
}

/// Reduces `y` to a scalar with fixed random weights so every output entry
/// carries a distinct gradient.
fn project(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

/// A case whose program maps the named inputs to one tensor.
fn unary_case(
    rng: &mut ChaCha8Rng,
    inputs: Vec<(&'static str, Tensor<f64>)>,
    out_shape: &[usize],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let names: Vec<&'static str> = inputs.iter().map(|(n, _)| *n).collect();
    let weights = uniform(rng, out_shape, -1.0, 1.0);
    Case {
        store: store_of(inputs),
        program: Box::new(move |g, p| {
            let vars = names
                .iter()
                .map(|n| Ok(g.param(n, p.get(n)?.clone())))
                .collect::<Result<Vec<_>>>()?;
            let y = f(g, &vars)?;
            project(g, y, &weights)
        }),
    }
}

fn conv2d(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let pad = Padding::new(rng.gen_range(0..=1), rng.gen_range(0..=1), rng.gen_range(0..=1), rng.gen_range(0..=1));
    let (h, w) = (rng.gen_range(kh..=6), rng.gen_range(kw..=6));
    let bias = rng.gen_bool(0.5);
    let oh = (h + pad.top + pad.bottom - kh) / stride.0 + 1;
    let ow = (w + pad.left + pad.right - kw) / stride.1 + 1;
    let mut inputs = vec![
        ("x", uniform(rng, &[n, c, h, w], -1.0, 1.0)),
        ("w", uniform(rng, &[o, c, kh, kw], -1.0, 1.0)),
    ];
    if bias {
        inputs.push(("b", uniform(rng, &[o], -1.0, 1.0)));
    }
    Ok(unary_case(rng, inputs, &[n, o, oh, ow], move |g, v| {
        g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)
    }))
}

fn maxpool(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s: [usize; 4] = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6)];
    let out = [s[0], s[1], s[2].div_ceil(2), s[3].div_ceil(2)];
    let x = away_from_zero(rng, &s);
    Ok(unary_case(rng, vec![("x", x)], &out, |g, v| g.maxpool2d(v[0])))
}

fn gap(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = random_shape(rng, 4, 4);
    let x = uniform(rng, &s, -1.0, 1.0);
    Ok(unary_case(rng, vec![("x", x)], &[s[0], s[1], 1, 1], |g, v| g.global_avg_pool(v[0])))
}

fn matmul(rng: &mut ChaCha8Rng) -> Result<Case> {
    let [b, m, k, n] = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let a = uniform(rng, &[b, m, k], -1.0, 1.0);
    let bb = uniform(rng, &[b, k, n], -1.0, 1.0);
    Ok(unary_case(rng, vec![("a", a), ("b", bb)], &[b, m, n], |g, v| g.matmul(v[0], v[1])))
}

fn relu(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let x = away_from_zero(rng, &s);
    Ok(unary_case(rng, vec![("x", x)], &s, |g, v| Ok(g.relu(v[0]))))
}

fn sigmoid(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let x = uniform(rng, &s, -4.0, 4.0);
    Ok(unary_case(rng, vec![("x", x)], &s, |g, v| Ok(g.sigmoid(v[0]))))
}

fn broadcast(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let t: Vec<usize> = s.iter().map(|&d| if rng.gen_bool(0.4) { 1 } else { d }).collect();
    let (sa, sb) = if rng.gen() { (s.clone(), t) } else { (t, s.clone()) };
    let a = uniform(rng, &sa, -1.0, 1.0);
    let b = uniform(rng, &sb, -1.0, 1.0);
    Ok(unary_case(rng, vec![("a", a), ("b", b)], &s, |g, v| {
        let sum = g.add(v[0], v[1])?;
        let diff = g.sub(v[0], v[1])?;
        let prod = g.mul(sum, diff)?;
        let y = g.mul(prod, v[1])?;
        g.add(y, v[0])
    }))
}

fn affine(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let (k, c) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let x = uniform(rng, &s, -1.0, 1.0);
    Ok(unary_case(rng, vec![("x", x)], &s, move |g, v| {
        let y = g.scale(v[0], k);
        let y = g.add_scalar(y, c);
        g.mul(y, v[0])
    }))
}

fn softmax(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let axis = rng.gen_range(0..rank);
    let x = uniform(rng, &s, -2.0, 2.0);
    Ok(unary_case(rng, vec![("x", x)], &s, move |g, v| g.softmax(v[0], axis)))
}

fn log_softmax(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let axis = rng.gen_range(0..rank);
    let x = uniform(rng, &s, -2.0, 2.0);
    Ok(unary_case(rng, vec![("x", x)], &s, move |g, v| g.log_softmax(v[0], axis)))
}

fn batch_norm(rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut s = random_shape(rng, 4, 3);
    s[0] = rng.gen_range(2..=3);
    let c = s[1];
    let running = rng.gen_bool(0.3);
    let stats = if running {
        NormStats::Running {
            mean: (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            var: (0..c).map(|_| rng.gen_range(0.5..1.5)).collect(),
        }
    } else {
        NormStats::Batch
    };
    let inputs = vec![
        ("x", uniform(rng, &s, -1.0, 1.0)),
        ("gamma", uniform(rng, &[c], 0.5, 1.5)),
        ("beta", uniform(rng, &[c], -0.5, 0.5)),
    ];
    Ok(unary_case(rng, inputs, &s, move |g, v| {
        Ok(g.batch_norm(v[0], v[1], v[2], stats.clone(), 1e-5)?.out)
    }))
}

fn upsample(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = random_shape(rng, 4, 3);
    let f = rng.gen_range(1..=3);
    let x = uniform(rng, &s, -1.0, 1.0);
    Ok(unary_case(rng, vec![("x", x)], &[s[0], s[1], s[2] * f, s[3] * f], move |g, v| {
        g.upsample_nearest(v[0], f)
    }))
}

fn concat(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 3);
    let axis = rng.gen_range(0..rank);
    let parts = rng.gen_range(2..=3);
    let names = ["a", "b", "c"];
    let mut out = s.clone();
    out[axis] = 0;
    let mut inputs = Vec::new();
    for name in names.iter().take(parts) {
        let mut p = s.clone();
        p[axis] = rng.gen_range(1..=3);
        out[axis] += p[axis];
        inputs.push((*name, uniform(rng, &p, -1.0, 1.0)));
    }
    Ok(unary_case(rng, inputs, &out, move |g, v| g.concat(v, axis)))
}

fn reduce(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(1..=4);
    let s = random_shape(rng, rank, 4);
    let mut axes: Vec<usize> = (0..rank).filter(|_| rng.gen_bool(0.5)).collect();
    if axes.is_empty() {
        axes.push(rng.gen_range(0..rank));
    }
    let out: Vec<usize> = s.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect();
    let x = uniform(rng, &s, -1.0, 1.0);
    Ok(unary_case(rng, vec![("x", x)], &out, move |g, v| {
        let a = g.sum(v[0], &axes)?;
        let b = g.mean(v[0], &axes)?;
        let c = g.max(v[0], &axes)?;
        let ab = g.mul(a, b)?;
        g.add(ab, c)
    }))
}

fn reshape_permute(rng: &mut ChaCha8Rng) -> Result<Case> {
    let rank = rng.gen_range(2..=4);
    let s = random_shape(rng, rank, 4);
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.shuffle(rng);
    let permuted: Vec<usize> = perm.iter().map(|&a| s[a]).collect();
    let flat = vec![permuted.iter().product::<usize>()];
    let x = uniform(rng, &s, -1.0, 1.0);
    let weights_shape = flat.clone();
    Ok(unary_case(rng, vec![("x", x)], &weights_shape, move |g, v| {
        let y = g.permute(v[0], &perm)?;
        let y = g.reshape(y, &flat)?;
        let sq = g.mul(y, y)?;
        g.add(sq, y)
    }))
}

/// Declared parameters plus a small random shift so zero-initialised gates
/// and projections carry gradient.
fn declared_store(rng: &mut ChaCha8Rng, decl: &Declarations) -> Result<ParameterStore<f64>> {
    let mut store: ParameterStore<f64> = decl.instantiate(rng.gen())?;
    let names: Vec<String> = store.trainable().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = store.get(&name)?;
        let shifted = Tensor::from_fn(t.shape(), |i| t.data()[i] + rng.gen_range(-0.3..0.3))?;
        store.set(&name, shifted)?;
    }
    Ok(store)
}

/// A case running `forward` on inputs named `x0..` in training mode.
fn module_case(
    rng: &mut ChaCha8Rng,
    decl: Declarations,
    inputs: Vec<Tensor<f64>>,
    out_shape: &[usize],
    forward: impl Fn(&mut Scope<'_, f64>, &[Var]) -> Result<Var> + 'static,
) -> Result<Case> {
    const NAMES: [&str; 3] = ["x0", "x1", "x2"];
    let mut store = declared_store(rng, &decl)?;
    let n = inputs.len();
    for (name, t) in NAMES.iter().zip(inputs) {
        store.insert(*name, t, true)?;
    }
    let weights = uniform(rng, out_shape, -1.0, 1.0);
    Ok(Case {
        store,
        program: Box::new(move |g, p| {
            let mut scope = Scope::new(g, p, Mode::Train);
            let xs = NAMES[..n].iter().map(|name| scope.param(name)).collect::<Result<Vec<_>>>()?;
            let y = forward(&mut scope, &xs)?;
            project(scope.graph, y, &weights)
        }),
    })
}

fn single_module<M: Module + 'static>(rng: &mut ChaCha8Rng, m: M, input: [usize; 4]) -> Result<Case> {
    let mut decl = Declarations::new();
    m.declare("m", &mut decl);
    let out = m.output_shape(input)?;
    let x = uniform(rng, &input, -1.0, 1.0);
    module_case(rng, decl, vec![x], &out, move |scope, xs| m.forward(scope, "m", xs[0]))
}

fn residual(rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = rng.gen_range(2..=4);
    let out = if rng.gen() { c } else { rng.gen_range(2..=4) };
    let spec = ResidualBlockSpec {
        in_channels: c,
        out_channels: out,
        with_cbam: rng.gen(),
    };
    let input = [2, c, rng.gen_range(2..=4), rng.gen_range(2..=4)];
    single_module(rng, ResidualBlock::new(spec, 2)?, input)
}

fn cbam(rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = rng.gen_range(2..=4);
    let input = [rng.gen_range(1..=2), c, rng.gen_range(2..=5), rng.gen_range(2..=5)];
    single_module(rng, Cbam::new(c, 2)?, input)
}

fn non_local(rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = rng.gen_range(2..=4);
    let input = [rng.gen_range(1..=2), c, rng.gen_range(1..=4), rng.gen_range(1..=4)];
    single_module(rng, NonLocal::new(c)?, input)
}

fn sadm(rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = rng.gen_range(2..=4);
    let variant = if rng.gen() { SadmVariant::A } else { SadmVariant::B };
    let input = [2, c, 2 * rng.gen_range(1..=2), 2 * rng.gen_range(1..=2)];
    single_module(rng, Downsample::sadm(SadmSpec::new(c, variant))?, input)
}

fn fpn(rng: &mut ChaCha8Rng) -> Result<Case> {
    let fpn = Fpn {
        in_channels: [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)],
        channels: rng.gen_range(1..=3),
    };
    let n = rng.gen_range(1..=2);
    let (h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let shapes = [
        [n, fpn.in_channels[0], 4 * h, 4 * w],
        [n, fpn.in_channels[1], 2 * h, 2 * w],
        [n, fpn.in_channels[2], h, w],
    ];
    let out = fpn.output_shape(shapes[0], shapes[1], shapes[2])?;
    let mut decl = Declarations::new();
    fpn.declare("fpn", &mut decl);
    let inputs = shapes.iter().map(|s| uniform(rng, s, -1.0, 1.0)).collect();
    module_case(rng, decl, inputs, &out, move |scope, xs| {
        fpn.forward(scope, "fpn", [xs[0], xs[1], xs[2]])
    })
}

fn head(rng: &mut ChaCha8Rng, kind: HeadKind) -> Result<Case> {
    let feature = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4)];
    let head = Head::new(kind, feature, rng.gen_range(1..=4), rng.gen_range(2..=5))?;
    let out = head.output_shape(feature)?;
    let mut decl = Declarations::new();
    head.declare("head", &mut decl);
    let x = uniform(rng, &feature, -1.0, 1.0);
    module_case(rng, decl, vec![x], &out, move |scope, xs| head.forward(scope, "head", xs[0]))
}

fn shpn(rng: &mut ChaCha8Rng) -> Result<Case> {
    head(rng, HeadKind::Shpn)
}

fn sepn(rng: &mut ChaCha8Rng) -> Result<Case> {
    head(rng, HeadKind::Sepn)
}

fn sppn(rng: &mut ChaCha8Rng) -> Result<Case> {
    head(rng, HeadKind::Sppn)
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &Alphabet, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| alphabet.symbol(rng.gen_range(0..alphabet.symbol_count())).expect("in range"))
        .collect()
}

fn ce(rng: &mut ChaCha8Rng) -> Result<Case> {
    let alphabet = Alphabet::default();
    let (n, k) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
    let words: Vec<String> = (0..n).map(|_| random_word(rng, &alphabet, k)).collect();
    let labels = LabelBatch::from_words(&alphabet, &words, k)?;
    let smoothing = if rng.gen() { 0.0 } else { 0.1 };
    let logits = uniform(rng, &[n, k, alphabet.num_classes()], -2.0, 2.0);
    Ok(Case {
        store: store_of(vec![("logits", logits)]),
        program: Box::new(move |g, p| {
            let z = g.param("logits", p.get("logits")?.clone());
            ce_loss(g, z, &labels, smoothing)
        }),
    })
}

fn ctc(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (n, t, v) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(2..=5));
    let blank = rng.gen_range(0..v);
    let labels: Vec<Vec<usize>> = (0..n)
        .map(|_| loop {
            let len = rng.gen_range(0..=3.min(t));
            let l: Vec<usize> = (0..len)
                .map(|_| (blank + rng.gen_range(1..v)) % v)
                .collect();
            if crate::text::ctc::min_frames(&l) <= t {
                break l;
            }
        })
        .collect();
    let logits = uniform(rng, &[n, t, v], -2.0, 2.0);
    Ok(Case {
        store: store_of(vec![("logits", logits)]),
        program: Box::new(move |g, p| {
            let z = g.param("logits", p.get("logits")?.clone());
            let lp = g.log_softmax(z, 2)?;
            g.ctc_loss(lp, &labels, blank)
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_are_unique() {
        for (i, f) in FAMILIES.iter().enumerate() {
            assert!(FAMILIES[i + 1..].iter().all(|o| o.name != f.name));
        }
        assert!(family("ctc_loss").is_some());
    }

    #[test]
    fn conv_family_passes_on_a_few_shapes() {
        let opts = SuiteOptions {
            primitive_cases: 3,
            ..SuiteOptions::default()
        };
        let r = family("conv2d").unwrap().check(&opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
