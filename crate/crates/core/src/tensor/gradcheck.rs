//! Finite-difference verification of the reverse sweep.
//!
//! The scalar probed is `Σ out ⊙ R` for a fixed random `R`, evaluated in
//! `f64` from the `f32` forward outputs so that only forward rounding
//! enters the difference quotient.
//!
//! Networks with ReLU, max-pool or L1 nodes are only piecewise smooth. A
//! central difference whose evaluations land on a different piece than the
//! base point measures a kink rather than the derivative. Each evaluation
//! records its tape's [`KinkPattern`]; when either side differs from the
//! base, the difference is retaken with the base pattern frozen, i.e. on
//! the smooth extension of the base piece that reverse mode differentiates.

use super::kernels::with_wide_accumulation;
use super::{Graph, KinkPattern, Tensor, UnaryFn, Var};
use crate::error::{Error, Result};
use crate::rng::{seeded, RngExt, SliceRandom};

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub step: f32,
    /// When set, checks this many largest-gradient entries plus this many
    /// random entries per input instead of every entry.
    pub max_entries: Option<usize>,
    /// Lower bound of the relative-error denominator. The effective bound
    /// for an input is the larger of this and the RMS of its analytic
    /// gradient, so entries far below the tensor's gradient scale are judged
    /// on that scale rather than on their own (noise-dominated) magnitude.
    pub floor: f64,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-3,
            max_entries: None,
            floor: 1e-6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Per-input maximum relative error.
    pub per_input: Vec<f64>,
}

pub type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn probe(graph: &Graph, out: Var, weights: &[f32]) -> f64 {
    graph
        .value(out)
        .data()
        .iter()
        .zip(weights)
        .map(|(&y, &r)| y as f64 * r as f64)
        .sum()
}

/// Probe value and the pattern of pieces it was evaluated on. Inputs are
/// bound as gradient leaves so that the piecewise nodes stay on the tape;
/// no backward pass is run.
fn evaluate(
    inputs: &[Tensor],
    build: &Builder<'_>,
    weights: &[f32],
    frozen: Option<&KinkPattern>,
) -> Result<(f64, KinkPattern)> {
    with_wide_accumulation(|| {
        let mut g = frozen.map_or_else(Graph::new, |p| Graph::frozen(p.clone()));
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
        let out = build(&mut g, &vars)?;
        if let Some(msg) = g.frozen_mismatch() {
            return Err(Error::invalid(format!("gradient check: {msg}")));
        }
        Ok((probe(&g, out, weights), g.kink_pattern()))
    })
}

/// Central difference for one entry on the base point's smooth piece.
fn entry_derivative(
    work: &mut [Tensor],
    (idx, e): (usize, usize),
    base: &KinkPattern,
    build: &Builder<'_>,
    weights: &[f32],
    step: f32,
) -> Result<f64> {
    let x0 = work[idx].data()[e];
    let (plus, minus) = (x0 + step, x0 - step);
    let mut side = |x: f32, frozen: Option<&KinkPattern>| {
        work[idx].data_mut()[e] = x;
        let r = evaluate(work, build, weights, frozen);
        work[idx].data_mut()[e] = x0;
        r
    };
    let (mut fp, pp) = side(plus, None)?;
    let (mut fm, pm) = side(minus, None)?;
    if pp != *base || pm != *base {
        fp = side(plus, Some(base))?.0;
        fm = side(minus, Some(base))?.0;
    }
    Ok((fp - fm) / (plus as f64 - minus as f64))
}

/// Compares analytic gradients of every input against central differences.
pub fn finite_difference_check(inputs: &[Tensor], build: &Builder<'_>, opts: &FdOptions) -> Result<FdOutcome> {
    let mut rng = seeded(opts.seed);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_grad())).collect();
    let out = build(&mut g, &vars)?;
    let weights: Vec<f32> = (0..g.value(out).numel())
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let r = g.constant(Tensor::new(g.value(out).shape(), weights.clone())?);
    let prod = g.mul(out, r)?;
    let loss = g.sum(prod);
    g.backward(loss)?;

    let (_, base) = evaluate(inputs, build, &weights, None)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = g
            .grad(v)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[idx].numel()]);
        let entries = select_entries(&analytic, opts.max_entries, &mut rng);
        let rms = (analytic.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / analytic.len() as f64).sqrt();
        let floor = opts.floor.max(rms);
        let mut worst = 0.0f64;
        let mut work = inputs.to_vec();
        for e in entries {
            let numeric = entry_derivative(&mut work, (idx, e), &base, build, &weights, opts.step)?;
            let a = analytic[e] as f64;
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(FdOutcome {
        max_rel_error,
        checked,
        per_input,
    })
}

fn select_entries(grad: &[f32], limit: Option<usize>, rng: &mut crate::rng::SeededRng) -> Vec<usize> {
    let n = grad.len();
    match limit {
        Some(k) if 2 * k < n => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
            let mut picked: Vec<usize> = order[..k].to_vec();
            let mut rest = order[k..].to_vec();
            rest.shuffle(rng);
            picked.extend_from_slice(&rest[..k]);
            picked
        }
        _ => (0..n).collect(),
    }
}

/// One named finite-difference case.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Box<Builder<'static>>,
    /// Entry sampling for this case; `None` checks every entry.
    pub max_entries: Option<usize>,
    /// Difference step for this case; `None` uses the sweep's step.
    pub step: Option<f32>,
}

impl GradCase {
    pub fn new(name: &'static str, inputs: Vec<Tensor>, build: Box<Builder<'static>>) -> Self {
        GradCase {
            name,
            inputs,
            build,
            max_entries: None,
            step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
    /// Set when the case could not be evaluated at all.
    pub error: Option<String>,
}

pub fn run_case(case: &GradCase, opts: &FdOptions, tolerance: f64) -> Result<GradRow> {
    let opts = FdOptions {
        max_entries: case.max_entries,
        step: case.step.unwrap_or(opts.step),
        ..opts.clone()
    };
    let outcome = finite_difference_check(&case.inputs, case.build.as_ref(), &opts)?;
    Ok(GradRow {
        name: case.name.to_string(),
        max_rel_error: outcome.max_rel_error,
        checked: outcome.checked,
        passed: outcome.max_rel_error < tolerance,
        error: None,
    })
}

/// Runs every case; evaluation errors become failed rows.
pub fn sweep(cases: &[GradCase], opts: &FdOptions, tolerance: f64) -> Vec<GradRow> {
    cases
        .iter()
        .map(|case| {
            run_case(case, opts, tolerance).unwrap_or_else(|e| GradRow {
                name: case.name.to_string(),
                max_rel_error: f64::NAN,
                checked: 0,
                passed: false,
                error: Some(e.to_string()),
            })
        })
        .collect()
}

fn random(shape: &[usize], rng: &mut crate::rng::SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

/// Values spread on a grid of spacing 0.05 and kept away from zero, so that
/// a ±1e-3 perturbation never crosses a kink or reorders a window.
fn separated(shape: &[usize], rng: &mut crate::rng::SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n)
        .map(|i| {
            let mag = 0.05 * (1 + i / 2) as f32;
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).expect("valid shape")
}

const TANH: UnaryFn = UnaryFn {
    name: "tanh",
    forward: f32::tanh,
    derivative: |x| 1.0 - x.tanh() * x.tanh(),
};

/// One case per differentiable operator.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = seeded(seed);
    let mut cases = Vec::new();
    let mut case = |name, inputs, build: Box<Builder<'static>>| cases.push(GradCase::new(name, inputs, build));
    case(
        "conv2d",
        vec![
            random(&[2, 2, 5, 5], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
        ],
        Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1)),
    );
    case(
        "conv_transpose2d",
        vec![
            random(&[1, 2, 3, 3], &mut rng),
            random(&[2, 3, 4, 4], &mut rng),
            random(&[3], &mut rng),
        ],
        Box::new(|g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1)),
    );
    case(
        "relu",
        vec![separated(&[2, 3, 4], &mut rng)],
        Box::new(|g, v| Ok(g.relu(v[0]))),
    );
    case(
        "sigmoid",
        vec![random(&[2, 3, 4], &mut rng)],
        Box::new(|g, v| Ok(g.sigmoid(v[0]))),
    );
    case(
        "maxpool2d",
        vec![separated(&[1, 2, 4, 4], &mut rng)],
        Box::new(|g, v| g.maxpool2d(v[0], 2)),
    );
    case(
        "pixel_shuffle",
        vec![random(&[1, 8, 2, 3], &mut rng)],
        Box::new(|g, v| g.pixel_shuffle(v[0], 2)),
    );
    case(
        "upsample_linear",
        vec![random(&[1, 2, 3, 3], &mut rng)],
        Box::new(|g, v| g.upsample_linear(v[0], 2)),
    );
    case(
        "concat",
        vec![random(&[1, 2, 2, 2], &mut rng), random(&[1, 3, 2, 2], &mut rng)],
        Box::new(|g, v| g.concat(&[v[0], v[1], v[0]], 1)),
    );
    case(
        "add",
        vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)],
        Box::new(|g, v| g.add(v[0], v[1])),
    );
    case(
        "sub",
        vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)],
        Box::new(|g, v| g.sub(v[0], v[1])),
    );
    case(
        "mul",
        vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)],
        Box::new(|g, v| g.mul(v[0], v[1])),
    );
    case(
        "scale",
        vec![random(&[2, 3], &mut rng)],
        Box::new(|g, v| Ok(g.scale(v[0], -2.5))),
    );
    case("sum", vec![random(&[2, 3], &mut rng)], Box::new(|g, v| Ok(g.sum(v[0]))));
    case(
        "unary",
        vec![random(&[2, 3], &mut rng)],
        Box::new(|g, v| Ok(g.unary(v[0], TANH))),
    );
    case(
        "l1_loss",
        vec![random(&[2, 3, 2], &mut rng), random(&[2, 3, 2], &mut rng)],
        Box::new(|g, v| g.l1_loss(v[0], v[1])),
    );
    cases
}
