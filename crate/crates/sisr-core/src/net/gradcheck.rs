//! Central finite-difference verification of the backward pass.
//!
//! For every parameter element sampled, the loss is evaluated at +h and -h
//! and the difference quotient compared against the analytic gradient. Two
//! subtleties make this rigorous rather than flaky:
//!
//! * the graph is generic over the float width, so the same code runs in
//!   f64 (tight tolerance) and f32 (loose tolerance, as rounding dominates);
//! * a difference quotient straddling a relu kink is not an estimate of the
//!   derivative at the center point. Each evaluation records the signs of
//!   all relu pre-activations; if the +h/-h runs disagree, that element is
//!   counted as skipped instead of checked. Skips are reported so callers
//!   can assert they stay rare.
//!
//! Besides per-op graphs, the suite checks randomly composed DAGs of up to
//! five ops, exercising grad accumulation across shared subexpressions.

use rand::prelude::*;

use super::graph::{Graph, NodeId};
use super::tensor::{Scalar, Tensor};

/// Tolerances and probe geometry for one finite-difference run.
#[derive(Debug, Clone, Copy)]
pub struct FdSettings {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// When both |analytic| and |fd| fall below this, the element passes as
    /// "zero gradient" (the relative error of two near-zeros is noise).
    pub denom_floor: f64,
    /// Elements sampled per parameter tensor.
    pub max_elems_per_param: usize,
}

impl FdSettings {
    /// f64 graphs: h = 1e-3, relative error < 1e-4.
    pub fn strict_f64() -> FdSettings {
        FdSettings { h: 1e-3, tol: 1e-4, denom_floor: 1e-7, max_elems_per_param: 48 }
    }

    /// f32 graphs: rounding noise dominates, relative error < 1e-2.
    pub fn loose_f32() -> FdSettings {
        FdSettings { h: 1e-2, tol: 1e-2, denom_floor: 1e-4, max_elems_per_param: 48 }
    }
}

#[derive(Debug, Default, Clone)]
pub struct GradcheckReport {
    /// Elements actually compared.
    pub checks: usize,
    /// Elements whose probe crossed a relu kink (not valid FD points).
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradcheckReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checks > 0
    }

    pub fn merge(&mut self, other: GradcheckReport) {
        self.checks += other.checks;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

/// Runs the FD comparison for every parameter of `graph` against the
/// analytic gradients of `loss`.
pub fn check_graph<T: Scalar>(
    graph: &mut Graph<T>,
    loss: NodeId,
    settings: &FdSettings,
    rng: &mut StdRng,
    label: &str,
) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    graph.forward(&[loss]).expect("gradcheck graphs must be executable");
    graph.backward(loss).expect("gradcheck graphs must be differentiable");
    let params = graph.param_ids();
    let analytic: Vec<(NodeId, String, Tensor<T>)> = params
        .iter()
        .map(|&p| {
            // A param the loss never touches has no grad buffer; its
            // analytic gradient is zero and the FD probe must agree.
            let g = graph.grad(p).cloned().unwrap_or_else(|| {
                Tensor::zeros(graph.value(p).unwrap().dims())
            });
            (p, graph.param_name(p).unwrap_or("?").to_string(), g)
        })
        .collect();

    for (pid, pname, grads) in analytic {
        let len = grads.len();
        let elems: Vec<usize> = if len <= settings.max_elems_per_param {
            (0..len).collect()
        } else {
            (0..settings.max_elems_per_param).map(|_| rng.random_range(0..len)).collect()
        };
        for e in elems {
            let orig = graph.param_value_mut(pid).unwrap().data()[e];
            let probe = |graph: &mut Graph<T>, v: T| -> (f64, Vec<bool>) {
                graph.param_value_mut(pid).unwrap().data_mut()[e] = v;
                graph.forward(&[loss]).unwrap();
                (graph.value(loss).unwrap().data()[0].into_f64(), graph.relu_input_signs())
            };
            let h = T::from_f64(settings.h);
            let (lp, signs_p) = probe(graph, orig + h);
            let (lm, signs_m) = probe(graph, orig - h);
            graph.param_value_mut(pid).unwrap().data_mut()[e] = orig;
            if signs_p != signs_m {
                report.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * settings.h);
            let a = grads.data()[e].into_f64();
            let denom = a.abs().max(fd.abs());
            report.checks += 1;
            if denom < settings.denom_floor {
                continue;
            }
            let rel = (a - fd).abs() / denom;
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > settings.tol {
                report.failures.push(format!(
                    "{label}: {pname}[{e}]: analytic {a:.3e} vs fd {fd:.3e} (rel {rel:.3e})"
                ));
            }
        }
    }
    report
}

fn rand_tensor<T: Scalar>(dims: &[usize], rng: &mut StdRng) -> Tensor<T> {
    let data = (0..dims.iter().product::<usize>())
        .map(|_| T::from_f64(rng.random_range(-0.9..0.9)))
        .collect();
    Tensor::from_vec(dims, data).unwrap()
}

/// One graph per op, with every differentiable leaf a parameter.
fn single_op_graphs<T: Scalar>(rng: &mut StdRng) -> Vec<(String, Graph<T>, NodeId)> {
    let mut out = Vec::new();
    let mut with_loss = |label: &str, mut g: Graph<T>, y: NodeId, c: usize, rng: &mut StdRng| {
        let t = g.input(c);
        g.bind(t, rand_tensor(&[2, c, 4, 4], rng)).unwrap();
        let loss = g.logcosh(y, t).unwrap();
        out.push((label.to_string(), g, loss));
    };

    for (k, bias) in [(1usize, false), (1, true), (3, false), (3, true)] {
        let mut g: Graph<T> = Graph::new();
        let x = g.param("x", rand_tensor(&[2, 3, 4, 4], rng));
        let w = g.param("w", rand_tensor(&[2, 3, k, k], rng));
        let b = bias.then(|| g.param("b", rand_tensor(&[2], rng)));
        let y = g.conv(x, w, b).unwrap();
        let label = format!("conv{k}x{k}{}", if bias { "+bias" } else { "" });
        with_loss(&label, g, y, 2, rng);
    }
    {
        let mut g: Graph<T> = Graph::new();
        let x = g.param("x", rand_tensor(&[2, 3, 4, 4], rng));
        let y = g.relu(x);
        with_loss("relu", g, y, 3, rng);
    }
    {
        let mut g: Graph<T> = Graph::new();
        let a = g.param("a", rand_tensor(&[2, 2, 4, 4], rng));
        let b = g.param("b", rand_tensor(&[2, 2, 4, 4], rng));
        let y = g.add(a, b).unwrap();
        with_loss("add", g, y, 2, rng);
    }
    {
        let mut g: Graph<T> = Graph::new();
        let a = g.param("a", rand_tensor(&[2, 1, 4, 4], rng));
        let b = g.param("b", rand_tensor(&[2, 2, 4, 4], rng));
        let c = g.param("c", rand_tensor(&[2, 3, 4, 4], rng));
        let y = g.concat(&[a, b, c]).unwrap();
        with_loss("concat", g, y, 6, rng);
    }
    {
        // logcosh itself: both sides are parameters, so the target-side
        // gradient (-tanh/count) is exercised too
        let mut g: Graph<T> = Graph::new();
        let p = g.param("pred", rand_tensor(&[2, 2, 4, 4], rng));
        let t = g.param("target", rand_tensor(&[2, 2, 4, 4], rng));
        let loss = g.logcosh(p, t).unwrap();
        out.push(("logcosh".to_string(), g, loss));
    }
    out
}

/// Random DAG of up to `ops` ops over parameter leaves. Channels are
/// tracked so every composition is well-formed by construction.
fn random_composition<T: Scalar>(rng: &mut StdRng, ops: usize) -> (Graph<T>, NodeId) {
    let (n, h, w) = (2usize, 4usize, 5usize);
    let mut g: Graph<T> = Graph::new();
    let mut pool: Vec<(NodeId, usize)> = Vec::new();
    for i in 0..rng.random_range(1..=2) {
        let c = rng.random_range(1..=3);
        let p = g.param(&format!("leaf{i}"), rand_tensor(&[n, c, h, w], rng));
        pool.push((p, c));
    }
    let mut pidx = 0;
    for _ in 0..ops {
        let pick = |rng: &mut StdRng, pool: &[(NodeId, usize)]| pool[rng.random_range(0..pool.len())];
        match rng.random_range(0..4) {
            0 => {
                let (x, c) = pick(rng, &pool);
                let cout = rng.random_range(1..=3);
                let k = if rng.random_bool(0.5) { 1 } else { 3 };
                pidx += 1;
                let wp = g.param(&format!("w{pidx}"), rand_tensor(&[cout, c, k, k], rng));
                let b = rng
                    .random_bool(0.5)
                    .then(|| g.param(&format!("b{pidx}"), rand_tensor(&[cout], rng)));
                pool.push((g.conv(x, wp, b).unwrap(), cout));
            }
            1 => {
                let (x, c) = pick(rng, &pool);
                pool.push((g.relu(x), c));
            }
            2 => {
                let (a, ca) = pick(rng, &pool);
                let partners: Vec<NodeId> =
                    pool.iter().filter(|&&(_, c)| c == ca).map(|&(id, _)| id).collect();
                let b = partners[rng.random_range(0..partners.len())];
                pool.push((g.add(a, b).unwrap(), ca));
            }
            _ => {
                let parts: Vec<(NodeId, usize)> =
                    (0..rng.random_range(2..=3)).map(|_| pick(rng, &pool)).collect();
                let ids: Vec<NodeId> = parts.iter().map(|p| p.0).collect();
                let c: usize = parts.iter().map(|p| p.1).sum();
                pool.push((g.concat(&ids).unwrap(), c));
            }
        }
    }
    let (out, c) = *pool.last().unwrap();
    let t = g.input(c);
    g.bind(t, rand_tensor(&[n, c, h, w], rng)).unwrap();
    let loss = g.logcosh(out, t).unwrap();
    (g, loss)
}

/// Full verification pass: per-op graphs and `compositions` random DAGs in
/// f64 (strict tolerances), then the same shapes in f32 (loose tolerances).
pub fn run_suite(seed: u64, compositions: usize) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    let mut rng = StdRng::seed_from_u64(seed);

    for (label, mut g, loss) in single_op_graphs::<f64>(&mut rng) {
        report.merge(check_graph(&mut g, loss, &FdSettings::strict_f64(), &mut rng, &label));
    }
    for i in 0..compositions {
        let ops = 1 + (i % 5);
        let (mut g, loss) = random_composition::<f64>(&mut rng, ops);
        let label = format!("composition#{i}({ops} ops, f64)");
        report.merge(check_graph(&mut g, loss, &FdSettings::strict_f64(), &mut rng, &label));
    }

    for (label, mut g, loss) in single_op_graphs::<f32>(&mut rng) {
        let label = format!("{label} (f32)");
        report.merge(check_graph(&mut g, loss, &FdSettings::loose_f32(), &mut rng, &label));
    }
    for i in 0..compositions.min(10) {
        let ops = 1 + (i % 5);
        let (mut g, loss) = random_composition::<f32>(&mut rng, ops);
        let label = format!("composition#{i}({ops} ops, f32)");
        report.merge(check_graph(&mut g, loss, &FdSettings::loose_f32(), &mut rng, &label));
    }
    report
}
