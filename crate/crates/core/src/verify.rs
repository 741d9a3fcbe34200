//! Finite-difference verification of every op, layer and model variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{build_model, Dims, Forecaster, IntervalNet, ModelKind};
use crate::nn::{ConvBlock, Forward, Linear, Lstm, Mode, ParamStore, ResUnit, Role};
use crate::tensor::{compare_gradients, GradCheckReport, OpKind, RunningStats, Tape, Tensor, Var, DEFAULT_FD_STEP};

/// Relative-error bound for single ops.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Relative-error bound for composed graphs (layers and whole models).
pub const GRAPH_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Op,
    Layer,
    Model,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentCheck {
    pub component: String,
    pub level: Level,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub coordinates: usize,
    pub refined: usize,
    pub seeds: usize,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub dims: Dims,
    pub seeds: usize,
    pub first_seed: u64,
    /// Model kinds checked end to end.
    pub kinds: Vec<ModelKind>,
    /// Deliberately corrupt one backward rule (mutation testing).
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            dims: Dims::toy(),
            seeds: 20,
            first_seed: 0,
            kinds: ModelKind::ALL.to_vec(),
            fault: None,
        }
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces `y` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount to the gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = random(tape.shape(y), rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Graph<'a> = dyn Fn(&mut Forward<'_, f64>, &[Var]) -> Result<Var> + 'a;

/// Checks the gradient of `graph` with respect to every input and every
/// trainable tensor in `store`.
fn check_graph(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    fault: Option<OpKind>,
    graph: &Graph<'_>,
) -> Result<GradCheckReport> {
    let eval = |store: &mut ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut f = Forward::new(store, mode);
        let vars: Vec<Var> = inputs.iter().map(|x| f.tape.leaf(x.clone(), false)).collect();
        let out = graph(&mut f, &vars)?;
        Ok(f.tape.value(out).data()[0])
    };

    let (input_grads, param_grads) = {
        let mut f = Forward::new(store, mode);
        let vars: Vec<Var> = inputs.iter().map(|x| f.tape.leaf(x.clone(), true)).collect();
        let out = graph(&mut f, &vars)?;
        let mut pass = f.finish(out);
        pass.tape.inject_backward_fault(fault);
        pass.tape.backward(out)?;
        let ig: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| pass.tape.grad(v).unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (ig, pass.param_grads())
    };

    let mut report = GradCheckReport::empty();
    for (i, x) in inputs.iter().enumerate() {
        let mut probe_inputs = inputs.to_vec();
        let r = compare_gradients(x, &input_grads[i], DEFAULT_FD_STEP, 0..x.len(), |p| {
            probe_inputs[i] = p.clone();
            eval(store, &probe_inputs)
        })?;
        report.merge(&r);
    }
    let trainable: Vec<_> = store.ids().filter(|&id| store.entry(id).role == Role::Trainable).collect();
    for id in trainable {
        let original = store.get(id).clone();
        let analytic = param_grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(original.shape()));
        let r = compare_gradients(&original, &analytic, DEFAULT_FD_STEP, 0..original.len(), |p| {
            *store.get_mut(id) = p.clone();
            eval(store, inputs)
        })?;
        *store.get_mut(id) = original;
        report.merge(&r);
    }
    Ok(report)
}

struct Tally {
    checks: Vec<ComponentCheck>,
}

impl Tally {
    fn add(&mut self, name: &str, level: Level, r: &GradCheckReport) {
        let threshold = if level == Level::Op { OP_TOLERANCE } else { GRAPH_TOLERANCE };
        match self.checks.iter_mut().find(|c| c.component == name) {
            Some(c) => {
                if r.max_rel_error > c.max_rel_error || r.max_rel_error.is_nan() {
                    c.max_rel_error = r.max_rel_error;
                }
                c.coordinates += r.coordinates;
                c.refined += r.refined;
                c.seeds += 1;
            }
            None => self.checks.push(ComponentCheck {
                component: name.to_string(),
                level,
                max_rel_error: r.max_rel_error,
                threshold,
                coordinates: r.coordinates,
                refined: r.refined,
                seeds: 1,
            }),
        }
    }
}

fn op_suite(seed: u64, fault: Option<OpKind>, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f70);
    let mut empty = ParamStore::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng, g: &Graph<'_>| -> Result<()> {
        let _ = rng;
        let r = check_graph(&mut empty, &inputs, Mode::Train, fault, g)?;
        tally.add(name, Level::Op, &r);
        Ok(())
    };
    // Weights for the scalar reduction are drawn up front so every
    // evaluation sees the same function.
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x7773);
    let mut reduce_weights = |shape: &[usize]| random(shape, &mut wrng);

    macro_rules! unary {
        ($name:expr, $shape:expr, $op:expr) => {
            unary!($name, $shape, $shape, $op)
        };
        ($name:expr, $shape:expr, $out:expr, $op:expr) => {{
            let x = random(&$shape, &mut rng);
            let w = reduce_weights(&$out);
            run($name, vec![x], &mut rng, &|f, v| {
                let y = $op(&mut f.tape, v[0])?;
                let w = f.tape.constant(w.clone());
                let p = f.tape.mul(y, w)?;
                f.tape.sum(p)
            })?;
        }};
    }
    macro_rules! binary {
        ($name:expr, $sa:expr, $sb:expr, $sout:expr, $op:expr) => {{
            let (a, b) = (random(&$sa, &mut rng), random(&$sb, &mut rng));
            let w = reduce_weights(&$sout);
            run($name, vec![a, b], &mut rng, &|f, v| {
                let y = $op(&mut f.tape, v[0], v[1])?;
                let w = f.tape.constant(w.clone());
                let p = f.tape.mul(y, w)?;
                f.tape.sum(p)
            })?;
        }};
    }

    binary!("add", [3, 4], [3, 4], [3, 4], |t: &mut Tape<f64>, a, b| t.add(a, b));
    binary!("sub", [3, 4], [3, 4], [3, 4], |t: &mut Tape<f64>, a, b| t.sub(a, b));
    binary!("hadamard", [3, 4], [3, 4], [3, 4], |t: &mut Tape<f64>, a, b| t.mul(a, b));
    binary!("matmul", [3, 5], [5, 2], [3, 2], |t: &mut Tape<f64>, a, b| t.matmul(a, b));
    binary!("scale_cols", [4, 3], [3], [4, 3], |t: &mut Tape<f64>, a, b| t.scale_cols(a, b));
    binary!("concat", [2, 3], [2, 2], [2, 5], |t: &mut Tape<f64>, a, b| t.concat_cols(&[a, b]));
    unary!("scale", [5], |t: &mut Tape<f64>, a| t.scale(a, -1.7));
    unary!("relu", [12], |t: &mut Tape<f64>, a| t.relu(a));
    unary!("leaky_relu", [12], |t: &mut Tape<f64>, a| t.leaky_relu(a, 0.01));
    unary!("sigmoid", [12], |t: &mut Tape<f64>, a| t.sigmoid(a));
    unary!("tanh", [12], |t: &mut Tape<f64>, a| t.tanh(a));
    unary!("reshape", [2, 6], |t: &mut Tape<f64>, a| t.reshape(a, &[3, 4]).and_then(|r| t.reshape(r, &[2, 6])));
    unary!("slice_cols", [3, 6], |t: &mut Tape<f64>, a| {
        let s = t.slice_cols(a, 2, 3)?;
        t.concat_cols(&[s, s])
    });
    unary!("select", [2, 3, 4], [2, 12], |t: &mut Tape<f64>, a| {
        let s = t.select(a, 1)?;
        t.concat_cols(&[s, s, s])
    });
    unary!("gather_rows", [5, 3], |t: &mut Tape<f64>, a| {
        let g = t.gather_rows(a, &[4, 0, 4, 2, 1])?;
        t.reshape(g, &[5, 3])
    });
    {
        let x = random(&[7], &mut rng);
        run("sum", vec![x.clone()], &mut rng, &|f, v| f.tape.sum(v[0]))?;
        run("mean", vec![x], &mut rng, &|f, v| {
            let m = f.tape.mean(v[0])?;
            f.tape.scale(m, 3.0)
        })?;
    }

    // Linear with and without bias, batched input.
    {
        let (x, w, b) = (random(&[3, 5], &mut rng), random(&[4, 5], &mut rng), random(&[4], &mut rng));
        let rw = reduce_weights(&[3, 4]);
        run("linear", vec![x, w, b], &mut rng, &|f, v| {
            let y = f.tape.linear(v[0], v[1], Some(v[2]))?;
            let r = f.tape.constant(rw.clone());
            let p = f.tape.mul(y, r)?;
            f.tape.sum(p)
        })?;
    }
    // Convolution: 2 samples, 2→3 channels on 4×3.
    {
        let (x, k, b) = (random(&[2, 2, 4, 3], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng));
        let rw = reduce_weights(&[2, 3, 4, 3]);
        run("conv2d", vec![x, k, b], &mut rng, &|f, v| {
            let y = f.tape.conv2d(v[0], v[1], v[2])?;
            let r = f.tape.constant(rw.clone());
            let p = f.tape.mul(y, r)?;
            f.tape.sum(p)
        })?;
    }
    // Batch norm in train mode (batch statistics are part of the function).
    {
        let (x, g, b) = (random(&[3, 2, 2, 2], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng));
        let rw = reduce_weights(&[3, 2, 2, 2]);
        run("batchnorm", vec![x, g, b], &mut rng, &|f, v| {
            let mut stats = RunningStats::new(2);
            let y = f.tape.batch_norm(v[0], v[1], v[2], &mut stats, true)?;
            let r = f.tape.constant(rw.clone());
            let p = f.tape.mul(y, r)?;
            f.tape.sum(p)
        })?;
    }
    {
        let x = random(&[3, 4], &mut rng);
        let target = random(&[3, 4], &mut rng);
        run("mse", vec![x], &mut rng, &|f, v| f.tape.mse(v[0], &target))?;
    }
    Ok(())
}

fn layer_suite(seed: u64, dims: &Dims, fault: Option<OpKind>, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61);
    let (c, rows, cols) = (dims.channels, dims.rows, dims.cols);
    let reduce = |f: &mut Forward<'_, f64>, y: Var, s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(s);
        weighted_sum(&mut f.tape, y, &mut r)
    };
    let rs = rng.random::<u64>();

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "fc", 5, 3, true, &mut rng);
    let x = random(&[4, 5], &mut rng);
    let r = check_graph(&mut store, &[x], Mode::Train, fault, &|f, v| {
        let y = lin.forward(f, v[0])?;
        reduce(f, y, rs)
    })?;
    tally.add("Linear", Level::Layer, &r);

    let mut store = ParamStore::new();
    let unit = ResUnit::new(&mut store, "res", c, dims.residual, &mut rng);
    let x = random(&[2, c, rows, cols], &mut rng);
    let r = check_graph(&mut store, &[x], Mode::Train, fault, &|f, v| {
        let y = unit.forward(f, v[0])?;
        reduce(f, y, rs)
    })?;
    tally.add("ResUnit", Level::Layer, &r);

    let mut store = ParamStore::new();
    let block = ConvBlock::new(&mut store, "block", c, dims.residual, &mut rng);
    let x = random(&[2, 2, rows, cols], &mut rng);
    let r = check_graph(&mut store, &[x], Mode::Train, fault, &|f, v| {
        let y = block.forward(f, v[0])?;
        reduce(f, y, rs)
    })?;
    tally.add("ConvBlock", Level::Layer, &r);

    let mut store = ParamStore::new();
    let input = 2 * dims.cells();
    let lstm = Lstm::new(&mut store, "lstm", input, dims.hidden, &mut rng);
    let xs: Vec<Tensor<f64>> = (0..dims.seq_len).map(|_| random(&[2, input], &mut rng)).collect();
    let (h0, c0) = (random(&[2, dims.hidden], &mut rng), random(&[2, dims.hidden], &mut rng));
    let r = check_graph(&mut store, &[xs[0].clone(), h0, c0], Mode::Train, fault, &|f, v| {
        let (h, c) = lstm.step(f, v[0], v[1], v[2])?;
        let both = f.tape.concat_cols(&[h, c])?;
        reduce(f, both, rs)
    })?;
    tally.add("LSTM step", Level::Layer, &r);
    let r = check_graph(&mut store, &xs, Mode::Train, fault, &|f, v| {
        let h = lstm.sequence(f, v)?;
        reduce(f, h, rs)
    })?;
    tally.add("LSTM sequence", Level::Layer, &r);

    let mut store = ParamStore::new();
    let net = IntervalNet::new(&mut store, "interval", dims, dims.hidden, &mut rng);
    let v = random(&[3, dims.embed_dim], &mut rng);
    let beta = random(&[3, dims.hidden], &mut rng);
    let slope = dims.leaky_slope;
    let r = check_graph(&mut store, &[v, beta], Mode::Train, fault, &|f, v| {
        let y = net.apply(f, v[0], v[1], slope)?;
        reduce(f, y, rs)
    })?;
    tally.add("IntervalNet", Level::Layer, &r);
    Ok(())
}

fn model_suite(seed: u64, dims: &Dims, kind: ModelKind, fault: Option<OpKind>, tally: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f);
    let mut model = build_model::<f64>(kind, dims, seed)?;
    let batch = 2;
    let x = Tensor::from_fn(&[batch, dims.seq_len, 2, dims.rows, dims.cols], |_| rng.random_range(0.0..3.0));
    let target = Tensor::from_fn(&[batch, 2, dims.rows, dims.cols], |_| rng.random_range(0.0..3.0));
    let hours: Vec<usize> = (0..batch).map(|_| rng.random_range(0..24)).collect();

    let loss = |model: &mut crate::model::StdiModel<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut pass = model.forward(x, &hours, Mode::Train)?;
        let l = pass.tape.mse(pass.output, &target)?;
        Ok(pass.tape.value(l).data()[0])
    };

    let mut pass = model.forward_tracking_input(&x, &hours, Mode::Train)?;
    pass.tape.inject_backward_fault(fault);
    pass.backward_mse(&target)?;
    let input = pass.input.expect("input tracked");
    let dx = pass.tape.grad(input).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let grads = pass.param_grads();
    drop(pass);

    let mut report = compare_gradients(&x, &dx, DEFAULT_FD_STEP, 0..x.len(), |p| loss(&mut model, p))?;
    let ids: Vec<_> = model.store().ids().filter(|&id| model.store().entry(id).role == Role::Trainable).collect();
    for id in ids {
        let original = model.store().get(id).clone();
        let analytic = grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .ok_or_else(|| Error::Consistency(format!("{} received no gradient", model.store().entry(id).name)))?;
        let r = compare_gradients(&original, &analytic, DEFAULT_FD_STEP, 0..original.len(), |p| {
            *model.store_mut().get_mut(id) = p.clone();
            loss(&mut model, &x)
        })?;
        *model.store_mut().get_mut(id) = original;
        report.merge(&r);
    }
    tally.add(kind.name(), Level::Model, &report);
    Ok(())
}

/// Runs the op, layer and end-to-end suites over `seeds` seeds.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<ComponentCheck>> {
    opts.dims.validate()?;
    if opts.seeds == 0 {
        return Err(Error::Usage("gradcheck needs at least one seed".into()));
    }
    let mut tally = Tally { checks: Vec::new() };
    for s in 0..opts.seeds as u64 {
        let seed = opts.first_seed + s;
        op_suite(seed, opts.fault, &mut tally)?;
        layer_suite(seed, &opts.dims, opts.fault, &mut tally)?;
        for &kind in &opts.kinds {
            model_suite(seed, &opts.dims, kind, opts.fault, &mut tally)?;
        }
    }
    Ok(tally.checks)
}
