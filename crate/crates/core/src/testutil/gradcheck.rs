//! Central finite-difference checks of every operator VJP, in f64.
//!
//! Each case draws a random shape and random inputs, forms the scalar
//! `L = sum(r * f(inputs))` for a random projection `r`, and compares the VJP
//! (called with `grad = r`) against `(L(v + h) - L(v - h)) / 2h` entry by entry.
//! Relative error is `|a - n| / max(|a|, |n|, 1e-3)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian, uniform};
use crate::arch::{ArchConfig, Mode, Model};
use crate::nn::*;
use crate::tensor::{Precision, Tensor};

pub const STEP: f64 = 1e-5;
/// Whole-model step: small enough that few ReLU6/max-pool switches fall
/// inside it, large enough that f64 roundoff stays near 1e-8.
pub const GRAPH_STEP: f64 = 1e-7;
const FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
}

fn dotp(a: &Tensor, r: &Tensor) -> f64 {
    a.to_f64_vec().iter().zip(r.to_f64_vec()).map(|(x, y)| x * y).sum()
}

fn perturbed(inputs: &[Tensor], which: usize, idx: usize, delta: f64) -> Vec<Tensor> {
    let mut out = inputs.to_vec();
    let mut v = out[which].to_f64_vec();
    v[idx] += delta;
    out[which] = Tensor::from_f64(inputs[which].shape(), &v, Precision::F64).unwrap();
    out
}

/// Largest relative error between `analytic[i]` and the numerical gradient of `loss` w.r.t. `inputs[i]`.
pub fn max_rel_error(inputs: &[Tensor], analytic: &[Tensor], loss: &dyn Fn(&[Tensor]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, (inp, an)) in inputs.iter().zip(analytic).enumerate() {
        assert_eq!(inp.shape(), an.shape(), "analytic gradient shape for input {i}");
        let a = an.to_f64_vec();
        for (j, &aj) in a.iter().enumerate() {
            let up = loss(&perturbed(inputs, i, j, STEP));
            let down = loss(&perturbed(inputs, i, j, -STEP));
            let num = (up - down) / (2.0 * STEP);
            worst = worst.max((aj - num).abs() / aj.abs().max(num.abs()).max(FLOOR));
        }
    }
    worst
}

fn rng_for(op: u64, case: usize, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (op << 32) ^ case as u64)
}

fn u(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, -1.0, 1.0, rng.random(), Precision::F64)
}

fn conv_case(rng: &mut ChaCha8Rng) -> f64 {
    let groups = rng.random_range(1..=3usize);
    let (cin, cout) = (groups * rng.random_range(1..=2usize), groups * rng.random_range(1..=2usize));
    conv_case_with(rng, groups, cin, cout)
}

fn depthwise_case(rng: &mut ChaCha8Rng) -> f64 {
    let c = rng.random_range(1..=4usize);
    conv_case_with(rng, c, c, c)
}

fn conv_case_with(rng: &mut ChaCha8Rng, groups: usize, cin: usize, cout: usize) -> f64 {
    let k = rng.random_range(1..=3usize);
    let spec = ConvSpec::new(cin, cout, k)
        .stride(rng.random_range(1..=2))
        .padding(rng.random_range(0..=2))
        .dilation(rng.random_range(1..=2))
        .groups(groups)
        .bias(rng.random_bool(0.5));
    let (h, w) = loop {
        let (h, w) = (rng.random_range(3..=7usize), rng.random_range(3..=7usize));
        if spec.output_hw(h, w).is_ok() {
            break (h, w);
        }
    };
    let n = rng.random_range(1..=2usize);
    let x = u(&[n, cin, h, w], rng);
    let wt = u(&spec.weight_shape(), rng);
    let b = u(&[cout], rng);
    let (oh, ow) = spec.output_hw(h, w).unwrap();
    let r = u(&[n, cout, oh, ow], rng);
    let g = conv2d_vjp(&x, &wt, &spec, &r).unwrap();
    let loss = |t: &[Tensor]| {
        let bias = spec.bias.then(|| &t[2]);
        dotp(&conv2d(&t[0], &t[1], bias, &spec).unwrap(), &r)
    };
    if spec.bias {
        max_rel_error(&[x, wt, b], &[g.x.unwrap(), g.w, g.b], &loss)
    } else {
        max_rel_error(&[x, wt], &[g.x.unwrap(), g.w], &loss)
    }
}

fn small_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    ]
}

fn relu6_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = small_shape(rng);
    // keep samples away from the kinks at 0 and 6
    let v: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| {
            let m: f64 = rng.random_range(0.05..0.95);
            let side: u8 = rng.random_range(0..3);
            match side {
                0 => -m * 2.0,
                1 => 0.05 + m * 5.9,
                _ => 6.05 + m * 2.0,
            }
        })
        .collect();
    let x = Tensor::from_f64(&shape, &v, Precision::F64).unwrap();
    let r = u(&shape, rng);
    let g = relu6_vjp(&x, &r).unwrap();
    max_rel_error(&[x], &[g], &|t| dotp(&relu6(&t[0]).unwrap(), &r))
}

fn bn_case(rng: &mut ChaCha8Rng, mode: NormMode) -> f64 {
    let mut shape = small_shape(rng);
    shape[0] = rng.random_range(2..=3);
    let c = shape[1];
    let x = uniform(&shape, -2.0, 3.0, rng.random(), Precision::F64);
    let mut st = BatchNormState::new(c, Precision::F64);
    st.gamma = uniform(&[c], 0.5, 1.5, rng.random(), Precision::F64);
    st.beta = u(&[c], rng);
    st.running_mean = u(&[c], rng);
    st.running_var = uniform(&[c], 0.5, 2.0, rng.random(), Precision::F64);
    st.mode = mode;
    let r = u(&shape, rng);
    let (_, cache) = batch_norm(&x, &mut st.clone()).unwrap();
    let g = batch_norm_vjp(&st, &cache, &r).unwrap();
    let loss = |t: &[Tensor]| {
        let mut s = st.clone();
        s.gamma = t[1].clone();
        s.beta = t[2].clone();
        dotp(&batch_norm(&t[0], &mut s).unwrap().0, &r)
    };
    max_rel_error(&[x, st.gamma.clone(), st.beta.clone()], &[g.x, g.gamma, g.beta], &loss)
}

fn grn_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = small_shape(rng);
    let c = shape[1];
    let k = if rng.random_bool(0.5) { c } else { 1 };
    let x = u(&shape, rng);
    let st = GrnState {
        gamma: u(&[k], rng),
        beta: u(&[k], rng),
        eps: GRN_EPS,
    };
    let r = u(&shape, rng);
    let g = grn_vjp(&x, &st, &r).unwrap();
    let loss = |t: &[Tensor]| {
        let s = GrnState {
            gamma: t[1].clone(),
            beta: t[2].clone(),
            eps: GRN_EPS,
        };
        dotp(&grn(&t[0], &s).unwrap(), &r)
    };
    max_rel_error(&[x, st.gamma.clone(), st.beta.clone()], &[g.x, g.gamma, g.beta], &loss)
}

fn pool_case(rng: &mut ChaCha8Rng, max: bool) -> f64 {
    let k = rng.random_range(2..=3usize);
    let s = rng.random_range(1..=2usize);
    let mut shape = small_shape(rng);
    shape[2] = rng.random_range(k..=6);
    shape[3] = rng.random_range(k..=6);
    let x = u(&shape, rng);
    let (oh, ow) = pool_output_hw(shape[2], shape[3], k, s).unwrap();
    let r = u(&[shape[0], shape[1], oh, ow], rng);
    if max {
        let g = max_pool2d_vjp(&x, k, s, &r).unwrap();
        max_rel_error(&[x], &[g], &|t| dotp(&max_pool2d(&t[0], k, s).unwrap(), &r))
    } else {
        let g = avg_pool2d_vjp(&shape, k, s, &r).unwrap();
        max_rel_error(&[x], &[g], &|t| dotp(&avg_pool2d(&t[0], k, s).unwrap(), &r))
    }
}

fn adaptive_case(rng: &mut ChaCha8Rng) -> f64 {
    let shape = small_shape(rng);
    let x = u(&shape, rng);
    let r = u(&[shape[0], shape[1], 1, 1], rng);
    let g = adaptive_avg_pool_vjp(&shape, &r).unwrap();
    max_rel_error(&[x], &[g], &|t| dotp(&adaptive_avg_pool(&t[0]).unwrap(), &r))
}

fn shuffle_case(rng: &mut ChaCha8Rng) -> f64 {
    let groups = rng.random_range(1..=3usize);
    let mut shape = small_shape(rng);
    shape[1] = groups * rng.random_range(1..=3);
    let x = u(&shape, rng);
    let r = u(&shape, rng);
    let g = channel_shuffle_vjp(&r, groups).unwrap();
    max_rel_error(&[x], &[g], &|t| dotp(&channel_shuffle(&t[0], groups).unwrap(), &r))
}

fn linear_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, f, k) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
    let x = u(&[n, f], rng);
    let w = u(&[k, f], rng);
    let b = u(&[k], rng);
    let r = u(&[n, k], rng);
    let g = linear_vjp(&x, &w, &r).unwrap();
    max_rel_error(&[x, w, b], &[g.x, g.w, g.b], &|t| dotp(&linear(&t[0], &t[1], Some(&t[2])).unwrap(), &r))
}

fn ce_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, k) = (rng.random_range(1..=5usize), rng.random_range(2..=6usize));
    let z = uniform(&[n, k], -3.0, 3.0, rng.random(), Precision::F64);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
    max_rel_error(&[z], &[g], &|t| softmax_cross_entropy(&t[0], &labels).unwrap().0)
}

/// Runs `cases` random shapes for every differentiable operator.
pub fn all_ops(cases: usize, seed: u64) -> Vec<OpReport> {
    type Case = fn(&mut ChaCha8Rng) -> f64;
    let ops: [(&'static str, Case); 12] = [
        ("conv2d", conv_case),
        ("conv2d[depthwise]", depthwise_case),
        ("relu6", relu6_case),
        ("batch_norm[train]", |r| bn_case(r, NormMode::Train)),
        ("batch_norm[eval]", |r| bn_case(r, NormMode::Eval)),
        ("grn", grn_case),
        ("max_pool2d", |r| pool_case(r, true)),
        ("avg_pool2d", |r| pool_case(r, false)),
        ("adaptive_avg_pool", adaptive_case),
        ("channel_shuffle", shuffle_case),
        ("linear", linear_case),
        ("softmax_cross_entropy", ce_case),
    ];
    ops.iter()
        .enumerate()
        .map(|(i, &(op, f))| {
            let max_rel_err = (0..cases)
                .map(|c| f(&mut rng_for(i as u64, c, seed)))
                .fold(0.0, f64::max);
            OpReport { op, cases, max_rel_err }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GraphReport {
    pub max_rel_err: f64,
    /// Entries whose step straddles a max-pool argmax or ReLU6 boundary.
    pub kinks: usize,
    pub entries: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Whole-model check on every parameter of an f64 model built from `cfg`.
///
/// Central differences, except where they fail and the two one-sided slopes
/// disagree (a non-smooth point lies inside the step); there the analytic
/// value must equal one of the one-sided slopes.
pub fn full_graph(cfg: &ArchConfig, batch: usize, seed: u64) -> GraphReport {
    full_graph_with(cfg, batch, seed, seed ^ 5)
}

/// [`full_graph`] with an explicit input seed.
pub fn full_graph_with(cfg: &ArchConfig, batch: usize, seed: u64, input_seed: u64) -> GraphReport {
    let cfg = ArchConfig { precision: Precision::F64, ..cfg.clone() };
    let mut m = Model::new(&cfg, seed).unwrap();
    let (h, w) = cfg.input_size;
    let x = gaussian(&[batch, 3, h, w], input_seed, Precision::F64);
    let r = uniform(&[batch, cfg.num_classes], -1.0, 1.0, input_seed ^ 6, Precision::F64);
    m.forward(&x, Mode::Train).unwrap();
    let grads = m.backward(&r).unwrap();
    let mut rep = GraphReport { max_rel_err: 0.0, kinks: 0, entries: 0 };
    for name in &m.param_names() {
        let an = grads.get(name).unwrap().to_f64_vec();
        for (j, &a) in an.iter().enumerate() {
            let eval = |d: f64| {
                let mut mm = m.clone();
                for (n, t, _) in mm.tensors_mut() {
                    if n == name {
                        let mut v = t.to_f64_vec();
                        v[j] += d;
                        *t = Tensor::from_f64(t.shape(), &v, Precision::F64).unwrap();
                    }
                }
                dotp(&mm.forward(&x, Mode::Train).unwrap(), &r)
            };
            let h = GRAPH_STEP;
            let (up, mid, down) = (eval(h), eval(0.0), eval(-h));
            let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
            rep.entries += 1;
            let central = rel_err(a, (up - down) / (2.0 * h));
            let e = if central > FLOOR && rel_err(fwd, bwd) > FLOOR {
                rep.kinks += 1;
                rel_err(a, fwd).min(rel_err(a, bwd))
            } else {
                central
            };
            rep.max_rel_err = rep.max_rel_err.max(e);
        }
    }
    rep
}
