//! Finite-difference and naive-arithmetic oracles for the compute core.

use iec_core::nn::{gaussian_kl, gaussian_kl_value, reparameterize, GaussianParams, Graph, Init, Mlp, ParamStore, RnnCell, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` at `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn assert_grads_close(analytic: &[f64], numeric: &[f64]) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(rel_err(*a, *n) < TOL, "coord {i}: analytic {a} vs numeric {n}");
    }
}

/// Checks the gradient of a scalar function of one input vector.
fn check_input_grad(x: &[f64], build: impl Fn(&mut Graph, Var) -> Var) {
    let mut g = Graph::new();
    let xv = g.input(x.to_vec());
    let loss = build(&mut g, xv);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
    let numeric = numeric_grad(x, |p| {
        let mut g = Graph::new();
        let xv = g.input(p.to_vec());
        let l = build(&mut g, xv);
        g.scalar(l)
    });
    assert_grads_close(&analytic, &numeric);
}

/// Checks the gradient of every parameter in `store`.
fn check_param_grads(store: &mut ParamStore, loss: impl Fn(&mut Graph, &ParamStore) -> Var) {
    store.zero_grads();
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    g.backward(l).unwrap();
    store.accumulate_grads(&g);
    let n = store.tensors().len();
    for t in 0..n {
        let analytic = store.tensors()[t].grad().to_vec();
        let values = store.tensors()[t].values().to_vec();
        let numeric = numeric_grad(&values, |p| {
            let mut s = store.clone();
            s.tensors_mut()[t].values_mut().copy_from_slice(p);
            let mut g = Graph::new();
            let l = loss(&mut g, &s);
            g.scalar(l)
        });
        assert_grads_close(&analytic, &numeric);
    }
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn naive_mlp(store: &ParamStore, widths: &[usize], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, w) in widths.windows(2).enumerate() {
        let weight = store.tensors()[2 * l].values();
        let bias = store.tensors()[2 * l + 1].values();
        let mut out = vec![0.0; w[1]];
        for o in 0..w[1] {
            let mut acc = bias[o];
            for i in 0..w[0] {
                acc += weight[o * w[0] + i] * h[i];
            }
            out[o] = if l + 2 < widths.len() { acc.tanh() } else { acc };
        }
        h = out;
    }
    h
}

#[test]
fn mlp_matches_nested_loop_oracle() {
    let widths = [3, 4, 2];
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &widths, Init::Glorot, &mut rng);
        for t in store.tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.5..1.5));
        }
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &store, xv).unwrap();
        let expected = naive_mlp(&store, &widths, &x);
        for (a, b) in g.value(y).iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }
}

#[test]
fn mlp_parameter_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 4, 2], Init::Glorot, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = vec![0.3, -0.6];
        check_param_grads(&mut store, |g, s| {
            let xv = g.constant(x.clone());
            let y = mlp.forward(g, s, xv).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(y, t).unwrap();
            let sq = g.square(d);
            g.sum(sq)
        });
    }
}

#[test]
fn unrolled_rnn_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let cell = RnnCell::new(&mut store, "rnn", 3, 4, Init::Glorot, &mut rng);
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    check_param_grads(&mut store, |g, s| {
        let mut h = g.constant(vec![0.0; 4]);
        for x in &inputs {
            let xv = g.constant(x.clone());
            h = cell.step(g, s, xv, h).unwrap();
        }
        let sq = g.square(h);
        g.sum(sq)
    });
}

/// Antithetic Monte Carlo estimate of `E_q[log q(z) - log p(z)]` from `n` samples.
fn kl_monte_carlo(mu: f64, sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let log_ratio = |eps: f64| {
        let z = mu + sigma * eps;
        (-0.5 * eps * eps - sigma.ln()) - (-0.5 * z * z)
    };
    let mut acc = 0.0;
    for _ in 0..n / 2 {
        let eps: f64 = rng.sample(rand_distr::StandardNormal);
        acc += log_ratio(eps) + log_ratio(-eps);
    }
    acc / (2 * (n / 2)) as f64
}

#[test]
fn gaussian_kl_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mu: f64 = sign * rng.gen_range(1.0..2.0);
        let sigma: f64 = rng.gen_range(0.5..2.0);
        let closed = gaussian_kl_value(&[mu], &[(sigma * sigma).ln()]);
        let mc = kl_monte_carlo(mu, sigma, 100_000, &mut rng);
        assert!((mc - closed).abs() <= 0.02 * closed, "mc {mc} closed {closed}");
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[4, 6, 3], Init::Glorot, &mut rng);
    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let terms = |g: &mut Graph, s: &ParamStore| {
        let xv = g.constant(x.clone());
        let y = mlp.forward(g, s, xv).unwrap();
        let a = g.pick(y, 0).unwrap();
        let sq = g.square(y);
        let b = g.sum(sq);
        (a, b)
    };
    let grads_of = |which: u8, store: &mut ParamStore| {
        store.zero_grads();
        let mut g = Graph::new();
        let (a, b) = terms(&mut g, store);
        let loss = match which {
            0 => a,
            1 => b,
            _ => g.add(a, b).unwrap(),
        };
        g.backward(loss).unwrap();
        store.accumulate_grads(&g);
        store.tensors().iter().flat_map(|t| t.grad().to_vec()).collect::<Vec<_>>()
    };
    let ga = grads_of(0, &mut store);
    let gb = grads_of(1, &mut store);
    let gab = grads_of(2, &mut store);
    for ((a, b), s) in ga.iter().zip(&gb).zip(&gab) {
        assert!((a + b - s).abs() < 1e-12);
    }
}

#[test]
fn unreachable_parameters_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let used = Mlp::new(&mut store, "used", &[2, 2], Init::Glorot, &mut rng);
    let _unused = Mlp::new(&mut store, "unused", &[2, 2], Init::Glorot, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(vec![1.0, 2.0]);
    let y = used.forward(&mut g, &store, x).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    store.accumulate_grads(&g);
    let unused = store.find("unused.0.weight").unwrap();
    assert!(store.get(unused).grad().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_passes_are_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[5, 7, 3], Init::Glorot, &mut rng);
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(vec![0.1, 0.2, -0.3, 0.4, -0.5]);
        let y = mlp.forward(&mut g, &store, x).unwrap();
        g.value(y).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_ops_pass_finite_differences(x in vec_strategy(5), y in vec_strategy(5)) {
        // exercises add, sub, mul, tanh, exp, square, scale, sum
        let yc = y.clone();
        check_input_grad(&x, move |g, xv| {
            let yv = g.constant(yc.clone());
            let a = g.mul(xv, yv).unwrap();
            let t = g.tanh(a);
            let s = g.scale(xv, 0.3);
            let e = g.exp(s);
            let b = g.add(t, e).unwrap();
            let c = g.sub(b, xv).unwrap();
            let sq = g.square(c);
            g.sum(sq)
        });
    }

    #[test]
    fn matvec_and_softmax_pass_finite_differences(x in vec_strategy(4), w in vec_strategy(12), k in 0usize..3) {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![3, 4], w);
        check_input_grad(&x, |g, xv| {
            let wv = g.param(&store, id);
            let z = g.matvec(wv, xv).unwrap();
            let ls = g.log_softmax(z);
            let p = g.pick(ls, k).unwrap();
            let probs = g.exp(ls);
            let ent = g.mul(probs, ls).unwrap();
            let ent = g.sum(ent);
            g.add(p, ent).unwrap()
        });
        check_param_grads(&mut store, |g, s| {
            let xv = g.constant(x.clone());
            let wv = g.param(s, id);
            let z = g.matvec(wv, xv).unwrap();
            let ls = g.log_softmax(z);
            g.pick(ls, k).unwrap()
        });
    }

    #[test]
    fn gaussian_ops_pass_finite_differences(x in vec_strategy(6), noise in vec_strategy(3)) {
        check_input_grad(&x, |g, xv| {
            let q = GaussianParams::from_concat(g, xv).unwrap();
            let kl = gaussian_kl(g, &q);
            let z = reparameterize(g, &q, &noise).unwrap();
            let sq = g.square(z);
            let zs = g.sum(sq);
            g.add(kl, zs).unwrap()
        });
    }

    #[test]
    fn add_n_and_slice_pass_finite_differences(x in vec_strategy(6)) {
        check_input_grad(&x, |g, xv| {
            let a = g.slice(xv, 0, 2).unwrap();
            let b = g.slice(xv, 2, 2).unwrap();
            let c = g.slice(xv, 4, 2).unwrap();
            let t = g.tanh(c);
            let s = g.add_n(&[a, b, t, a]).unwrap();
            let sq = g.square(s);
            g.sum(sq)
        });
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_at_prior(mu in vec_strategy(4), lv in vec_strategy(4)) {
        let k = gaussian_kl_value(&mu, &lv);
        prop_assert!(k >= 0.0);
        let at_prior = mu.iter().chain(&lv).all(|v| v.abs() < 1e-9);
        if !at_prior {
            prop_assert!(k > 0.0);
        }
        prop_assert!(gaussian_kl_value(&[0.0; 4], &[0.0; 4]).abs() < 1e-12);
    }
}
