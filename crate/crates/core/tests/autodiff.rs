//! Finite-difference checks for every differentiable op, over many seeds.

use gamma_core::conv::RoiRect;
use gamma_core::gradcheck::gradient_check;
use gamma_core::rng::Seed;
use gamma_core::tape::{Graph, NodeId};
use gamma_core::tensor::{Tensor, TensorError};
use gamma_core::ParamSet;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut gamma_core::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Run gradient_check for a loss builder over a parameter set.
fn check<F>(build: F, params: &ParamSet) -> f64
where
    F: Fn(&mut Graph) -> Result<NodeId, TensorError>,
{
    gradient_check(
        |p| {
            let mut g = Graph::new(p);
            let loss = build(&mut g)?;
            Ok(g.tape.value(loss))
        },
        |p| {
            let mut g = Graph::new(p);
            let loss = build(&mut g)?;
            g.backward(loss)
        },
        params,
        EPS,
    )
    .unwrap()
}

#[test]
fn matmul_grads_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Seed(seed).rng();
        let mut params = ParamSet::new();
        params.insert("a", rand_tensor(&mut rng, &[4, 4], -1.0, 1.0));
        params.insert("b", rand_tensor(&mut rng, &[4, 4], -1.0, 1.0));
        let err = check(
            |g| {
                let a = g.var("a")?;
                let b = g.var("b")?;
                let c = g.tape.matmul(a, b)?;
                Ok(g.tape.sum_all(c))
            },
            &params,
        );
        assert!(err < 1e-6, "seed {seed}: err {err}");
    }
}

#[test]
fn conv2d_grads_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Seed(100 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("img", rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0));
        params.insert("k", rand_tensor(&mut rng, &[3, 2, 3, 3], -0.5, 0.5));
        params.insert("bias", rand_tensor(&mut rng, &[3], -0.1, 0.1));
        let err = check(
            |g| {
                let x = g.var("img")?;
                let k = g.var("k")?;
                let b = g.var("bias")?;
                let y = g.tape.conv2d(x, k, Some(b), 2, 1)?;
                let t = g.tape.tanh(y);
                Ok(g.tape.mean_all(t))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn two_layer_perceptron_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(200 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("w1", rand_tensor(&mut rng, &[4, 8], -0.7, 0.7));
        params.insert("b1", rand_tensor(&mut rng, &[8], -0.2, 0.2));
        params.insert("w2", rand_tensor(&mut rng, &[8, 1], -0.7, 0.7));
        params.insert("b2", rand_tensor(&mut rng, &[1], -0.2, 0.2));
        let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let err = check(
            |g| {
                let input = g.input(&x);
                let w1 = g.var("w1")?;
                let b1 = g.var("b1")?;
                let w2 = g.var("w2")?;
                let b2 = g.var("b2")?;
                let h = g.tape.matmul(input, w1)?;
                let h = g.tape.add_row_bias(h, b1)?;
                let h = g.tape.tanh(h);
                let o = g.tape.matmul(h, w2)?;
                let o = g.tape.add_row_bias(o, b2)?;
                let sq = g.tape.mul(o, o)?;
                Ok(g.tape.mean_all(sq))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn softmax_and_log_path_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(300 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("z", rand_tensor(&mut rng, &[3, 5], -2.0, 2.0));
        let weights = rand_tensor(&mut rng, &[3, 5], 0.1, 1.0);
        let err = check(
            |g| {
                let z = g.var("z")?;
                let s = g.tape.softmax(z, 1)?;
                let w = g.input(&weights);
                let prod = g.tape.mul(s, w)?;
                Ok(g.tape.sum_all(prod))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn instance_norm_and_upsample_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(400 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("x", rand_tensor(&mut rng, &[1, 2, 4, 4], -1.5, 1.5));
        let probe = rand_tensor(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
        let err = check(
            |g| {
                let x = g.var("x")?;
                let n = g.tape.instance_norm(x, 1e-5)?;
                let u = g.tape.upsample2x(n)?;
                let p = g.input(&probe);
                let prod = g.tape.mul(u, p)?;
                Ok(g.tape.mean_all(prod))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn roi_align_grads_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut rng = Seed(500 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("f", rand_tensor(&mut rng, &[1, 2, 6, 6], -1.0, 1.0));
        let rois = [
            RoiRect { x0: 0.5, y0: 0.5, x1: 4.5, y1: 3.5 },
            RoiRect { x0: 2.0, y0: 1.0, x1: 5.5, y1: 5.0 },
        ];
        let err = check(
            |g| {
                let f = g.var("f")?;
                let pooled = g.tape.roi_align(f, &rois, 2, 2)?;
                let t = g.tape.tanh(pooled);
                Ok(g.tape.sum_all(t))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn loss_op_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(600 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("logits", rand_tensor(&mut rng, &[6], -2.0, 2.0));
        params.insert("cls", rand_tensor(&mut rng, &[4, 3], -1.5, 1.5));
        params.insert("deltas", rand_tensor(&mut rng, &[4, 4], -2.0, 2.0));
        let bce_targets: Vec<f64> = (0..6).map(|_| (rng.uniform() * 2.0).floor()).collect();
        let labels: Vec<usize> = (0..4).map(|_| rng.uniform_usize(3)).collect();
        let reg_targets: Vec<f64> = (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let err = check(
            |g| {
                let z = g.var("logits")?;
                let c = g.var("cls")?;
                let d = g.var("deltas")?;
                let l1 = g.tape.bce_with_logits(z, &bce_targets)?;
                let l2 = g.tape.softmax_cross_entropy(c, &labels)?;
                let l3 = g.tape.smooth_l1_sum(d, &reg_targets, 1.0)?;
                let s = g.tape.add(l1, l2)?;
                Ok(g.tape.add(s, l3)?)
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn activation_and_scale_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(700 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("x", rand_tensor(&mut rng, &[2, 6], -1.8, 1.8));
        params.insert("gain", Tensor::scalar(rng.uniform_in(-0.5, 0.5)));
        let err = check(
            |g| {
                let x = g.var("x")?;
                let gain = g.var("gain")?;
                let s = g.tape.sigmoid(x);
                let l = g.tape.leaky_relu(s, 0.2);
                let a = g.tape.abs(l);
                let c = g.tape.clamp(a, 1e-6, 1.0 - 1e-6);
                let ln = g.tape.ln(c);
                let scaled = g.tape.scale(ln, gain)?;
                Ok(g.tape.mean_all(scaled))
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}

#[test]
fn gather_grads() {
    for seed in 0..SEEDS {
        let mut rng = Seed(800 + seed).rng();
        let mut params = ParamSet::new();
        params.insert("m", rand_tensor(&mut rng, &[5, 6], -1.0, 1.0));
        let err = check(
            |g| {
                let m = g.var("m")?;
                let rows = g.tape.gather_rows(m, &[4, 0, 2, 0])?;
                let spans = g.tape.gather_spans(m, &[(1, 2), (3, 0)], 3)?;
                let a = g.tape.sum_all(rows);
                let t = g.tape.tanh(spans);
                let b = g.tape.sum_all(t);
                Ok(g.tape.add(a, b)?)
            },
            &params,
        );
        assert!(err < TOL, "seed {seed}: err {err}");
    }
}
