use mltp_core::{Precision, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P: Precision = Precision::F64;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), P).unwrap()
}

type ScalarFn = dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>;

/// Central differences of a scalar function of several tensor inputs.
fn numeric(f: &ScalarFn, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    let eval = |xs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&vars).item().unwrap()
    };
    inputs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            (0..x.numel())
                .map(|e| {
                    let mut plus = inputs.to_vec();
                    plus[k].data_mut()[e] += h;
                    let mut minus = inputs.to_vec();
                    minus[k].data_mut()[e] -= h;
                    (eval(&plus) - eval(&minus)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

fn analytic(f: &ScalarFn, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = f(&vars);
    tape.grad(out, &vars, false)
        .unwrap()
        .iter()
        .map(|g| g.value().data().to_vec())
        .collect()
}

fn rel_err(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let diff = a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

fn check(name: &str, shapes: &[&[usize]], f: &ScalarFn) {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let err = rel_err(&analytic(f, &inputs), &numeric(f, &inputs, 1e-6));
        assert!(err <= 1e-5, "{name} seed {seed}: relative error {err:e}");
    }
}

// Weighted sum so that every output element gets a distinct cotangent.
fn weigh<'t>(y: Var<'t>) -> Var<'t> {
    let n = y.value().numel();
    let w = Tensor::new(y.shape(), (0..n).map(|i| 0.3 + 0.1 * i as f64).collect(), P).unwrap();
    y.mul(&y.tape().constant(w)).unwrap().sum().unwrap()
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    check("add", &[&[3, 4], &[3, 4]], &|v| weigh(v[0].add(&v[1]).unwrap()));
    check("sub", &[&[3, 4], &[3, 4]], &|v| weigh(v[0].sub(&v[1]).unwrap()));
    check("mul", &[&[3, 4], &[3, 4]], &|v| weigh(v[0].mul(&v[1]).unwrap()));
    check("scale", &[&[5]], &|v| weigh(v[0].scale(-2.5)));
    check("add_const", &[&[5]], &|v| weigh(v[0].add_const(0.7).unwrap()));
    check("sigmoid", &[&[2, 3]], &|v| weigh(v[0].sigmoid()));
    check("square", &[&[2, 3]], &|v| weigh(v[0].square().unwrap()));
    check("powf", &[&[4]], &|v| weigh(v[0].square().unwrap().add_const(0.5).unwrap().powf(-0.5)));
    check("mean", &[&[3, 3]], &|v| v[0].square().unwrap().mean().unwrap());
}

#[test]
fn relu_matches_away_from_the_kink() {
    // inputs in [-1, 1) are at least 1e-6 away from zero with overwhelming probability
    check("relu", &[&[4, 4]], &|v| weigh(v[0].relu()));
}

#[test]
fn shape_primitives_match_finite_differences() {
    check("matmul", &[&[3, 4], &[4, 2]], &|v| weigh(v[0].matmul(&v[1]).unwrap()));
    check("permute", &[&[2, 3, 4]], &|v| weigh(v[0].permute(&[2, 0, 1]).unwrap()));
    check("reshape", &[&[2, 6]], &|v| weigh(v[0].reshape(&[3, 4]).unwrap()));
    check("expand", &[&[1, 3]], &|v| weigh(v[0].expand(&[4, 3]).unwrap()));
    check("sum_to", &[&[4, 3]], &|v| weigh(v[0].sum_to(&[1, 3]).unwrap()));
    check("mul_scalar", &[&[3], &[]], &|v| weigh(v[0].mul_scalar(&v[1]).unwrap()));
    check("gather", &[&[6]], &|v| weigh(v[0].gather(vec![5, 0, 0, 3].into(), &[2, 2]).unwrap()));
}

#[test]
fn row_reductions_match_finite_differences() {
    check("softmax_rows", &[&[3, 4]], &|v| weigh(v[0].softmax_rows().unwrap()));
    check("logsumexp_rows", &[&[3, 4]], &|v| weigh(v[0].logsumexp_rows().unwrap()));
    check("cross_entropy", &[&[3, 4]], &|v| v[0].softmax_cross_entropy(&[0, 3, 1]).unwrap());
}

#[test]
fn conv_and_pool_match_finite_differences() {
    check("conv2d", &[&[2, 2, 4, 4], &[3, 2, 3, 3]], &|v| weigh(v[0].conv2d(&v[1], 1, 1).unwrap()));
    check("conv2d_stride", &[&[1, 1, 5, 5], &[2, 1, 3, 3]], &|v| weigh(v[0].conv2d(&v[1], 2, 0).unwrap()));
    check("max_pool2d", &[&[2, 2, 4, 4]], &|v| weigh(v[0].max_pool2d(2, 2).unwrap()));
}

/// Direct nested-loop cross-correlation.
fn naive_conv(x: &Tensor, k: &Tensor, pad: usize) -> Vec<f64> {
    let [n, c, h, w] = x.shape()[..] else { unreachable!() };
    let [f, _, kh, kw] = k.shape()[..] else { unreachable!() };
    let (oh, ow) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut s = 0.0;
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y + ky) as isize - pad as isize;
                                let ix = (xx + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c + ch) * h + iy as usize) * w + ix as usize;
                                let ki = ((o * c + ch) * kh + ky) * kw + kx;
                                s += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn forward_kernels_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[5, 3], &mut rng);
    let b = random(&[3, 4], &mut rng);
    let tape = Tape::new();
    let m = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            let s: f64 = (0..3).map(|k| a.data()[i * 3 + k] * b.data()[k * 4 + j]).sum();
            assert!((m.value().data()[i * 4 + j] - s).abs() < 1e-14);
        }
    }

    let x = random(&[2, 3, 5, 5], &mut rng);
    let k = random(&[4, 3, 3, 3], &mut rng);
    for pad in [0, 1] {
        let y = tape.constant(x.clone()).conv2d(&tape.constant(k.clone()), 1, pad).unwrap();
        let expected = naive_conv(&x, &k, pad);
        for (got, want) in y.value().data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    let p = tape.constant(x.clone()).max_pool2d(5, 5).unwrap();
    for plane in 0..6 {
        let want = x.data()[plane * 25..(plane + 1) * 25].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(p.value().data()[plane], want);
    }
}

#[test]
fn max_pool_ties_route_to_the_first_element() {
    let tape = Tape::new();
    let x = tape.var(Tensor::ones(&[1, 1, 2, 2], P));
    let y = x.max_pool2d(2, 2).unwrap().sum().unwrap();
    let g = tape.grad(y, &[x], false).unwrap();
    assert_eq!(g[0].value().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn cross_entropy_closed_forms() {
    let tape = Tape::new();
    let uniform = tape.var(Tensor::zeros(&[2, 4], P));
    let ce = uniform.softmax_cross_entropy(&[1, 3]).unwrap();
    assert!((ce.item().unwrap() - 4f64.ln()).abs() < 1e-15);
    // d/dz of mean CE is (softmax - onehot) / N
    let g = tape.grad(ce, &[uniform], false).unwrap();
    let expected = [0.125, -0.375, 0.125, 0.125, 0.125, 0.125, 0.125, -0.375];
    for (got, want) in g[0].value().data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-15);
    }
    // a large margin gives log(1 + e^-m) without overflow
    let big = tape.constant(Tensor::new(vec![1, 2], vec![1000.0, 0.0], P).unwrap());
    let ce = big.softmax_cross_entropy(&[0]).unwrap().item().unwrap();
    assert!(ce >= 0.0 && ce < 1e-300);
    let ce = big.softmax_cross_entropy(&[1]).unwrap().item().unwrap();
    assert!((ce - 1000.0).abs() < 1e-12);
}

#[test]
fn second_order_on_quadratics_is_exact() {
    // f(x) = 0.5 x^T A x with symmetric A: grad = A x, Hessian-vector product = A v
    let a = [[2.0, 0.5, -1.0], [0.5, 3.0, 0.25], [-1.0, 0.25, 1.5]];
    let tape = Tape::new();
    let at = tape.constant(Tensor::new(vec![3, 3], a.iter().flatten().copied().collect(), P).unwrap());
    let x = tape.var(Tensor::new(vec![3, 1], vec![0.3, -1.2, 2.0], P).unwrap());
    let f = x.t().unwrap().matmul(&at.matmul(&x).unwrap()).unwrap().scale(0.5).sum().unwrap();
    let g = tape.grad(f, &[x], true).unwrap()[0];
    let v = tape.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, -0.5], P).unwrap());
    let gv = g.mul(&v).unwrap().sum().unwrap();
    let hv = tape.grad(gv, &[x], false).unwrap()[0];
    for i in 0..3 {
        let want = a[i][0] * 1.0 + a[i][1] * 2.0 + a[i][2] * -0.5;
        assert!((hv.value().data()[i] - want).abs() < 1e-10);
    }

    // third derivative of x^4 at x = 1.5 is 24 x
    let y = tape.var(Tensor::scalar(1.5, P));
    let q = y.square().unwrap().square().unwrap();
    let d1 = tape.grad(q, &[y], true).unwrap()[0];
    let d2 = tape.grad(d1, &[y], true).unwrap()[0];
    let d3 = tape.grad(d2, &[y], false).unwrap()[0];
    assert!((d1.item().unwrap() - 4.0 * 1.5f64.powi(3)).abs() < 1e-10);
    assert!((d2.item().unwrap() - 12.0 * 1.5 * 1.5).abs() < 1e-10);
    assert!((d3.item().unwrap() - 36.0).abs() < 1e-10);
}

#[test]
fn create_graph_does_not_change_first_order_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = random(&[4, 3], &mut rng);
    let w0 = random(&[3, 2], &mut rng);
    let run = |create: bool| {
        let tape = Tape::new();
        let x = tape.var(x0.clone());
        let w = tape.var(w0.clone());
        let out = x.matmul(&w).unwrap().sigmoid().softmax_cross_entropy(&[0, 1, 1, 0]).unwrap();
        let g = tape.grad(out, &[x, w], create).unwrap();
        (g[0].value().data().to_vec(), g[1].value().data().to_vec(), g[0].requires_grad())
    };
    let (a0, a1, tracked) = run(true);
    let (b0, b1, detached) = run(false);
    assert!(tracked && !detached);
    for (p, q) in a0.iter().chain(&a1).zip(b0.iter().chain(&b1)) {
        assert!((p - q).abs() <= 1e-12);
    }
}

#[test]
fn gradients_are_deterministic_and_unrelated_leaves_get_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = random(&[3, 3], &mut rng);
    let run = || {
        let tape = Tape::new();
        let x = tape.var(x0.clone());
        let unused = tape.var(Tensor::ones(&[2], P));
        let out = x.matmul(&x).unwrap().sigmoid().sum().unwrap();
        let g = tape.grad(out, &[x, unused], false).unwrap();
        (g[0].value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g[1].value().data().to_vec())
    };
    let (a, zero) = run();
    assert_eq!(a, run().0);
    assert_eq!(zero, vec![0.0, 0.0]);
}

#[test]
fn gradient_of_non_scalar_is_rejected() {
    let tape = Tape::new();
    let x = tape.var(Tensor::ones(&[2], P));
    assert!(tape.grad(x.scale(2.0), &[x], false).is_err());
}
