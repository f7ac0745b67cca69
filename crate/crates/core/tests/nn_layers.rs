use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use springverb::gradcheck::{assert_gradients, random_tensor, GradcheckConfig};
use springverb::nn::{self, Bound, Mode, ParamInit, ParamStore};
use springverb::{Tape, Tensor, Var};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Random-weighted sum, so every output element gets a distinct gradient.
fn probe<'t>(y: Var<'t>, seed: u64) -> springverb::Result<Var<'t>> {
    let w = random_tensor(&y.shape(), 1.0, seed);
    Ok(y.mul(y.tape().constant(w))?.sum())
}

fn store(seed: u64, build: impl FnOnce(&mut ParamInit)) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = ParamInit::new(&mut rng);
    build(&mut init);
    init.store
}

/// Gradient check of `f` over the input `x` plus every parameter in `params`.
fn check_with_params<F>(x: Tensor, params: &ParamStore, extra: Vec<(String, Tensor)>, f: F)
where
    F: for<'t> Fn(Var<'t>, &Bound<'t>, &[Var<'t>]) -> springverb::Result<Var<'t>> + Sync,
{
    let mut inputs = vec![("x".to_string(), x)];
    inputs.extend(params.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let n_params = params.len();
    inputs.extend(extra);
    let names: Vec<String> = params.names().map(String::from).collect();
    assert_gradients(
        &inputs,
        |_, vars| {
            let bound = Bound::from_vars(names.iter().cloned().zip(vars[1..=n_params].iter().copied()));
            let y = f(vars[0], &bound, &vars[1 + n_params..])?;
            probe(y, 99)
        },
        &GradcheckConfig::default(),
    )
    .unwrap();
}

#[test]
fn causal_conv_impulse_taps() {
    let p = store(1, |i| i.conv("c", 1, 1, 3));
    let mut p = p;
    p.set("c.bias", Tensor::zeros(vec![1])).unwrap();
    p.set("c.weight", t(&[1, 1, 3], &[0.5, -0.7, 1.3])).unwrap();
    let tape = Tape::new();
    let mut x = vec![0.0; 20];
    x[5] = 1.0;
    let x = tape.constant(t(&[1, 1, 20], &x));
    let y = nn::causal_conv(x, &p.bind(&tape, false), "c", 4).unwrap().value();
    let nz: Vec<usize> = (0..20).filter(|&i| y.data()[i] != 0.0).collect();
    assert_eq!(nz, vec![5, 9, 13]);
}

#[test]
fn causal_conv_zero_weights_give_bias() {
    let mut p = store(2, |i| i.conv("c", 2, 3, 3));
    p.set("c.weight", Tensor::zeros(vec![3, 2, 3])).unwrap();
    p.set("c.bias", t(&[3], &[0.1, -0.2, 0.3])).unwrap();
    let tape = Tape::new();
    let x = tape.constant(random_tensor(&[2, 2, 7], 1.0, 3));
    let y = nn::causal_conv(x, &p.bind(&tape, false), "c", 2).unwrap().value();
    assert_eq!(y.shape(), &[2, 3, 7]);
    for (row, ys) in y.data().chunks(7).enumerate() {
        assert!(ys.iter().all(|&v| v == [0.1, -0.2, 0.3][row % 3]));
    }
}

#[test]
fn causal_conv_stack_is_causal() {
    let p = store(4, |i| {
        i.conv("a", 1, 4, 3);
        i.conv("b", 4, 4, 3);
        i.conv("c", 4, 1, 2);
    });
    let run = |x: &Tensor| {
        let tape = Tape::inference();
        let b = p.bind(&tape, false);
        let h = nn::causal_conv(tape.constant(x.clone()), &b, "a", 1).unwrap().tanh();
        let h = nn::causal_conv(h, &b, "b", 2).unwrap().tanh();
        nn::causal_conv(h, &b, "c", 4).unwrap().value()
    };
    let x = random_tensor(&[1, 1, 40], 1.0, 5);
    let y = run(&x);
    for t0 in [0, 7, 20, 39] {
        let mut xp = x.data().to_vec();
        xp[t0] += 0.5;
        let yp = run(&t(&[1, 1, 40], &xp));
        for i in 0..40 {
            if i < t0 {
                assert_eq!(y.data()[i], yp.data()[i], "t0={t0} i={i}");
            }
        }
        assert_ne!(y.data()[t0], yp.data()[t0]);
    }
}

fn film_store(cond_dim: usize, channels: usize, seed: u64) -> ParamStore {
    store(seed, |i| i.film("f", cond_dim, channels))
}

fn set_generator(p: &mut ParamStore, gamma: f64, beta: f64, cond_dim: usize, c: usize) {
    p.set("f.gen1.weight", Tensor::zeros(vec![cond_dim, 16])).unwrap();
    p.set("f.gen1.bias", Tensor::zeros(vec![16])).unwrap();
    p.set("f.gen2.weight", Tensor::zeros(vec![16, 2 * c])).unwrap();
    let mut b = vec![gamma; c];
    b.extend(vec![beta; c]);
    p.set("f.gen2.bias", Tensor::from_vec(b)).unwrap();
}

#[test]
fn film_identity_is_exact() {
    let mut p = film_store(2, 3, 6);
    set_generator(&mut p, 1.0, 0.0, 2, 3);
    let tape = Tape::new();
    let x = random_tensor(&[2, 3, 11], 2.0, 7);
    let cond = tape.constant(random_tensor(&[2, 2], 1.0, 8));
    let y = nn::film(tape.constant(x.clone()), cond, &p.bind(&tape, false), "f", None).unwrap();
    assert_eq!(y.value(), x);
}

#[test]
fn film_zero_gamma_gives_constant() {
    let mut p = film_store(2, 3, 6);
    set_generator(&mut p, 0.0, 0.75, 2, 3);
    let tape = Tape::new();
    let x = tape.constant(random_tensor(&[2, 3, 11], 2.0, 7));
    let cond = tape.constant(random_tensor(&[2, 2], 1.0, 8));
    let y = nn::film(x, cond, &p.bind(&tape, false), "f", None).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.75));
}

#[test]
fn film_output_depends_on_conditioning() {
    let p = film_store(2, 4, 9);
    let tape = Tape::new();
    let x = tape.constant(random_tensor(&[1, 4, 16], 1.0, 10));
    let b = p.bind(&tape, false);
    let y1 = nn::film(x, tape.constant(t(&[1, 2], &[0.2, 0.9])), &b, "f", None).unwrap();
    let y2 = nn::film(x, tape.constant(t(&[1, 2], &[0.8, 0.1])), &b, "f", None).unwrap();
    assert_ne!(y1.value(), y2.value());
}

#[test]
fn film_rejects_wrong_cond_length() {
    let p = film_store(2, 4, 9);
    let tape = Tape::new();
    let x = tape.constant(random_tensor(&[1, 4, 16], 1.0, 10));
    let cond = tape.constant(t(&[1, 3], &[0.2, 0.9, 0.1]));
    assert!(nn::film(x, cond, &p.bind(&tape, false), "f", None).is_err());
}

#[test]
fn film_batchnorm_normalises_and_records_stats() {
    let mut p = film_store(1, 2, 11);
    set_generator(&mut p, 1.0, 0.0, 1, 2);
    let mut buffers = ParamStore::new();
    buffers.insert("f.bn.running_mean", t(&[2], &[0.5, -1.0]));
    buffers.insert("f.bn.running_var", t(&[2], &[4.0, 0.25]));
    let x = random_tensor(&[3, 2, 50], 3.0, 12).map(|v| v + 2.0);
    let tape = Tape::new();
    let cond = tape.constant(Tensor::zeros(vec![3, 1]));
    let y = nn::film(
        tape.constant(x.clone()),
        cond,
        &p.bind(&tape, false),
        "f",
        Some((&buffers, Mode::Train)),
    )
    .unwrap()
    .value();
    for c in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|b| y.data()[(b * 2 + c) * 50..][..50].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / 150.0;
        let v = vals.iter().map(|u| (u - m).powi(2)).sum::<f64>() / 150.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-4);
    }
    let stats = tape.take_stats();
    let names: Vec<&str> = stats.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["f.bn.running_mean", "f.bn.running_var"]);

    let tape = Tape::new();
    let cond = tape.constant(Tensor::zeros(vec![3, 1]));
    let y = nn::film(
        tape.constant(x.clone()),
        cond,
        &p.bind(&tape, false),
        "f",
        Some((&buffers, Mode::Eval)),
    )
    .unwrap()
    .value();
    let expect = (x.data()[0] - 0.5) / (4.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] - expect).abs() < 1e-12);
    assert!(tape.take_stats().is_empty());
}

#[test]
fn prelu_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 2], &[-2.0, 3.0]));
    let y = nn::prelu(x, tape.constant(t(&[1], &[0.25]))).unwrap();
    assert_eq!(y.value().data(), &[-0.5, 3.0]);
    let x = random_tensor(&[2, 3, 5], 1.0, 13);
    let xv = tape.constant(x.clone());
    assert_eq!(nn::prelu(xv, tape.constant(Tensor::ones(vec![3]))).unwrap().value(), x);
    let relu = xv.relu().value();
    assert_eq!(nn::prelu(xv, tape.constant(Tensor::zeros(vec![3]))).unwrap().value(), relu);
}

#[test]
fn gated_activation_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 2, 3], &[0.5, -1.0, 2.0, -50.0, -50.0, -50.0]));
    let y = nn::gated_activation(x).unwrap().value();
    assert!(y.data().iter().all(|v| v.abs() < 1e-20));
    let x = tape.constant(t(&[1, 2, 3], &[0.5, -1.0, 2.0, 50.0, 50.0, 50.0]));
    let y = nn::gated_activation(x).unwrap().value();
    for (a, b) in y.data().iter().zip([0.5f64, -1.0, 2.0]) {
        assert!((a - b.tanh()).abs() < 1e-15);
    }
    let x = tape.constant(t(&[1, 2, 2], &[0.0, 0.0, 3.0, -3.0]));
    assert_eq!(nn::gated_activation(x).unwrap().value().data(), &[0.0, 0.0]);
    let odd = tape.constant(Tensor::zeros(vec![1, 3, 2]));
    assert!(nn::gated_activation(odd).is_err());
}

#[test]
fn max_pool_examples() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]));
    assert_eq!(nn::max_pool1d(x, 1, 1).unwrap().value().data(), &[1.0, 3.0, 2.0, 5.0]);
    assert_eq!(nn::max_pool1d(x, 2, 1).unwrap().value().data(), &[1.0, 3.0, 3.0, 5.0]);
    assert_eq!(nn::max_pool1d(x, 2, 2).unwrap().value().data(), &[1.0, 3.0]);
    assert_eq!(nn::max_pool1d(x, 3, 3).unwrap().value().shape(), &[1, 1, 2]);
}

#[test]
fn max_pool_gradient_goes_to_first_argmax() {
    let tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 4], &[2.0, 2.0, 1.0, 0.0]));
    let y = nn::max_pool1d(x, 3, 1).unwrap();
    let g = tape.backward(y.sum()).unwrap();
    // the window at t=3 no longer contains index 0
    assert_eq!(g.wrt(x).data(), &[3.0, 1.0, 0.0, 0.0]);
}

#[test]
fn recurrent_init_layout() {
    let p = store(14, |i| {
        i.lstm("l", 3, 5);
        i.gru("g", 3, 5);
    });
    assert_eq!(p.get("l.w_ih").unwrap().shape(), &[3, 20]);
    assert_eq!(p.get("l.w_hh").unwrap().shape(), &[5, 20]);
    assert!(p.get("l.bias").unwrap().data()[5..10].iter().all(|&v| v == 1.0));
    assert_eq!(p.get("g.w_hh").unwrap().shape(), &[5, 15]);
    let bound = 1.0 / 5f64.sqrt();
    assert!(p.get("g.w_ih").unwrap().data().iter().all(|v| v.abs() <= bound));
    assert_eq!(p, store(14, |i| {
        i.lstm("l", 3, 5);
        i.gru("g", 3, 5);
    }));
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Straightforward per-step LSTM with explicit index arithmetic.
fn lstm_reference(x: &Tensor, wi: &Tensor, wh: &Tensor, b: &Tensor, h: usize) -> (Vec<f64>, Vec<f64>) {
    let [nb, c, nt] = *x.shape() else { unreachable!() };
    let (wi, wh, b, x) = (wi.data(), wh.data(), b.data(), x.data());
    let mut y = vec![0.0; nb * h * nt];
    let mut cell_out = vec![0.0; nb * h];
    for bi in 0..nb {
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for ti in 0..nt {
            let pre = |gate: usize, j: usize, hs: &[f64]| {
                let k = gate * h + j;
                let mut s = b[k];
                for ci in 0..c {
                    s += x[(bi * c + ci) * nt + ti] * wi[ci * 4 * h + k];
                }
                for m in 0..h {
                    s += hs[m] * wh[m * 4 * h + k];
                }
                s
            };
            let mut nh = vec![0.0; h];
            for j in 0..h {
                let i = sig(pre(0, j, &hs));
                let f = sig(pre(1, j, &hs));
                let g = pre(2, j, &hs).tanh();
                let o = sig(pre(3, j, &hs));
                cs[j] = f * cs[j] + i * g;
                nh[j] = o * cs[j].tanh();
            }
            hs = nh;
            for j in 0..h {
                y[(bi * h + j) * nt + ti] = hs[j];
            }
        }
        cell_out[bi * h..(bi + 1) * h].copy_from_slice(&cs);
    }
    (y, cell_out)
}

fn gru_reference(x: &Tensor, wi: &Tensor, wh: &Tensor, b: &Tensor, h0: &[f64], h: usize) -> Vec<f64> {
    let [nb, c, nt] = *x.shape() else { unreachable!() };
    let (wi, wh, b, x) = (wi.data(), wh.data(), b.data(), x.data());
    let mut y = vec![0.0; nb * h * nt];
    for bi in 0..nb {
        let mut hs = h0[bi * h..(bi + 1) * h].to_vec();
        for ti in 0..nt {
            let wx = |k: usize| (0..c).map(|ci| x[(bi * c + ci) * nt + ti] * wi[ci * 3 * h + k]).sum::<f64>();
            let uh = |k: usize, hs: &[f64]| (0..h).map(|m| hs[m] * wh[m * 3 * h + k]).sum::<f64>();
            let mut nh = vec![0.0; h];
            for j in 0..h {
                let z = sig(wx(j) + uh(j, &hs) + b[j]);
                let r = sig(wx(h + j) + uh(h + j, &hs) + b[h + j]);
                let n = (wx(2 * h + j) + r * uh(2 * h + j, &hs) + b[2 * h + j]).tanh();
                nh[j] = (1.0 - z) * n + z * hs[j];
            }
            hs = nh;
            for j in 0..h {
                y[(bi * h + j) * nt + ti] = hs[j];
            }
        }
    }
    y
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn lstm_matches_reference() {
    let p = store(15, |i| i.lstm("l", 2, 3));
    let x = random_tensor(&[2, 2, 4], 1.0, 16);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let out = nn::lstm_forward(
        tape.constant(x.clone()),
        b.get("l.w_ih").unwrap(),
        b.get("l.w_hh").unwrap(),
        b.get("l.bias").unwrap(),
        None,
        None,
    )
    .unwrap();
    let (y, c) = lstm_reference(&x, p.get("l.w_ih").unwrap(), p.get("l.w_hh").unwrap(), p.get("l.bias").unwrap(), 3);
    assert!(max_abs_diff(out.y.value().data(), &y) < 1e-10);
    assert!(max_abs_diff(out.c_t.data(), &c) < 1e-10);
    let last: Vec<f64> = (0..6).map(|r| y[r * 4 + 3]).collect();
    assert!(max_abs_diff(out.h_t.data(), &last) < 1e-10);
}

#[test]
fn lstm_zero_weights_forget_one_is_silent() {
    let tape = Tape::new();
    let mut bias = vec![0.0; 12];
    bias[3..6].iter_mut().for_each(|v| *v = 1.0);
    let out = nn::lstm_forward(
        tape.constant(random_tensor(&[1, 2, 6], 1.0, 17)),
        tape.constant(Tensor::zeros(vec![2, 12])),
        tape.constant(Tensor::zeros(vec![3, 12])),
        tape.constant(Tensor::from_vec(bias)),
        None,
        None,
    )
    .unwrap();
    assert!(out.y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_step_is_one_cell() {
    let p = store(18, |i| i.lstm("l", 2, 3));
    let x = random_tensor(&[1, 2, 1], 1.0, 19);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let out = nn::lstm_forward(
        tape.constant(x.clone()),
        b.get("l.w_ih").unwrap(),
        b.get("l.w_hh").unwrap(),
        b.get("l.bias").unwrap(),
        None,
        None,
    )
    .unwrap();
    let (wi, bb) = (p.get("l.w_ih").unwrap().data(), p.get("l.bias").unwrap().data());
    for j in 0..3 {
        let a = |g: usize| bb[g * 3 + j] + x.data()[0] * wi[g * 3 + j] + x.data()[1] * wi[12 + g * 3 + j];
        let c = sig(a(0)) * a(2).tanh();
        let h = sig(a(3)) * c.tanh();
        assert!((out.y.value().data()[j] - h).abs() < 1e-14);
    }
}

#[test]
fn gru_matches_reference() {
    let p = store(20, |i| i.gru("g", 2, 3));
    let x = random_tensor(&[2, 2, 4], 1.0, 21);
    let h0 = random_tensor(&[2, 3], 0.5, 22);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let out = nn::gru_forward(
        tape.constant(x.clone()),
        b.get("g.w_ih").unwrap(),
        b.get("g.w_hh").unwrap(),
        b.get("g.bias").unwrap(),
        Some(&h0),
    )
    .unwrap();
    let y = gru_reference(&x, p.get("g.w_ih").unwrap(), p.get("g.w_hh").unwrap(), p.get("g.bias").unwrap(), h0.data(), 3);
    assert!(max_abs_diff(out.y.value().data(), &y) < 1e-10);
}

#[test]
fn gru_update_gate_saturated_holds_state() {
    let p = store(23, |i| i.gru("g", 2, 3));
    let mut bias = p.get("g.bias").unwrap().data().to_vec();
    bias[..3].iter_mut().for_each(|v| *v = 1e3);
    let h0 = t(&[1, 3], &[0.3, -0.6, 0.9]);
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let out = nn::gru_forward(
        tape.constant(random_tensor(&[1, 2, 8], 1.0, 24)),
        b.get("g.w_ih").unwrap(),
        b.get("g.w_hh").unwrap(),
        tape.constant(Tensor::from_vec(bias)),
        Some(&h0),
    )
    .unwrap();
    let y = out.y.value();
    for j in 0..3 {
        assert!(y.data()[j * 8..(j + 1) * 8].iter().all(|&v| v == h0.data()[j]));
    }
    assert_eq!(out.h_t, h0);
}

#[test]
fn gru_zero_everything_is_silent() {
    let tape = Tape::new();
    let out = nn::gru_forward(
        tape.constant(random_tensor(&[1, 2, 5], 1.0, 25)),
        tape.constant(Tensor::zeros(vec![2, 9])),
        tape.constant(Tensor::zeros(vec![3, 9])),
        tape.constant(Tensor::zeros(vec![9])),
        None,
    )
    .unwrap();
    assert!(out.y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcheck_causal_conv() {
    let p = store(30, |i| i.conv("c", 2, 3, 3));
    check_with_params(random_tensor(&[2, 2, 9], 1.0, 31), &p, vec![], |x, b, _| {
        nn::causal_conv(x, b, "c", 2)
    });
}

#[test]
fn gradcheck_film() {
    let p = film_store(2, 3, 32);
    let cond = vec![("cond".to_string(), random_tensor(&[2, 2], 1.0, 33))];
    check_with_params(random_tensor(&[2, 3, 6], 1.0, 34), &p, cond, |x, b, rest| {
        nn::film(x, rest[0], b, "f", None)
    });
}

#[test]
fn gradcheck_film_batchnorm_train() {
    let p = film_store(2, 3, 35);
    let cond = vec![("cond".to_string(), random_tensor(&[2, 2], 1.0, 36))];
    let buffers = ParamStore::new();
    check_with_params(random_tensor(&[2, 3, 6], 1.0, 37), &p, cond, |x, b, rest| {
        nn::film(x, rest[0], b, "f", Some((&buffers, Mode::Train)))
    });
}

#[test]
fn gradcheck_batchnorm_eval() {
    let mean = t(&[2], &[0.1, -0.3]);
    let var = t(&[2], &[0.5, 2.0]);
    check_with_params(random_tensor(&[2, 2, 5], 1.0, 38), &ParamStore::new(), vec![], |x, _, _| {
        nn::batch_norm_eval(x, &mean, &var)
    });
}

#[test]
fn gradcheck_prelu() {
    // keep inputs away from the kink at zero
    let x = random_tensor(&[2, 3, 7], 1.0, 39).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let p = store(40, |i| i.prelu("a", 3));
    check_with_params(x, &p, vec![], |x, b, _| nn::prelu(x, b.get("a.slope")?));
}

#[test]
fn gradcheck_gated_activation() {
    check_with_params(random_tensor(&[2, 4, 5], 1.5, 41), &ParamStore::new(), vec![], |x, _, _| {
        nn::gated_activation(x)
    });
}

#[test]
fn gradcheck_max_pool() {
    for (k, s) in [(2, 1), (3, 2), (1, 1)] {
        check_with_params(random_tensor(&[2, 2, 9], 1.0, 42), &ParamStore::new(), vec![], move |x, _, _| {
            nn::max_pool1d(x, k, s)
        });
    }
}

#[test]
fn gradcheck_lstm() {
    let p = store(43, |i| i.lstm("l", 2, 3));
    let h0 = random_tensor(&[2, 3], 0.5, 44);
    let c0 = random_tensor(&[2, 3], 0.5, 45);
    check_with_params(random_tensor(&[2, 2, 6], 1.0, 46), &p, vec![], |x, b, _| {
        let out = nn::lstm_forward(x, b.get("l.w_ih")?, b.get("l.w_hh")?, b.get("l.bias")?, Some(&h0), Some(&c0))?;
        Ok(out.y)
    });
}

#[test]
fn gradcheck_gru() {
    let p = store(47, |i| i.gru("g", 2, 3));
    let h0 = random_tensor(&[2, 3], 0.5, 48);
    check_with_params(random_tensor(&[2, 2, 6], 1.0, 49), &p, vec![], |x, b, _| {
        let out = nn::gru_forward(x, b.get("g.w_ih")?, b.get("g.w_hh")?, b.get("g.bias")?, Some(&h0))?;
        Ok(out.y)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn layers_preserve_length(b in 1usize..3, c in 1usize..4, len in 1usize..40, d in 1usize..5, seed in 0u64..1000) {
        let p = store(seed, |i| {
            i.conv("c", c, c, 3);
            i.film("f", 2, c);
            i.prelu("a", c);
        });
        let tape = Tape::new();
        let bound = p.bind(&tape, true);
        let x = tape.constant(random_tensor(&[b, c, len], 1.0, seed));
        let cond = tape.constant(random_tensor(&[b, 2], 1.0, seed + 1));
        let want = vec![b, c, len];
        prop_assert_eq!(nn::causal_conv(x, &bound, "c", d).unwrap().shape(), want.clone());
        prop_assert_eq!(nn::film(x, cond, &bound, "f", None).unwrap().shape(), want.clone());
        prop_assert_eq!(nn::prelu(x, bound.get("a.slope").unwrap()).unwrap().shape(), want.clone());
        prop_assert_eq!(nn::max_pool1d(x, 2, 1).unwrap().shape(), want);
        let x2 = tape.constant(random_tensor(&[b, 2 * c, len], 1.0, seed));
        prop_assert_eq!(nn::gated_activation(x2).unwrap().shape(), vec![b, c, len]);
    }

    #[test]
    fn max_pool_length_is_ceil(len in 1usize..50, k in 1usize..6, s in 1usize..6) {
        let tape = Tape::new();
        let x = tape.constant(random_tensor(&[1, 1, len], 1.0, 0));
        let y = nn::max_pool1d(x, k, s).unwrap().value();
        prop_assert_eq!(y.shape()[2], len.div_ceil(s));
        for (i, &v) in y.data().iter().enumerate() {
            let end = i * s;
            let start = end.saturating_sub(k - 1);
            let m = x.value().data()[start..=end].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(v, m);
        }
    }
}
