use std::time::Instant;

use dexhand_core::nn::{self, Activation, AdamState, DenseNet, Loss, Normalizer, Tape};
use dexhand_core::rng::{self, Rng};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn uniform_vec(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng::uniform(r, lo, hi)).collect()
}

fn random_norm(r: &mut Rng, dim: usize) -> Normalizer {
    Normalizer::new(uniform_vec(r, dim, -1.0, 1.0), uniform_vec(r, dim, 0.3, 2.0)).unwrap()
}

/// A small net with random shape, weights and normalisation.
fn random_net(r: &mut Rng, seed: u64) -> DenseNet {
    let depth = 1 + rng::index(r, 3);
    let mut sizes = vec![1 + rng::index(r, 5)];
    for _ in 0..depth {
        sizes.push(1 + rng::index(r, 6));
    }
    sizes.push(1 + rng::index(r, 4));
    let mut net = DenseNet::new(&sizes, Activation::Tanh, seed).unwrap();
    for p in net.params_mut() {
        *p = rng::uniform(r, -1.0, 1.0);
    }
    let (i, o) = (net.in_dim(), net.out_dim());
    net.set_normalization(random_norm(r, i), random_norm(r, o)).unwrap();
    net
}

fn batch_loss(net: &DenseNet, x: &[f64], y: &[f64], batch: usize, loss: Loss) -> f64 {
    let mut out = Vec::new();
    net.forward_batch(x, batch, &mut out).unwrap();
    nn::loss_and_grad(&out, y, net.output_norm(), loss).unwrap().0
}

#[test]
fn fuzzed_parameter_and_input_gradients_match_central_differences() {
    let t0 = Instant::now();
    let mut r = rng::seeded(2024);
    let h = 1e-5;
    let mut checks = 0;
    for case in 0..100u64 {
        let mut net = random_net(&mut r, case);
        let batch = 1 + rng::index(&mut r, 4);
        let loss = if case % 4 == 3 { Loss::Absolute } else { Loss::Squared };
        let x = uniform_vec(&mut r, batch * net.in_dim(), -2.0, 2.0);
        let y = uniform_vec(&mut r, batch * net.out_dim(), -2.0, 2.0);
        let (value, grads) = nn::net_gradients(&net, &x, &y, batch, loss).unwrap();
        assert!((value - batch_loss(&net, &x, &y, batch, loss)).abs() < 1e-12);

        for p in 0..net.num_params() {
            let orig = net.params()[p];
            net.params_mut()[p] = orig + h;
            let up = batch_loss(&net, &x, &y, batch, loss);
            net.params_mut()[p] = orig - h;
            let down = batch_loss(&net, &x, &y, batch, loss);
            net.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, grads[p]) < 1e-4, "case {case} param {p}: fd {fd} analytic {}", grads[p]);
        }

        let mut tape = Tape::new();
        let mut out = Vec::new();
        net.forward_taped(&x, batch, &mut tape, &mut out).unwrap();
        let (_, g_out) = nn::loss_and_grad(&out, &y, net.output_norm(), loss).unwrap();
        let mut sink = vec![0.0; net.num_params()];
        let mut g_in = vec![0.0; x.len()];
        net.backward(&tape, &g_out, &mut sink, Some(&mut g_in)).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let up = batch_loss(&net, &xp, &y, batch, loss);
            xp[i] -= 2.0 * h;
            let down = batch_loss(&net, &xp, &y, batch, loss);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, g_in[i]) < 1e-4, "case {case} input {i}: fd {fd} analytic {}", g_in[i]);
        }
        checks += 1;
    }
    assert_eq!(checks, 100);
    assert!(t0.elapsed().as_secs() < 60);
}

#[test]
fn forward_matches_explicit_matrix_products() {
    let mut r = rng::seeded(7);
    for case in 0..20 {
        let net = random_net(&mut r, case);
        let x = uniform_vec(&mut r, net.in_dim(), -1.0, 1.0);
        let got = net.forward(&x).unwrap();

        let (inn, outn) = (net.input_norm(), net.output_norm());
        let mut a: Vec<f64> = x.iter().zip(inn.mean.iter().zip(&inn.std)).map(|(v, (m, s))| (v - m) / s).collect();
        let layers = net.layer_sizes().len() - 1;
        for l in 0..layers {
            let (w, b) = net.layer(l);
            let fan_in = net.layer_sizes()[l];
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bo)| bo + (0..fan_in).map(|i| w[o * fan_in + i] * a[i]).sum::<f64>())
                .collect();
            a = if l + 1 < layers { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
        for (o, (g, v)) in got.iter().zip(&a).enumerate() {
            let want = outn.mean[o] + outn.std[o] * v;
            assert!((g - want).abs() < 1e-12, "case {case} output {o}");
        }
    }
}

#[test]
fn relu_net_routes_gradient_only_through_active_units() {
    let mut net = DenseNet::zeros(&[1, 2, 1], Activation::Relu).unwrap();
    // hidden = relu([x, -x]), out = h0 + 3 h1
    net.params_mut().copy_from_slice(&[1.0, -1.0, 0.0, 0.0, 1.0, 3.0, 0.0]);
    assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
    assert_eq!(net.forward(&[-2.0]).unwrap(), vec![6.0]);
    let (_, g) = nn::net_gradients(&net, &[2.0], &[0.0], 1, Loss::Squared).unwrap();
    // dL/dout = 2 * 2 = 4; only the first hidden unit is active
    assert_eq!(g, vec![8.0, 0.0, 4.0, 0.0, 8.0, 0.0, 4.0]);
}

#[test]
fn adam_matches_reference_recursion() {
    let mut r = rng::seeded(11);
    let n = 5;
    let mut adam = AdamState::new(n, 0.01);
    let mut p = uniform_vec(&mut r, n, -1.0, 1.0);
    let mut p_ref = p.clone();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps, lr) = (adam.beta1, adam.beta2, adam.epsilon, adam.learning_rate);
    for t in 1..=50 {
        let g = uniform_vec(&mut r, n, -3.0, 3.0);
        adam.step(&mut p, &g).unwrap();
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            p_ref[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for i in 0..n {
            assert!((p[i] - p_ref[i]).abs() < 1e-12, "step {t} param {i}");
        }
    }
    assert_eq!(adam.step, 50);
}

#[test]
fn normalizer_fit_matches_two_pass_statistics() {
    let rows = [1.0, 10.0, 5.0, 3.0, 10.0, -1.0, 8.0, 10.0, 2.0, -4.0, 10.0, 0.5];
    let n = Normalizer::fit(&rows, 3).unwrap();
    let col = |c: usize| rows.iter().skip(c).step_by(3).copied().collect::<Vec<f64>>();
    for c in 0..3 {
        let xs = col(c);
        let mean = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((n.mean[c] - mean).abs() < 1e-12);
        assert!((n.std[c] - var.sqrt().max(nn::STD_FLOOR)).abs() < 1e-12);
    }
    assert_eq!(n.std[1], nn::STD_FLOOR);
    assert_eq!(Normalizer::fit_input(&rows, 3).unwrap().std[1], 1.0);

    let mut z = [0.0; 3];
    let mut back = [0.0; 3];
    n.standardize_into(&rows[0..3], &mut z);
    n.destandardize_into(&z, &mut back);
    for (a, b) in back.iter().zip(&rows[0..3]) {
        assert!((a - b).abs() < 1e-12);
    }
}
