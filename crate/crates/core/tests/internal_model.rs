use dexhand_core::hand::{Preset, Setting};
use dexhand_core::internal::{self, Dataset, ForwardHyper, ForwardModel, InverseModel, Transition};
use dexhand_core::nn::{Activation, Architecture, DenseNet, Normalizer};
use dexhand_core::rng;

fn tr(s: &[f64], a: &[f64], s_next: &[f64], episode: u32, step: u32) -> Transition {
    Transition {
        s: s.to_vec(),
        a: a.to_vec(),
        s_next: s_next.to_vec(),
        episode,
        step,
    }
}

fn handcrafted() -> Dataset {
    let mut d = Dataset::new(1, 2);
    for t in [
        tr(&[0.0], &[1.0, 0.1], &[0.3], 0, 0),
        tr(&[0.3], &[-0.2, -0.3], &[0.1], 0, 1),
        tr(&[0.1], &[0.4, 0.2], &[0.6], 0, 2),
        tr(&[2.0], &[0.0, -0.4], &[2.25], 1, 0),
    ] {
        d.push(t).unwrap();
    }
    d
}

/// g(s, s') = (s' - s + 0.5, 0).
fn handcrafted_inverse(shift: usize) -> InverseModel {
    let mut net = DenseNet::zeros(&[2, 2], Activation::Tanh).unwrap();
    net.params_mut().copy_from_slice(&[-1.0, 1.0, 0.0, 0.0, 0.5, 0.0]);
    InverseModel {
        net,
        sigma: None,
        target_shift: shift,
    }
}

#[test]
fn sigma_matches_hand_arithmetic() {
    let data = handcrafted();
    data.check_chaining().unwrap();

    // shift 1: |1 - 0.8|, |-0.2 - 0.3|, |0.4 - 1.0|, |0 - 0.75|  and  |a2|
    let mut m = handcrafted_inverse(1);
    let sigma = internal::estimate_sigma(&mut m, &data).unwrap();
    assert!((sigma[0] - 0.5125).abs() < 1e-12, "{}", sigma[0]);
    assert!((sigma[1] - 0.25).abs() < 1e-12, "{}", sigma[1]);
    assert_eq!(m.sigma.as_deref(), Some(&sigma[..]));

    // shift 2 pairs (s0, s'1) and (s1, s'2) only; episode 1 is too short
    let mut m = handcrafted_inverse(2);
    let sigma = internal::estimate_sigma(&mut m, &data).unwrap();
    assert!((sigma[0] - 0.7).abs() < 1e-12, "{}", sigma[0]);
    assert!((sigma[1] - 0.2).abs() < 1e-12, "{}", sigma[1]);

    let dist = m.distribution(&[0.0], &[0.3]).unwrap();
    assert_eq!(dist.stds, sigma);
    assert!((dist.means[0] - 0.8).abs() < 1e-12);
}

fn allegro_data(episodes: usize, steps: usize, seed: u64) -> Dataset {
    internal::collect_random(&Preset::Allegro.config(), Setting::Sequential, episodes, steps, seed).unwrap()
}

fn small_model(data: &Dataset, horizon: usize, discount: f64, seed: u64) -> ForwardModel {
    let arch = Architecture::new(vec![8], Activation::Tanh);
    let mut m = ForwardModel::new(data.state_dim, data.action_dim, &arch, horizon, discount, seed).unwrap();
    m.fit_normalization(data).unwrap();
    m
}

/// Reference loss: explicit rollout of absolute states, residuals in
/// standardised delta units.
fn reference_loss(m: &ForwardModel, data: &Dataset, starts: &[usize]) -> f64 {
    let sigma = &m.net.output_norm().std;
    let h = data.state_dim;
    let mut total = 0.0;
    for &t0 in starts {
        let mut s = data.transitions[t0].s.clone();
        let mut w = 1.0;
        for i in 0..m.horizon {
            let t = &data.transitions[t0 + i];
            s = m.predict(&s, &t.a).unwrap();
            let step: f64 = (0..h).map(|k| ((s[k] - t.s_next[k]) / sigma[k]).powi(2)).sum();
            total += w * step;
            w *= m.discount;
        }
    }
    total / (starts.len() * h) as f64
}

#[test]
fn multi_step_loss_matches_explicit_rollout() {
    let data = allegro_data(4, 12, 5);
    for horizon in [1, 3, 7] {
        let m = small_model(&data, horizon, 0.9, horizon as u64);
        let starts = data.windows(horizon);
        let got = m.multi_step_loss(&data, &starts, None).unwrap();
        let want = reference_loss(&m, &data, &starts);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "S = {horizon}: {got} vs {want}");
    }
}

#[test]
fn horizon_one_equals_standardised_one_step_mse() {
    let data = allegro_data(3, 10, 8);
    let m = small_model(&data, 1, 0.5, 1);
    let starts: Vec<usize> = (0..data.len()).collect();
    let got = m.multi_step_loss(&data, &starts, None).unwrap();
    let sigma = &m.net.output_norm().std;
    let mut want = 0.0;
    for t in &data.transitions {
        let p = m.predict(&t.s, &t.a).unwrap();
        want += p.iter().zip(&t.s_next).zip(sigma).map(|((x, y), s)| ((x - y) / s).powi(2)).sum::<f64>();
    }
    want /= (data.len() * data.state_dim) as f64;
    assert!((got - want).abs() < 1e-9 * want.max(1.0));
}

#[test]
fn multi_step_gradient_matches_finite_differences_on_hand_data() {
    let data = allegro_data(2, 8, 13);
    let mut m = small_model(&data, 4, 0.8, 2);
    let starts = data.windows(4);
    let mut g = vec![0.0; m.net.num_params()];
    m.multi_step_loss(&data, &starts, Some(&mut g)).unwrap();
    let mut r = rng::seeded(4);
    let h = 1e-5;
    for _ in 0..40 {
        let p = rng::index(&mut r, g.len());
        let orig = m.net.params()[p];
        m.net.params_mut()[p] = orig + h;
        let up = m.multi_step_loss(&data, &starts, None).unwrap();
        m.net.params_mut()[p] = orig - h;
        let down = m.multi_step_loss(&data, &starts, None).unwrap();
        m.net.params_mut()[p] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - g[p]).abs() / fd.abs().max(g[p].abs()).max(1e-6);
        assert!(rel < 1e-4, "param {p}: fd {fd} analytic {}", g[p]);
    }
}

#[test]
fn collection_is_seeded_and_chained() {
    let a = allegro_data(5, 6, 99);
    let b = allegro_data(5, 6, 99);
    assert_eq!(a, b);
    assert_ne!(a, allegro_data(5, 6, 100));
    a.check_chaining().unwrap();
    assert_eq!(a.episodes().len(), 5);
    assert!(a.actions().iter().all(|x| (-1.0..=1.0).contains(x)));
}

#[test]
fn holdout_split_is_ten_to_one_by_episode() {
    let data = allegro_data(22, 3, 1);
    let (train, eval) = data.split_holdout(11);
    assert_eq!(train.episodes().len(), 20);
    assert_eq!(eval.episodes().len(), 2);
    assert_eq!(train.len() + eval.len(), data.len());
    let eval_eps: Vec<u32> = eval.transitions.iter().map(|t| t.episode).collect();
    assert!(eval_eps.iter().all(|e| *e == 10 || *e == 21));
}

#[test]
fn training_beats_the_zero_delta_baseline() {
    let hand = Preset::Robotiq.config();
    let data = internal::collect_random(&hand, Setting::QuasiStatic, 120, 5, 3).unwrap();
    let (train, eval) = data.split_holdout(11);
    let hyper = ForwardHyper {
        learning_rate: 3e-3,
        steps: 600,
        batch_size: 32,
        architecture: Architecture::new(vec![32, 32], Activation::Tanh),
        ..ForwardHyper::default()
    };
    let (m, report) = internal::train_forward(&train, Some(&eval), &hyper).unwrap();
    let baseline = eval
        .transitions
        .iter()
        .map(|t| t.s.iter().zip(&t.s_next).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (eval.len() * eval.state_dim) as f64;
    let mse = m.one_step_mse(&eval).unwrap();
    assert_eq!(report.eval_mse, Some(mse));
    assert!(mse < 0.25 * baseline, "mse {mse} baseline {baseline}");
}

#[test]
fn constant_columns_do_not_blow_up_inputs() {
    let rows = [0.5, 1.0, 0.5, 2.0, 0.5, 3.0];
    let n = Normalizer::fit_input(&rows, 2).unwrap();
    let mut z = [0.0; 2];
    n.standardize_into(&[0.5 + 1e-12, 2.0], &mut z);
    assert!(z[0].abs() < 1e-11);
}
