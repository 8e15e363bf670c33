use std::time::Instant;

use dexhand_core::hand::{Preset, Setting};
use dexhand_core::internal::{self, ForwardHyper, InverseHyper};
use dexhand_core::nn::{Activation, Architecture};
use dexhand_core::plan::{self, ActionDistribution, DifferentiableCost, Dynamics, MpcOptions, PlanBudget, Planner, ReachCost, TrajectoryCost};
use dexhand_core::rng;
use dexhand_core::Result;

/// `s' = s + a`: the state after one step is the start shifted by the action.
struct Shift(usize);

impl Dynamics for Shift {
    fn state_dim(&self) -> usize {
        self.0
    }

    fn action_dim(&self) -> usize {
        self.0
    }

    fn step_batch(&self, states: &[f64], actions: &[f64], _batch: usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        out.extend(states.iter().zip(actions).map(|(s, a)| s + a));
        Ok(())
    }
}

fn quadratic(target: Vec<f64>) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |states: &[f64], _: &[f64]| {
        let last = &states[states.len() - target.len()..];
        last.iter().zip(&target).map(|(s, t)| (s - t).powi(2)).sum()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cem_recovers_quadratic_optimum_at_quasi_static_budget() {
    let t0 = Instant::now();
    let budget = PlanBudget::quasi_static();
    assert_eq!((budget.cem_iterations, budget.samples, budget.beta), (5, 400, 0.1));
    for (k, seed) in [(2, 1), (4, 2), (4, 3)] {
        let mut r = rng::seeded(seed);
        let opt: Vec<f64> = (0..k).map(|_| rng::uniform(&mut r, -0.8, 0.8)).collect();
        let init = ActionDistribution::wide(1, k, 0.5);
        let res = plan::cem_refine(&Shift(k), &init, &vec![0.0; k], &quadratic(opt.clone()), &budget, seed).unwrap();
        let err = max_abs_diff(&res.actions, &opt);
        assert!(err < 0.05, "K = {k}: max error {err}");
        assert_eq!(res.samples, 2000);
        assert_eq!(res.trace.len(), 5);
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(t0.elapsed().as_secs() < 10);
}

#[test]
fn beta_one_keeps_the_distribution() {
    let init = ActionDistribution::new(vec![0.2, -0.1], vec![0.3, 0.4], 1, 2).unwrap();
    let budget = PlanBudget {
        beta: 1.0,
        ..PlanBudget::quasi_static()
    };
    let res = plan::cem_refine(&Shift(2), &init, &[0.0, 0.0], &quadratic(vec![0.5, 0.5]), &budget, 0).unwrap();
    assert_eq!(res.distribution.unwrap(), init);
}

#[test]
fn optimal_initial_mean_is_scored_first() {
    let opt = vec![0.3, -0.6, 0.1];
    let init = ActionDistribution::new(opt.clone(), vec![0.5; 3], 1, 3).unwrap();
    let res = plan::cem_refine(&Shift(3), &init, &[0.0; 3], &quadratic(opt.clone()), &PlanBudget::quasi_static(), 5).unwrap();
    assert_eq!(res.actions, opt);
    assert_eq!(res.cost, 0.0);
}

#[test]
fn nan_costs_are_ranked_last_and_all_nan_is_an_error() {
    let half_nan = |states: &[f64], _: &[f64]| if states[1] > 0.0 { f64::NAN } else { (states[1] + 0.5).powi(2) };
    let res = plan::cem_refine(&Shift(1), &ActionDistribution::wide(1, 1, 0.5), &[0.0], &half_nan, &PlanBudget::quasi_static(), 1).unwrap();
    assert!((res.actions[0] + 0.5).abs() < 0.05);
    let all_nan = |_: &[f64], _: &[f64]| f64::NAN;
    assert!(plan::cem_refine(&Shift(1), &ActionDistribution::wide(1, 1, 0.5), &[0.0], &all_nan, &PlanBudget::quasi_static(), 1).is_err());
}

#[test]
fn random_shooting_is_nested_in_sample_count() {
    let cost = quadratic(vec![0.1, 0.2, -0.3]);
    let mut prev = f64::INFINITY;
    for n in [1, 10, 100, 1000] {
        let r = plan::random_shoot(&Shift(3), &[0.0; 3], 2, &cost, n, 77).unwrap();
        assert_eq!(r.samples, n);
        assert!(r.cost <= prev);
        prev = r.cost;
    }
}

#[test]
fn sample_moments_obey_the_clt() {
    let d = ActionDistribution::new(vec![0.1, -0.2], vec![0.05, 0.2], 1, 2).unwrap();
    let mut r = rng::seeded(8);
    let n = 20_000;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| d.sample(&mut r)).collect();
    for j in 0..2 {
        let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n as f64;
        // five standard errors
        assert!((mean - d.means[j]).abs() < 5.0 * d.stds[j] / (n as f64).sqrt());
        assert!((var.sqrt() - d.stds[j]).abs() < 5.0 * d.stds[j] / (2.0 * n as f64).sqrt());
    }
}

#[test]
fn uniform_draws_pass_chi_square() {
    let mut r = rng::seeded(12345);
    let bins = 20;
    let n = 100_000;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let u = rng::uniform(&mut r, -1.0, 1.0);
        counts[(((u + 1.0) / 2.0) * bins as f64) as usize] += 1;
    }
    let e = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99.9th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 43.82, "chi2 {chi2}");
}

#[test]
fn reach_cost_gradient_matches_finite_differences() {
    let cost = ReachCost::new(vec![0.1, 0.2, 0.3]);
    let states = [0.0, 0.0, 0.0, 0.5, -0.1, 0.2, 0.3, 0.4, -0.2];
    let mut g = vec![0.0; states.len()];
    let c = cost.cost_grad(&states, &[], &mut g);
    assert_eq!(c, cost.cost(&states, &[]));
    assert!(g[..3].iter().all(|v| *v == 0.0));
    for i in 3..states.len() {
        let mut s = states;
        s[i] += 1e-6;
        let up = cost.cost(&s, &[]);
        s[i] -= 2e-6;
        let down = cost.cost(&s, &[]);
        assert!(((up - down) / 2e-6 - g[i]).abs() < 1e-6);
    }
}

#[test]
fn planners_report_exact_planning_samples_and_improve_on_doing_nothing() {
    let hand = Preset::Robotiq.config();
    let data = internal::collect_random(&hand, Setting::QuasiStatic, 150, 4, 1).unwrap();
    let arch = Architecture::new(vec![32, 32], Activation::Tanh);
    let (fm, _) = internal::train_forward(
        &data,
        None,
        &ForwardHyper {
            learning_rate: 3e-3,
            steps: 500,
            batch_size: 32,
            architecture: arch.clone(),
            ..ForwardHyper::default()
        },
    )
    .unwrap();
    let (mut inv, _) = internal::train_inverse(
        &data,
        &InverseHyper {
            learning_rate: 3e-3,
            steps: 500,
            batch_size: 32,
            architecture: arch,
            ..InverseHyper::default()
        },
    )
    .unwrap();
    internal::estimate_sigma(&mut inv, &data).unwrap();
    let budget = PlanBudget {
        samples: 100,
        cem_iterations: 2,
        elites: 10,
        ..PlanBudget::quasi_static()
    };
    let planners = [
        Planner::Bidirectional {
            forward: &fm,
            inverse: &inv,
            budget,
        },
        Planner::Cem {
            forward: &fm,
            budget,
            init_std: 0.5,
        },
        Planner::RandomShooting {
            forward: &fm,
            horizon: 1,
            samples: budget.planning_samples(),
        },
    ];
    let opts = MpcOptions::new(1, Setting::QuasiStatic);
    for p in &planners {
        let mut gain = 0.0;
        for i in 0..10u64 {
            let s = hand.random_state(rng::derive_seed(40, i));
            let t = hand.sample_reachable_target(rng::derive_seed(41, i));
            let rec = plan::mpc_rollout(&hand, p, &s, &t, &opts, i).unwrap();
            assert_eq!(rec.samples_per_plan, 200);
            assert_eq!(rec.total_samples, 200);
            gain += rec.errors[0] - rec.final_error;
        }
        assert!(gain > 0.0);
    }
}
