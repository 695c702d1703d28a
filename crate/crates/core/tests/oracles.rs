//! Independent reference computations checked against the fast paths.

use approx::assert_relative_eq;
use trialcmdp::cmdp::{CmdpProblem, ConstraintSpec, SolverOptions};
use trialcmdp::mdp::{backward_induction, expected_total, forward_stages, PolicyTable, RewardSpec};
use trialcmdp::measure::{BetaPrior, Rectangle};
use trialcmdp::state::{stage_size, stage_states};
use trialcmdp::terminal::{effect_estimate, posterior_mse_terminal, TerminalTable};
use trialcmdp::{Arm, Measure, Outcome, StateIndexer, TrialState};

fn measures() -> Vec<Measure> {
    vec![
        Measure::uniform(),
        Measure::independent_beta(3.0, 7.0, 6.0, 4.0).unwrap(),
        Measure::pooled_null(2.0, 5.0).unwrap(),
        Measure::truncated(
            BetaPrior::UNIFORM,
            BetaPrior::new(2.0, 2.0).unwrap(),
            Rectangle::new((0.25, 0.5), (0.5, 1.0)).unwrap(),
        )
        .unwrap(),
        Measure::point_mass(0.3, 0.8).unwrap(),
    ]
}

fn policies(n: usize) -> Vec<PolicyTable> {
    vec![
        PolicyTable::constant(n, 0.5).unwrap(),
        PolicyTable::constant(n, 1.0).unwrap(),
        PolicyTable::from_fn(n, |x| {
            ((x.s_c * 7 + x.s_d * 3 + x.n_c * 5 + x.n_d) % 11) as f64 / 10.0
        })
        .unwrap(),
    ]
}

/// Probability of every terminal state as a sum over full histories of
/// allocation probabilities times the marginal likelihood of the outcomes.
fn history_sum(m: &Measure, pol: &PolicyTable, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; stage_size(n)];
    fn go(m: &Measure, pol: &PolicyTable, x: TrialState, w: f64, left: usize, out: &mut [f64]) {
        if left == 0 {
            out[trialcmdp::state::index_in_stage(&x)] += w * m.log_marginal_likelihood(&x).exp();
            return;
        }
        let d = pol.at(&x);
        for (arm, a) in [(Arm::Control, d), (Arm::Developmental, 1.0 - d)] {
            for o in [Outcome::Success, Outcome::Failure] {
                go(m, pol, x.step(arm, o), w * a, left - 1, out);
            }
        }
    }
    go(m, pol, TrialState::EMPTY, 1.0, n, &mut out);
    out
}

#[test]
fn forward_recursion_matches_history_enumeration() {
    for n in 1..=4 {
        for m in measures() {
            let k = m.tables(n).unwrap();
            for pol in policies(n) {
                let stages = forward_stages(&k, &pol).unwrap();
                let oracle = history_sum(&m, &pol, n);
                for (a, b) in stages[n].probs.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-10, "{m:?} n={n}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn change_of_measure_matches_direct_evaluation() {
    let objective = Measure::uniform();
    for n in 1..=4 {
        let k = objective.tables(n).unwrap();
        let table = TerminalTable::new(n);
        for m in measures() {
            if !objective.has_full_support() {
                continue;
            }
            let running = RewardSpec::from_fn(n, |x| {
                (
                    0.1 * x.s_c as f64 + 0.3,
                    0.2 * x.n_d as f64 - 0.1,
                    0.05 * x.s_d as f64,
                )
            })
            .with_terminal(table.rejection_indicator(0.5, 1.0))
            .unwrap();
            let posterior = RewardSpec::posterior_means(&m.tables(n).unwrap());
            let constraints = vec![
                ConstraintSpec::new("dense", m.clone(), running, 0.0),
                ConstraintSpec::new("means", m.clone(), posterior, 0.0),
            ];
            let prob = CmdpProblem::new(
                0.9,
                objective.clone(),
                RewardSpec::posterior_means(&k),
                constraints,
            )
            .unwrap();
            for pol in policies(n) {
                let ev = prob.evaluate(&pol).unwrap();
                for c in 0..2 {
                    let direct = prob.constraint_value_direct(c, &pol).unwrap();
                    assert!(
                        (ev.constraint_values[c] - direct).abs() < 1e-10,
                        "{m:?} n={n} c={c}"
                    );
                }
            }
        }
    }
}

fn instances() -> Vec<CmdpProblem> {
    let mut out = Vec::new();
    for (n, p, alpha_star) in [(4, 0.9, 0.03), (5, 0.95, 0.025), (6, 0.9, 0.02)] {
        let k = Measure::uniform().tables(n).unwrap();
        let table = TerminalTable::new(n);
        let h = table.rejection_indicator(0.3, 1.0);
        let c0 = ConstraintSpec::new(
            "type I",
            Measure::pooled_null(1.0, 1.0).unwrap(),
            RewardSpec::terminal_only(n, h).unwrap(),
            alpha_star,
        );
        let mut cons = vec![c0];
        if n == 6 {
            let g = table.rejection_indicator(0.3, -1.0);
            cons.push(ConstraintSpec::new(
                "power",
                Measure::uniform(),
                RewardSpec::terminal_only(n, g).unwrap(),
                -0.12,
            ));
        }
        out.push(
            CmdpProblem::new(p, Measure::uniform(), RewardSpec::posterior_means(&k), cons).unwrap(),
        );
    }
    out
}

#[test]
fn exact_lp_agrees_with_cutting_plane() {
    for prob in instances() {
        let rep = prob.cutting_plane(&SolverOptions::default()).unwrap();
        let (pol, v) = prob.exact_lp_policy().unwrap();
        assert!(
            (v - rep.dual_value).abs() < 1e-6,
            "LP {v} vs dual {}",
            rep.dual_value
        );
        assert!(v >= rep.objective - 1e-9);
        let ev = prob.evaluate(&pol).unwrap();
        assert_relative_eq!(ev.objective, v, max_relative = 1e-8);
        assert!(ev.slacks.iter().all(|&s| s >= -1e-8));
    }
}

#[test]
fn occupancy_flows_through_every_stage() {
    // the LP policy's stage distributions each carry unit mass
    for prob in instances() {
        let (pol, _) = prob.exact_lp_policy().unwrap();
        for d in forward_stages(prob.kernel(), &pol).unwrap() {
            assert_relative_eq!(d.total(), 1.0, max_relative = 1e-10);
        }
    }
}

/// Tensor Simpson rule for the posterior MSE on a rectangle.
fn quadrature_mse(x: &TrialState, rect: &Rectangle) -> f64 {
    let k = 600;
    let post = |t: f64, s: u32, m: u32| t.powi(s as i32) * (1.0 - t).powi((m - s) as i32);
    let nodes = |(l, u): (f64, f64)| -> Vec<(f64, f64)> {
        let h = (u - l) / k as f64;
        (0..=k)
            .map(|i| {
                let w = if i == 0 || i == k {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                (l + i as f64 * h, w * h / 3.0)
            })
            .collect()
    };
    let est = effect_estimate(x);
    let (mut z, mut acc) = (0.0, 0.0);
    for &(tc, wc) in &nodes(rect.c) {
        let fc = wc * post(tc, x.s_c, x.n_c);
        for &(td, wd) in &nodes(rect.d) {
            let f = fc * wd * post(td, x.s_d, x.n_d);
            z += f;
            acc += f * (est - (td - tc)).powi(2);
        }
    }
    acc / z
}

#[test]
fn posterior_mse_matches_quadrature() {
    let rects = [
        Rectangle::UNIT,
        Rectangle::new((0.25, 0.5), (0.75, 0.9)).unwrap(),
        Rectangle::new((0.9, 1.0), (0.0, 0.25)).unwrap(),
    ];
    let states = [
        (0, 0, 0, 0),
        (1, 2, 3, 2),
        (4, 0, 4, 5),
        (0, 3, 2, 3),
        (2, 7, 9, 8),
    ];
    for rect in &rects {
        for &(a, b, c, d) in &states {
            let x = TrialState::new(a, b, c, d).unwrap();
            let v =
                posterior_mse_terminal(&x, rect, &BetaPrior::UNIFORM, &BetaPrior::UNIFORM).unwrap();
            let q = quadrature_mse(&x, rect);
            assert!((v - q).abs() < 1e-6, "{x:?} {rect:?}: {v} vs {q}");
        }
    }
}

#[test]
fn dp_value_for_two_participants() {
    let k = Measure::uniform().tables(2).unwrap();
    let (v, _) = backward_induction(&k, &RewardSpec::posterior_means(&k), 1.0).unwrap();
    assert!((v - 13.0 / 12.0).abs() < 1e-12);
}

#[test]
fn expected_successes_under_er_are_half_per_patient() {
    for n in 1..=4 {
        let k = Measure::uniform().tables(n).unwrap();
        let er = PolicyTable::constant(n, 0.5).unwrap();
        let v = expected_total(&k, &er, &RewardSpec::posterior_means(&k)).unwrap();
        assert!((v - n as f64 / 2.0).abs() < 1e-12);
        // oracle: sum over histories of the realised posterior mean
        let ix = StateIndexer::new(n);
        let stages = forward_stages(&k, &er).unwrap();
        let mut direct = 0.0;
        for stage in &stages[..n] {
            for (x, p) in stage.states() {
                let _ = ix.index(&x).unwrap();
                direct += p
                    * 0.5
                    * (k.success_prob(&x, Arm::Control) + k.success_prob(&x, Arm::Developmental));
            }
        }
        assert!((direct - v).abs() < 1e-12);
        let _ = stage_states(n);
    }
}
