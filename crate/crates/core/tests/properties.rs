use proptest::prelude::*;
use trialcmdp::cmdp::{CmdpProblem, ConstraintSpec};
use trialcmdp::lp::{self, LinearProgram, LpStatus};
use trialcmdp::mdp::{backward_induction, expected_total, forward_stages, PolicyTable, RewardSpec};
use trialcmdp::measure::BetaPrior;
use trialcmdp::oc::OcEvaluator;
use trialcmdp::terminal::TerminalTable;
use trialcmdp::{Arm, Measure, Outcome, TrialState};

fn beta_counts() -> impl Strategy<Value = f64> {
    (1u32..40).prop_map(|k| k as f64 * 0.25)
}

fn measure() -> impl Strategy<Value = Measure> {
    prop_oneof![
        (beta_counts(), beta_counts(), beta_counts(), beta_counts())
            .prop_map(|(a, b, c, d)| Measure::independent_beta(a, b, c, d).unwrap()),
        (beta_counts(), beta_counts()).prop_map(|(a, b)| Measure::pooled_null(a, b).unwrap()),
        (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(c, d)| Measure::point_mass(c, d).unwrap()),
    ]
}

fn random_policy(n: usize, seed: u64) -> PolicyTable {
    let mut s = seed | 1;
    PolicyTable::from_fn(n, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s % 1001) as f64 / 1000.0
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn stage_distributions_carry_unit_mass(m in measure(), n in 1usize..9, seed in any::<u64>()) {
        let k = m.tables(n).unwrap();
        for d in forward_stages(&k, &random_policy(n, seed)).unwrap() {
            prop_assert!((d.total() - 1.0).abs() < 1e-10);
            prop_assert!(d.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn backward_value_dominates_fixed_policies(m in measure(), seed in any::<u64>(), p in 0.5..=1.0f64) {
        let n = 6;
        let k = m.tables(n).unwrap();
        let table = TerminalTable::new(n);
        let r = RewardSpec::posterior_means(&k).with_terminal(table.rejection_indicator(0.2, 0.7)).unwrap();
        let (v, pol) = backward_induction(&k, &r, p).unwrap();
        prop_assert!(pol.values().all(|d| d == p || d == 1.0 - p || d == 0.5));
        for i in 0..100u64 {
            let clip = random_policy(n, seed.wrapping_add(i));
            let clipped = PolicyTable::from_fn(n, |x| clip.at(x).clamp(1.0 - p, p)).unwrap();
            prop_assert!(expected_total(&k, &clipped, &r).unwrap() <= v + 1e-10);
        }
    }

    #[test]
    fn backward_induction_is_reproducible(m in measure(), n in 1usize..12) {
        let k = m.tables(n).unwrap();
        let r = RewardSpec::posterior_means(&k);
        let (v1, p1) = backward_induction(&k, &r, 0.9).unwrap();
        let (v2, p2) = backward_induction(&k, &r, 0.9).unwrap();
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        prop_assert_eq!(p1, p2);
    }

    #[test]
    fn lagrangian_is_convex(l1 in 0.0..5.0f64, l2 in 0.0..5.0f64, m1 in 0.0..5.0f64, m2 in 0.0..5.0f64, tau in 0.0..=1.0f64) {
        let n = 5;
        let k = Measure::uniform().tables(n).unwrap();
        let table = TerminalTable::new(n);
        let cons = vec![
            ConstraintSpec::new("t1", Measure::pooled_null(1.0, 1.0).unwrap(),
                RewardSpec::terminal_only(n, table.rejection_indicator(0.3, 1.0)).unwrap(), 0.02),
            ConstraintSpec::new("pw", Measure::uniform(),
                RewardSpec::terminal_only(n, table.rejection_indicator(0.3, -1.0)).unwrap(), -0.15),
        ];
        let prob = CmdpProblem::new(0.9, Measure::uniform(), RewardSpec::posterior_means(&k), cons).unwrap();
        let a = [l1, l2];
        let b = [m1, m2];
        let mid = [tau * l1 + (1.0 - tau) * m1, tau * l2 + (1.0 - tau) * m2];
        let la = prob.lagrangian(&a).unwrap().0;
        let lb = prob.lagrangian(&b).unwrap().0;
        let lm = prob.lagrangian(&mid).unwrap().0;
        prop_assert!(lm <= tau * la + (1.0 - tau) * lb + 1e-9);
    }

    #[test]
    fn lp_value_ignores_row_order(
        rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), 0.5..4.0f64), 1..6),
        c in prop::collection::vec(-2.0..1.0f64, 3),
        shift in 0usize..6,
    ) {
        let build = |order: &[usize]| {
            let mut lp = LinearProgram::new(c.clone());
            for &i in order {
                lp.add_le(rows[i].0.clone(), rows[i].1);
            }
            // keep the problem bounded
            lp.add_le(vec![1.0, 1.0, 1.0], 10.0);
            lp
        };
        let order: Vec<usize> = (0..rows.len()).collect();
        let mut rotated = order.clone();
        rotated.rotate_left(shift % rows.len());
        let a = lp::solve(&build(&order)).unwrap();
        let b = lp::solve(&build(&rotated)).unwrap();
        prop_assert_eq!(a.status, LpStatus::Optimal);
        prop_assert!((a.objective - b.objective).abs() < 1e-9);
        // weak duality with the reported multipliers
        let lp = build(&order);
        let dual: f64 = lp.b_ub.iter().zip(&a.duals_ub).map(|(b, y)| b * y).sum();
        prop_assert!(a.objective >= dual - 1e-9);
        prop_assert!(a.duals_ub.iter().all(|&y| y <= 1e-12));
    }

    #[test]
    fn er_curves_are_reflection_symmetric(theta in 0.0..=0.5f64) {
        let n = 30;
        let ev = OcEvaluator::new(TerminalTable::new(n), 0.1);
        let er = PolicyTable::constant(n, 0.5).unwrap();
        let a = ev.evaluate(&er, 0.5, theta).unwrap();
        let b = ev.evaluate(&er, 0.5, 1.0 - theta).unwrap();
        prop_assert!((a.rejection_rate - b.rejection_rate).abs() < 1e-10);
        prop_assert!((a.bias + b.bias).abs() < 1e-10);
        prop_assert!((a.mse - b.mse).abs() < 1e-10);
    }

    #[test]
    fn operating_characteristics_match_history_enumeration(n in 1usize..5, seed in any::<u64>(), tc in 0.0..=1.0f64, td in 0.0..=1.0f64) {
        let pol = random_policy(n, seed);
        let table = TerminalTable::new(n);
        let ev = OcEvaluator::new(table.clone(), 0.3);
        let row = ev.evaluate(&pol, tc, td).unwrap();
        let (mut share, mut rr, mut bias, mut mse) = (0.0, 0.0, 0.0, 0.0);
        let mut stack = vec![(TrialState::EMPTY, 1.0)];
        while let Some((x, w)) = stack.pop() {
            if x.stage() == n {
                let i = trialcmdp::state::index_in_stage(&x);
                share += w * x.n_c as f64 / n as f64;
                if table.pvalues[i] <= 0.3 { rr += w; }
                let e = table.estimates[i] - (td - tc);
                bias += w * e;
                mse += w * e * e;
                continue;
            }
            let d = pol.at(&x);
            for (arm, a, th) in [(Arm::Control, d, tc), (Arm::Developmental, 1.0 - d, td)] {
                stack.push((x.step(arm, Outcome::Success), w * a * th));
                stack.push((x.step(arm, Outcome::Failure), w * a * (1.0 - th)));
            }
        }
        let pb = if tc > td { share } else if td > tc { 1.0 - share } else { 0.5 };
        prop_assert!((row.patient_benefit - pb).abs() < 1e-10);
        prop_assert!((row.rejection_rate - rr).abs() < 1e-10);
        prop_assert!((row.bias - bias).abs() < 1e-10);
        prop_assert!((row.mse - mse).abs() < 1e-10);
    }

    #[test]
    fn swapping_arms_swaps_the_marginal(a in beta_counts(), b in beta_counts(), c in beta_counts(), d in beta_counts(),
                                        s_c in 0u32..5, s_d in 0u32..5, e_c in 0u32..5, e_d in 0u32..5) {
        let x = TrialState::new(s_c, s_d, s_c + e_c, s_d + e_d).unwrap();
        let m = Measure::IndependentBeta { c: BetaPrior::new(a, b).unwrap(), d: BetaPrior::new(c, d).unwrap() };
        let w = Measure::IndependentBeta { c: BetaPrior::new(c, d).unwrap(), d: BetaPrior::new(a, b).unwrap() };
        prop_assert!((m.log_marginal_likelihood(&x) - w.log_marginal_likelihood(&x.swapped())).abs() < 1e-10);
    }
}
