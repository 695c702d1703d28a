//! Fast internal consistency checks run by `trialcmdp selftest`.

use trialcmdp::cmdp::{CmdpProblem, ConstraintSpec, SolverOptions};
use trialcmdp::designs::{dp_policy, er_policy};
use trialcmdp::mdp::{forward_stages, PolicyTable, RewardSpec};
use trialcmdp::oc::OcEvaluator;
use trialcmdp::terminal::TerminalTable;
use trialcmdp::{Arm, Measure, Outcome, TrialState};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> trialcmdp::Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check {
            name,
            passed,
            detail,
        },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn enumerate(m: &Measure, pol: &PolicyTable, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; trialcmdp::state::stage_size(n)];
    let mut stack = vec![(TrialState::EMPTY, 1.0)];
    while let Some((x, w)) = stack.pop() {
        if x.stage() == n {
            out[trialcmdp::state::index_in_stage(&x)] += w * m.log_marginal_likelihood(&x).exp();
            continue;
        }
        let d = pol.at(&x);
        for (arm, a) in [(Arm::Control, d), (Arm::Developmental, 1.0 - d)] {
            for o in [Outcome::Success, Outcome::Failure] {
                stack.push((x.step(arm, o), w * a));
            }
        }
    }
    out
}

pub fn run() -> Vec<Check> {
    vec![
        check("dp value for two participants is 13/12", || {
            let (_, v) = dp_policy(2, &Measure::uniform())?;
            Ok(((v - 13.0 / 12.0).abs() < 1e-12, format!("{v}")))
        }),
        check("forward recursion matches history enumeration", || {
            let n = 4;
            let m = Measure::independent_beta(3.0, 7.0, 6.0, 4.0)?;
            let pol = PolicyTable::from_fn(n, |x| ((x.s_c * 3 + x.n_d) % 5) as f64 / 4.0)?;
            let fwd = forward_stages(&m.tables(n)?, &pol)?;
            let err = fwd[n]
                .probs
                .iter()
                .zip(enumerate(&m, &pol, n))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((err < 1e-10, format!("max error {err:e}")))
        }),
        check("equal randomisation keeps the test level", || {
            let n = 20;
            let ev = OcEvaluator::new(TerminalTable::new(n), 0.1);
            let er = er_policy(n);
            let mut worst: f64 = 0.0;
            for k in 1..10 {
                let t = k as f64 / 10.0;
                worst = worst.max(ev.evaluate(&er, t, t)?.rejection_rate);
            }
            Ok((worst <= 0.1, format!("max rejection rate {worst}")))
        }),
        check("exact LP agrees with the cutting plane", || {
            let n = 4;
            let k = Measure::uniform().tables(n)?;
            let h = TerminalTable::new(n).rejection_indicator(0.3, 1.0);
            let c = ConstraintSpec::new(
                "type I error",
                Measure::pooled_null(1.0, 1.0)?,
                RewardSpec::terminal_only(n, h)?,
                0.03,
            );
            let prob = CmdpProblem::new(
                0.9,
                Measure::uniform(),
                RewardSpec::posterior_means(&k),
                vec![c],
            )?;
            let dual = match prob.cutting_plane(&SolverOptions::default()) {
                Ok(r) => r.dual_value,
                Err(e) => return Ok((false, e.to_string())),
            };
            let (_, lp) = prob.exact_lp_policy()?;
            Ok(((lp - dual).abs() < 1e-6, format!("LP {lp}, dual {dual}")))
        }),
    ]
}
