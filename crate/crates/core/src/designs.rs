//! Named allocation procedures: the comparators ER, DP and CRDP, and the
//! constrained designs built on [`CmdpProblem`].

use alloc::format;
use alloc::vec::Vec;

use crate::cmdp::{CmdpProblem, ConstraintSpec, SolveFailure, SolveReport, SolverOptions};
use crate::error::{Error, Result};
use crate::mdp::{backward_induction, expected_total, PolicyTable, RewardSpec};
use crate::measure::{BetaPrior, Measure, Rectangle};
use crate::state::stage_states;
use crate::terminal::{posterior_mse_table, TerminalTable};

/// Short identifier of a design, also stored in policy artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignTag {
    Er,
    Dp,
    Crdp,
    CmdpT,
    CmdpE1,
    CmdpE2,
    CmdpR,
}

impl DesignTag {
    pub const ALL: [DesignTag; 7] = [
        DesignTag::Er,
        DesignTag::Dp,
        DesignTag::Crdp,
        DesignTag::CmdpT,
        DesignTag::CmdpE1,
        DesignTag::CmdpE2,
        DesignTag::CmdpR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignTag::Er => "ER",
            DesignTag::Dp => "DP",
            DesignTag::Crdp => "CRDP",
            DesignTag::CmdpT => "CMDP-T",
            DesignTag::CmdpE1 => "CMDP-E1",
            DesignTag::CmdpE2 => "CMDP-E2",
            DesignTag::CmdpR => "CMDP-R",
        }
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        DesignTag::ALL.get(code as usize).copied()
    }

    pub fn from_name(name: &str) -> Option<Self> {
        DesignTag::ALL
            .iter()
            .copied()
            .find(|t| t.name().eq_ignore_ascii_case(name))
    }
}

impl core::fmt::Display for DesignTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Type I error and power constraint settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TestingParams {
    /// Significance level of the final test.
    pub alpha: f64,
    /// Bound on the rejection probability under the null measure.
    pub alpha_star: f64,
    /// Bound on the non-rejection probability under the power measure.
    pub beta: f64,
    pub null_prior: BetaPrior,
    /// Power measure pseudo-counts; the objective prior when `None`.
    pub power_prior: Option<[BetaPrior; 2]>,
}

impl TestingParams {
    pub fn new(alpha: f64, alpha_star: f64, beta: f64) -> Self {
        TestingParams {
            alpha,
            alpha_star,
            beta,
            null_prior: BetaPrior::UNIFORM,
            power_prior: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha_star", self.alpha_star),
            ("beta", self.beta),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside [0, 1]"
                )));
            }
        }
        if self.alpha_star > self.alpha {
            log::warn!(
                "alpha_star = {} exceeds alpha = {}",
                self.alpha_star,
                self.alpha
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Er,
    Dp,
    Crdp,
    CmdpT(TestingParams),
    /// Estimation-error constraints per rectangle, bounded by `xi` times the
    /// baseline policy's value (ER for E1, CRDP for E2).
    CmdpE {
        tag: DesignTag,
        testing: TestingParams,
        xi: f64,
        rectangles: Vec<Rectangle>,
        rect_prior: BetaPrior,
    },
    /// Keeps `xi` of the best achievable successes under a second prior.
    CmdpR {
        xi: f64,
        li_prior: [BetaPrior; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub horizon: usize,
    /// Randomisation bound; ignored by ER, fixed at 1 for DP and 0.9 for CRDP.
    pub p: f64,
    /// Objective prior pseudo-counts for control and developmental arms.
    pub prior: [BetaPrior; 2],
    pub design: Design,
}

/// Breakpoints of the rectangle grid used by CMDP-E2.
pub const E2_BREAKS: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0];
pub const CRDP_P: f64 = 0.9;
/// CRDP penalises arms below this share of participants (in percent).
pub const CRDP_MIN_SHARE_PERCENT: u32 = 15;

impl DesignSpec {
    pub fn new(horizon: usize, p: f64, design: Design) -> Self {
        DesignSpec {
            horizon,
            p,
            prior: [BetaPrior::UNIFORM; 2],
            design,
        }
    }

    pub fn cmdp_e1(horizon: usize, p: f64, xi: f64) -> Self {
        DesignSpec::new(
            horizon,
            p,
            Design::CmdpE {
                tag: DesignTag::CmdpE1,
                testing: TestingParams::new(0.1, 1.0, 1.0),
                xi,
                rectangles: alloc::vec![Rectangle::UNIT],
                rect_prior: BetaPrior::UNIFORM,
            },
        )
    }

    pub fn cmdp_e2(horizon: usize, p: f64, xi: f64, alpha_star: f64, beta: f64) -> Result<Self> {
        Ok(DesignSpec::new(
            horizon,
            p,
            Design::CmdpE {
                tag: DesignTag::CmdpE2,
                testing: TestingParams::new(0.1, alpha_star, beta),
                xi,
                rectangles: Rectangle::grid(&E2_BREAKS)?,
                rect_prior: BetaPrior::UNIFORM,
            },
        ))
    }

    pub fn with_prior(mut self, control: BetaPrior, developmental: BetaPrior) -> Self {
        self.prior = [control, developmental];
        self
    }

    pub fn tag(&self) -> DesignTag {
        match &self.design {
            Design::Er => DesignTag::Er,
            Design::Dp => DesignTag::Dp,
            Design::Crdp => DesignTag::Crdp,
            Design::CmdpT(_) => DesignTag::CmdpT,
            Design::CmdpE { tag, .. } => *tag,
            Design::CmdpR { .. } => DesignTag::CmdpR,
        }
    }

    /// The randomisation bound actually used by the design.
    pub fn effective_p(&self) -> f64 {
        match self.design {
            Design::Er => 0.5,
            Design::Dp => 1.0,
            Design::Crdp => CRDP_P,
            _ => self.p,
        }
    }

    pub fn measure(&self) -> Measure {
        Measure::IndependentBeta {
            c: self.prior[0],
            d: self.prior[1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        self.measure().validate()?;
        if !(0.5..=1.0).contains(&self.effective_p()) {
            return Err(Error::InvalidParameter(format!(
                "p = {} outside [1/2, 1]",
                self.p
            )));
        }
        match &self.design {
            Design::CmdpT(t) => t.validate(),
            Design::CmdpE {
                testing,
                xi,
                rectangles,
                rect_prior,
                tag,
            } => {
                testing.validate()?;
                if !xi.is_finite() || *xi <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "xi = {xi} must be positive"
                    )));
                }
                if rectangles.is_empty() {
                    return Err(Error::InvalidParameter("no rectangles given".into()));
                }
                if !matches!(tag, DesignTag::CmdpE1 | DesignTag::CmdpE2) {
                    return Err(Error::InvalidParameter(format!(
                        "{tag} is not an estimation design"
                    )));
                }
                Measure::IndependentBeta {
                    c: *rect_prior,
                    d: *rect_prior,
                }
                .validate()
            }
            Design::CmdpR { xi, li_prior } => {
                if !(0.0..=1.0).contains(xi) {
                    return Err(Error::InvalidParameter(format!("xi = {xi} outside [0, 1]")));
                }
                Measure::IndependentBeta {
                    c: li_prior[0],
                    d: li_prior[1],
                }
                .validate()
            }
            _ => Ok(()),
        }
    }
}

pub fn er_policy(n: usize) -> PolicyTable {
    PolicyTable::Constant {
        horizon: n,
        value: 0.5,
    }
}

/// Unconstrained optimum with deterministic allocation.
pub fn dp_policy(n: usize, prior: &Measure) -> Result<(PolicyTable, f64)> {
    let k = prior.tables(n)?;
    let (v, pol) = backward_induction(&k, &RewardSpec::posterior_means(&k), 1.0)?;
    Ok((pol, v))
}

/// `-n` on terminal states where an arm has fewer than 15% of participants.
pub fn crdp_penalty(n: usize) -> Vec<f64> {
    let pen = -(n as f64);
    stage_states(n)
        .map(|x| {
            if 100 * x.n_c.min(x.n_d) < CRDP_MIN_SHARE_PERCENT * n as u32 {
                pen
            } else {
                0.0
            }
        })
        .collect()
}

/// Randomised DP with `p = 0.9` and the imbalance penalty. The returned
/// value includes the expected penalty.
pub fn crdp_policy(n: usize, prior: &Measure) -> Result<(PolicyTable, f64)> {
    let k = prior.tables(n)?;
    let r = RewardSpec::posterior_means(&k).with_terminal(crdp_penalty(n))?;
    let (v, pol) = backward_induction(&k, &r, CRDP_P)?;
    Ok((pol, v))
}

fn testing_constraints(
    spec: &DesignSpec,
    t: &TestingParams,
    table: &TerminalTable,
) -> Result<[ConstraintSpec; 2]> {
    let n = spec.horizon;
    let null = Measure::PooledNull(t.null_prior);
    let power = match t.power_prior {
        Some([c, d]) => Measure::IndependentBeta { c, d },
        None => spec.measure(),
    };
    Ok([
        ConstraintSpec::new(
            "type I error",
            null,
            RewardSpec::terminal_only(n, table.rejection_indicator(t.alpha, 1.0))?,
            t.alpha_star,
        ),
        ConstraintSpec::new(
            "power",
            power,
            RewardSpec::terminal_only(n, table.rejection_indicator(t.alpha, -1.0))?,
            -(1.0 - t.beta),
        ),
    ])
}

fn objective(spec: &DesignSpec) -> Result<RewardSpec> {
    Ok(RewardSpec::posterior_means(
        &spec.measure().tables(spec.horizon)?,
    ))
}

/// Objective plus type I error and power constraints.
pub fn build_cmdp_t(spec: &DesignSpec) -> Result<CmdpProblem> {
    spec.validate()?;
    let Design::CmdpT(t) = &spec.design else {
        return Err(Error::InvalidParameter(format!(
            "{} is not CMDP-T",
            spec.tag()
        )));
    };
    let table = TerminalTable::new(spec.horizon);
    CmdpProblem::new(
        spec.p,
        spec.measure(),
        objective(spec)?,
        testing_constraints(spec, t, &table)?.into(),
    )
}

/// Testing constraints plus one posterior-MSE constraint per rectangle,
/// bounded by `xi` times the value reached by `baseline`.
pub fn build_cmdp_e(spec: &DesignSpec, baseline: &PolicyTable) -> Result<CmdpProblem> {
    spec.validate()?;
    let Design::CmdpE {
        testing,
        xi,
        rectangles,
        rect_prior,
        ..
    } = &spec.design
    else {
        return Err(Error::InvalidParameter(format!(
            "{} is not CMDP-E",
            spec.tag()
        )));
    };
    let n = spec.horizon;
    if baseline.horizon() != n {
        return Err(Error::HorizonMismatch {
            expected: n,
            found: baseline.horizon(),
        });
    }
    let table = TerminalTable::new(n);
    let mut constraints: Vec<ConstraintSpec> = testing_constraints(spec, testing, &table)?.into();
    for rect in rectangles {
        let measure = Measure::truncated(*rect_prior, *rect_prior, *rect)?;
        let reward =
            RewardSpec::terminal_only(n, posterior_mse_table(n, rect, rect_prior, rect_prior)?)?;
        let base = expected_total(&measure.tables(n)?, baseline, &reward)?;
        let label = format!(
            "mse [{}, {}) x [{}, {})",
            rect.c.0, rect.c.1, rect.d.0, rect.d.1
        );
        constraints.push(ConstraintSpec::new(label, measure, reward, xi * base));
    }
    CmdpProblem::new(spec.p, spec.measure(), objective(spec)?, constraints)
}

/// Robustness constraint `E_LI[Σ r_LI] ≥ ξ·v_LI`, stored as `≤` by negation.
/// Returns the problem and `v_LI`.
pub fn build_cmdp_r(spec: &DesignSpec) -> Result<(CmdpProblem, f64)> {
    spec.validate()?;
    let Design::CmdpR { xi, li_prior } = &spec.design else {
        return Err(Error::InvalidParameter(format!(
            "{} is not CMDP-R",
            spec.tag()
        )));
    };
    let n = spec.horizon;
    let li = Measure::IndependentBeta {
        c: li_prior[0],
        d: li_prior[1],
    };
    let li_tables = li.tables(n)?;
    let r_li = RewardSpec::posterior_means(&li_tables);
    let (v_li, _) = backward_induction(&li_tables, &r_li, spec.p)?;
    let c = ConstraintSpec::new("robustness", li, r_li.scaled(-1.0), -xi * v_li);
    Ok((
        CmdpProblem::new(spec.p, spec.measure(), objective(spec)?, alloc::vec![c])?,
        v_li,
    ))
}

/// Result of building and solving one design.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub tag: DesignTag,
    pub policy: PolicyTable,
    /// Expected successes under the objective prior.
    pub objective: f64,
    /// Backward-induction value including terminal penalties (DP and CRDP).
    pub value: Option<f64>,
    pub report: Option<SolveReport>,
}

/// Builds and solves `spec`. CMDP-E builds its own baseline policy.
pub fn solve_design(
    spec: &DesignSpec,
    opts: &SolverOptions,
) -> core::result::Result<DesignOutcome, SolveFailure> {
    spec.validate()?;
    let n = spec.horizon;
    let prior = spec.measure();
    let tag = spec.tag();
    let successes = |pol: &PolicyTable| -> Result<f64> {
        let k = prior.tables(n)?;
        expected_total(&k, pol, &RewardSpec::posterior_means(&k))
    };
    let fixed = |policy: PolicyTable,
                 value: Option<f64>|
     -> core::result::Result<DesignOutcome, SolveFailure> {
        let objective = successes(&policy)?;
        Ok(DesignOutcome {
            tag,
            policy,
            objective,
            value,
            report: None,
        })
    };
    let solved = |problem: CmdpProblem| -> core::result::Result<DesignOutcome, SolveFailure> {
        let report = problem.cutting_plane(opts)?;
        Ok(DesignOutcome {
            tag,
            policy: report.policy.clone(),
            objective: report.objective,
            value: None,
            report: Some(report),
        })
    };
    match &spec.design {
        Design::Er => fixed(er_policy(n), None),
        Design::Dp => {
            let (pol, v) = dp_policy(n, &prior)?;
            fixed(pol, Some(v))
        }
        Design::Crdp => {
            let (pol, v) = crdp_policy(n, &prior)?;
            fixed(pol, Some(v))
        }
        Design::CmdpT(_) => solved(build_cmdp_t(spec)?),
        Design::CmdpE { tag, .. } => {
            let baseline = match tag {
                DesignTag::CmdpE1 => er_policy(n),
                _ => crdp_policy(n, &prior)?.0,
            };
            solved(build_cmdp_e(spec, &baseline)?)
        }
        Design::CmdpR { .. } => solved(build_cmdp_r(spec)?.0),
    }
}
