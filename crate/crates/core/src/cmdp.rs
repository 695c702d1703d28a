//! Constrained problems: change of measure, Lagrangian dual, cutting
//! planes, feasibility repair and the occupancy-measure LP.
//!
//! A problem maximises `E[Σ r]` under the objective measure subject to
//! `E_c[Σ r_c] ≤ V_c` for every constraint `c`, each expectation taken
//! under its own measure. Constraint rewards are rewritten under the
//! objective measure once, at construction, so every later evaluation is a
//! single sweep over the state space.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::mdp::{backward_induction_mix, forward_core, PolicyTable, RewardSpec};
use crate::measure::{Measure, MeasureTables};
use crate::state::{stage_states, StateIndexer};

/// Slack below which a constraint counts as violated.
pub const SLACK_TOLERANCE: f64 = -1e-9;
/// Horizon limit of [`CmdpProblem::exact_lp_policy`].
pub const EXACT_LP_MAX_HORIZON: usize = 8;

/// One constraint `E_c[Σ r_c] ≤ bound`.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub label: String,
    pub measure: Measure,
    pub reward: RewardSpec,
    pub bound: f64,
}

impl ConstraintSpec {
    pub fn new(label: impl Into<String>, measure: Measure, reward: RewardSpec, bound: f64) -> Self {
        ConstraintSpec {
            label: label.into(),
            measure,
            reward,
            bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub eps_tol: f64,
    pub phi: f64,
    pub lambda_box: f64,
    pub max_iterations: usize,
    pub max_repair_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_tol: 1e-9,
            phi: 0.01,
            lambda_box: 1e6,
            max_iterations: 10_000,
            max_repair_iterations: 100_000,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if [self.eps_tol, self.phi, self.lambda_box]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::InvalidParameter(format!("solver options {self:?}")));
        }
        Ok(())
    }
}

/// Expected totals of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// `E_c[Σ r_c]` per constraint, computed under the objective measure.
    pub constraint_values: Vec<f64>,
    /// `V_c - E_c[Σ r_c]`.
    pub slacks: Vec<f64>,
    /// No 1/2 action on a reachable state.
    pub deterministic: bool,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.slacks.iter().all(|&s| s >= SLACK_TOLERANCE)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Multipliers that produced the reported policy.
    pub lambda: Vec<f64>,
    /// Multipliers attaining the best dual value.
    pub lambda_dual: Vec<f64>,
    /// Best dual value `f*`, an upper bound on the constrained optimum.
    pub dual_value: f64,
    pub policy: PolicyTable,
    pub objective: f64,
    /// `(f* - objective) / f*`.
    pub gap: f64,
    /// Constraint labels, aligned with `slacks` and `lambda`.
    pub labels: Vec<String>,
    pub slacks: Vec<f64>,
    pub iterations: usize,
    pub repair_iterations: usize,
    pub kkt_residual: f64,
    pub deterministic: bool,
    /// A multiplier sits on the box at termination.
    pub box_active: bool,
    /// `(master lower bound, f*)` after each iteration.
    pub bounds: Vec<(f64, f64)>,
    pub seconds: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SolveFailure {
    #[error(transparent)]
    Error(#[from] Error),
    #[error("cutting plane did not converge after {iterations} iterations")]
    IterationCap {
        iterations: usize,
        best: Box<SolveReport>,
    },
}

impl SolveFailure {
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            SolveFailure::Error(Error::Infeasible | Error::RepairFailed(_))
        )
    }
}

#[derive(Debug, Clone)]
pub struct CmdpProblem {
    p: f64,
    measure: Measure,
    kernel: MeasureTables,
    objective: RewardSpec,
    constraints: Vec<ConstraintSpec>,
    reweighted: Vec<RewardSpec>,
}

impl CmdpProblem {
    pub fn new(
        p: f64,
        measure: Measure,
        objective: RewardSpec,
        constraints: Vec<ConstraintSpec>,
    ) -> Result<Self> {
        if !(0.5..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "randomisation bound p = {p} outside [1/2, 1]"
            )));
        }
        let n = objective.horizon();
        let kernel = measure.tables(n)?;
        let mut reweighted = Vec::with_capacity(constraints.len());
        for c in &constraints {
            if c.reward.horizon() != n {
                return Err(Error::HorizonMismatch {
                    expected: n,
                    found: c.reward.horizon(),
                });
            }
            if !c.bound.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "constraint '{}' has bound {}",
                    c.label, c.bound
                )));
            }
            let tables = c.measure.tables(n)?;
            if !measure.has_full_support() {
                check_support(&kernel, &tables, &c.label)?;
            }
            reweighted.push(c.reward.reweighted(&tables, &kernel)?);
        }
        Ok(CmdpProblem {
            p,
            measure,
            kernel,
            objective,
            constraints,
            reweighted,
        })
    }

    pub fn horizon(&self) -> usize {
        self.kernel.horizon()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn kernel(&self) -> &MeasureTables {
        &self.kernel
    }

    pub fn objective(&self) -> &RewardSpec {
        &self.objective
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    /// Constraint `c` rewritten under the objective measure.
    pub fn reweight_constraint(&self, c: usize) -> &RewardSpec {
        &self.reweighted[c]
    }

    fn check_lambda(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.constraints.len()
            || lambda.iter().any(|l| !l.is_finite() || *l < 0.0)
        {
            return Err(Error::InvalidParameter(format!("multipliers {lambda:?}")));
        }
        Ok(())
    }

    /// `L(λ)` and a greedy maximiser of the priced reward.
    pub fn lagrangian(&self, lambda: &[f64]) -> Result<(f64, PolicyTable)> {
        self.check_lambda(lambda)?;
        let mut terms: Vec<(f64, &RewardSpec)> = vec![(1.0, &self.objective)];
        for (l, r) in lambda.iter().zip(&self.reweighted) {
            if *l != 0.0 {
                terms.push((-l, r));
            }
        }
        let (value, policy) = backward_induction_mix(&self.kernel, &terms, self.p)?;
        let offset: f64 = lambda
            .iter()
            .zip(&self.constraints)
            .map(|(l, c)| l * c.bound)
            .sum();
        Ok((value + offset, policy))
    }

    /// Objective, constraint values and determinism of `policy` in one pass.
    pub fn evaluate(&self, policy: &PolicyTable) -> Result<Evaluation> {
        let mut rewards: Vec<&RewardSpec> = vec![&self.objective];
        rewards.extend(&self.reweighted);
        let codes = match policy {
            PolicyTable::Actions { codes, .. } => Some(codes),
            _ => None,
        };
        let (lo, hi) = (1.0 - self.p, self.p);
        let ix = StateIndexer::new(self.horizon());
        let mut deterministic = true;
        let res = forward_core(&self.kernel, policy, &rewards, &mut |t, probs| {
            if !deterministic {
                return;
            }
            let start = ix.stage_start(t);
            deterministic = match codes {
                Some(codes) => probs
                    .iter()
                    .zip(&codes[start..])
                    .all(|(&q, &c)| q == 0.0 || c != 1),
                None => probs.iter().enumerate().all(|(j, &q)| {
                    let d = policy.get(start + j);
                    q == 0.0 || d == lo || d == hi
                }),
            };
        })?;
        let constraint_values = res.totals[1..].to_vec();
        let slacks = self
            .constraints
            .iter()
            .zip(&constraint_values)
            .map(|(c, v)| c.bound - v)
            .collect();
        Ok(Evaluation {
            objective: res.totals[0],
            constraint_values,
            slacks,
            deterministic,
        })
    }

    /// `V_c - E[Σ r̃_c]` under `policy`, a subgradient of `L` when the
    /// policy is greedy for the given multipliers.
    pub fn subgradient(&self, policy: &PolicyTable) -> Result<Vec<f64>> {
        Ok(self.evaluate(policy)?.slacks)
    }

    /// `|Σ_c λ_c·slack_c|` and whether `policy` is deterministic on reachable states.
    pub fn kkt_and_determinism(&self, lambda: &[f64], policy: &PolicyTable) -> Result<(f64, bool)> {
        self.check_lambda(lambda)?;
        let ev = self.evaluate(policy)?;
        Ok((kkt(lambda, &ev.slacks), ev.deterministic))
    }

    /// `E_c[Σ r_c]` evaluated directly under the constraint's own measure.
    pub fn constraint_value_direct(&self, c: usize, policy: &PolicyTable) -> Result<f64> {
        let spec = &self.constraints[c];
        let tables = spec.measure.tables(self.horizon())?;
        crate::mdp::expected_total(&tables, policy, &spec.reward)
    }

    /// Raises the multipliers of violated constraints by `1 + φ` until the
    /// greedy policy is feasible. Returns the policy, its evaluation, the
    /// final multipliers and the number of raises.
    pub fn repair_feasibility(
        &self,
        lambda: &[f64],
        phi: f64,
        max_iterations: usize,
    ) -> Result<(PolicyTable, Evaluation, Vec<f64>, usize)> {
        let (_, policy) = self.lagrangian(lambda)?;
        self.repair_from(lambda.to_vec(), policy, None, phi, max_iterations)
    }

    fn repair_from(
        &self,
        mut lambda: Vec<f64>,
        mut policy: PolicyTable,
        ev: Option<Evaluation>,
        phi: f64,
        max_iterations: usize,
    ) -> Result<(PolicyTable, Evaluation, Vec<f64>, usize)> {
        if phi.is_nan() || phi <= 0.0 {
            return Err(Error::InvalidParameter(format!("repair factor φ = {phi}")));
        }
        let mut ev = match ev {
            Some(ev) => ev,
            None => self.evaluate(&policy)?,
        };
        let mut iterations = 0;
        while !ev.is_feasible() {
            if iterations >= max_iterations {
                return Err(Error::RepairFailed(iterations));
            }
            for (l, s) in lambda.iter_mut().zip(&ev.slacks) {
                if *s < SLACK_TOLERANCE {
                    *l = if *l == 0.0 { 1e-6 } else { *l * (1.0 + phi) };
                }
            }
            iterations += 1;
            policy = self.lagrangian(&lambda)?.1;
            ev = self.evaluate(&policy)?;
            log::debug!(
                "repair {iterations}: min slack {:e}",
                ev.slacks.iter().copied().fold(f64::INFINITY, f64::min)
            );
        }
        Ok((policy, ev, lambda, iterations))
    }

    /// Kelley cutting plane on the dual, followed by feasibility repair
    /// from the multipliers attaining the best dual value.
    pub fn cutting_plane(
        &self,
        opts: &SolverOptions,
    ) -> core::result::Result<SolveReport, SolveFailure> {
        opts.validate()?;
        #[cfg(feature = "std")]
        let clock = std::time::Instant::now();
        let mut cuts: Vec<(Vec<f64>, f64)> = Vec::new();

        let mut f_star = f64::INFINITY;
        let mut best: Option<(Vec<f64>, PolicyTable, Evaluation)> = None;
        let mut bounds = Vec::new();
        let mut iterations = 0;
        loop {
            if iterations >= opts.max_iterations {
                let (lambda, policy, ev) = best.ok_or(Error::IterationCap(iterations))?;
                let report = self.report(
                    lambda.clone(),
                    lambda,
                    f_star,
                    policy,
                    ev,
                    iterations,
                    0,
                    bounds,
                    opts,
                );
                return Err(SolveFailure::IterationCap {
                    iterations,
                    best: Box::new(report),
                });
            }
            iterations += 1;
            let (lower, lambda) = self.solve_master(&cuts, opts.lambda_box)?;
            let (l_val, policy) = self.lagrangian(&lambda)?;
            if l_val <= 0.0 {
                return Err(Error::Infeasible.into());
            }
            let ev = self.evaluate(&policy)?;
            let g = ev.slacks.clone();
            if l_val < f_star {
                f_star = l_val;
                best = Some((lambda.clone(), policy, ev));
            }
            let eps = f_star - lower;
            bounds.push((lower, f_star));
            log::debug!("cut {iterations}: L = {l_val}, lower = {lower}, eps = {eps:e}");
            if eps <= opts.eps_tol {
                break;
            }
            let rhs = g.iter().zip(&lambda).map(|(g, l)| g * l).sum::<f64>() - l_val;
            cuts.push((g, rhs));
        }

        let (lambda_dual, policy, ev) = best.expect("at least one iteration ran");
        let (policy, ev, lambda, repairs) = self.repair_from(
            lambda_dual.clone(),
            policy,
            Some(ev),
            opts.phi,
            opts.max_repair_iterations,
        )?;
        #[allow(unused_mut)]
        let mut report = self.report(
            lambda,
            lambda_dual,
            f_star,
            policy,
            ev,
            iterations,
            repairs,
            bounds,
            opts,
        );
        #[cfg(feature = "std")]
        {
            report.seconds = clock.elapsed().as_secs_f64();
        }
        if report.box_active {
            log::warn!("a multiplier reached the box bound {}", opts.lambda_box);
        }
        Ok(report)
    }

    /// Minimises the cutting-plane model `z` over `0 ≤ λ ≤ box` subject to
    /// `-z + gᵀλ ≤ rhs` for every cut. Returns `(z, λ)`.
    fn solve_master(&self, cuts: &[(Vec<f64>, f64)], lambda_box: f64) -> Result<(f64, Vec<f64>)> {
        let m = self.constraints.len();
        if cuts.is_empty() {
            return Ok((0.0, vec![0.0; m]));
        }
        let mut rows: Vec<(Vec<f64>, f64)> = cuts
            .iter()
            .map(|(g, rhs)| {
                let mut row = vec![-1.0];
                row.extend(g);
                (row, *rhs)
            })
            .collect();
        for k in 0..m {
            let mut row = vec![0.0; m + 1];
            row[k + 1] = 1.0;
            rows.push((row, lambda_box));
        }
        let mut cost = vec![0.0; m + 1];
        cost[0] = 1.0;
        let x = solve_via_dual(&rows, &cost)?;
        Ok((x[0], x[1..].iter().map(|&v| v.min(lambda_box)).collect()))
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        lambda: Vec<f64>,
        lambda_dual: Vec<f64>,
        dual_value: f64,
        policy: PolicyTable,
        ev: Evaluation,
        iterations: usize,
        repair_iterations: usize,
        bounds: Vec<(f64, f64)>,
        opts: &SolverOptions,
    ) -> SolveReport {
        let box_active = lambda_dual
            .iter()
            .any(|&l| l >= opts.lambda_box * (1.0 - 1e-9));
        SolveReport {
            kkt_residual: kkt(&lambda, &ev.slacks),
            gap: (dual_value - ev.objective) / dual_value,
            lambda,
            lambda_dual,
            dual_value,
            policy,
            objective: ev.objective,
            labels: self.constraints.iter().map(|c| c.label.clone()).collect(),
            slacks: ev.slacks,
            iterations,
            repair_iterations,
            deterministic: ev.deterministic,
            box_active,
            bounds,
            seconds: 0.0,
        }
    }

    /// Solves the occupancy-measure LP exactly (small horizons only) and
    /// returns the induced randomised policy with the LP value.
    pub fn exact_lp_policy(&self) -> Result<(PolicyTable, f64)> {
        let n = self.horizon();
        if n > EXACT_LP_MAX_HORIZON {
            return Err(Error::InvalidParameter(format!(
                "exact LP needs n <= {EXACT_LP_MAX_HORIZON}, got {n}"
            )));
        }
        let ix = StateIndexer::new(n);
        let inner = ix.nonterminal_len();
        let nvars = 2 * inner + ix.terminal_len();
        let p = self.p;
        let actions = [p, 1.0 - p];

        // slot of (state index, action); terminal states have a single slot
        let slot = |i: usize, a: usize| {
            if i < inner {
                i + a * inner
            } else {
                2 * inner + (i - inner)
            }
        };

        let mut flow = vec![vec![0.0; nvars]; ix.len()];
        for (i, row) in flow.iter_mut().enumerate() {
            row[slot(i, 0)] += 1.0;
            if i < inner {
                row[slot(i, 1)] += 1.0;
            }
        }
        let mut obj = vec![0.0; nvars];
        let mut cons = vec![vec![0.0; nvars]; self.constraints.len()];
        for t in 0..n {
            for x in stage_states(t) {
                let i = ix.index(&x)?;
                let pc = self.kernel.success_prob(&x, crate::Arm::Control);
                let pd = self.kernel.success_prob(&x, crate::Arm::Developmental);
                for (a, &d) in actions.iter().enumerate() {
                    let s = slot(i, a);
                    obj[s] = -self.objective.value(&x, d);
                    for (row, r) in cons.iter_mut().zip(&self.reweighted) {
                        row[s] = r.value(&x, d);
                    }
                    for (arm, w, ps) in [
                        (crate::Arm::Control, d, pc),
                        (crate::Arm::Developmental, 1.0 - d, pd),
                    ] {
                        for (out, q) in [
                            (crate::Outcome::Success, ps),
                            (crate::Outcome::Failure, 1.0 - ps),
                        ] {
                            let j = ix.index(&x.step(arm, out))?;
                            flow[j][s] -= w * q;
                        }
                    }
                }
            }
        }
        for x in stage_states(n) {
            let s = slot(ix.index(&x)?, 0);
            obj[s] = -self.objective.terminal_value(&x);
            for (row, r) in cons.iter_mut().zip(&self.reweighted) {
                row[s] = r.terminal_value(&x);
            }
        }
        let mut lp = LinearProgram::new(obj);
        for (i, row) in flow.into_iter().enumerate() {
            lp.add_eq(row, if i == 0 { 1.0 } else { 0.0 });
        }
        for (row, c) in cons.into_iter().zip(&self.constraints) {
            lp.add_le(row, c.bound);
        }
        let sol = lp::solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => return Err(Error::Infeasible),
            LpStatus::Unbounded => {
                return Err(Error::InvalidParameter("occupancy LP is unbounded".into()))
            }
        }
        let mu = &sol.primal;
        let values = (0..inner)
            .map(|i| {
                let (a, b) = (mu[i], mu[i + inner]);
                if a + b > 0.0 {
                    (p * a + (1.0 - p) * b) / (a + b)
                } else {
                    0.5
                }
            })
            .collect();
        Ok((PolicyTable::from_values(n, values)?, -sol.objective))
    }
}

/// Solves `min cᵀx, Ax ≤ b, x ≥ 0` (with `c ≥ 0`) through its dual
/// `min bᵀw, -Aᵀw ≤ c, w ≥ 0`, which has one row per column of `A`. The
/// primal solution is minus the dual's row multipliers.
fn solve_via_dual(rows: &[(Vec<f64>, f64)], cost: &[f64]) -> Result<Vec<f64>> {
    let mut dual = LinearProgram::new(rows.iter().map(|r| r.1).collect());
    for (j, &c) in cost.iter().enumerate() {
        dual.add_le(rows.iter().map(|r| -r.0[j]).collect(), c);
    }
    let sol = lp::solve(&dual)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::InvalidParameter(format!(
            "master problem is {:?}",
            sol.status
        )));
    }
    Ok(sol.duals_ub.iter().map(|&y| (-y).max(0.0)).collect())
}

fn kkt(lambda: &[f64], slacks: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(slacks)
        .map(|(l, s)| l * s)
        .sum::<f64>()
        .abs()
}

fn check_support(kernel: &MeasureTables, other: &MeasureTables, label: &str) -> Result<()> {
    for t in 0..=kernel.horizon() {
        for x in stage_states(t) {
            if kernel.ln_q(&x) == f64::NEG_INFINITY && other.ln_q(&x) > f64::NEG_INFINITY {
                return Err(Error::InvalidParameter(format!(
                    "constraint '{label}' charges state {x:?} that the objective measure cannot reach"
                )));
            }
        }
    }
    Ok(())
}
