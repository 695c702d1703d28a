//! Backward induction and exact forward recursion over the trial states.
//!
//! Running rewards are allocation-linear,
//! `r(x, δ) = δ·ρ_C(x) + (1-δ)·ρ_D(x) + κ(x)`, and terminal rewards `h`
//! live on `X_n`. Both sweeps run stage by stage with two stage buffers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::measure::{Layout, MeasureTables};
use crate::state::{block_offset, stage_offset, stage_size, tri, StateIndexer, TrialState};
use crate::sweep::{block_range, map_blocks, map_range, split_blocks};

/// Absolute tolerance below which the two allocation choices tie.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Probabilities below this are flushed to zero in forward recursion.
pub const FLUSH_BELOW: f64 = 1e-300;

/// Running part of a reward.
#[derive(Debug, Clone, PartialEq)]
pub enum Running {
    Zero,
    /// `ρ_C(x) = own_C(s_C,n_C)·cross_D(s_D,n_D)` and
    /// `ρ_D(x) = cross_C(s_C,n_C)·own_D(s_D,n_D)`, tables over `(s, m)`
    /// pairs; a missing cross factor is 1.
    Separable {
        own: [Vec<f64>; 2],
        cross: [Option<Vec<f64>>; 2],
    },
    /// Explicit coefficients per non-terminal state, in storage order.
    Dense {
        rho_c: Vec<f64>,
        rho_d: Vec<f64>,
        kappa: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    horizon: usize,
    running: Running,
    terminal: Option<Vec<f64>>,
}

impl RewardSpec {
    pub fn zero(horizon: usize) -> Self {
        RewardSpec {
            horizon,
            running: Running::Zero,
            terminal: None,
        }
    }

    /// Posterior-mean success of the allocated arm under `kernel`.
    pub fn posterior_means(kernel: &MeasureTables) -> Self {
        let horizon = kernel.horizon();
        let running = match &kernel.layout {
            Layout::Product { pred, .. } => Running::Separable {
                own: pred.clone(),
                cross: [None, None],
            },
            Layout::Pooled { .. } => {
                let ix = StateIndexer::new(horizon);
                let len = ix.nonterminal_len();
                let (mut rho_c, mut rho_d) = (Vec::with_capacity(len), Vec::with_capacity(len));
                for t in 0..horizon {
                    for x in crate::state::stage_states(t) {
                        rho_c.push(kernel.success_prob(&x, crate::Arm::Control));
                        rho_d.push(kernel.success_prob(&x, crate::Arm::Developmental));
                    }
                }
                Running::Dense {
                    rho_c,
                    rho_d,
                    kappa: vec![0.0; len],
                }
            }
        };
        RewardSpec {
            horizon,
            running,
            terminal: None,
        }
    }

    /// Running reward from explicit `(ρ_C, ρ_D, κ)` per non-terminal state.
    pub fn from_fn(horizon: usize, mut f: impl FnMut(&TrialState) -> (f64, f64, f64)) -> Self {
        let len = StateIndexer::new(horizon).nonterminal_len();
        let (mut rho_c, mut rho_d, mut kappa) = (
            Vec::with_capacity(len),
            Vec::with_capacity(len),
            Vec::with_capacity(len),
        );
        for t in 0..horizon {
            for x in crate::state::stage_states(t) {
                let (a, b, c) = f(&x);
                rho_c.push(a);
                rho_d.push(b);
                kappa.push(c);
            }
        }
        RewardSpec {
            horizon,
            running: Running::Dense {
                rho_c,
                rho_d,
                kappa,
            },
            terminal: None,
        }
    }

    pub fn terminal_only(horizon: usize, h: Vec<f64>) -> Result<Self> {
        RewardSpec::zero(horizon).with_terminal(h)
    }

    pub fn with_terminal(mut self, h: Vec<f64>) -> Result<Self> {
        if h.len() != stage_size(self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "terminal reward has {} entries, horizon {} needs {}",
                h.len(),
                self.horizon,
                stage_size(self.horizon)
            )));
        }
        self.terminal = Some(h);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn running(&self) -> &Running {
        &self.running
    }

    pub fn terminal(&self) -> Option<&[f64]> {
        self.terminal.as_deref()
    }

    pub fn has_running(&self) -> bool {
        !matches!(self.running, Running::Zero)
    }

    pub fn scaled(&self, w: f64) -> RewardSpec {
        let running = match &self.running {
            Running::Zero => Running::Zero,
            Running::Separable { own, cross } => Running::Separable {
                own: [scale(&own[0], w), scale(&own[1], w)],
                cross: cross.clone(),
            },
            Running::Dense {
                rho_c,
                rho_d,
                kappa,
            } => Running::Dense {
                rho_c: scale(rho_c, w),
                rho_d: scale(rho_d, w),
                kappa: scale(kappa, w),
            },
        };
        RewardSpec {
            horizon: self.horizon,
            running,
            terminal: self.terminal.as_ref().map(|h| scale(h, w)),
        }
    }

    /// Change of measure: multiplies every reward by `q_num(x) / q_base(x)`
    /// (zero where `q_base(x) = 0`).
    pub fn reweighted(&self, num: &MeasureTables, base: &MeasureTables) -> Result<RewardSpec> {
        let n = self.horizon;
        if num.horizon() != n || base.horizon() != n {
            return Err(Error::HorizonMismatch {
                expected: n,
                found: num.horizon().min(base.horizon()),
            });
        }
        let running = match (&self.running, num.arm_ratio(base)) {
            (Running::Zero, _) => Running::Zero,
            (Running::Separable { own, cross }, Some(u)) => {
                let mul = |v: &Vec<f64>, w: &Vec<f64>| {
                    v.iter().zip(w).map(|(a, b)| a * b).collect::<Vec<_>>()
                };
                Running::Separable {
                    own: [mul(&own[0], &u[0]), mul(&own[1], &u[1])],
                    cross: [
                        Some(
                            cross[0]
                                .as_ref()
                                .map_or_else(|| u[0].clone(), |c| mul(c, &u[0])),
                        ),
                        Some(
                            cross[1]
                                .as_ref()
                                .map_or_else(|| u[1].clone(), |c| mul(c, &u[1])),
                        ),
                    ],
                }
            }
            _ => {
                let mut out = RewardSpec::from_fn(n, |x| {
                    let (a, b) = self.coefficients(x);
                    let w = num.ratio(base, x);
                    (a * w, b * w, 0.0)
                });
                core::mem::replace(&mut out.running, Running::Zero)
            }
        };
        let terminal = self.terminal.as_ref().map(|h| {
            crate::state::stage_states(n)
                .zip(h)
                .map(|(x, &v)| {
                    if v == 0.0 {
                        0.0
                    } else {
                        v * num.ratio(base, &x)
                    }
                })
                .collect()
        });
        Ok(RewardSpec {
            horizon: n,
            running,
            terminal,
        })
    }

    /// `(c_C, c_D)` with `r(x, δ) = δ·c_C + (1-δ)·c_D` for a non-terminal state.
    pub fn coefficients(&self, x: &TrialState) -> (f64, f64) {
        match &self.running {
            Running::Zero => (0.0, 0.0),
            Running::Separable { own, cross } => {
                let ic = tri(x.n_c as usize) + x.s_c as usize;
                let id = tri(x.n_d as usize) + x.s_d as usize;
                let cd = cross[1].as_ref().map_or(1.0, |v| v[id]);
                let cc = cross[0].as_ref().map_or(1.0, |v| v[ic]);
                (own[0][ic] * cd, cc * own[1][id])
            }
            Running::Dense {
                rho_c,
                rho_d,
                kappa,
            } => {
                let i = stage_offset(x.stage()) + crate::state::index_in_stage(x);
                (rho_c[i] + kappa[i], rho_d[i] + kappa[i])
            }
        }
    }

    pub fn value(&self, x: &TrialState, delta: f64) -> f64 {
        let (a, b) = self.coefficients(x);
        delta * a + (1.0 - delta) * b
    }

    pub fn terminal_value(&self, x: &TrialState) -> f64 {
        self.terminal
            .as_ref()
            .map_or(0.0, |h| h[crate::state::index_in_stage(x)])
    }

    /// Adds `w` times this running reward to the coefficient rows of
    /// `(t, n_C, s_C)`. `row_start` is the global index of the row.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn add_row(
        &self,
        w: f64,
        n_c: usize,
        s_c: usize,
        n_d: usize,
        row_start: usize,
        rc: &mut [f64],
        rd: &mut [f64],
    ) {
        match &self.running {
            Running::Zero => {}
            Running::Separable { own, cross } => {
                let ic = tri(n_c) + s_c;
                let id = tri(n_d);
                let a = w * own[0][ic];
                let cc = w * cross[0].as_ref().map_or(1.0, |v| v[ic]);
                let od = &own[1][id..id + n_d + 1];
                match &cross[1] {
                    Some(cd) => {
                        let cd = &cd[id..id + n_d + 1];
                        for j in 0..=n_d {
                            rc[j] += a * cd[j];
                        }
                    }
                    None => rc.iter_mut().for_each(|v| *v += a),
                }
                for j in 0..=n_d {
                    rd[j] += cc * od[j];
                }
            }
            Running::Dense {
                rho_c,
                rho_d,
                kappa,
            } => {
                let r = row_start..row_start + n_d + 1;
                for ((j, &a), (&b, &k)) in rho_c[r.clone()]
                    .iter()
                    .enumerate()
                    .zip(rho_d[r.clone()].iter().zip(&kappa[r]))
                {
                    rc[j] += w * (a + k);
                    rd[j] += w * (b + k);
                }
            }
        }
    }
}

fn scale(v: &[f64], w: f64) -> Vec<f64> {
    v.iter().map(|x| x * w).collect()
}

/// Allocation probability to control, per non-terminal state.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyTable {
    /// The same probability everywhere.
    Constant { horizon: usize, value: f64 },
    /// Codes 0, 1, 2 standing for `1-p`, `1/2`, `p`; produced by backward induction.
    Actions {
        horizon: usize,
        p: f64,
        codes: Vec<u8>,
    },
    /// Arbitrary probabilities in storage order.
    Table { horizon: usize, values: Vec<f64> },
}

impl PolicyTable {
    pub fn constant(horizon: usize, value: f64) -> Result<Self> {
        check_prob(value)?;
        Ok(PolicyTable::Constant { horizon, value })
    }

    pub fn from_values(horizon: usize, values: Vec<f64>) -> Result<Self> {
        let len = StateIndexer::new(horizon).nonterminal_len();
        if values.len() != len {
            return Err(Error::InvalidParameter(format!(
                "policy has {} entries, expected {len}",
                values.len()
            )));
        }
        for &v in &values {
            check_prob(v)?;
        }
        Ok(PolicyTable::Table { horizon, values })
    }

    pub fn from_fn(horizon: usize, mut f: impl FnMut(&TrialState) -> f64) -> Result<Self> {
        let values = (0..horizon)
            .flat_map(crate::state::stage_states)
            .map(|x| f(&x))
            .collect();
        PolicyTable::from_values(horizon, values)
    }

    pub fn horizon(&self) -> usize {
        match self {
            PolicyTable::Constant { horizon, .. }
            | PolicyTable::Actions { horizon, .. }
            | PolicyTable::Table { horizon, .. } => *horizon,
        }
    }

    /// Number of entries, `d_{<n}`.
    pub fn len(&self) -> usize {
        StateIndexer::new(self.horizon()).nonterminal_len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizon() == 0
    }

    /// Allocation probability at flat index `i`.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PolicyTable::Constant { value, .. } => *value,
            PolicyTable::Actions { p, codes, .. } => decode(codes[i], *p),
            PolicyTable::Table { values, .. } => values[i],
        }
    }

    pub fn at(&self, x: &TrialState) -> f64 {
        self.get(stage_offset(x.stage()) + crate::state::index_in_stage(x))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    fn fill_row(&self, start: usize, out: &mut [f64]) {
        match self {
            PolicyTable::Constant { value, .. } => out.iter_mut().for_each(|v| *v = *value),
            PolicyTable::Actions { p, codes, .. } => {
                let lut = [1.0 - p, 0.5, *p];
                let len = out.len();
                for (o, &c) in out.iter_mut().zip(&codes[start..start + len]) {
                    *o = lut[c as usize];
                }
            }
            PolicyTable::Table { values, .. } => {
                let len = out.len();
                out.copy_from_slice(&values[start..start + len])
            }
        }
    }
}

#[inline]
fn decode(code: u8, p: f64) -> f64 {
    match code {
        0 => 1.0 - p,
        1 => 0.5,
        _ => p,
    }
}

fn check_prob(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidParameter(format!(
            "allocation probability {v} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Probability per state of one stage, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub stage: usize,
    pub probs: Vec<f64>,
}

impl StateDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn states(&self) -> impl Iterator<Item = (TrialState, f64)> + '_ {
        crate::state::stage_states(self.stage).zip(self.probs.iter().copied())
    }

    /// `Σ_x P(x)·f[x]`.
    pub fn dot(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }
}

/// Predictive success probabilities of the row `(t, n_C, s_C)` for
/// `s_D = 0..=n_D`.
#[inline]
fn kernel_row(
    kernel: &MeasureTables,
    t: usize,
    n_c: usize,
    s_c: usize,
    pc: &mut [f64],
    pd: &mut [f64],
) {
    let n_d = t - n_c;
    match &kernel.layout {
        Layout::Product { pred, .. } => {
            let a = pred[0][tri(n_c) + s_c];
            pc.iter_mut().for_each(|v| *v = a);
            pd.copy_from_slice(&pred[1][tri(n_d)..tri(n_d) + n_d + 1]);
        }
        Layout::Pooled { pred, .. } => {
            let base = tri(t) + s_c;
            pc.copy_from_slice(&pred[base..base + n_d + 1]);
            pd.copy_from_slice(&pred[base..base + n_d + 1]);
        }
    }
}

fn check_horizon(kernel: &MeasureTables, n: usize) -> Result<()> {
    if kernel.horizon() != n {
        return Err(Error::HorizonMismatch {
            expected: n,
            found: kernel.horizon(),
        });
    }
    Ok(())
}

/// Maximises `E[Σ_t r(X_t, δ_t) + h(X_n)]` over Markov policies with
/// `δ ∈ [1-p, p]`, returning the value and a greedy policy (ties → 1/2).
pub fn backward_induction(
    kernel: &MeasureTables,
    rewards: &RewardSpec,
    p: f64,
) -> Result<(f64, PolicyTable)> {
    backward_induction_mix(kernel, &[(1.0, rewards)], p)
}

/// Backward induction for the weighted sum `Σ_k w_k r_k`.
pub fn backward_induction_mix(
    kernel: &MeasureTables,
    terms: &[(f64, &RewardSpec)],
    p: f64,
) -> Result<(f64, PolicyTable)> {
    if !(0.5..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "randomisation bound p = {p} outside [1/2, 1]"
        )));
    }
    let n = kernel.horizon();
    for (_, r) in terms {
        check_horizon(kernel, r.horizon)?;
    }
    let mut next = vec![0.0; stage_size(n)];
    for (w, r) in terms {
        if let Some(h) = &r.terminal {
            for (v, hv) in next.iter_mut().zip(h) {
                *v += w * hv;
            }
        }
    }
    let running: Vec<(f64, &RewardSpec)> = terms
        .iter()
        .filter(|(w, r)| *w != 0.0 && r.has_running())
        .copied()
        .collect();

    let ix = StateIndexer::new(n);
    let mut codes = vec![0u8; ix.nonterminal_len()];
    let mut cur = vec![0.0; stage_size(n)];
    for t in (0..n).rev() {
        let start = ix.stage_start(t);
        let size = stage_size(t);
        let out = &mut cur[..size];
        let stage_codes = &mut codes[start..start + size];
        let items: Vec<_> = split_blocks(out, t)
            .into_iter()
            .zip(split_blocks(stage_codes, t))
            .collect();
        let next_ref = &next;
        let running = &running;
        map_blocks(items, |n_c, (vals, acts)| {
            backward_block(kernel, running, next_ref, t, n_c, start, p, vals, acts);
        });
        core::mem::swap(&mut cur, &mut next);
        next.truncate(size);
        cur.resize(stage_size(n), 0.0);
    }
    let value = next[0];
    Ok((
        value,
        PolicyTable::Actions {
            horizon: n,
            p,
            codes,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
fn backward_block(
    kernel: &MeasureTables,
    running: &[(f64, &RewardSpec)],
    next: &[f64],
    t: usize,
    n_c: usize,
    stage_start: usize,
    p: f64,
    vals: &mut [f64],
    acts: &mut [u8],
) {
    let n_d = t - n_c;
    let len = n_d + 1;
    let mut rc = vec![0.0; len];
    let mut rd = vec![0.0; len];
    let mut pc = vec![0.0; len];
    let mut pd = vec![0.0; len];
    let up = block_offset(t + 1, n_c + 1);
    let same = block_offset(t + 1, n_c);
    let block_start = stage_start + block_offset(t, n_c);
    for s_c in 0..=n_c {
        rc.iter_mut().for_each(|v| *v = 0.0);
        rd.iter_mut().for_each(|v| *v = 0.0);
        let row_start = block_start + s_c * len;
        for (w, r) in running {
            r.add_row(*w, n_c, s_c, n_d, row_start, &mut rc, &mut rd);
        }
        kernel_row(kernel, t, n_c, s_c, &mut pc, &mut pd);
        let cs = &next[up + (s_c + 1) * len..up + (s_c + 2) * len];
        let cf = &next[up + s_c * len..up + (s_c + 1) * len];
        let dd = &next[same + s_c * (len + 1)..same + (s_c + 1) * (len + 1)];
        let v_row = &mut vals[s_c * len..(s_c + 1) * len];
        let a_row = &mut acts[s_c * len..(s_c + 1) * len];
        for j in 0..len {
            let qc = rc[j] + cf[j] + pc[j] * (cs[j] - cf[j]);
            let qd = rd[j] + dd[j] + pd[j] * (dd[j + 1] - dd[j]);
            let diff = qc - qd;
            let (code, delta) = if diff > TIE_TOLERANCE {
                (2u8, p)
            } else if diff < -TIE_TOLERANCE {
                (0u8, 1.0 - p)
            } else {
                (1u8, 0.5)
            };
            a_row[j] = code;
            v_row[j] = qd + delta * diff;
        }
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub terminal: StateDistribution,
    /// `E[Σ_t r_k(X_t, π(X_t)) + h_k(X_n)]` per requested reward.
    pub totals: Vec<f64>,
}

/// Exact distribution of `X_n` under `policy` and the predictive `kernel`.
pub fn forward_distribution(
    kernel: &MeasureTables,
    policy: &PolicyTable,
) -> Result<StateDistribution> {
    Ok(forward_pass(kernel, policy, &[])?.terminal)
}

/// Distributions of every stage `0..=n` (small horizons).
pub fn forward_stages(
    kernel: &MeasureTables,
    policy: &PolicyTable,
) -> Result<Vec<StateDistribution>> {
    let mut out = Vec::new();
    let res = forward_core(kernel, policy, &[], &mut |t, probs| {
        out.push(StateDistribution {
            stage: t,
            probs: probs.to_vec(),
        })
    })?;
    out.push(res.terminal);
    Ok(out)
}

pub fn expected_total(
    kernel: &MeasureTables,
    policy: &PolicyTable,
    rewards: &RewardSpec,
) -> Result<f64> {
    Ok(forward_pass(kernel, policy, &[rewards])?.totals[0])
}

/// One forward pass evaluating several rewards at once.
pub fn forward_pass(
    kernel: &MeasureTables,
    policy: &PolicyTable,
    rewards: &[&RewardSpec],
) -> Result<ForwardResult> {
    forward_core(kernel, policy, rewards, &mut |_, _| {})
}

pub(crate) fn forward_core(
    kernel: &MeasureTables,
    policy: &PolicyTable,
    rewards: &[&RewardSpec],
    on_stage: &mut dyn FnMut(usize, &[f64]),
) -> Result<ForwardResult> {
    let n = kernel.horizon();
    check_horizon(kernel, policy.horizon())?;
    for r in rewards {
        check_horizon(kernel, r.horizon)?;
    }
    let ix = StateIndexer::new(n);
    let mut totals = vec![0.0; rewards.len()];
    let mut cur = vec![0.0; stage_size(n)];
    let mut next = vec![0.0; stage_size(n)];
    cur[0] = 1.0;
    for t in 0..n {
        let size = stage_size(t);
        let start = ix.stage_start(t);
        let probs = &cur[..size];
        on_stage(t, probs);
        if rewards.iter().any(|r| r.has_running()) {
            let partial = map_range(t, |n_c| {
                running_block(kernel, policy, rewards, probs, t, n_c, start)
            });
            for block in partial {
                for (acc, v) in totals.iter_mut().zip(block) {
                    *acc += v;
                }
            }
        }
        let out = &mut next[..stage_size(t + 1)];
        map_blocks(split_blocks(out, t + 1), |n_c, block| {
            pull_block(kernel, policy, probs, t, n_c, start, block);
        });
        core::mem::swap(&mut cur, &mut next);
    }
    let terminal = StateDistribution {
        stage: n,
        probs: cur[..stage_size(n)].to_vec(),
    };
    for (acc, r) in totals.iter_mut().zip(rewards) {
        if let Some(h) = &r.terminal {
            *acc += terminal.dot(h);
        }
    }
    Ok(ForwardResult { terminal, totals })
}

/// Per-reward `Σ P(x)·r(x, π(x))` over the `n_C` block of stage `t`.
fn running_block(
    kernel: &MeasureTables,
    policy: &PolicyTable,
    rewards: &[&RewardSpec],
    probs: &[f64],
    t: usize,
    n_c: usize,
    stage_start: usize,
) -> Vec<f64> {
    let _ = kernel;
    let n_d = t - n_c;
    let len = n_d + 1;
    let mut out = vec![0.0; rewards.len()];
    let mut rc = vec![0.0; len];
    let mut rd = vec![0.0; len];
    let mut delta = vec![0.0; len];
    let block = block_range(t, n_c);
    for s_c in 0..=n_c {
        let local = block.start + s_c * len;
        let row = &probs[local..local + len];
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        policy.fill_row(stage_start + local, &mut delta);
        for (k, r) in rewards.iter().enumerate() {
            if !r.has_running() {
                continue;
            }
            rc.iter_mut().for_each(|v| *v = 0.0);
            rd.iter_mut().for_each(|v| *v = 0.0);
            r.add_row(1.0, n_c, s_c, n_d, stage_start + local, &mut rc, &mut rd);
            let mut acc = 0.0;
            for j in 0..len {
                acc += row[j] * (rd[j] + delta[j] * (rc[j] - rd[j]));
            }
            out[k] += acc;
        }
    }
    out
}

/// Fills the `n_C` block of stage `t+1` from the stage-`t` distribution.
fn pull_block(
    kernel: &MeasureTables,
    policy: &PolicyTable,
    probs: &[f64],
    t: usize,
    n_c: usize,
    stage_start: usize,
    out: &mut [f64],
) {
    let n_d = t + 1 - n_c;
    let len = n_d + 1;
    let mut pc = vec![0.0; len];
    let mut pd = vec![0.0; len];
    let mut delta = vec![0.0; len];
    out.iter_mut().for_each(|v| *v = 0.0);
    for s_c in 0..=n_c {
        let row = &mut out[s_c * len..(s_c + 1) * len];
        if n_c >= 1 {
            // control-arm predecessors share n_D and sit in block n_C - 1
            let src = block_offset(t, n_c - 1);
            if s_c >= 1 {
                let r = src + (s_c - 1) * len;
                kernel_row(kernel, t, n_c - 1, s_c - 1, &mut pc, &mut pd);
                policy.fill_row(stage_start + r, &mut delta);
                for j in 0..len {
                    row[j] += probs[r + j] * delta[j] * pc[j];
                }
            }
            if s_c < n_c {
                let r = src + s_c * len;
                kernel_row(kernel, t, n_c - 1, s_c, &mut pc, &mut pd);
                policy.fill_row(stage_start + r, &mut delta);
                for j in 0..len {
                    row[j] += probs[r + j] * delta[j] * (1.0 - pc[j]);
                }
            }
        }
        if n_d >= 1 {
            // developmental predecessors: row (n_C, s_C) of stage t, length n_D
            let r = block_offset(t, n_c) + s_c * n_d;
            let (pc, pd, delta) = (&mut pc[..n_d], &mut pd[..n_d], &mut delta[..n_d]);
            kernel_row(kernel, t, n_c, s_c, pc, pd);
            policy.fill_row(stage_start + r, delta);
            for j in 0..n_d {
                let m = probs[r + j] * (1.0 - delta[j]);
                row[j + 1] += m * pd[j];
                row[j] += m * (1.0 - pd[j]);
            }
        }
        for v in row.iter_mut() {
            if *v < FLUSH_BELOW {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Measure;
    use crate::state::stage_states;
    use crate::{Arm, Outcome};
    use approx::assert_relative_eq;

    fn uniform(n: usize) -> MeasureTables {
        Measure::uniform().tables(n).unwrap()
    }

    #[test]
    fn dp_small_values() {
        let k = uniform(1);
        let (v, _) = backward_induction(&k, &RewardSpec::posterior_means(&k), 1.0).unwrap();
        assert_relative_eq!(v, 0.5, max_relative = 1e-15);
        let k = uniform(2);
        let (v, pol) = backward_induction(&k, &RewardSpec::posterior_means(&k), 1.0).unwrap();
        assert_relative_eq!(v, 13.0 / 12.0, max_relative = 1e-14);
        assert_eq!(pol.get(0), 0.5);
    }

    #[test]
    fn equal_coefficients_tie_everywhere() {
        let k = Measure::independent_beta(2.0, 5.0, 1.0, 1.0)
            .unwrap()
            .tables(5)
            .unwrap();
        let r = RewardSpec::from_fn(5, |x| (0.2, 0.2, 0.1 * x.stage() as f64));
        let (_, pol) = backward_induction(&k, &r, 0.9).unwrap();
        assert!(pol.values().all(|d| d == 0.5));
    }

    #[test]
    fn rejects_bad_bound() {
        let k = uniform(2);
        assert!(backward_induction(&k, &RewardSpec::zero(2), 0.4).is_err());
        assert!(backward_induction(&k, &RewardSpec::zero(3), 0.9).is_err());
    }

    #[test]
    fn forward_small_cases() {
        let k = Measure::point_mass(0.5, 0.5).unwrap().tables(1).unwrap();
        let d = forward_distribution(&k, &PolicyTable::constant(1, 0.5).unwrap()).unwrap();
        assert_eq!(d.probs, vec![0.25; 4]);
        let k = Measure::point_mass(1.0, 0.0).unwrap().tables(1).unwrap();
        let d = forward_distribution(&k, &PolicyTable::constant(1, 1.0).unwrap()).unwrap();
        let ix = StateIndexer::new(1);
        let hit = ix.index(&TrialState::new(1, 0, 1, 0).unwrap()).unwrap() - ix.stage_start(1);
        for (i, p) in d.probs.iter().enumerate() {
            assert_eq!(*p, if i == hit { 1.0 } else { 0.0 });
        }
    }

    /// Sums sequential predictive probabilities over all 4^n histories.
    fn history_oracle(m: &Measure, policy: &PolicyTable, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; stage_size(n)];
        fn go(
            m: &Measure,
            pol: &PolicyTable,
            x: TrialState,
            prob: f64,
            left: usize,
            out: &mut [f64],
        ) {
            if left == 0 {
                out[crate::state::index_in_stage(&x)] += prob;
                return;
            }
            let d = pol.at(&x);
            for (arm, w) in [(Arm::Control, d), (Arm::Developmental, 1.0 - d)] {
                let ps = m.predictive_success_prob(&x, arm).unwrap();
                go(
                    m,
                    pol,
                    x.step(arm, Outcome::Success),
                    prob * w * ps,
                    left - 1,
                    out,
                );
                go(
                    m,
                    pol,
                    x.step(arm, Outcome::Failure),
                    prob * w * (1.0 - ps),
                    left - 1,
                    out,
                );
            }
        }
        go(m, policy, TrialState::EMPTY, 1.0, n, &mut out);
        out
    }

    #[test]
    fn forward_matches_history_enumeration_n2_er() {
        let k = uniform(2);
        let pol = PolicyTable::constant(2, 0.5).unwrap();
        let d = forward_distribution(&k, &pol).unwrap();
        let o = history_oracle(&Measure::uniform(), &pol, 2);
        for (a, b) in d.probs.iter().zip(&o) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_kernel_forward_matches_oracle() {
        let m = Measure::pooled_null(2.0, 3.0).unwrap();
        let k = m.tables(4).unwrap();
        let pol = PolicyTable::from_fn(4, |x| 0.2 + 0.1 * ((x.s_c + x.n_d) % 5) as f64).unwrap();
        let d = forward_distribution(&k, &pol).unwrap();
        let o = history_oracle(&m, &pol, 4);
        for (a, b) in d.probs.iter().zip(&o) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn er_expected_reward_is_half_per_patient() {
        for n in 1..=8 {
            let k = uniform(n);
            let v = expected_total(
                &k,
                &PolicyTable::constant(n, 0.5).unwrap(),
                &RewardSpec::posterior_means(&k),
            )
            .unwrap();
            assert_relative_eq!(v, n as f64 / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn terminal_expectation_is_a_dot_product() {
        let n = 2;
        let k = uniform(n);
        let pol = PolicyTable::constant(n, 0.5).unwrap();
        let t = crate::terminal::TerminalTable::new(n);
        let h = t.rejection_indicator(0.4, 1.0);
        let r = RewardSpec::terminal_only(n, h.clone()).unwrap();
        let d = forward_distribution(&k, &pol).unwrap();
        let direct: f64 = d.probs.iter().zip(&h).map(|(p, v)| p * v).sum();
        assert_relative_eq!(
            expected_total(&k, &pol, &r).unwrap(),
            direct,
            max_relative = 1e-14
        );
        assert_eq!(expected_total(&k, &pol, &RewardSpec::zero(n)).unwrap(), 0.0);
    }

    #[test]
    fn stage_distributions_sum_to_one() {
        let m = Measure::independent_beta(3.0, 7.0, 6.0, 4.0).unwrap();
        let k = m.tables(7).unwrap();
        let (_, pol) = backward_induction(&k, &RewardSpec::posterior_means(&k), 0.95).unwrap();
        for d in forward_stages(&k, &pol).unwrap() {
            assert_relative_eq!(d.total(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn backward_value_matches_forward_evaluation_of_its_policy() {
        let k = Measure::independent_beta(1.0, 2.0, 2.0, 1.0)
            .unwrap()
            .tables(9)
            .unwrap();
        let t = crate::terminal::TerminalTable::new(9);
        let r = RewardSpec::posterior_means(&k)
            .with_terminal(t.rejection_indicator(0.1, 3.0))
            .unwrap();
        let (v, pol) = backward_induction(&k, &r, 0.9).unwrap();
        assert_relative_eq!(
            expected_total(&k, &pol, &r).unwrap(),
            v,
            max_relative = 1e-12
        );
    }

    #[test]
    fn reweighting_separable_matches_dense() {
        let n = 5;
        let base = uniform(n);
        let other = Measure::independent_beta(3.0, 7.0, 6.0, 4.0)
            .unwrap()
            .tables(n)
            .unwrap();
        let r = RewardSpec::posterior_means(&other).scaled(-1.0);
        let rw = r.reweighted(&other, &base).unwrap();
        assert!(matches!(rw.running(), Running::Separable { .. }));
        for t in 0..n {
            for x in stage_states(t) {
                let (a, b) = r.coefficients(&x);
                let w = other.ratio(&base, &x);
                let (c, d) = rw.coefficients(&x);
                assert_relative_eq!(c, a * w, max_relative = 1e-12);
                assert_relative_eq!(d, b * w, max_relative = 1e-12);
            }
        }
    }
}
