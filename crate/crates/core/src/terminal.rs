//! End-of-trial statistics over the terminal states `X_n`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::measure::BetaPrior;
use crate::measure::Rectangle;
use crate::special::truncated_beta_moment;
use crate::state::{index_in_stage, stage_size, stage_states, Arm, TrialState};

/// Relative slack when comparing hypergeometric probabilities.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Natural logs of `0!, 1!, …, n!`.
fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += libm::log(k as f64);
        out.push(acc);
    }
    out
}

/// Hypergeometric probabilities of every table with margins
/// `(n_c, n_d, s)`, indexed by `s_C - lo`.
fn margin_probs(lf: &[f64], n_c: usize, n_d: usize, s: usize) -> (usize, Vec<f64>) {
    let lo = s.saturating_sub(n_d);
    let hi = s.min(n_c);
    let n = n_c + n_d;
    let ln_den = lf[n] - lf[s] - lf[n - s];
    let probs = (lo..=hi)
        .map(|s_c| {
            let s_d = s - s_c;
            let ln_num = lf[n_c] - lf[s_c] - lf[n_c - s_c] + lf[n_d] - lf[s_d] - lf[n_d - s_d];
            libm::exp(ln_num - ln_den)
        })
        .collect();
    (lo, probs)
}

/// Two-sided p-value for each probability: the total mass of tables no
/// more likely than it.
fn pvalues_for(probs: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = probs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut prefix = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for p in &sorted {
        acc += p;
        prefix.push(acc);
    }
    probs
        .iter()
        .map(|&p| {
            let cut = p * (1.0 + TIE_TOLERANCE);
            let k = sorted.partition_point(|&q| q <= cut);
            prefix[k - 1].min(1.0)
        })
        .collect()
}

/// Fisher's exact test p-value of a terminal table, conditioning on the
/// margins `(n_C, n_D, s)`.
pub fn fisher_pvalue(x: &TrialState) -> f64 {
    let (n_c, n_d, s) = (x.n_c as usize, x.n_d as usize, x.successes() as usize);
    let lf = ln_factorials(n_c + n_d);
    let (lo, probs) = margin_probs(&lf, n_c, n_d, s);
    pvalues_for(&probs)[x.s_c as usize - lo]
}

/// Level-`alpha` rejection: `T(x) <= alpha`.
pub fn reject(pvalue: f64, alpha: f64) -> bool {
    pvalue <= alpha
}

/// `θ̂_D - θ̂_C`, using `(s+1)/(n+2)` on both arms whenever either arm is empty.
pub fn effect_estimate(x: &TrialState) -> f64 {
    let (s_c, s_d, n_c, n_d) = (x.s_c as f64, x.s_d as f64, x.n_c as f64, x.n_d as f64);
    if x.n_c.min(x.n_d) > 0 {
        s_d / n_d - s_c / n_c
    } else {
        (s_d + 1.0) / (n_d + 2.0) - (s_c + 1.0) / (n_c + 2.0)
    }
}

/// Posterior mean and variance of `θ_a` under a Beta prior truncated to `[l, u)`.
fn truncated_posterior(prior: &BetaPrior, s: u32, m: u32, side: (f64, f64)) -> Result<(f64, f64)> {
    let a = prior.successes + s as f64;
    let b = prior.failures + (m - s) as f64;
    let m1 = truncated_beta_moment(a, b, side.0, side.1, 1)?;
    let m2 = truncated_beta_moment(a, b, side.0, side.1, 2)?;
    Ok((m1, (m2 - m1 * m1).max(0.0)))
}

/// `∫_σ (Δ̂ - (θ_D - θ_C))² dΠ_σ(θ | x)` for the Beta prior with pseudo-counts
/// `prior_c`, `prior_d` truncated to `rect`.
pub fn posterior_mse_terminal(
    x: &TrialState,
    rect: &Rectangle,
    prior_c: &BetaPrior,
    prior_d: &BetaPrior,
) -> Result<f64> {
    let (mc, vc) = truncated_posterior(prior_c, x.s_c, x.n_c, rect.side(Arm::Control))?;
    let (md, vd) = truncated_posterior(prior_d, x.s_d, x.n_d, rect.side(Arm::Developmental))?;
    let bias = effect_estimate(x) - (md - mc);
    Ok(bias * bias + vc + vd)
}

/// Posterior MSE for every terminal state of horizon `n`, in storage order.
pub fn posterior_mse_table(
    n: usize,
    rect: &Rectangle,
    prior_c: &BetaPrior,
    prior_d: &BetaPrior,
) -> Result<Vec<f64>> {
    // per-arm (mean, var) indexed by (s, m) with m <= n
    let arm_table = |prior: &BetaPrior, side: (f64, f64)| -> Result<Vec<(f64, f64)>> {
        let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
        for m in 0..=n as u32 {
            for s in 0..=m {
                out.push(truncated_posterior(prior, s, m, side)?);
            }
        }
        Ok(out)
    };
    let tc = arm_table(prior_c, rect.side(Arm::Control))?;
    let td = arm_table(prior_d, rect.side(Arm::Developmental))?;
    let tri = |m: u32| (m as usize) * (m as usize + 1) / 2;
    Ok(stage_states(n)
        .map(|x| {
            let (mc, vc) = tc[tri(x.n_c) + x.s_c as usize];
            let (md, vd) = td[tri(x.n_d) + x.s_d as usize];
            let bias = effect_estimate(&x) - (md - mc);
            bias * bias + vc + vd
        })
        .collect())
}

/// Precomputed p-values and effect estimates for all terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalTable {
    horizon: usize,
    pub pvalues: Vec<f64>,
    pub estimates: Vec<f64>,
}

impl TerminalTable {
    pub fn new(n: usize) -> Self {
        let len = stage_size(n);
        let lf = ln_factorials(n);
        let mut pvalues = vec![0.0; len];
        for n_c in 0..=n {
            let n_d = n - n_c;
            for s in 0..=n {
                if s > n_c + n_d {
                    continue;
                }
                let (lo, probs) = margin_probs(&lf, n_c, n_d, s);
                for (k, pv) in pvalues_for(&probs).into_iter().enumerate() {
                    let s_c = lo + k;
                    let x = TrialState {
                        s_c: s_c as u32,
                        s_d: (s - s_c) as u32,
                        n_c: n_c as u32,
                        n_d: n_d as u32,
                    };
                    pvalues[index_in_stage(&x)] = pv;
                }
            }
        }
        let estimates = stage_states(n).map(|x| effect_estimate(&x)).collect();
        TerminalTable {
            horizon: n,
            pvalues,
            estimates,
        }
    }

    /// Rebuilds a table from stored arrays.
    pub fn from_parts(n: usize, pvalues: Vec<f64>, estimates: Vec<f64>) -> Result<Self> {
        let len = stage_size(n);
        if pvalues.len() != len || estimates.len() != len {
            return Err(Error::InvalidParameter(alloc::format!(
                "terminal table for n = {n} needs {len} entries"
            )));
        }
        Ok(TerminalTable {
            horizon: n,
            pvalues,
            estimates,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.pvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pvalues.is_empty()
    }

    /// `I(T(x) <= alpha)` per terminal state, optionally scaled by `sign`.
    pub fn rejection_indicator(&self, alpha: f64, sign: f64) -> Vec<f64> {
        self.pvalues
            .iter()
            .map(|&p| if reject(p, alpha) { sign } else { 0.0 })
            .collect()
    }
}
