//! Frequentist operating characteristics at fixed success probabilities.

use alloc::vec::Vec;

use crate::error::Result;
use crate::mdp::{forward_distribution, PolicyTable, StateDistribution};
use crate::measure::Measure;
use crate::terminal::{reject, TerminalTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcRow {
    pub theta_c: f64,
    pub theta_d: f64,
    /// Expected share of participants on the better arm (1/2 on ties).
    pub patient_benefit: f64,
    pub rejection_rate: f64,
    /// `E[Δ̂] - (θ_D - θ_C)`.
    pub bias: f64,
    /// `E[(Δ̂ - (θ_D - θ_C))²]`.
    pub mse: f64,
}

/// Evaluates policies of one horizon against a shared terminal table.
#[derive(Debug, Clone)]
pub struct OcEvaluator {
    table: TerminalTable,
    alpha: f64,
    rejects: Vec<bool>,
}

impl OcEvaluator {
    pub fn new(table: TerminalTable, alpha: f64) -> Self {
        let rejects = table.pvalues.iter().map(|&p| reject(p, alpha)).collect();
        OcEvaluator {
            table,
            alpha,
            rejects,
        }
    }

    pub fn horizon(&self) -> usize {
        self.table.horizon()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn table(&self) -> &TerminalTable {
        &self.table
    }

    /// Terminal distribution of `policy` when the success probabilities are fixed.
    pub fn terminal_distribution(
        &self,
        policy: &PolicyTable,
        theta_c: f64,
        theta_d: f64,
    ) -> Result<StateDistribution> {
        let kernel = Measure::point_mass(theta_c, theta_d)?.tables(self.horizon())?;
        forward_distribution(&kernel, policy)
    }

    pub fn evaluate(&self, policy: &PolicyTable, theta_c: f64, theta_d: f64) -> Result<OcRow> {
        let dist = self.terminal_distribution(policy, theta_c, theta_d)?;
        Ok(self.summarize(&dist, theta_c, theta_d))
    }

    /// Operating characteristics of a terminal distribution.
    pub fn summarize(&self, dist: &StateDistribution, theta_c: f64, theta_d: f64) -> OcRow {
        let n = self.horizon() as f64;
        let effect = theta_d - theta_c;
        let (mut share_c, mut rr, mut mean, mut sq) = (0.0, 0.0, 0.0, 0.0);
        for (((x, p), &rej), &est) in dist.states().zip(&self.rejects).zip(&self.table.estimates) {
            if p == 0.0 {
                continue;
            }
            share_c += p * x.n_c as f64 / n;
            if rej {
                rr += p;
            }
            let err = est - effect;
            mean += p * err;
            sq += p * err * err;
        }
        let patient_benefit = if theta_c > theta_d {
            share_c
        } else if theta_d > theta_c {
            1.0 - share_c
        } else {
            0.5
        };
        OcRow {
            theta_c,
            theta_d,
            patient_benefit,
            rejection_rate: rr.min(1.0),
            bias: mean,
            mse: sq,
        }
    }

    /// One row per `θ_D` in `grid`, in grid order.
    pub fn sweep(&self, policy: &PolicyTable, theta_c: f64, grid: &[f64]) -> Result<Vec<OcRow>> {
        grid.iter()
            .map(|&d| self.evaluate(policy, theta_c, d))
            .collect()
    }
}

/// Single-point evaluation building its own terminal table.
pub fn evaluate(policy: &PolicyTable, theta_c: f64, theta_d: f64, alpha: f64) -> Result<OcRow> {
    OcEvaluator::new(TerminalTable::new(policy.horizon()), alpha).evaluate(policy, theta_c, theta_d)
}

/// `{0, 1/(k-1), ..., 1}` with `k` points, rounded to avoid drift.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => alloc::vec![0.0],
        k => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
    }
}
