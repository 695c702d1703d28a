//! Probability laws on `θ = (θ_C, θ_D)`: marginal likelihoods `q(x)`,
//! predictive transition probabilities and posterior moments.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special::{ln_beta, ln_beta_interval, truncated_beta_moment};
use crate::state::{tri, Arm, TrialState};

pub use crate::special::{regularized_incomplete_beta, truncated_beta_moment as truncated_moment};

/// Beta prior pseudo-counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub successes: f64,
    pub failures: f64,
}

impl BetaPrior {
    pub const UNIFORM: BetaPrior = BetaPrior {
        successes: 1.0,
        failures: 1.0,
    };

    pub fn new(successes: f64, failures: f64) -> Result<Self> {
        let b = BetaPrior {
            successes,
            failures,
        };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if !(self.successes > 0.0 && self.failures > 0.0)
            || !self.successes.is_finite()
            || !self.failures.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "pseudo-counts ({}, {}) must be positive",
                self.successes, self.failures
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.successes / (self.successes + self.failures)
    }

    /// Posterior shape after `s` successes in `m` trials.
    fn posterior(&self, s: u32, m: u32) -> (f64, f64) {
        (self.successes + s as f64, self.failures + (m - s) as f64)
    }
}

/// Axis-aligned box `[l_C, u_C) × [l_D, u_D)` in the parameter square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub c: (f64, f64),
    pub d: (f64, f64),
}

impl Rectangle {
    pub const UNIT: Rectangle = Rectangle {
        c: (0.0, 1.0),
        d: (0.0, 1.0),
    };

    pub fn new(c: (f64, f64), d: (f64, f64)) -> Result<Self> {
        let r = Rectangle { c, d };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        for (l, u) in [self.c, self.d] {
            if !(0.0 <= l && l < u && u <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "rectangle side [{l}, {u})"
                )));
            }
        }
        Ok(())
    }

    pub fn side(&self, arm: Arm) -> (f64, f64) {
        match arm {
            Arm::Control => self.c,
            Arm::Developmental => self.d,
        }
    }

    /// Product grid of the per-arm breakpoints.
    pub fn grid(breaks: &[f64]) -> Result<Vec<Rectangle>> {
        let mut out = Vec::new();
        for c in breaks.windows(2) {
            for d in breaks.windows(2) {
                out.push(Rectangle::new((c[0], c[1]), (d[0], d[1]))?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    /// Independent Beta priors on each arm.
    IndependentBeta { c: BetaPrior, d: BetaPrior },
    /// A single Beta prior on the common value `θ_C = θ_D`.
    PooledNull(BetaPrior),
    /// Independent Beta priors restricted to a rectangle.
    TruncatedIndependentBeta {
        c: BetaPrior,
        d: BetaPrior,
        rect: Rectangle,
    },
    /// Fixed success probabilities.
    PointMass { theta_c: f64, theta_d: f64 },
}

impl Measure {
    pub fn uniform() -> Self {
        Measure::IndependentBeta {
            c: BetaPrior::UNIFORM,
            d: BetaPrior::UNIFORM,
        }
    }

    pub fn independent_beta(s_c: f64, f_c: f64, s_d: f64, f_d: f64) -> Result<Self> {
        Ok(Measure::IndependentBeta {
            c: BetaPrior::new(s_c, f_c)?,
            d: BetaPrior::new(s_d, f_d)?,
        })
    }

    pub fn pooled_null(s0: f64, f0: f64) -> Result<Self> {
        Ok(Measure::PooledNull(BetaPrior::new(s0, f0)?))
    }

    pub fn truncated(c: BetaPrior, d: BetaPrior, rect: Rectangle) -> Result<Self> {
        let m = Measure::TruncatedIndependentBeta { c, d, rect };
        m.validate()?;
        Ok(m)
    }

    pub fn point_mass(theta_c: f64, theta_d: f64) -> Result<Self> {
        let m = Measure::PointMass { theta_c, theta_d };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Measure::IndependentBeta { c, d } => {
                c.validate()?;
                d.validate()
            }
            Measure::PooledNull(b) => b.validate(),
            Measure::TruncatedIndependentBeta { c, d, rect } => {
                c.validate()?;
                d.validate()?;
                rect.validate()?;
                for (prior, arm) in [(c, Arm::Control), (d, Arm::Developmental)] {
                    let (l, u) = rect.side(arm);
                    let z = ln_beta_interval(prior.successes, prior.failures, l, u);
                    if z < libm::log(1e-300) {
                        return Err(Error::DegenerateTruncation(libm::exp(z)));
                    }
                }
                Ok(())
            }
            Measure::PointMass { theta_c, theta_d } => {
                if !(0.0..=1.0).contains(theta_c) || !(0.0..=1.0).contains(theta_d) {
                    return Err(Error::InvalidParameter(format!(
                        "point mass ({theta_c}, {theta_d}) outside [0, 1]^2"
                    )));
                }
                Ok(())
            }
        }
    }

    /// True if `q(x) > 0` for every state, which makes the measure usable
    /// as the objective law for a change of measure.
    pub fn has_full_support(&self) -> bool {
        match self {
            Measure::PointMass { theta_c, theta_d } => {
                [theta_c, theta_d].iter().all(|t| **t > 0.0 && **t < 1.0)
            }
            _ => true,
        }
    }

    pub fn is_product(&self) -> bool {
        !matches!(self, Measure::PooledNull(_))
    }

    /// `ln q(x) = ln ∫ Π_a θ_a^{s_a} (1-θ_a)^{n_a - s_a} dm(θ)`.
    pub fn log_marginal_likelihood(&self, x: &TrialState) -> f64 {
        match self {
            Measure::PooledNull(b) => pooled_ln_q(b, x.successes(), x.n_c + x.n_d),
            _ => {
                self.arm_ln_q(Arm::Control, x.s_c, x.n_c)
                    + self.arm_ln_q(Arm::Developmental, x.s_d, x.n_d)
            }
        }
    }

    /// Per-arm factor of `ln q` for product measures.
    fn arm_ln_q(&self, arm: Arm, s: u32, m: u32) -> f64 {
        if m == 0 {
            return 0.0;
        }
        match self {
            Measure::IndependentBeta { c, d } => {
                let prior = if arm == Arm::Control { c } else { d };
                let (a, b) = prior.posterior(s, m);
                ln_beta(a, b) - ln_beta(prior.successes, prior.failures)
            }
            Measure::TruncatedIndependentBeta { c, d, rect } => {
                let prior = if arm == Arm::Control { c } else { d };
                let (l, u) = rect.side(arm);
                let (a, b) = prior.posterior(s, m);
                ln_beta(a, b) + ln_beta_interval(a, b, l, u)
                    - ln_beta(prior.successes, prior.failures)
                    - ln_beta_interval(prior.successes, prior.failures, l, u)
            }
            Measure::PointMass { theta_c, theta_d } => {
                let th = if arm == Arm::Control {
                    *theta_c
                } else {
                    *theta_d
                };
                xlogy(s as f64, th) + xlogy((m - s) as f64, 1.0 - th)
            }
            Measure::PooledNull(_) => unreachable!("pooled measure has no arm factor"),
        }
    }

    /// Predictive probability that the next participant on `arm` succeeds.
    pub fn predictive_success_prob(&self, x: &TrialState, arm: Arm) -> Result<f64> {
        match self {
            Measure::PooledNull(b) => Ok(pooled_pred(b, x.successes(), x.n_c + x.n_d)),
            _ => self.arm_pred(arm, x.successes_of(arm), x.allocations_of(arm)),
        }
    }

    fn arm_pred(&self, arm: Arm, s: u32, m: u32) -> Result<f64> {
        match self {
            Measure::IndependentBeta { c, d } => {
                let prior = if arm == Arm::Control { c } else { d };
                let (a, b) = prior.posterior(s, m);
                Ok(a / (a + b))
            }
            Measure::TruncatedIndependentBeta { c, d, rect } => {
                let prior = if arm == Arm::Control { c } else { d };
                let (l, u) = rect.side(arm);
                let (a, b) = prior.posterior(s, m);
                truncated_beta_moment(a, b, l, u, 1)
            }
            Measure::PointMass { theta_c, theta_d } => Ok(if arm == Arm::Control {
                *theta_c
            } else {
                *theta_d
            }),
            Measure::PooledNull(_) => unreachable!("pooled measure has no arm factor"),
        }
    }

    /// Precomputes predictive probabilities and `ln q` for every count
    /// pair reachable within `horizon` allocations.
    pub fn tables(&self, horizon: usize) -> Result<MeasureTables> {
        self.validate()?;
        let len = tri(horizon + 1);
        let layout = match self {
            Measure::PooledNull(b) => {
                let mut pred = Vec::with_capacity(len);
                let mut ln_q = Vec::with_capacity(len);
                for m in 0..=horizon as u32 {
                    for s in 0..=m {
                        pred.push(pooled_pred(b, s, m));
                        ln_q.push(pooled_ln_q(b, s, m));
                    }
                }
                Layout::Pooled { pred, ln_q }
            }
            _ => {
                let mut pred = [Vec::with_capacity(len), Vec::with_capacity(len)];
                let mut ln_q = [Vec::with_capacity(len), Vec::with_capacity(len)];
                for (k, arm) in [Arm::Control, Arm::Developmental].into_iter().enumerate() {
                    for m in 0..=horizon as u32 {
                        for s in 0..=m {
                            pred[k].push(self.arm_pred(arm, s, m)?);
                            ln_q[k].push(self.arm_ln_q(arm, s, m));
                        }
                    }
                }
                Layout::Product { pred, ln_q }
            }
        };
        Ok(MeasureTables { horizon, layout })
    }
}

fn pooled_pred(b: &BetaPrior, s: u32, m: u32) -> f64 {
    let (a, bb) = b.posterior(s, m);
    a / (a + bb)
}

fn pooled_ln_q(b: &BetaPrior, s: u32, m: u32) -> f64 {
    let (a, bb) = b.posterior(s, m);
    ln_beta(a, bb) - ln_beta(b.successes, b.failures)
}

/// `x ln y` with `0 ln 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * libm::log(y)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layout {
    Product {
        pred: [Vec<f64>; 2],
        ln_q: [Vec<f64>; 2],
    },
    Pooled {
        pred: Vec<f64>,
        ln_q: Vec<f64>,
    },
}

/// Tabulated predictive kernel and marginal likelihoods of one measure.
///
/// Product measures store one `(s, m)` table per arm; the pooled null
/// measure stores one table over total successes and allocations.
#[derive(Debug, Clone)]
pub struct MeasureTables {
    horizon: usize,
    pub(crate) layout: Layout,
}

impl MeasureTables {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn success_prob(&self, x: &TrialState, arm: Arm) -> f64 {
        match &self.layout {
            Layout::Product { pred, .. } => {
                let k = (arm == Arm::Developmental) as usize;
                let (s, m) = (x.successes_of(arm) as usize, x.allocations_of(arm) as usize);
                pred[k][tri(m) + s]
            }
            Layout::Pooled { pred, .. } => pred[tri(x.stage()) + x.successes() as usize],
        }
    }

    pub fn ln_q(&self, x: &TrialState) -> f64 {
        match &self.layout {
            Layout::Product { ln_q, .. } => {
                ln_q[0][tri(x.n_c as usize) + x.s_c as usize]
                    + ln_q[1][tri(x.n_d as usize) + x.s_d as usize]
            }
            Layout::Pooled { ln_q, .. } => ln_q[tri(x.stage()) + x.successes() as usize],
        }
    }

    /// Per-arm likelihood ratio tables `q_self,a / q_base,a`, when both
    /// measures factorise over arms. Zero where the base factor vanishes.
    pub(crate) fn arm_ratio(&self, base: &MeasureTables) -> Option<[Vec<f64>; 2]> {
        match (&self.layout, &base.layout) {
            (Layout::Product { ln_q: num, .. }, Layout::Product { ln_q: den, .. }) => {
                let f = |k: usize| {
                    num[k]
                        .iter()
                        .zip(&den[k])
                        .map(|(&a, &b)| {
                            if b == f64::NEG_INFINITY {
                                0.0
                            } else {
                                libm::exp(a - b)
                            }
                        })
                        .collect()
                };
                Some([f(0), f(1)])
            }
            _ => None,
        }
    }

    /// `q_self(x) / q_base(x)`, zero where `q_base(x) = 0`.
    pub fn ratio(&self, base: &MeasureTables, x: &TrialState) -> f64 {
        let den = base.ln_q(x);
        if den == f64::NEG_INFINITY {
            0.0
        } else {
            libm::exp(self.ln_q(x) - den)
        }
    }
}
