//! Run configuration files.
//!
//! A config is a TOML document with a required `[design]` table and
//! optional `[sweep]`, `[solver]` and `[output]` tables. Unknown keys are
//! rejected. Example:
//!
//! ```toml
//! [design]
//! kind = "cmdp-t"
//! horizon = 75
//! p = 0.95
//! alpha_star = 0.05
//! beta = 0.4
//!
//! [sweep]
//! theta_c = 0.5
//! points = 101
//! alpha = 0.1
//! ```
//!
//! Design keys by kind:
//!
//! | kind      | required                     | optional                                   |
//! |-----------|------------------------------|--------------------------------------------|
//! | `er`      |                              |                                            |
//! | `dp`      |                              |                                            |
//! | `crdp`    |                              |                                            |
//! | `cmdp-t`  | `alpha_star`, `beta`         | `alpha`, `null_prior`, `power_prior_*`     |
//! | `cmdp-e1` | `xi`                         | `alpha`                                    |
//! | `cmdp-e2` | `xi`, `alpha_star`, `beta`   | `alpha`, `null_prior`, `power_prior_*`, `breaks` |
//! | `cmdp-r`  | `xi`                         | `li_prior_control`, `li_prior_developmental` |
//!
//! Every kind accepts `horizon` (required), `p` (default 0.95) and the
//! objective prior `prior_control` / `prior_developmental` as
//! `[successes, failures]` pseudo-counts (default `[1, 1]`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trialcmdp::cmdp::SolverOptions;
use trialcmdp::designs::{Design, DesignSpec, DesignTag, TestingParams, E2_BREAKS};
use trialcmdp::measure::BetaPrior;
use trialcmdp::oc::unit_grid;
use trialcmdp::Rectangle;

use crate::error::{CliError, Result};

pub const DEFAULT_P: f64 = 0.95;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: DesignConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: String,
    pub horizon: usize,
    pub p: Option<f64>,
    pub prior_control: Option<[f64; 2]>,
    pub prior_developmental: Option<[f64; 2]>,
    pub alpha: Option<f64>,
    pub alpha_star: Option<f64>,
    pub beta: Option<f64>,
    pub null_prior: Option<[f64; 2]>,
    pub power_prior_control: Option<[f64; 2]>,
    pub power_prior_developmental: Option<[f64; 2]>,
    pub xi: Option<f64>,
    pub breaks: Option<Vec<f64>>,
    pub li_prior_control: Option<[f64; 2]>,
    pub li_prior_developmental: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub theta_c: f64,
    /// Explicit θ_D values; takes precedence over `points`.
    pub theta_d: Option<Vec<f64>>,
    /// Evenly spaced θ_D grid on [0, 1].
    pub points: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_tol: Option<f64>,
    pub phi: Option<f64>,
    pub lambda_box: Option<f64>,
    pub max_iterations: Option<usize>,
    pub max_repair_iterations: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
        let config = Self::parse(&text).map_err(|e| match e {
            CliError::Config { message, .. } => {
                CliError::config(path.display().to_string(), message)
            }
            other => other,
        })?;
        Ok(config)
    }

    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::config("<config>", e.to_string()))?;
        config.design_spec()?;
        config.solver_options()?;
        if let Some(s) = &config.sweep {
            s.grid()?;
        }
        Ok(config)
    }

    pub fn design_spec(&self) -> Result<DesignSpec> {
        self.design.to_spec()
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        self.solver.apply(SolverOptions::default())
    }
}

fn prior(field: &str, v: Option<[f64; 2]>) -> Result<BetaPrior> {
    match v {
        None => Ok(BetaPrior::UNIFORM),
        Some([s, f]) => BetaPrior::new(s, f)
            .map_err(|e| CliError::config(format!("design.{field}"), e.to_string())),
    }
}

fn unit(field: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::config(
            format!("design.{field}"),
            format!("{v} is outside [0, 1]"),
        ))
    }
}

impl DesignConfig {
    fn required(&self, field: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| {
            CliError::config(
                format!("design.{field}"),
                format!("required by design `{}`", self.kind),
            )
        })
    }

    /// Rejects keys that the chosen design does not read.
    fn check_unused(&self, tag: DesignTag) -> Result<()> {
        let testing = matches!(tag, DesignTag::CmdpT | DesignTag::CmdpE2);
        let present = [
            (
                "alpha",
                self.alpha.is_some(),
                testing || tag == DesignTag::CmdpE1,
            ),
            ("alpha_star", self.alpha_star.is_some(), testing),
            ("beta", self.beta.is_some(), testing),
            ("null_prior", self.null_prior.is_some(), testing),
            (
                "power_prior_control",
                self.power_prior_control.is_some(),
                testing,
            ),
            (
                "power_prior_developmental",
                self.power_prior_developmental.is_some(),
                testing,
            ),
            (
                "xi",
                self.xi.is_some(),
                matches!(
                    tag,
                    DesignTag::CmdpE1 | DesignTag::CmdpE2 | DesignTag::CmdpR
                ),
            ),
            ("breaks", self.breaks.is_some(), tag == DesignTag::CmdpE2),
            (
                "li_prior_control",
                self.li_prior_control.is_some(),
                tag == DesignTag::CmdpR,
            ),
            (
                "li_prior_developmental",
                self.li_prior_developmental.is_some(),
                tag == DesignTag::CmdpR,
            ),
        ];
        for (name, given, used) in present {
            if given && !used {
                return Err(CliError::config(
                    format!("design.{name}"),
                    format!("not used by design `{}`", self.kind),
                ));
            }
        }
        Ok(())
    }

    fn testing(&self) -> Result<TestingParams> {
        let alpha = unit("alpha", self.alpha.unwrap_or(DEFAULT_ALPHA))?;
        let alpha_star = unit("alpha_star", self.required("alpha_star", self.alpha_star)?)?;
        let beta = unit("beta", self.required("beta", self.beta)?)?;
        let mut t = TestingParams::new(alpha, alpha_star, beta);
        t.null_prior = prior("null_prior", self.null_prior)?;
        t.power_prior = match (self.power_prior_control, self.power_prior_developmental) {
            (None, None) => None,
            (c, d) => Some([
                prior("power_prior_control", c)?,
                prior("power_prior_developmental", d)?,
            ]),
        };
        Ok(t)
    }

    pub fn to_spec(&self) -> Result<DesignSpec> {
        let tag = DesignTag::from_name(&self.kind).ok_or_else(|| {
            CliError::config("design.kind", format!("unknown design `{}`", self.kind))
        })?;
        self.check_unused(tag)?;
        if self.horizon == 0 {
            return Err(CliError::config("design.horizon", "must be positive"));
        }
        let p = self.p.unwrap_or(DEFAULT_P);
        let design = match tag {
            DesignTag::Er => Design::Er,
            DesignTag::Dp => Design::Dp,
            DesignTag::Crdp => Design::Crdp,
            DesignTag::CmdpT => Design::CmdpT(self.testing()?),
            DesignTag::CmdpE1 => {
                let xi = self.required("xi", self.xi)?;
                let mut spec = DesignSpec::cmdp_e1(self.horizon, p, xi);
                if let (Some(a), Design::CmdpE { testing, .. }) = (self.alpha, &mut spec.design) {
                    testing.alpha = unit("alpha", a)?;
                }
                spec.design
            }
            DesignTag::CmdpE2 => {
                let xi = self.required("xi", self.xi)?;
                let breaks = self.breaks.clone().unwrap_or_else(|| E2_BREAKS.to_vec());
                let rectangles = Rectangle::grid(&breaks)
                    .map_err(|e| CliError::config("design.breaks", e.to_string()))?;
                Design::CmdpE {
                    tag,
                    testing: self.testing()?,
                    xi,
                    rectangles,
                    rect_prior: BetaPrior::UNIFORM,
                }
            }
            DesignTag::CmdpR => Design::CmdpR {
                xi: self.required("xi", self.xi)?,
                li_prior: [
                    prior("li_prior_control", self.li_prior_control)?,
                    prior("li_prior_developmental", self.li_prior_developmental)?,
                ],
            },
        };
        let spec = DesignSpec::new(self.horizon, p, design).with_prior(
            prior("prior_control", self.prior_control)?,
            prior("prior_developmental", self.prior_developmental)?,
        );
        spec.validate()
            .map_err(|e| CliError::config("design", e.to_string()))?;
        Ok(spec)
    }
}

impl SweepConfig {
    pub fn new(theta_c: f64, points: usize, alpha: f64) -> Self {
        SweepConfig {
            theta_c,
            theta_d: None,
            points: Some(points),
            alpha,
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        for (name, v) in [("theta_c", self.theta_c), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::config(
                    format!("sweep.{name}"),
                    format!("{v} is outside [0, 1]"),
                ));
            }
        }
        let grid = match (&self.theta_d, self.points) {
            (Some(values), _) => values.clone(),
            (None, Some(k)) => unit_grid(k),
            (None, None) => return Err(CliError::config("sweep", "needs `theta_d` or `points`")),
        };
        if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CliError::config(
                "sweep.theta_d",
                format!("{v} is outside [0, 1]"),
            ));
        }
        Ok(grid)
    }
}

impl SolverConfig {
    pub fn apply(&self, mut opts: SolverOptions) -> Result<SolverOptions> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::config(
                    format!("solver.{name}"),
                    format!("{v} must be positive"),
                ))
            }
        };
        if let Some(v) = self.eps_tol {
            opts.eps_tol = positive("eps_tol", v)?;
        }
        if let Some(v) = self.phi {
            opts.phi = positive("phi", v)?;
        }
        if let Some(v) = self.lambda_box {
            opts.lambda_box = positive("lambda_box", v)?;
        }
        if let Some(v) = self.max_iterations {
            opts.max_iterations = v;
        }
        if let Some(v) = self.max_repair_iterations {
            opts.max_repair_iterations = v;
        }
        Ok(opts)
    }
}
