//! Hard-wired experiment pipelines.
//!
//! Ids are `app1-n75`, `app1-n200`, `app2-n75`, `app2-n200`, `app3-ess10`
//! and `app3-ess100`. The `app1` and `app2` ids accept the suffixes
//! `-p100` (deterministic CMDP designs, p = 1) and `-thc25` / `-thc75`
//! (θ_C = 0.25 / 0.75 in the OC sweep), in that order.

use std::path::Path;

use serde::Serialize;
use trialcmdp::cmdp::SolverOptions;
use trialcmdp::designs::{Design, DesignSpec, TestingParams};
use trialcmdp::measure::BetaPrior;

use crate::config::{SweepConfig, DEFAULT_ALPHA, DEFAULT_P};
use crate::error::{CliError, Result};
use crate::formats::ReportRecord;
use crate::pipeline::{ensure_dir, solve, sweep, write_oc_file, write_solution, Solved};

pub const BASE_IDS: [&str; 6] = [
    "app1-n75",
    "app1-n200",
    "app2-n75",
    "app2-n200",
    "app3-ess10",
    "app3-ess100",
];
pub const OC_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct Experiment {
    pub id: String,
    pub sweep: SweepConfig,
    /// Output stem and design, in solve order.
    pub designs: Vec<(String, DesignSpec)>,
}

fn prior(s: f64, f: f64) -> BetaPrior {
    BetaPrior::new(s, f).expect("hard-wired prior")
}

fn stem(spec: &DesignSpec) -> String {
    spec.tag().name().to_ascii_lowercase()
}

impl Experiment {
    pub fn parse(id: &str) -> Result<Self> {
        let unknown = || CliError::UnknownExperiment(id.to_string());
        let mut rest = id;
        let base = BASE_IDS
            .iter()
            .filter(|b| rest.starts_with(**b))
            .max_by_key(|b| b.len())
            .ok_or_else(unknown)?;
        rest = &rest[base.len()..];
        let mut p = DEFAULT_P;
        let mut theta_c = None;
        if let Some(r) = rest.strip_prefix("-p100") {
            p = 1.0;
            rest = r;
        }
        if let Some(r) = rest.strip_prefix("-thc25") {
            theta_c = Some(0.25);
            rest = r;
        } else if let Some(r) = rest.strip_prefix("-thc75") {
            theta_c = Some(0.75);
            rest = r;
        }
        let variant = p != DEFAULT_P || theta_c.is_some();
        if !rest.is_empty() || (variant && base.starts_with("app3")) {
            return Err(unknown());
        }
        let n = if base.ends_with("n200") || base.starts_with("app3") {
            200
        } else {
            75
        };
        let mut designs: Vec<DesignSpec> = Vec::new();
        match *base {
            "app1-n75" | "app1-n200" => {
                let (alpha_star, beta) = if n == 75 { (0.05, 0.4) } else { (0.07, 0.23) };
                designs.push(DesignSpec::new(n, p, Design::Er));
                designs.push(DesignSpec::new(n, p, Design::Dp));
                designs.push(DesignSpec::new(n, p, Design::Crdp));
                designs.push(DesignSpec::new(
                    n,
                    p,
                    Design::CmdpT(TestingParams::new(DEFAULT_ALPHA, alpha_star, beta)),
                ));
            }
            "app2-n75" | "app2-n200" => {
                let (xi1, xi2, alpha_star, beta) = if n == 75 {
                    (1.05, 1.0, 0.05, 0.4)
                } else {
                    (1.1, 1.05, 0.07, 0.753)
                };
                designs.push(DesignSpec::new(n, p, Design::Er));
                designs.push(DesignSpec::new(n, p, Design::Crdp));
                designs.push(DesignSpec::cmdp_e1(n, p, xi1));
                designs.push(DesignSpec::cmdp_e2(n, p, xi2, alpha_star, beta)?);
            }
            _ => {
                let (counts, xis) = if *base == "app3-ess10" {
                    ([3.0, 7.0, 6.0, 4.0], [0.0, 0.99, 0.999, 1.0])
                } else {
                    ([30.0, 70.0, 60.0, 40.0], [0.0, 0.9, 0.99, 1.0])
                };
                for xi in xis {
                    let spec = DesignSpec::new(
                        n,
                        p,
                        Design::CmdpR {
                            xi,
                            li_prior: [BetaPrior::UNIFORM; 2],
                        },
                    )
                    .with_prior(prior(counts[0], counts[1]), prior(counts[2], counts[3]));
                    designs.push(spec);
                }
                theta_c = Some(0.3);
            }
        }
        let designs = designs
            .into_iter()
            .map(|spec| {
                let name = match &spec.design {
                    Design::CmdpR { xi, .. } => format!("cmdp-r-xi{xi}"),
                    _ => stem(&spec),
                };
                (name, spec)
            })
            .collect();
        let sweep = SweepConfig::new(theta_c.unwrap_or(0.5), OC_POINTS, DEFAULT_ALPHA);
        Ok(Experiment {
            id: id.to_string(),
            sweep,
            designs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.designs[0].1.horizon
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    theta_c: f64,
    alpha: f64,
    designs: Vec<ReportRecord>,
}

/// Solves every design of `exp`, then writes its report, policy artifact
/// and OC table into `dir`, plus a `summary.json`.
pub fn run(exp: &Experiment, opts: &SolverOptions, dir: &Path) -> Result<Vec<Solved>> {
    ensure_dir(dir)?;
    let mut solved = Vec::with_capacity(exp.designs.len());
    for (name, spec) in &exp.designs {
        let s = solve(spec, opts)?;
        write_solution(dir, name, &s)?;
        let rows = sweep(&s.outcome.policy, &exp.sweep)?;
        write_oc_file(&dir.join(format!("{name}_oc.csv")), &rows)?;
        solved.push(s);
    }
    let summary = Summary {
        experiment: &exp.id,
        theta_c: exp.sweep.theta_c,
        alpha: exp.sweep.alpha,
        designs: solved.iter().map(Solved::record).collect(),
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(path, e))?;
    Ok(solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trialcmdp::designs::DesignTag;

    #[test]
    fn base_ids() {
        let e = Experiment::parse("app1-n75").unwrap();
        assert_eq!(e.horizon(), 75);
        let tags: Vec<_> = e.designs.iter().map(|d| d.1.tag()).collect();
        assert_eq!(
            tags,
            [
                DesignTag::Er,
                DesignTag::Dp,
                DesignTag::Crdp,
                DesignTag::CmdpT
            ]
        );
        assert_eq!(e.sweep.theta_c, 0.5);

        let e = Experiment::parse("app2-n200").unwrap();
        assert_eq!(e.horizon(), 200);
        let Design::CmdpE { xi, testing, .. } = &e.designs[3].1.design else {
            panic!()
        };
        assert_eq!((*xi, testing.alpha_star, testing.beta), (1.05, 0.07, 0.753));

        let e = Experiment::parse("app3-ess100").unwrap();
        assert_eq!(e.sweep.theta_c, 0.3);
        assert_eq!(e.designs[2].0, "cmdp-r-xi0.99");
        assert_eq!(e.designs[0].1.prior[1], prior(60.0, 40.0));
    }

    #[test]
    fn variants() {
        let e = Experiment::parse("app1-n200-p100-thc25").unwrap();
        assert_eq!(e.designs[3].1.p, 1.0);
        assert_eq!(e.sweep.theta_c, 0.25);
        let e = Experiment::parse("app2-n75-thc75").unwrap();
        assert_eq!(e.designs[2].1.p, 0.95);
        assert_eq!(e.sweep.theta_c, 0.75);
        for bad in [
            "app4-n75",
            "app1-n75-p90",
            "app1-n75-thc25-p100",
            "app3-ess10-p100",
            "app1",
            "",
        ] {
            let err = Experiment::parse(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}");
        }
    }
}
