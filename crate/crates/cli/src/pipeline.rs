use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use trialcmdp::cmdp::SolverOptions;
use trialcmdp::designs::{solve_design, DesignOutcome, DesignSpec};
use trialcmdp::mdp::PolicyTable;
use trialcmdp::oc::{OcEvaluator, OcRow};
use trialcmdp::terminal::TerminalTable;

use crate::config::SweepConfig;
use crate::error::{CliError, Result};
use crate::formats::{write_oc_csv, PolicyArtifact, ReportRecord};

#[derive(Debug, Clone)]
pub struct Solved {
    pub spec: DesignSpec,
    pub outcome: DesignOutcome,
    pub seconds: f64,
}

impl Solved {
    pub fn record(&self) -> ReportRecord {
        ReportRecord::new(&self.spec, &self.outcome, self.seconds)
    }

    pub fn artifact(&self) -> PolicyArtifact {
        PolicyArtifact::new(&self.spec, self.outcome.policy.clone())
    }
}

pub fn solve(spec: &DesignSpec, opts: &SolverOptions) -> Result<Solved> {
    let clock = Instant::now();
    log::info!("solving {} with n = {}", spec.tag(), spec.horizon);
    let outcome = solve_design(spec, opts)?;
    let seconds = clock.elapsed().as_secs_f64();
    log::info!(
        "{}: objective {} in {seconds:.2} s",
        spec.tag(),
        outcome.objective
    );
    Ok(Solved {
        spec: spec.clone(),
        outcome,
        seconds,
    })
}

/// Operating characteristics over the sweep grid, in grid order.
pub fn sweep(policy: &PolicyTable, sweep: &SweepConfig) -> Result<Vec<OcRow>> {
    let grid = sweep.grid()?;
    let ev = OcEvaluator::new(TerminalTable::new(policy.horizon()), sweep.alpha);
    let rows: trialcmdp::Result<Vec<OcRow>> = grid
        .par_iter()
        .map(|&d| ev.evaluate(policy, sweep.theta_c, d))
        .collect();
    Ok(rows?)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `<stem>.json` and `<stem>.rapt` into `dir`.
pub fn write_solution(dir: &Path, stem: &str, solved: &Solved) -> Result<()> {
    solved.record().write(&dir.join(format!("{stem}.json")))?;
    solved.artifact().write(&dir.join(format!("{stem}.rapt")))
}

pub fn write_oc_file(path: &Path, rows: &[OcRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_oc_csv(std::io::BufWriter::new(file), rows)
}
