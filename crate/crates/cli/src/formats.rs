//! Policy artifacts, OC tables and solve reports on disk.
//!
//! A policy artifact is little-endian binary:
//!
//! | bytes | content                                         |
//! |-------|-------------------------------------------------|
//! | 4     | magic `RAPT`                                    |
//! | 4     | version (`u32`, currently 1)                    |
//! | 4     | horizon `n` (`u32`)                             |
//! | 8     | randomisation bound `p` (`f64`)                 |
//! | 4     | design code (`u32`)                             |
//! | 32    | prior pseudo-counts `s_C, f_C, s_D, f_D` (`f64`) |
//! | 8     | number of probabilities (`u64`)                 |
//! | 8·k   | allocation probabilities in state-index order   |

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trialcmdp::designs::{DesignOutcome, DesignSpec, DesignTag};
use trialcmdp::mdp::PolicyTable;
use trialcmdp::measure::BetaPrior;
use trialcmdp::oc::OcRow;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"RAPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + 32 + 8;

pub const OC_HEADER: [&str; 6] = [
    "theta_C",
    "theta_D",
    "patient_benefit",
    "rejection_rate",
    "bias",
    "mse",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyArtifact {
    pub p: f64,
    pub tag: DesignTag,
    pub prior: [BetaPrior; 2],
    pub policy: PolicyTable,
}

impl PolicyArtifact {
    pub fn new(spec: &DesignSpec, policy: PolicyTable) -> Self {
        PolicyArtifact {
            p: spec.effective_p(),
            tag: spec.tag(),
            prior: spec.prior,
            policy,
        }
    }

    pub fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.policy.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.horizon() as u32).to_le_bytes());
        out.extend_from_slice(&self.p.to_le_bytes());
        out.extend_from_slice(&self.tag.code().to_le_bytes());
        for b in &self.prior {
            out.extend_from_slice(&b.successes.to_le_bytes());
            out.extend_from_slice(&b.failures.to_le_bytes());
        }
        out.extend_from_slice(&(self.policy.len() as u64).to_le_bytes());
        for v in self.policy.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return Err("not a policy artifact (bad magic)".into());
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = u32_at(8) as usize;
        let p = f64_at(12);
        let tag = DesignTag::from_code(u32_at(20))
            .ok_or_else(|| format!("unknown design code {}", u32_at(20)))?;
        let counts: Vec<f64> = (0..4).map(|k| f64_at(24 + 8 * k)).collect();
        let prior = [
            BetaPrior::new(counts[0], counts[1]).map_err(|e| e.to_string())?,
            BetaPrior::new(counts[2], counts[3]).map_err(|e| e.to_string())?,
        ];
        let len = u64::from_le_bytes(bytes[56..64].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * len {
            return Err(format!(
                "expected {len} probabilities, found {} bytes",
                body.len()
            ));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let policy = PolicyTable::from_values(n, values).map_err(|e| e.to_string())?;
        Ok(PolicyArtifact {
            p,
            tag,
            prior,
            policy,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| CliError::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// OC rows as CSV with a header and `\n` line endings.
pub fn write_oc_csv<W: Write>(out: W, rows: &[OcRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(OC_HEADER)?;
    for r in rows {
        let fields = [
            r.theta_c,
            r.theta_d,
            r.patient_benefit,
            r.rejection_rate,
            r.bias,
            r.mse,
        ];
        w.write_record(fields.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))?;
    Ok(())
}

pub fn read_oc_csv(path: &Path) -> Result<Vec<OcRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if v.len() != OC_HEADER.len() {
            return Err(CliError::Format {
                path: path.to_path_buf(),
                message: format!("row has {} fields", v.len()),
            });
        }
        rows.push(OcRow {
            theta_c: v[0],
            theta_d: v[1],
            patient_benefit: v[2],
            rejection_rate: v[3],
            bias: v[4],
            mse: v[5],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub label: String,
    pub slack: f64,
    pub multiplier: f64,
}

/// Serialised summary of one solved design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub design: String,
    pub horizon: usize,
    pub p: f64,
    /// Expected successes under the objective prior.
    pub objective: f64,
    /// Backward-induction value for DP and CRDP (includes CRDP's penalty).
    pub value: Option<f64>,
    pub dual_value: Option<f64>,
    pub gap: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub deterministic: Option<bool>,
    pub iterations: Option<usize>,
    pub repair_iterations: Option<usize>,
    pub box_active: Option<bool>,
    pub constraints: Vec<ConstraintRecord>,
    pub seconds: f64,
}

impl ReportRecord {
    pub fn new(spec: &DesignSpec, outcome: &DesignOutcome, seconds: f64) -> Self {
        let r = outcome.report.as_ref();
        ReportRecord {
            design: outcome.tag.name().to_string(),
            horizon: spec.horizon,
            p: spec.effective_p(),
            objective: outcome.objective,
            value: outcome.value,
            dual_value: r.map(|r| r.dual_value),
            gap: r.map(|r| r.gap),
            kkt_residual: r.map(|r| r.kkt_residual),
            deterministic: r.map(|r| r.deterministic),
            iterations: r.map(|r| r.iterations),
            repair_iterations: r.map(|r| r.repair_iterations),
            box_active: r.map(|r| r.box_active),
            constraints: r
                .map(|r| {
                    r.labels
                        .iter()
                        .zip(&r.slacks)
                        .zip(&r.lambda)
                        .map(|((l, &slack), &multiplier)| ConstraintRecord {
                            label: l.clone(),
                            slack,
                            multiplier,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            seconds,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
