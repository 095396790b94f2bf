//! Flat key-value experiment configs and the versioned run-record schema.
//!
//! Configs serialize one `key=value` pair per line so campaign provenance
//! diffs cleanly; records append to `records.csv` under a campaign
//! directory whose `manifest.txt` pins the config.

use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ChainE2e,
    Htp,
    WalkCycles,
    Sampling,
    Dynamics,
    Certify,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "chain-e2e" => Self::ChainE2e,
            "htp" => Self::Htp,
            "walk-cycles" => Self::WalkCycles,
            "sampling" => Self::Sampling,
            "dynamics" => Self::Dynamics,
            "certify" => Self::Certify,
            other => bail!("unknown experiment kind `{other}`"),
        })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ChainE2e => "chain-e2e",
            Self::Htp => "htp",
            Self::WalkCycles => "walk-cycles",
            Self::Sampling => "sampling",
            Self::Dynamics => "dynamics",
            Self::Certify => "certify",
        };
        f.write_str(s)
    }
}

/// One experiment campaign over a contiguous range of dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_lo: usize,
    pub n_hi: usize,
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
    pub steps: usize,
    pub walk_len: usize,
    pub per_cell: usize,
    pub k_cap: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lo == 0 || self.n_hi < self.n_lo {
            bail!("invalid dimension range {}..{}", self.n_lo, self.n_hi);
        }
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            bail!("eps {} outside (0,1]", self.eps);
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            bail!("delta {} outside (0,1]", self.delta);
        }
        if self.steps == 0 || self.walk_len == 0 || self.per_cell == 0 || self.k_cap < 3 {
            bail!("steps, walk-len, per-cell must be positive and k-cap >= 3");
        }
        match self.kind {
            ExperimentKind::ChainE2e | ExperimentKind::Certify if self.n_hi > 4 => {
                bail!("{} is exhaustive; n must stay <= 4", self.kind)
            }
            _ => Ok(()),
        }
    }

    /// Flat `key=value` text, one pair per line.
    pub fn to_flat_text(&self) -> String {
        format!(
            "schema={SCHEMA_VERSION}\nkind={}\nn_lo={}\nn_hi={}\ntrials={}\nseed={}\neps={}\ndelta={}\nsteps={}\nwalk_len={}\nper_cell={}\nk_cap={}\n",
            self.kind,
            self.n_lo,
            self.n_hi,
            self.trials,
            self.seed,
            self.eps,
            self.delta,
            self.steps,
            self.walk_len,
            self.per_cell,
            self.k_cap,
        )
    }

    pub fn from_flat_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut fields = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", i + 1))?;
            if key.trim() == "kind" {
                kind = Some(ExperimentKind::parse(value.trim())?);
            } else {
                fields.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        let get_or = |key: &str, default: &str| -> String {
            fields
                .get(key)
                .cloned()
                .unwrap_or_else(|| default.to_string())
        };
        let config = Self {
            kind: kind.context("missing `kind`")?,
            n_lo: get_or("n_lo", "2").parse()?,
            n_hi: get_or("n_hi", &get_or("n_lo", "2")).parse()?,
            trials: get_or("trials", "1").parse()?,
            seed: get_or("seed", "0").parse()?,
            eps: get_or("eps", "0.05").parse()?,
            delta: get_or("delta", "0.2").parse()?,
            steps: get_or("steps", "16").parse()?,
            walk_len: get_or("walk_len", "65536").parse()?,
            per_cell: get_or("per_cell", "20").parse()?,
            k_cap: get_or("k_cap", "32").parse()?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// One row of a campaign's `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub kind: String,
    pub trial: usize,
    pub n: usize,
    pub seed: u64,
    pub queries: u64,
    pub success: bool,
    pub wall_ms: f64,
    pub lambda_star: Option<f64>,
    pub eps_star: Option<f64>,
    /// Kind-specific scalar: longest cycle, path length, displacement, max
    /// estimate error, or swap regret.
    pub detail: f64,
}

pub const CSV_HEADER: &str =
    "schema,kind,trial,n,seed,queries,success,wall_ms,lambda_star,eps_star,detail";

impl RunRecord {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.3},{},{},{:.17e}",
            self.schema,
            self.kind,
            self.trial,
            self.n,
            self.seed,
            self.queries,
            self.success,
            self.wall_ms,
            opt(self.lambda_star),
            opt(self.eps_star),
            self.detail,
        )
    }

    pub fn from_csv_row(row: &str, line: usize) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 11 {
            bail!("line {line}: expected 11 fields, got {}", fields.len());
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse()?))
            }
        };
        Ok(Self {
            schema: fields[0]
                .parse()
                .with_context(|| format!("line {line}: schema"))?,
            kind: fields[1].to_string(),
            trial: fields[2]
                .parse()
                .with_context(|| format!("line {line}: trial"))?,
            n: fields[3]
                .parse()
                .with_context(|| format!("line {line}: n"))?,
            seed: fields[4]
                .parse()
                .with_context(|| format!("line {line}: seed"))?,
            queries: fields[5]
                .parse()
                .with_context(|| format!("line {line}: queries"))?,
            success: fields[6]
                .parse()
                .with_context(|| format!("line {line}: success"))?,
            wall_ms: fields[7]
                .parse()
                .with_context(|| format!("line {line}: wall_ms"))?,
            lambda_star: opt(fields[8])?,
            eps_star: opt(fields[9])?,
            detail: fields[10]
                .parse()
                .with_context(|| format!("line {line}: detail"))?,
        })
    }
}

/// Prepares a campaign directory: creates it, writes the manifest on first
/// use, and refuses a manifest that disagrees with the config.
pub fn prepare_campaign_dir(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating campaign directory {}", dir.display()))?;
    let manifest = dir.join("manifest.txt");
    let text = config.to_flat_text();
    if manifest.exists() {
        let existing = fs::read_to_string(&manifest)?;
        if existing != text {
            bail!(
                "campaign manifest {} disagrees with this config; use a fresh directory",
                manifest.display()
            );
        }
    } else {
        fs::write(&manifest, text)?;
    }
    Ok(())
}

/// Appends records to the campaign's `records.csv`, writing the header on
/// first use.
pub fn append_records(dir: &Path, records: &[RunRecord]) -> Result<()> {
    let path = dir.join("records.csv");
    let mut body = String::new();
    if !path.exists() {
        body.push_str(CSV_HEADER);
        body.push('\n');
    }
    for record in records {
        body.push_str(&record.to_csv_row());
        body.push('\n');
    }
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = if path.is_dir() {
        path.join("records.csv")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file)
        .with_context(|| format!("reading records from {}", file.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != CSV_HEADER {
                bail!("line 1: unexpected header {line:?}");
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(RunRecord::from_csv_row(line, i + 1)?);
    }
    Ok(out)
}
