//! Run-directory bookkeeping: the manifest that makes a run reproducible
//! and the combined balance/effect report.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cbalance_core::metrics::BalanceReport;
use cbalance_core::trainer::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNLOG_FILE: &str = "runlog.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub runlog: String,
    pub d_ckpt: String,
    pub g_ckpt: String,
    pub phi_ckpt: String,
    pub report: String,
}

impl ArtifactPaths {
    pub fn standard() -> Self {
        ArtifactPaths {
            runlog: RUNLOG_FILE.into(),
            d_ckpt: "d.ckpt".into(),
            g_ckpt: "g.ckpt".into(),
            phi_ckpt: "phi.ckpt".into(),
            report: REPORT_FILE.into(),
        }
    }
}

/// Everything needed to reproduce a run: the full config, the dataset
/// identity, and where the artifacts live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub dataset_path: String,
    pub dataset_sha256: String,
    pub config: TrainConfig,
    pub artifacts: ArtifactPaths,
}

impl RunManifest {
    /// Writes `manifest.json` atomically (temp file, then rename).
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        let tmp = dir.join("manifest.json.tmp");
        fs::write(&tmp, json).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))
            .with_context(|| format!("renaming into {}", dir.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(manifest)
    }
}

/// Final balance diagnostics plus the treatment-effect error, serialized as
/// one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub balance: BalanceReport,
    pub pehe: f64,
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json_report(report: &RunReport, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
