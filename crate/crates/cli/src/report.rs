//! Report types and the plain-text attack summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fpgap_core::BackendId;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Effective configuration embedded in every report.
///
/// Output directories are left out so reruns into different directories
/// produce identical files.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunConfig {
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub backends: Vec<BackendId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub seed_indices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_shift: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verifier: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
}

pub fn display_path(p: &Path) -> String {
    p.display().to_string()
}

/// Seed images for the attack, as written by `select-seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedFile {
    pub eps: f64,
    pub indices: Vec<usize>,
}

impl SeedFile {
    pub fn load(path: &Path) -> Result<SeedFile, Failure> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BackendColumn {
    pub backend: BackendId,
    pub attacks: usize,
    /// Smallest test accuracy of the attacked (bias-shifted) models over
    /// the successful seeds; only reported with the bias shift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_test_acc: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackSummary {
    pub tested: usize,
    pub quasi_adversarial: usize,
    pub columns: Vec<BackendColumn>,
}

impl AttackSummary {
    pub fn table(&self, bias_shift: bool) -> String {
        let mut header = vec!["".to_string(), "#quasi-adv / #tested".to_string()];
        header.extend(self.columns.iter().map(|c| c.backend.to_string()));
        let mut rows = vec![header];
        let mut counts = vec!["# attack".to_string(), format!("{} / {}", self.quasi_adversarial, self.tested)];
        counts.extend(self.columns.iter().map(|c| c.attacks.to_string()));
        rows.push(counts);
        if bias_shift {
            let mut acc = vec!["min test acc".to_string(), String::new()];
            acc.extend(
                self.columns.iter().map(|c| c.min_test_acc.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a))),
            );
            rows.push(acc);
        }
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, &w))| if j == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        out
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn prepare_dir(dir: &Path) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
