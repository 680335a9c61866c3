//! JSON run report shared by control edits and baselines.
//!
//! The report echoes the resolved configuration and the field, reward and
//! source descriptions, which is enough to rerun it exactly.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use trajedit_core::control::IterationRecord;

use crate::config::{FieldSpec, RewardSpec, SourceSpec};

pub const FORMAT: &str = "trajedit-report";
pub const VERSION: u32 = 1;

/// Stated in every machine-readable output so the distance column is not
/// mistaken for a perceptual metric.
pub const FIDELITY_METRIC: &str =
    "euclidean endpoint distance |x_edit - x_source|_2 (lower is better)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceResult {
    pub source_id: usize,
    pub source: Vec<f64>,
    /// Absent when the run failed.
    pub edited: Option<Vec<f64>>,
    pub reward_before: f64,
    pub reward_after: Option<f64>,
    pub distance: Option<f64>,
    /// Iteration 0 first; empty for baselines.
    pub iterations: Vec<IterationRecord>,
    pub stopped_early: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    /// `oc`, `ga`, `dps`, `freedom` or `tfg`.
    pub method: String,
    pub fidelity_metric: String,
    pub field: FieldSpec,
    pub reward: RewardSpec,
    pub sources: SourceSpec,
    /// The resolved run configuration, including its seed.
    pub config: serde_json::Value,
    pub seed: u64,
    pub results: Vec<SourceResult>,
}

impl RunReport {
    pub fn new(
        method: &str,
        field: FieldSpec,
        reward: RewardSpec,
        sources: SourceSpec,
        config: serde_json::Value,
        seed: u64,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            method: method.into(),
            fidelity_metric: FIDELITY_METRIC.into(),
            field,
            reward,
            sources,
            config,
            seed,
            results: Vec::new(),
        }
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(
            r.format == FORMAT && r.version == VERSION,
            "{} is not a run report",
            path.display()
        );
        Ok(r)
    }
}
