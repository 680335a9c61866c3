//! Versioned JSON container for trained fields and classifiers.
//!
//! Weights are stored row-major as decimal `f64` in shortest round-trip form,
//! so `load(save(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trajedit_core::field::{AnyField, Field, ToyClassifier, TrainHyper, TrainLog};
use trajedit_core::schedule::Schedule;

pub const FORMAT: &str = "trajedit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Model {
    Field { field: AnyField },
    Classifier { classifier: ToyClassifier },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Schedule identifier; absent for classifiers.
    pub schedule: Option<String>,
    /// Training seed.
    pub seed: u64,
    pub model: Model,
    pub hyper: Option<TrainHyper>,
    pub training: Option<TrainLog>,
    pub train_accuracy: Option<f64>,
}

impl Checkpoint {
    pub fn field(field: AnyField, schedule: Schedule, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            schedule: Some(schedule.id().into()),
            seed,
            model: Model::Field { field },
            hyper: None,
            training: None,
            train_accuracy: None,
        }
    }

    pub fn classifier(classifier: ToyClassifier, seed: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            schedule: None,
            seed,
            model: Model::Classifier { classifier },
            hyper: None,
            training: None,
            train_accuracy: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).with_context(|| format!("writing checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format != FORMAT {
            bail!("not a checkpoint (format tag {:?})", c.format);
        }
        if c.version != VERSION {
            bail!("unsupported checkpoint version {}", c.version);
        }
        if let Model::Field { field } = &c.model {
            let schedule = c.field_schedule()?;
            if !schedule.matches(field.kind()) {
                bail!(
                    "schedule {} does not fit a {} field",
                    schedule.id(),
                    field.kind().as_str()
                );
            }
        }
        Ok(c)
    }

    fn field_schedule(&self) -> Result<Schedule> {
        let id = self
            .schedule
            .as_deref()
            .context("field checkpoint lacks a schedule id")?;
        Schedule::from_id(id).with_context(|| format!("unknown schedule id {id:?}"))
    }

    /// The stored field and its schedule.
    pub fn into_field(self) -> Result<(AnyField, Schedule)> {
        let schedule = self.field_schedule();
        match self.model {
            Model::Field { field } => Ok((field, schedule?)),
            Model::Classifier { .. } => bail!("checkpoint holds a classifier, not a field"),
        }
    }

    pub fn into_classifier(self) -> Result<ToyClassifier> {
        match self.model {
            Model::Classifier { classifier } => Ok(classifier),
            Model::Field { .. } => bail!("checkpoint holds a field, not a classifier"),
        }
    }
}
