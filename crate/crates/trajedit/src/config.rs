//! Declarative descriptions of fields, rewards, datasets and source samples,
//! shared by single runs and sweeps.
//!
//! Every description has a structured form (JSON/TOML) and a compact
//! command-line form parsed by the `parse_arg` functions. Relative paths are
//! resolved against a base directory: the sweep file's directory, or the
//! working directory for command-line runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use trajedit_core::data::{mixture_samples, two_moons, Labelled};
use trajedit_core::field::{
    train_classifier, AnalyticMixtureField, AnyField, FieldKind, GaussianMixture, ToyClassifier,
    TrainHyper,
};
use trajedit_core::rewards::Reward;
use trajedit_core::rng::{mix_seed, seeded};
use trajedit_core::schedule::{AlphaBar, Schedule};

use crate::checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum MixtureSpec {
    /// Equal-weight components on a circle of `radius`.
    Ring {
        components: usize,
        radius: f64,
        variance: f64,
    },
    Explicit {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        variance: f64,
    },
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        Ok(match self {
            MixtureSpec::Ring {
                components,
                radius,
                variance,
            } => GaussianMixture::ring(*components, *radius, *variance)?,
            MixtureSpec::Explicit {
                means,
                weights,
                variance,
            } => GaussianMixture::new(means.clone(), weights.clone(), *variance)?,
        })
    }

    /// `ring:K:R:VAR`, with the `ring:` prefix already consumed.
    fn parse_ring(rest: &str) -> Result<Self> {
        let p: Vec<&str> = rest.split(':').collect();
        ensure!(
            p.len() >= 3,
            "ring mixture needs components:radius:variance"
        );
        Ok(MixtureSpec::Ring {
            components: p[0].parse().context("ring component count")?,
            radius: p[1].parse().context("ring radius")?,
            variance: p[2].parse().context("ring variance")?,
        })
    }
}

fn parse_kind(s: &str) -> Result<FieldKind> {
    match s {
        "diffusion" | "diffusion_eps" | "dsm" => Ok(FieldKind::DiffusionEps),
        "flow" | "flow_velocity" => Ok(FieldKind::FlowVelocity),
        _ => bail!("unknown field kind {s:?} (expected diffusion or flow)"),
    }
}

/// Comma-separated reals.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {c:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        v.iter().all(|x| x.is_finite()),
        "vector components must be finite"
    );
    Ok(v)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FieldSpec {
    Checkpoint {
        path: PathBuf,
    },
    /// Exact ε or velocity field of a Gaussian mixture.
    Analytic {
        kind: FieldKind,
        mixture: MixtureSpec,
        #[serde(default)]
        alpha_bar: AlphaBar,
    },
}

impl FieldSpec {
    /// `ring:K:R:VAR[:diffusion|flow]` for an analytic ring field, anything
    /// else is a checkpoint path.
    pub fn parse_arg(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("ring:") {
            let mixture = MixtureSpec::parse_ring(rest)?;
            let kind = match rest.split(':').nth(3) {
                Some(k) => parse_kind(k)?,
                None => FieldKind::DiffusionEps,
            };
            return Ok(FieldSpec::Analytic {
                kind,
                mixture,
                alpha_bar: AlphaBar::Cosine,
            });
        }
        Ok(FieldSpec::Checkpoint { path: s.into() })
    }

    pub fn resolve(&self, base: &Path) -> Result<(AnyField, Schedule)> {
        match self {
            FieldSpec::Checkpoint { path } => Checkpoint::load(&resolve(base, path))?.into_field(),
            FieldSpec::Analytic {
                kind,
                mixture,
                alpha_bar,
            } => Ok((
                AnyField::Mixture(AnalyticMixtureField::new(
                    *kind,
                    mixture.build()?,
                    *alpha_bar,
                )),
                Schedule::for_kind(*kind, *alpha_bar),
            )),
        }
    }
}

/// How mixture samples are labelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    #[default]
    Component,
    /// Component index modulo 2.
    Parity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Moons {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Mixture {
        mixture: MixtureSpec,
        n: usize,
        #[serde(default)]
        labels: LabelRule,
    },
    /// CSV of points; for classifiers the last column is the integer label.
    File { path: PathBuf },
}

fn default_noise() -> f64 {
    0.05
}

impl DataSpec {
    /// `moons:N[:noise]`, `ring:K:R:VAR:N[:parity]`, or a CSV path.
    pub fn parse_arg(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("moons:") {
            let p: Vec<&str> = rest.split(':').collect();
            return Ok(DataSpec::Moons {
                n: p[0].parse().context("moons sample count")?,
                noise: match p.get(1) {
                    Some(v) => v.parse().context("moons noise")?,
                    None => default_noise(),
                },
            });
        }
        if let Some(rest) = s.strip_prefix("ring:") {
            let p: Vec<&str> = rest.split(':').collect();
            ensure!(p.len() >= 4, "ring data needs components:radius:variance:n");
            let labels = match p.get(4) {
                None => LabelRule::Component,
                Some(&"parity") => LabelRule::Parity,
                Some(other) => bail!("unknown label rule {other:?}"),
            };
            return Ok(DataSpec::Mixture {
                mixture: MixtureSpec::parse_ring(rest)?,
                n: p[3].parse().context("ring sample count")?,
                labels,
            });
        }
        Ok(DataSpec::File { path: s.into() })
    }

    /// Points with labels; file data is unlabelled unless `labelled`.
    pub fn load(&self, seed: u64, base: &Path, labelled: bool) -> Result<Labelled> {
        match self {
            DataSpec::Moons { n, noise } => Ok(two_moons(*n, *noise, seed)),
            DataSpec::Mixture { mixture, n, labels } => {
                let mut data = mixture_samples(&mixture.build()?, *n, seed);
                if *labels == LabelRule::Parity {
                    data.labels.iter_mut().for_each(|l| *l %= 2);
                }
                Ok(data)
            }
            DataSpec::File { path } => {
                let rows = read_rows(&resolve(base, path))?;
                if !labelled {
                    return Ok(Labelled {
                        labels: vec![0; rows.len()],
                        points: rows,
                    });
                }
                let mut out = Labelled::default();
                for (i, mut r) in rows.into_iter().enumerate() {
                    ensure!(r.len() >= 2, "row {i}: need coordinates and a label");
                    let l = r.pop().unwrap_or_default();
                    ensure!(
                        l >= 0.0 && l.fract() == 0.0,
                        "row {i}: label {l} is not a class index"
                    );
                    out.points.push(r);
                    out.labels.push(l as usize);
                }
                Ok(out)
            }
        }
    }
}

/// Numeric CSV rows; `#` lines and blank lines are skipped, every row must
/// have the same width.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {i}", path.display()))?;
        let row = rec
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .with_context(|| format!("{}: row {i}: bad number {c:?}", path.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            ensure!(
                first.len() == row.len(),
                "{}: row {i} has {} columns, expected {}",
                path.display(),
                row.len(),
                first.len()
            );
        }
        ensure!(
            row.iter().all(|v| v.is_finite()),
            "{}: row {i} is not finite",
            path.display()
        );
        rows.push(row);
    }
    ensure!(!rows.is_empty(), "{} contains no rows", path.display());
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSpec {
    QuadraticTarget {
        target: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    LinearProbe {
        direction: Vec<f64>,
    },
    MixtureLogDensity {
        mixture: MixtureSpec,
    },
    /// Logit of a classifier stored in a checkpoint.
    ClassifierLogit {
        checkpoint: PathBuf,
        target_class: usize,
    },
    /// Logit of a classifier trained deterministically when the reward is
    /// resolved.
    TrainedClassifier {
        data: DataSpec,
        #[serde(default)]
        hyper: TrainHyper,
        target_class: usize,
    },
}

fn one() -> f64 {
    1.0
}

impl RewardSpec {
    /// `quadratic:Y[:scale]`, `linear:A`, `density:ring:K:R:VAR` or
    /// `logit:PATH:CLASS`, with vectors comma-separated.
    pub fn parse_arg(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .context("reward needs the form kind:parameters")?;
        match kind {
            "quadratic" => {
                let (target, scale) = match rest.split_once(':') {
                    Some((t, sc)) => (t, sc.parse().context("quadratic scale")?),
                    None => (rest, 1.0),
                };
                Ok(RewardSpec::QuadraticTarget {
                    target: parse_vector(target)?,
                    scale,
                })
            }
            "linear" => Ok(RewardSpec::LinearProbe {
                direction: parse_vector(rest)?,
            }),
            "density" => {
                let ring = rest
                    .strip_prefix("ring:")
                    .context("density reward needs ring:K:R:VAR")?;
                Ok(RewardSpec::MixtureLogDensity {
                    mixture: MixtureSpec::parse_ring(ring)?,
                })
            }
            "logit" => {
                let (path, class) = rest
                    .rsplit_once(':')
                    .context("logit reward needs PATH:CLASS")?;
                Ok(RewardSpec::ClassifierLogit {
                    checkpoint: path.into(),
                    target_class: class.parse().context("target class")?,
                })
            }
            _ => bail!("unknown reward kind {kind:?}"),
        }
    }

    pub fn resolve(&self, base: &Path) -> Result<Reward> {
        Ok(match self {
            RewardSpec::QuadraticTarget { target, scale } => {
                Reward::quadratic(target.clone(), *scale)
            }
            RewardSpec::LinearProbe { direction } => Reward::linear(direction.clone()),
            RewardSpec::MixtureLogDensity { mixture } => Reward::MixtureLogDensity {
                mixture: mixture.build()?,
            },
            RewardSpec::ClassifierLogit {
                checkpoint,
                target_class,
            } => Reward::ClassifierLogit {
                classifier: Checkpoint::load(&resolve(base, checkpoint))?.into_classifier()?,
                target_class: *target_class,
            },
            RewardSpec::TrainedClassifier {
                data,
                hyper,
                target_class,
            } => Reward::ClassifierLogit {
                classifier: train_spec_classifier(data, hyper, base)?.0,
                target_class: *target_class,
            },
        })
    }
}

/// Trains a classifier on `data`; the data seed is derived from the training
/// seed. Returns the classifier and its training accuracy.
pub fn train_spec_classifier(
    data: &DataSpec,
    hyper: &TrainHyper,
    base: &Path,
) -> Result<(ToyClassifier, f64)> {
    let set = data.load(mix_seed(hyper.seed, 0xda7a), base, true)?;
    let (clf, report) = train_classifier(&set.points, &set.labels, None, hyper)?;
    ensure!(!report.degenerate, "classifier data has a single class");
    log::info!("classifier trained: accuracy {:.4}", report.train_accuracy);
    Ok((clf, report.train_accuracy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Points {
        points: Vec<Vec<f64>>,
    },
    /// CSV of points, one per row.
    File {
        path: PathBuf,
    },
    /// Seeded draws from the listed components of a mixture, a component
    /// chosen uniformly per draw; all components when the list is empty.
    Mixture {
        mixture: MixtureSpec,
        #[serde(default)]
        components: Vec<usize>,
        count: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl SourceSpec {
    /// A comma-separated vector, or a CSV path.
    pub fn parse_arg(s: &str) -> Result<Self> {
        if let Ok(v) = parse_vector(s) {
            return Ok(SourceSpec::Points { points: vec![v] });
        }
        Ok(SourceSpec::File { path: s.into() })
    }

    pub fn resolve(&self, base: &Path) -> Result<Vec<Vec<f64>>> {
        let points = match self {
            SourceSpec::Points { points } => points.clone(),
            SourceSpec::File { path } => read_rows(&resolve(base, path))?,
            SourceSpec::Mixture {
                mixture,
                components,
                count,
                seed,
            } => {
                let m = mixture.build()?;
                let pool: Vec<usize> = if components.is_empty() {
                    (0..m.components()).collect()
                } else {
                    components.clone()
                };
                ensure!(
                    pool.iter().all(|&j| j < m.components()),
                    "source component index out of range"
                );
                let mut rng = seeded(*seed);
                (0..*count)
                    .map(|_| {
                        let j = pool[rng.random_range(0..pool.len())];
                        m.sample_component(&mut rng, j)
                    })
                    .collect()
            }
        };
        ensure!(!points.is_empty(), "no source samples");
        let d = points[0].len();
        ensure!(
            d > 0
                && points
                    .iter()
                    .all(|p| p.len() == d && p.iter().all(|v| v.is_finite())),
            "source samples must be finite and share one dimension"
        );
        Ok(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_forms() {
        assert_eq!(
            RewardSpec::parse_arg("quadratic:1,2:0.5").unwrap(),
            RewardSpec::QuadraticTarget {
                target: vec![1.0, 2.0],
                scale: 0.5
            }
        );
        assert!(matches!(
            RewardSpec::parse_arg("logit:/tmp/a:b.json:1").unwrap(),
            RewardSpec::ClassifierLogit {
                target_class: 1,
                ..
            }
        ));
        assert!(RewardSpec::parse_arg("nope:1").is_err());
        assert!(matches!(
            FieldSpec::parse_arg("ring:8:2:0.05:flow").unwrap(),
            FieldSpec::Analytic {
                kind: FieldKind::FlowVelocity,
                ..
            }
        ));
        assert!(matches!(
            FieldSpec::parse_arg("model.json").unwrap(),
            FieldSpec::Checkpoint { .. }
        ));
        assert_eq!(
            SourceSpec::parse_arg("0.5,-1").unwrap(),
            SourceSpec::Points {
                points: vec![vec![0.5, -1.0]]
            }
        );
        assert!(matches!(
            DataSpec::parse_arg("ring:8:2:0.05:100:parity").unwrap(),
            DataSpec::Mixture {
                n: 100,
                labels: LabelRule::Parity,
                ..
            }
        ));
    }

    #[test]
    fn structured_forms_round_trip() {
        let r = RewardSpec::TrainedClassifier {
            data: DataSpec::Moons { n: 10, noise: 0.1 },
            hyper: TrainHyper::default(),
            target_class: 1,
        };
        let text = toml::to_string(&r).unwrap();
        assert_eq!(toml::from_str::<RewardSpec>(&text).unwrap(), r);
    }

    #[test]
    fn mixture_sources_respect_the_component_list() {
        let spec = SourceSpec::Mixture {
            mixture: MixtureSpec::Ring {
                components: 4,
                radius: 3.0,
                variance: 0.01,
            },
            components: vec![0],
            count: 20,
            seed: 1,
        };
        let pts = spec.resolve(Path::new(".")).unwrap();
        assert_eq!(pts.len(), 20);
        assert!(pts
            .iter()
            .all(|p| (p[0] - 3.0).abs() < 0.5 && p[1].abs() < 0.5));
        assert_eq!(pts, spec.resolve(Path::new(".")).unwrap());
    }
}
