//! Reward/fidelity sweeps over methods and guidance scales.
//!
//! A sweep expands into cells `(method, scale, source, rep)` in a fixed
//! order. Each cell has its own seed, hashed from the seed base and the cell
//! coordinates, so results do not depend on scheduling and any cell can be
//! rerun alone. Workers only compute; the calling thread owns every file.
//!
//! Outputs in the sweep directory:
//!
//! - `cells.csv`: one row per cell, in expansion order.
//! - `pareto.json`: per-(method, scale) aggregates, fronts and coverage.
//! - `manifest.json`: spec hash and completed cells, used to resume.
//! - `scatter.svg`: reward gain against distance with per-method fronts.
//!
//! While a sweep runs, finished cells are appended to `cells.jsonl`; a rerun
//! with the same spec skips every cell recorded there as successful.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajedit_core::baselines::{guided_sample, BaselineConfig, Method};
use trajedit_core::control::{edit, EditConfig};
use trajedit_core::field::AnyField;
use trajedit_core::math::distance;
use trajedit_core::pareto::{coverage, pareto_front, ParetoPoint};
use trajedit_core::rewards::Reward;
use trajedit_core::schedule::Schedule;

use crate::config::{FieldSpec, RewardSpec, SourceSpec};
use crate::plots;
use crate::report::FIDELITY_METRIC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMethod {
    Oc,
    Dps,
    Freedom,
    Tfg,
    Ga,
}

impl SweepMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMethod::Oc => "oc",
            SweepMethod::Dps => "dps",
            SweepMethod::Freedom => "freedom",
            SweepMethod::Tfg => "tfg",
            SweepMethod::Ga => "ga",
        }
    }

    pub fn all() -> [SweepMethod; 5] {
        [
            SweepMethod::Oc,
            SweepMethod::Dps,
            SweepMethod::Freedom,
            SweepMethod::Tfg,
            SweepMethod::Ga,
        ]
    }
}

/// Explicit scale values, or `count` log-spaced values from `min` to `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleGrid {
    Values(Vec<f64>),
    LogSpaced {
        min: f64,
        max: f64,
        #[serde(default = "default_count")]
        count: usize,
    },
}

fn default_count() -> usize {
    5
}

impl ScaleGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            ScaleGrid::Values(v) => v.clone(),
            &ScaleGrid::LogSpaced { min, max, count } => {
                ensure!(
                    min > 0.0 && max >= min && max.is_finite(),
                    "log-spaced scales need 0 < min <= max"
                );
                ensure!(count >= 1, "scale count must be at least 1");
                if count == 1 {
                    vec![min]
                } else {
                    let (a, b) = (min.ln(), max.ln());
                    (0..count)
                        .map(|i| {
                            // endpoints exact, not exp(ln(·))
                            if i == 0 {
                                min
                            } else if i + 1 == count {
                                max
                            } else {
                                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                            }
                        })
                        .collect()
                }
            }
        };
        ensure!(!v.is_empty(), "empty scale grid");
        ensure!(
            v.iter().all(|s| s.is_finite() && *s >= 0.0),
            "scales must be finite and non-negative"
        );
        Ok(v)
    }
}

fn one() -> usize {
    1
}

fn default_mu_ratio() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub name: String,
    pub methods: Vec<SweepMethod>,
    /// Per-method scale: `w` for OC, `ρ` for DPS/FreeDoM/TFG, `λ·N` for GA.
    pub scales: BTreeMap<SweepMethod, ScaleGrid>,
    pub field: FieldSpec,
    pub reward: RewardSpec,
    pub sources: SourceSpec,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// OC settings; `reward_weight` and `seed` are set per cell.
    #[serde(default)]
    pub oc: EditConfig,
    /// Guided-sampling and GA settings; `method`, `rho`, `mu`, `ga_lr` and
    /// `seed` are set per cell.
    #[serde(default)]
    pub guided: BaselineConfig,
    /// TFG uses `μ = tfg_mu_ratio · ρ`.
    #[serde(default = "default_mu_ratio")]
    pub tfg_mu_ratio: f64,
}

impl SweepSpec {
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let spec: Self = if json {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text)?
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a `.json` or `.toml` sweep file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading sweep spec {}", path.display()))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::parse(&text, json).with_context(|| format!("parsing sweep spec {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "sweep lists no methods");
        let unique: BTreeSet<_> = self.methods.iter().collect();
        ensure!(
            unique.len() == self.methods.len(),
            "sweep lists a method twice"
        );
        for m in &self.methods {
            self.scales
                .get(m)
                .with_context(|| format!("no scale grid for {}", m.as_str()))?
                .values()
                .with_context(|| format!("scale grid of {}", m.as_str()))?;
        }
        ensure!(self.repetitions >= 1, "repetitions must be at least 1");
        ensure!(
            self.tfg_mu_ratio.is_finite() && self.tfg_mu_ratio >= 0.0,
            "tfg_mu_ratio must be finite and non-negative"
        );
        ensure!(
            self.guided.ga_steps >= 1 || !self.methods.contains(&SweepMethod::Ga),
            "GA needs ga_steps >= 1"
        );
        self.oc.validate().context("OC settings")?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("spec serializes"),
        ))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Position in expansion order.
    pub index: usize,
    pub method: SweepMethod,
    pub scale: f64,
    pub source_id: usize,
    pub rep: usize,
    pub seed: u64,
}

/// Seed of one cell, independent of every other cell.
pub fn cell_seed(
    seed_base: u64,
    method: SweepMethod,
    scale: f64,
    source_id: usize,
    rep: usize,
) -> u64 {
    let key = format!(
        "{seed_base}|{}|{:016x}|{source_id}|{rep}",
        method.as_str(),
        scale.to_bits()
    );
    let h = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("digest is 32 bytes"))
}

/// Cells in expansion order: method, then scale, then source, then rep.
pub fn expand(spec: &SweepSpec, n_sources: usize) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for scale in spec.scales[&method].values()? {
            for source_id in 0..n_sources {
                for rep in 0..spec.repetitions {
                    cells.push(Cell {
                        index: cells.len(),
                        method,
                        scale,
                        source_id,
                        rep,
                        seed: cell_seed(spec.seed_base, method, scale, source_id, rep),
                    });
                }
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub method: String,
    pub scale: f64,
    pub source_id: usize,
    pub rep: usize,
    pub seed: u64,
    /// `ok` or `failed`.
    pub status: String,
    pub reward_before: f64,
    pub reward_after: Option<f64>,
    pub distance: Option<f64>,
    /// PMP iterations (OC), ascent steps (GA) or guided sampling steps.
    pub iterations: usize,
    pub wall_ms: u64,
    pub error: String,
}

impl CellRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn gain(&self) -> Option<f64> {
        self.reward_after.map(|r| r - self.reward_before)
    }
}

/// Everything a cell needs, resolved once per sweep.
pub struct SweepContext<'a> {
    pub spec: &'a SweepSpec,
    pub field: AnyField,
    pub schedule: Schedule,
    pub reward: Reward,
    pub sources: Vec<Vec<f64>>,
}

impl<'a> SweepContext<'a> {
    pub fn resolve(spec: &'a SweepSpec, base: &Path) -> Result<Self> {
        let (field, schedule) = spec.field.resolve(base).context("resolving the field")?;
        let reward = spec.reward.resolve(base).context("resolving the reward")?;
        let sources = spec
            .sources
            .resolve(base)
            .context("resolving the sources")?;
        let d = trajedit_core::field::Field::dim(&field);
        ensure!(
            sources[0].len() == d,
            "sources have dimension {}, field {d}",
            sources[0].len()
        );
        reward.validate(d)?;
        Ok(Self {
            spec,
            field,
            schedule,
            reward,
            sources,
        })
    }

    /// Runs one cell; failures and panics become a `failed` record.
    pub fn run_cell(&self, cell: &Cell, timing: bool) -> CellRecord {
        let x1 = &self.sources[cell.source_id];
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| self.execute(cell, x1)))
            .unwrap_or_else(|_| Err(anyhow::anyhow!("cell panicked")));
        let wall_ms = if timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let mut rec = CellRecord {
            index: cell.index,
            method: cell.method.as_str().into(),
            scale: cell.scale,
            source_id: cell.source_id,
            rep: cell.rep,
            seed: cell.seed,
            status: "ok".into(),
            reward_before: self.reward.value(x1),
            reward_after: None,
            distance: None,
            iterations: 0,
            wall_ms,
            error: String::new(),
        };
        match outcome {
            Ok((edited, iterations)) => {
                rec.reward_after = Some(self.reward.value(&edited));
                rec.distance = Some(distance(&edited, x1));
                rec.iterations = iterations;
            }
            Err(e) => {
                rec.status = "failed".into();
                rec.error = format!("{e:#}");
            }
        }
        rec
    }

    fn execute(&self, cell: &Cell, x1: &[f64]) -> Result<(Vec<f64>, usize)> {
        let spec = self.spec;
        if cell.method == SweepMethod::Oc {
            let config = EditConfig {
                reward_weight: cell.scale,
                seed: cell.seed,
                ..spec.oc.clone()
            };
            let report = edit(&self.field, self.schedule, &self.reward, x1, &config)?;
            return Ok((report.edited().to_vec(), report.records.len()));
        }
        let mut config = BaselineConfig {
            seed: cell.seed,
            mu: 0.0,
            ..spec.guided.clone()
        };
        let iterations = match cell.method {
            SweepMethod::Ga => {
                config.method = Method::Ga;
                config.ga_lr = cell.scale / config.ga_steps as f64;
                config.ga_steps
            }
            m => {
                config.method = match m {
                    SweepMethod::Dps => Method::Dps,
                    SweepMethod::Freedom => Method::FreeDoM,
                    _ => Method::Tfg,
                };
                config.rho = cell.scale;
                if m == SweepMethod::Tfg {
                    config.mu = spec.tfg_mu_ratio * cell.scale;
                }
                let repeats = if m == SweepMethod::Dps {
                    1
                } else {
                    config.n_recur
                };
                config.n_steps * repeats
            }
        };
        let edited = guided_sample(&self.field, self.schedule, &self.reward, x1, &config)?;
        ensure!(
            edited.iter().all(|v| v.is_finite()),
            "non-finite edited sample"
        );
        Ok((edited, iterations))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub spec_hash: String,
    pub total_cells: usize,
    /// Indices of successful cells, ascending.
    pub completed: Vec<usize>,
    /// Indices of failed cells, ascending.
    pub failed: Vec<usize>,
    pub complete: bool,
}

const MANIFEST_FORMAT: &str = "trajedit-sweep-manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSummary {
    pub fidelity_metric: String,
    pub spec_hash: String,
    /// One aggregate per (method, scale) with at least one successful cell,
    /// in expansion order.
    pub points: Vec<ParetoPoint>,
    pub fronts: BTreeMap<String, Vec<ParetoPoint>>,
    /// Fraction of each other method's points matched by an OC point with no
    /// less gain and no more distance.
    pub oc_coverage: BTreeMap<String, f64>,
}

pub struct SweepOptions {
    pub workers: usize,
    /// Record per-cell wall time; off by default so outputs are reproducible.
    pub timing: bool,
    pub plots: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            timing: false,
            plots: true,
        }
    }
}

pub struct SweepOutcome {
    pub records: Vec<CellRecord>,
    pub summary: ParetoSummary,
    pub failures: usize,
    /// Cells taken over from an earlier, interrupted or finished run.
    pub resumed: usize,
}

pub fn cells_path(out: &Path) -> PathBuf {
    out.join("cells.csv")
}

fn journal_path(out: &Path) -> PathBuf {
    out.join("cells.jsonl")
}

fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

pub fn write_cells_csv(records: &[CellRecord], path: &Path) -> Result<()> {
    let mut file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(file, "# fidelity metric: {FIDELITY_METRIC}")?;
    let mut w = csv::Writer::from_writer(file);
    if records.is_empty() {
        w.write_record([
            "index",
            "method",
            "scale",
            "source_id",
            "rep",
            "seed",
            "status",
            "reward_before",
            "reward_after",
            "distance",
            "iterations",
            "wall_ms",
            "error",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<CellRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .map(|rec| rec.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Records from an earlier run with the same spec hash, successful ones only.
fn previous_records(out: &Path, hash: &str, total: usize) -> Result<Vec<CellRecord>> {
    let Ok(text) = fs::read_to_string(manifest_path(out)) else {
        return Ok(Vec::new());
    };
    let manifest: Manifest = serde_json::from_str(&text).context("parsing manifest.json")?;
    if manifest.spec_hash != hash || manifest.total_cells != total {
        log::warn!(
            "{} belongs to a different sweep; starting over",
            out.display()
        );
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    if cells_path(out).exists() {
        records.extend(read_cells_csv(&cells_path(out))?);
    }
    if let Ok(f) = File::open(journal_path(out)) {
        for line in BufReader::new(f).lines() {
            let line = line?;
            // a torn final line from an interrupted run is dropped
            if let Ok(r) = serde_json::from_str::<CellRecord>(&line) {
                records.push(r);
            }
        }
    }
    let mut seen = BTreeSet::new();
    records.retain(|r| r.ok() && r.index < total && seen.insert(r.index));
    Ok(records)
}

fn manifest_for(
    hash: &str,
    total: usize,
    records: &BTreeMap<usize, CellRecord>,
    complete: bool,
) -> Manifest {
    Manifest {
        format: MANIFEST_FORMAT.into(),
        spec_hash: hash.into(),
        total_cells: total,
        completed: records
            .values()
            .filter(|r| r.ok())
            .map(|r| r.index)
            .collect(),
        failed: records
            .values()
            .filter(|r| !r.ok())
            .map(|r| r.index)
            .collect(),
        complete,
    }
}

/// Runs (or resumes) a sweep and writes its outputs to `out`. Relative paths
/// in the spec are resolved against `base`.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &Path,
    out: &Path,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    spec.validate()?;
    ensure!(opts.workers >= 1, "at least one worker is required");
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = SweepContext::resolve(spec, base)?;
    let cells = expand(spec, ctx.sources.len())?;
    let hash = spec.hash();
    let total = cells.len();

    let mut done: BTreeMap<usize, CellRecord> = previous_records(out, &hash, total)?
        .into_iter()
        .map(|r| (r.index, r))
        .collect();
    let resumed = done.len();
    if resumed > 0 {
        log::info!("resuming: {resumed} of {total} cells already done");
    }
    // rewrite the journal so it holds exactly the records carried over
    let mut journal = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(journal_path(out))
        .context("opening the cell journal")?;
    for r in done.values() {
        writeln!(journal, "{}", serde_json::to_string(r)?)?;
    }
    write_json(
        &manifest_for(&hash, total, &done, false),
        &manifest_path(out),
    )?;

    let todo: Vec<Cell> = cells
        .iter()
        .filter(|c| !done.contains_key(&c.index))
        .copied()
        .collect();
    log::info!(
        "sweep {:?}: {} cells to run on {} workers",
        spec.name,
        todo.len(),
        opts.workers
    );
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<CellRecord>();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..opts.workers.min(todo.len().max(1)) {
            let tx = tx.clone();
            let (ctx, todo, next) = (&ctx, &todo, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = todo.get(i) else { break };
                if tx.send(ctx.run_cell(cell, opts.timing)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let step = (todo.len() / 10).max(1);
        for (n, rec) in rx.iter().enumerate() {
            if !rec.ok() {
                log::warn!(
                    "cell {} ({} scale {}) failed: {}",
                    rec.index,
                    rec.method,
                    rec.scale,
                    rec.error
                );
            }
            writeln!(journal, "{}", serde_json::to_string(&rec)?)?;
            done.insert(rec.index, rec);
            if (n + 1) % step == 0 {
                journal.flush()?;
                write_json(
                    &manifest_for(&hash, total, &done, false),
                    &manifest_path(out),
                )?;
                log::info!("{} / {} cells done", n + 1, todo.len());
            }
        }
        Ok(())
    })?;
    ensure!(
        done.len() == total,
        "sweep lost cells: {} of {total} recorded",
        done.len()
    );

    let records: Vec<CellRecord> = done.into_values().collect();
    let summary = summarize(spec, &records, &hash)?;
    write_cells_csv(&records, &cells_path(out))?;
    write_json(&summary, &out.join("pareto.json"))?;
    let map: BTreeMap<usize, CellRecord> = records.iter().map(|r| (r.index, r.clone())).collect();
    write_json(&manifest_for(&hash, total, &map, true), &manifest_path(out))?;
    drop(journal);
    fs::remove_file(journal_path(out)).context("removing the cell journal")?;
    if opts.plots {
        plots::scatter(&summary, &out.join("scatter.svg"))?;
    }
    let failures = records.iter().filter(|r| !r.ok()).count();
    Ok(SweepOutcome {
        records,
        summary,
        failures,
        resumed,
    })
}

/// Aggregates successful cells per (method, scale) in expansion order.
pub fn summarize(spec: &SweepSpec, records: &[CellRecord], hash: &str) -> Result<ParetoSummary> {
    let mut points = Vec::new();
    for &method in &spec.methods {
        for scale in spec.scales[&method].values()? {
            let (gains, dists): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter(|r| {
                    r.ok() && r.method == method.as_str() && r.scale.to_bits() == scale.to_bits()
                })
                .filter_map(|r| Some((r.gain()?, r.distance?)))
                .unzip();
            if gains.is_empty() {
                continue;
            }
            points.push(ParetoPoint::from_cells(
                method.as_str(),
                scale,
                &gains,
                &dists,
            )?);
        }
    }
    let mut fronts = BTreeMap::new();
    for &method in &spec.methods {
        let own: Vec<ParetoPoint> = points
            .iter()
            .filter(|p| p.method == method.as_str())
            .cloned()
            .collect();
        fronts.insert(method.as_str().to_string(), pareto_front(&own));
    }
    let pairs = |m: &str| -> Vec<(f64, f64)> {
        points
            .iter()
            .filter(|p| p.method == m)
            .map(|p| (p.gain_mean, p.distance_mean))
            .collect()
    };
    let mut oc_coverage = BTreeMap::new();
    if spec.methods.contains(&SweepMethod::Oc) {
        let oc = pairs("oc");
        for m in spec.methods.iter().filter(|&&m| m != SweepMethod::Oc) {
            oc_coverage.insert(m.as_str().to_string(), coverage(&oc, &pairs(m.as_str())));
        }
    }
    Ok(ParetoSummary {
        fidelity_metric: FIDELITY_METRIC.into(),
        spec_hash: hash.into(),
        points,
        fronts,
        oc_coverage,
    })
}

/// Loads `pareto.json` from a sweep directory.
pub fn load_summary(path: &Path) -> Result<ParetoSummary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: ParetoSummary =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if s.points.iter().any(|p| p.n == 0) {
        bail!("{} holds an empty aggregate", path.display());
    }
    Ok(s)
}
