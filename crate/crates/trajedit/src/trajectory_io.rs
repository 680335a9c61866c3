//! Trajectory dump: a `#` header with the grid parameters, then one CSV row
//! per grid point `(t, x_1..x_d, B_1..B_d)`. `B_k` is the residual of the
//! interval starting at `t_k`, so the last row leaves the `B` cells empty.
//!
//! Numbers are written in shortest round-trip form; reading a dump gives back
//! the same trajectory bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use trajedit_core::dynamics::Trajectory;
use trajedit_core::schedule::{Mode, TimeGrid};

const MAGIC: &str = "# trajedit-trajectory v1";

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn to_string(traj: &Trajectory) -> String {
    let d = traj.dim();
    let g = &traj.grid;
    let mut s = String::new();
    let seed = traj
        .seed
        .map_or_else(|| "none".to_string(), |v| v.to_string());
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(
        s,
        "# d={d} n={} mode={} t_start={} t_min={} dt={} seed={seed} source={}",
        g.n_steps(),
        traj.mode.as_str(),
        g.t_start(),
        g.t_min(),
        g.dt(),
        join(&traj.source)
    )
    .unwrap();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend((0..d).map(|i| format!("b{i}")));
    writeln!(s, "{}", header.join(",")).unwrap();
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![g.time(k).to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        match traj.residuals.get(k) {
            Some(b) => row.extend(b.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat(String::new()).take(d)),
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

pub fn write(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, to_string(traj))
        .with_context(|| format!("writing trajectory {}", path.display()))
}

pub fn read(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading trajectory {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing trajectory {}", path.display()))
}

pub fn parse(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some(MAGIC), "missing trajectory header");
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .context("missing grid line")?;
    let field = |key: &str| -> Result<&str> {
        meta.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .with_context(|| format!("header lacks {key}"))
    };
    let d: usize = field("d")?.parse()?;
    let n: usize = field("n")?.parse()?;
    let mode = match field("mode")? {
        "deterministic" => Mode::Deterministic,
        "markovian" => Mode::Markovian,
        m => bail!("unknown mode {m:?}"),
    };
    let grid = TimeGrid::new(field("t_start")?.parse()?, n, field("t_min")?.parse()?)?;
    let seed = match field("seed")? {
        "none" => None,
        s => Some(s.parse()?),
    };
    let source: Vec<f64> = field("source")?
        .split(';')
        .map(|v| v.parse::<f64>())
        .collect::<Result<_, _>>()?;

    let rest: String = lines.collect::<Vec<_>>().join("\n");
    let mut reader = csv::ReaderBuilder::new().from_reader(rest.as_bytes());
    let mut states = Vec::with_capacity(n + 1);
    let mut residuals = Vec::with_capacity(n);
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        ensure!(
            rec.len() == 1 + 2 * d,
            "row {k} has {} cells, expected {}",
            rec.len(),
            1 + 2 * d
        );
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .with_context(|| format!("row {k} cell {i}"))
        };
        let t = num(0)?;
        ensure!(
            k <= n && (t - grid.time(k)).abs() <= 1e-12,
            "row {k}: time {t} is off the grid"
        );
        states.push((1..=d).map(num).collect::<Result<Vec<_>>>()?);
        if k < n {
            residuals.push((d + 1..=2 * d).map(num).collect::<Result<Vec<_>>>()?);
        } else {
            ensure!(
                rec.iter().skip(d + 1).all(str::is_empty),
                "last row must not carry residuals"
            );
        }
    }
    let traj = Trajectory {
        grid,
        states,
        residuals,
        mode,
        source,
        seed,
    };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trajedit_core::dynamics::{make_markovian, MarkovOptions, Sampler};
    use trajedit_core::field::{AnalyticMixtureField, FieldKind, GaussianMixture};
    use trajedit_core::schedule::{AlphaBar, Schedule};

    #[test]
    fn round_trip_is_exact() {
        let f = AnalyticMixtureField::new(
            FieldKind::FlowVelocity,
            GaussianMixture::ring(4, 1.0, 0.1).unwrap(),
            AlphaBar::Cosine,
        );
        let s = Sampler::new(
            &f,
            Schedule::for_kind(FieldKind::FlowVelocity, AlphaBar::Cosine),
            TimeGrid::new(0.3, 9, 1e-3).unwrap(),
            Mode::Markovian,
        )
        .unwrap();
        let t = make_markovian(&s, &[0.3, -1.0 / 3.0], 17, MarkovOptions::default()).unwrap();
        let back = parse(&to_string(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_malformed_dumps() {
        assert!(parse("t,x0\n0,1\n").is_err());
        let bad = format!("{MAGIC}\n# d=1 n=1 mode=deterministic t_start=0.5 t_min=0.001 dt=0.5 seed=none source=1\nt,x0,b0\n0.5,1,0\n0.9,1,\n");
        assert!(parse(&bad).is_err());
    }
}
