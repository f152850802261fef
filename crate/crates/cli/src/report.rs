//! Long-format run tables and their per-group percentiles.
//!
//! Percentiles interpolate linearly between order statistics: for `n` sorted
//! values the `q` quantile sits at position `(n − 1)·q`. Diverged rows are
//! counted but never enter the statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: String,
    pub test_record: String,
    pub run: usize,
    pub seed: u64,
    /// Empty for diverged rows.
    pub rmse: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scheme: String,
    pub test_record: String,
    pub runs: usize,
    pub diverged: usize,
    pub median: Option<f64>,
    pub p10: Option<f64>,
    pub p90: Option<f64>,
}

/// `q`-quantile of ascending `sorted` values, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Per `(scheme, test_record)` statistics, groups in order of first
/// appearance.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.scheme.clone(), r.test_record.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let mut ok: Vec<f64> = g.iter().filter(|r| !r.diverged).filter_map(|r| r.rmse).collect();
            ok.sort_by(f64::total_cmp);
            let stat = |q: f64| (!ok.is_empty()).then(|| percentile(&ok, q));
            AggregateRow {
                runs: g.len(),
                diverged: g.iter().filter(|r| r.diverged).count(),
                median: stat(0.5),
                p10: stat(0.1),
                p90: stat(0.9),
                scheme: key.0,
                test_record: key.1,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> anyhow::Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        Ok(Some(s.parse().with_context(|| format!("{s:?} is not a number"))?))
    }
}

pub fn write_runs_csv<W: Write>(rows: &[RunRow], w: W) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "test_record", "run", "seed", "rmse", "diverged"])?;
    for r in rows {
        out.write_record([
            r.scheme.clone(),
            r.test_record.clone(),
            r.run.to_string(),
            r.seed.to_string(),
            fmt_opt(r.rmse),
            r.diverged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_runs_csv<R: Read>(r: R) -> anyhow::Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["scheme", "test_record", "run", "seed", "rmse", "diverged"] {
        bail!("unexpected run table header {header:?}");
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = (|| -> anyhow::Result<RunRow> {
            Ok(RunRow {
                scheme: rec[0].to_string(),
                test_record: rec[1].to_string(),
                run: rec[2].parse()?,
                seed: rec[3].parse()?,
                rmse: parse_opt(&rec[4])?,
                diverged: rec[5].parse()?,
            })
        })()
        .with_context(|| format!("line {line}"))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_runs_file(path: &Path) -> anyhow::Result<Vec<RunRow>> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_runs_csv(f).with_context(|| format!("reading {}", path.display()))
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], w: W) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scheme", "test_record", "runs", "diverged", "median", "p10", "p90"])?;
    for r in rows {
        out.write_record([
            r.scheme.clone(),
            r.test_record.clone(),
            r.runs.to_string(),
            r.diverged.to_string(),
            fmt_opt(r.median),
            fmt_opt(r.p10),
            fmt_opt(r.p90),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Pool several run tables. Every table must cover the same set of test
/// records.
pub fn summarize(tables: &[Vec<RunRow>]) -> anyhow::Result<(Vec<RunRow>, Vec<AggregateRow>)> {
    if tables.is_empty() {
        bail!("nothing to summarize");
    }
    let records = |t: &[RunRow]| t.iter().map(|r| r.test_record.clone()).collect::<BTreeSet<_>>();
    let first = records(&tables[0]);
    for (i, t) in tables.iter().enumerate().skip(1) {
        let other = records(t);
        if other != first {
            bail!("table {} has test records {other:?}, the first has {first:?}", i + 1);
        }
    }
    let all: Vec<RunRow> = tables.iter().flatten().cloned().collect();
    let agg = aggregate(&all);
    Ok((all, agg))
}
