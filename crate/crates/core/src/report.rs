//! Metrics files and their aggregation into plot data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::StrategyKind;
use crate::error::{Error, Result};

/// One evaluation point of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub strategy: String,
    pub variant: String,
    pub seed: u64,
    pub round: usize,
    pub annotated_count: usize,
    /// Purity of all annotations so far; NaN before the first annotation.
    pub purity_cum: f64,
    pub acc_target_test: f64,
    pub acc_source: f64,
    /// Mean SAGE norm over the candidate pool at selection time.
    pub sage_mean_norm: f64,
    pub config_hash: String,
    /// Pool indices annotated in this round, `;`-separated.
    pub selected: String,
}

/// Per-round mean and population standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub strategy: String,
    pub variant: String,
    pub round: usize,
    pub n: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Name under which the left-shifted AADA curve is reported.
pub const AADA_SHIFTED: &str = "aada++";

pub fn write_csv_rows<S: Serialize>(w: impl Write, rows: &[S]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_csv_file<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_rows(&mut buf, rows)?;
    write_atomic(path, &buf)
}

/// Parses a metrics CSV. Every malformed row is reported, with its line number.
pub fn read_metrics(r: impl Read, source: &str) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for rec in rdr.deserialize::<MetricsRow>() {
        match rec {
            Ok(row) => rows.push(row),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                bad.push(line);
            }
        }
    }
    if !bad.is_empty() {
        let lines = bad.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        return Err(Error::parse(source, format!("malformed metrics rows at lines {lines}")));
    }
    Ok(rows)
}

pub fn read_metrics_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_metrics(std::io::BufReader::new(f), &path.display().to_string())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups rows by `(config_hash, round)`; rows of different configs are never merged.
///
/// Output order: configs in order of first appearance, rounds ascending.
pub fn summarize(rows: &[MetricsRow]) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), (String, String, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let ci = match order.iter().position(|h| *h == r.config_hash) {
            Some(i) => i,
            None => {
                order.push(&r.config_hash);
                order.len() - 1
            }
        };
        let g = groups
            .entry((ci, r.round))
            .or_insert_with(|| (r.strategy.clone(), r.variant.clone(), Vec::new()));
        if g.0 != r.strategy || g.1 != r.variant {
            return Err(Error::contract(format!(
                "config {} mixes cells {}/{} and {}/{}",
                r.config_hash, g.0, g.1, r.strategy, r.variant
            )));
        }
        g.2.push(r.acc_target_test);
    }
    Ok(groups
        .into_iter()
        .map(|((ci, round), (strategy, variant, accs))| {
            let (mean_acc, std_acc) = mean_std(&accs);
            SummaryRow {
                config_hash: order[ci].to_string(),
                strategy,
                variant,
                round,
                n: accs.len(),
                mean_acc,
                std_acc,
            }
        })
        .collect())
}

/// Shifts an AADA curve left until its first point beats `uda_acc`.
///
/// Returns the shifted rows renamed to [`AADA_SHIFTED`]; empty if no round of
/// the curve beats the baseline.
pub fn aada_plus_plus(curve: &[SummaryRow], uda_acc: f64) -> Vec<SummaryRow> {
    let Some(start) = curve.iter().position(|r| r.mean_acc > uda_acc) else {
        return Vec::new();
    };
    let shift = curve[start].round;
    curve[start..]
        .iter()
        .map(|r| SummaryRow {
            strategy: AADA_SHIFTED.to_string(),
            round: r.round - shift,
            ..r.clone()
        })
        .collect()
}

/// Summary plus an AADA++ curve for every AADA config, shifted against the
/// mean round-0 accuracy of the non-AADA cells (the UDA baseline).
pub fn plotdata(rows: &[MetricsRow]) -> Result<Vec<SummaryRow>> {
    let mut summary = summarize(rows)?;
    let aada = StrategyKind::Aada.name();
    let uda: Vec<f64> = summary
        .iter()
        .filter(|r| r.round == 0 && r.strategy != aada)
        .map(|r| r.mean_acc)
        .collect();
    if uda.is_empty() {
        return Ok(summary);
    }
    let uda_acc = mean_std(&uda).0;
    let mut hashes: Vec<String> = summary.iter().filter(|r| r.strategy == aada).map(|r| r.config_hash.clone()).collect();
    hashes.dedup();
    for h in hashes {
        let curve: Vec<SummaryRow> = summary.iter().filter(|r| r.config_hash == h).cloned().collect();
        summary.extend(aada_plus_plus(&curve, uda_acc));
    }
    Ok(summary)
}

/// Reads a metrics CSV and writes the long-format plot table.
pub fn emit_plotdata(input: &Path, output: &Path) -> Result<Vec<SummaryRow>> {
    let rows = read_metrics_file(input)?;
    let out = plotdata(&rows)?;
    write_csv_file(output, &out)?;
    Ok(out)
}
