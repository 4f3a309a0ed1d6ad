use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{MetricRow, MetricsReport};
use crate::causal::EstimationMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

const HEADER: [&str; 15] = [
    "scenario", "truth", "reps", "data", "method", "mode", "bias", "emp_se", "mean_se", "mse", "coverage", "n_ok",
    "failures", "ridge", "bias_diff",
];

fn comments<W: Write>(w: &mut W, provenance: &[String]) -> Result<()> {
    for line in provenance {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Long-format CSV, one line per (scenario, estimator). Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: Write>(mut w: W, reports: &[MetricsReport], provenance: &[String]) -> Result<()> {
    comments(&mut w, provenance)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for r in reports {
        for row in &r.rows {
            out.write_record([
                r.scenario.clone(),
                format!("{}", r.truth),
                r.reps.to_string(),
                row.data.clone(),
                row.method.clone(),
                row.mode.to_string(),
                format!("{}", row.bias),
                format!("{}", row.emp_se),
                format!("{}", row.mean_se),
                format!("{}", row.mse),
                format!("{}", row.coverage),
                row.n_ok.to_string(),
                row.failures.to_string(),
                row.ridge.to_string(),
                row.bias_diff.map(|v| format!("{v}")).unwrap_or_default(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        row: line,
        column: HEADER[k].to_string(),
        message: format!("cannot parse `{}`", rec.get(k).unwrap_or("")),
    })
}

/// Reads reports written by [`write_csv`], grouped by scenario in file order.
pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Schema("unexpected report header".into()));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let scenario = rec.get(0).unwrap_or("").to_string();
        let truth: f64 = field(&rec, 1, line)?;
        let reps: usize = field(&rec, 2, line)?;
        let mode: EstimationMode = rec.get(5).unwrap_or("").parse()?;
        let bias_diff = match rec.get(14) {
            Some("") | None => None,
            Some(_) => Some(field(&rec, 14, line)?),
        };
        let row = MetricRow {
            data: rec.get(3).unwrap_or("").to_string(),
            method: rec.get(4).unwrap_or("").to_string(),
            mode,
            bias: field(&rec, 6, line)?,
            emp_se: field(&rec, 7, line)?,
            mean_se: field(&rec, 8, line)?,
            mse: field(&rec, 9, line)?,
            coverage: field(&rec, 10, line)?,
            n_ok: field(&rec, 11, line)?,
            failures: field(&rec, 12, line)?,
            ridge: field(&rec, 13, line)?,
            bias_diff,
        };
        match reports.last_mut() {
            Some(last) if last.scenario == scenario => last.rows.push(row),
            _ => reports.push(MetricsReport {
                scenario,
                truth,
                reps,
                rows: vec![row],
            }),
        }
    }
    Ok(reports)
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.3}"),
        _ => "NA".into(),
    }
}

/// Table with one column per scenario and blocks of rows per metric.
pub fn write_markdown<W: Write>(mut w: W, reports: &[MetricsReport], provenance: &[String]) -> Result<()> {
    for line in provenance {
        writeln!(w, "<!-- {line} -->")?;
    }
    let mut keys: Vec<(String, String, EstimationMode)> = Vec::new();
    for r in reports {
        for row in &r.rows {
            let k = (row.data.clone(), row.method.clone(), row.mode);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let mixed_modes = keys.iter().any(|k| k.2 != keys[0].2);
    write!(w, "| Metric | Data | Method |")?;
    for r in reports {
        write!(w, " {} |", r.scenario)?;
    }
    writeln!(w)?;
    write!(w, "|---|---|---|")?;
    for _ in reports {
        write!(w, "---:|")?;
    }
    writeln!(w)?;
    type Getter = fn(&MetricRow) -> Option<f64>;
    let mut blocks: Vec<(&str, Getter)> = vec![
        ("Bias", |r| Some(r.bias)),
        ("Empirical SE", |r| Some(r.emp_se)),
        ("Mean SE-hat", |r| Some(r.mean_se)),
        ("MSE", |r| Some(r.mse)),
        ("90%CI coverage", |r| Some(r.coverage)),
    ];
    if reports.iter().any(|r| r.rows.iter().any(|x| x.bias_diff.is_some())) {
        blocks.push(("Bias dif.", |r| r.bias_diff));
    }
    for (name, get) in blocks {
        for (i, (data, method, mode)) in keys.iter().enumerate() {
            let first_of_data = i == 0 || keys[i - 1].0 != *data;
            let label = if mixed_modes {
                format!("{method} ({mode})")
            } else {
                method.clone()
            };
            write!(
                w,
                "| {} | {} | {} |",
                if i == 0 { name } else { "" },
                if first_of_data { data.as_str() } else { "" },
                label
            )?;
            for r in reports {
                let v = r.row(data, method, *mode).and_then(get);
                write!(w, " {} |", cell(v))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes `reports` to `dir/<stem>.csv` or `dir/<stem>.md`.
pub fn emit_report(
    reports: &[MetricsReport],
    format: ReportFormat,
    dir: &Path,
    stem: &str,
    provenance: &[String],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(match format {
        ReportFormat::Csv => format!("{stem}.csv"),
        ReportFormat::Markdown => format!("{stem}.md"),
    });
    let mut w = BufWriter::new(File::create(&path)?);
    match format {
        ReportFormat::Csv => write_csv(&mut w, reports, provenance)?,
        ReportFormat::Markdown => write_markdown(&mut w, reports, provenance)?,
    }
    w.flush()?;
    Ok(path)
}
