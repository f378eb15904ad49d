//! Report rendering.
//!
//! JSON is the serialized [`MetricsReport`]. Markdown holds a model
//! comparison table (one row per report), a per-class precision/recall table,
//! leakage and the confusion grid of the first report. Count series go to
//! CSV sidecars; no figures are drawn.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use bombus_core::eval::{CountSeries, MetricsReport, Ratio, REPORT_SCHEMA_VERSION};

use crate::artifact::to_json;
use crate::interchange::write_series;
use crate::{read_string, Error, Result};

pub const SERIES_FILES: [&str; 3] = ["fp_vs_count.csv", "recall_vs_count.csv", "precision_vs_count.csv"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::UnknownFormat(other.into())),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    /// Leave the negative class out of the per-class table.
    pub exclude_negative: bool,
}

/// A report with the name it is shown under.
#[derive(Debug, Clone)]
pub struct NamedReport {
    pub name: String,
    pub report: MetricsReport,
}

/// Render one or more reports. JSON output is the bare report when there is
/// one, otherwise an object keyed by name.
pub fn render_report(reports: &[NamedReport], format: ReportFormat, options: RenderOptions) -> Result<String> {
    let first = reports.first().ok_or(bombus_core::Error::EmptyInput)?;
    match format {
        ReportFormat::Json if reports.len() == 1 => Ok(to_json(&first.report)),
        ReportFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|r| (r.name.clone(), serde_json::to_value(&r.report).expect("report serializes")))
                .collect();
            Ok(to_json(&map))
        }
        ReportFormat::Markdown => Ok(markdown(reports, options)),
    }
}

/// Parse and check a report JSON document.
pub fn parse_report(text: &str) -> Result<MetricsReport> {
    let r: MetricsReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
    let bad = |m: String| Err(Error::Report(m));
    if r.schema_version != REPORT_SCHEMA_VERSION {
        return bad(format!("schema_version {} != {REPORT_SCHEMA_VERSION}", r.schema_version));
    }
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if !unit(r.top1_accuracy) || !unit(r.top3_accuracy) || !r.accuracy_at_k.values().all(|&v| unit(v)) {
        return bad("accuracy outside [0, 1]".into());
    }
    if r.per_class.iter().map(|c| c.support).sum::<u64>() != r.evaluated || r.confusion.total() != r.evaluated {
        return bad("supports do not sum to the evaluated count".into());
    }
    if r.per_class.iter().any(|c| !unit(c.precision.value) || !unit(c.recall.value)) {
        return bad("precision or recall outside [0, 1]".into());
    }
    if r.per_class.len() != r.confusion.catalog().len() {
        return bad("per_class does not cover the catalog".into());
    }
    Ok(r)
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    parse_report(&read_string(path)?).map_err(|e| match e {
        Error::Report(m) => Error::Report(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write `fp_vs_count.csv`, `recall_vs_count.csv` and `precision_vs_count.csv`.
pub fn write_series_files(dir: &Path, series: &CountSeries) -> Result<()> {
    write_series(&dir.join(SERIES_FILES[0]), &series.false_positives)?;
    write_series(&dir.join(SERIES_FILES[1]), &series.recall)?;
    write_series(&dir.join(SERIES_FILES[2]), &series.precision)
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn ratio(r: &Ratio) -> String {
    if r.undefined {
        format!("{} (undefined)", pct(r.value))
    } else {
        pct(r.value)
    }
}

fn markdown(reports: &[NamedReport], options: RenderOptions) -> String {
    let mut s = String::from("# Evaluation report\n\n## Model comparison\n\n");
    let extra: BTreeSet<usize> =
        reports.iter().flat_map(|r| r.report.accuracy_at_k.keys().copied()).filter(|k| *k != 1 && *k != 3).collect();
    s.push_str("| Model | Images | Top-1 | Top-3 |");
    for k in &extra {
        let _ = write!(s, " Top-{k} |");
    }
    s.push_str("\n|---|---:|---:|---:|");
    for _ in &extra {
        s.push_str("---:|");
    }
    s.push('\n');
    for r in reports {
        let m = &r.report;
        let _ = write!(s, "| {} | {} | {} | {} |", r.name, m.evaluated, pct(m.top1_accuracy), pct(m.top3_accuracy));
        for k in &extra {
            let cell = m.accuracy_at_k.get(k).map_or_else(|| "-".to_string(), |v| pct(*v));
            let _ = write!(s, " {cell} |");
        }
        s.push('\n');
    }

    let first = &reports[0];
    let m = &first.report;
    let negative = m.confusion.catalog().negative_label();
    let _ = write!(s, "\n## Per-class results: {}\n\n", first.name);
    s.push_str("| Label | Train images | Support | Precision | Recall | False positives |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|\n");
    for c in &m.per_class {
        if options.exclude_negative && Some(c.label.as_str()) == negative {
            continue;
        }
        let train = c.train_count.map_or_else(|| "-".to_string(), |n| n.to_string());
        let _ = writeln!(
            s,
            "| {} | {train} | {} | {} | {} | {} |",
            c.label,
            c.support,
            ratio(&c.precision),
            ratio(&c.recall),
            c.false_positives
        );
    }

    if let (Some(l), Some(neg)) = (&m.leakage, negative) {
        let _ = write!(
            s,
            "\n## Leakage\n\n{} of {} target images ({}) predicted as {neg}.\n",
            l.count,
            l.target_total,
            pct(l.fraction)
        );
    }

    if let Some(series) = &m.series {
        let t = &series.summary;
        let _ = write!(
            s,
            "\n## Training-count threshold\n\n| Bucket | Classes | False positives |\n|---|---:|---:|\n\
             | train count < {} | {} | {} |\n| train count >= {} | {} | {} |\n",
            t.threshold,
            t.below.len(),
            t.false_positives_below,
            t.threshold,
            t.at_or_above.len(),
            t.false_positives_at_or_above
        );
    }

    s.push_str("\n## Confusion matrix\n\nRows are actual classes, columns predicted.\n\n| actual \\ predicted |");
    let labels = m.confusion.catalog().labels();
    for l in labels {
        let _ = write!(s, " {l} |");
    }
    s.push_str("\n|---|");
    for _ in labels {
        s.push_str("---:|");
    }
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        let _ = write!(s, "| {l} |");
        for j in 0..labels.len() {
            let _ = write!(s, " {} |", m.confusion.get(i, j));
        }
        s.push('\n');
    }
    s
}
