//! Certification reports: one record per input plus dataset aggregates, as CSV
//! or JSON. Aggregates are always recomputed on read and must match.

use std::fmt::Write as _;
use std::path::Path;

use polyenv::metrics::{aggregate, Aggregates, CertifiedInput};
use polyenv::{AdversarialBudget, Certificate, InputBox, Norm, Phase, Propagator};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`, expected csv or json")),
        }
    }

    /// JSON for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRecord {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    pub radius: f64,
    pub phase: Phase,
    /// `d_ic` per class; `None` at the label's own position.
    pub distances: Vec<Option<f64>>,
    /// Misclassified cleanly or by the attack; `None` when no attack ran.
    pub pgd: Option<bool>,
}

impl CertifiedInput for ReportRecord {
    fn misclassified(&self) -> bool {
        self.prediction != self.label
    }
    fn phase(&self) -> Phase {
        self.phase
    }
    fn radius(&self) -> f64 {
        self.radius
    }
}

impl ReportRecord {
    pub fn from_certificate(cert: &Certificate, pgd: Option<bool>) -> Self {
        ReportRecord {
            index: cert.index,
            label: cert.label,
            prediction: cert.prediction,
            radius: cert.radius,
            phase: cert.phase,
            distances: cert
                .class_distances
                .iter()
                .enumerate()
                .map(|(i, &d)| (i != cert.label).then_some(d))
                .collect(),
            pgd,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub norm: Norm,
    pub epsilon: f64,
    pub bounds: Option<InputBox>,
    pub propagator: Propagator,
    pub aggregates: Aggregates,
    pub records: Vec<ReportRecord>,
}

impl Report {
    /// `pgd` must have one flag per certificate when present.
    pub fn new(certs: &[Certificate], budget: &AdversarialBudget, propagator: Propagator, pgd: Option<&[bool]>) -> Self {
        let records: Vec<ReportRecord> = certs
            .iter()
            .enumerate()
            .map(|(i, c)| ReportRecord::from_certificate(c, pgd.map(|f| f[i])))
            .collect();
        let mut report = Report {
            norm: budget.norm,
            epsilon: budget.epsilon,
            bounds: budget.bounds,
            propagator,
            aggregates: Aggregates::default(),
            records,
        };
        report.aggregates = report.recompute();
        report
    }

    pub fn recompute(&self) -> Aggregates {
        let flags: Option<Vec<bool>> = self.records.iter().map(|r| r.pgd).collect();
        aggregate(&self.records, flags.as_deref())
    }

    /// Stored aggregates must equal the recomputation exactly.
    pub fn verify(&self) -> Result<()> {
        let fresh = self.recompute();
        let fields = [
            ("clean_error", self.aggregates.clean_error, fresh.clean_error),
            ("pgd_error", self.aggregates.pgd_error, fresh.pgd_error),
            ("certified_error", self.aggregates.certified_error, fresh.certified_error),
            ("average_bound", self.aggregates.average_bound, fresh.average_bound),
        ];
        for (field, stored, recomputed) in fields {
            if stored != recomputed {
                return Err(CliError::Field {
                    field: field.into(),
                    message: format!("stored {} but records give {}", show(stored), show(recomputed)),
                });
            }
        }
        Ok(())
    }

    pub fn phase_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            counts[match r.phase {
                Phase::Full => 0,
                Phase::Partial => 1,
                Phase::None => 2,
            }] += 1;
        }
        counts
    }
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "null".into(), |v| v.to_string())
}

fn field_err(field: &str, message: impl Into<String>) -> CliError {
    CliError::Field {
        field: field.into(),
        message: message.into(),
    }
}

const CSV_HEADER: [&str; 7] = ["index", "label", "prediction", "radius", "phase", "distances", "pgd"];

pub fn to_csv(report: &Report) -> Result<String> {
    let mut out = String::new();
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let bounds = report.bounds.map_or("none".to_string(), |b| format!("{},{}", b.min, b.max));
    let meta = [
        ("norm", report.norm.name().to_string()),
        ("epsilon", report.epsilon.to_string()),
        ("box", bounds),
        ("propagator", report.propagator.name().to_string()),
        ("clean_error", opt(report.aggregates.clean_error)),
        ("pgd_error", opt(report.aggregates.pgd_error)),
        ("certified_error", opt(report.aggregates.certified_error)),
        ("average_bound", opt(report.aggregates.average_bound)),
    ];
    for (k, v) in meta {
        writeln!(out, "# {k}: {v}").unwrap();
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| field_err("records", e.to_string());
    writer.write_record(CSV_HEADER).map_err(io)?;
    for r in &report.records {
        let distances = r
            .distances
            .iter()
            .map(|d| d.map_or(String::new(), |v| v.to_string()))
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([
                r.index.to_string(),
                r.label.to_string(),
                r.prediction.to_string(),
                r.radius.to_string(),
                r.phase.name().to_string(),
                distances,
                r.pgd.map_or(String::new(), |f| f.to_string()),
            ])
            .map_err(io)?;
    }
    let bytes = writer.into_inner().map_err(|e| field_err("records", e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| field_err(field, format!("`{s}` is not a number")))
}

fn parse_opt_f64(field: &str, s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s == "null" {
        Ok(None)
    } else {
        parse_f64(field, s).map(Some)
    }
}

fn parse_box(s: &str) -> Result<Option<InputBox>> {
    if s.trim() == "none" {
        return Ok(None);
    }
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(field_err("box", format!("expected `lo,hi` or `none`, got `{s}`")));
    }
    let b = InputBox::new(parse_f64("box", parts[0])?, parse_f64("box", parts[1])?)
        .map_err(|e| field_err("box", e.to_string()))?;
    Ok(Some(b))
}

pub fn from_csv(text: &str) -> Result<Report> {
    let mut meta = std::collections::HashMap::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let get = |k: &str| meta.get(k).map(String::as_str).ok_or_else(|| field_err(k, "missing"));
    let norm = Norm::parse(get("norm")?).map_err(|e| field_err("norm", e.to_string()))?;
    let epsilon = parse_f64("epsilon", get("epsilon")?)?;
    let bounds = parse_box(get("box")?)?;
    let propagator = Propagator::parse(get("propagator")?).map_err(|e| field_err("propagator", e.to_string()))?;
    let aggregates = Aggregates {
        clean_error: parse_opt_f64("clean_error", get("clean_error")?)?,
        pgd_error: parse_opt_f64("pgd_error", get("pgd_error")?)?,
        certified_error: parse_opt_f64("certified_error", get("certified_error")?)?,
        average_bound: parse_opt_f64("average_bound", get("average_bound")?)?,
    };

    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| field_err("header", e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(field_err("header", format!("expected `{}`", CSV_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| field_err("records", format!("row {row}: {e}")))?;
        let at = |i: usize| rec.get(i).unwrap_or("");
        let uint = |i: usize| {
            at(i).parse::<usize>().map_err(|_| field_err(CSV_HEADER[i], format!("row {row}: `{}` is not an index", at(i))))
        };
        let distances = if at(5).is_empty() {
            Vec::new()
        } else {
            at(5).split(';').map(|d| parse_opt_f64("distances", d)).collect::<Result<Vec<_>>>()?
        };
        let pgd = match at(6) {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(field_err("pgd", format!("row {row}: `{other}` is not true/false"))),
        };
        records.push(ReportRecord {
            index: uint(0)?,
            label: uint(1)?,
            prediction: uint(2)?,
            radius: parse_f64("radius", at(3))?,
            phase: Phase::parse(at(4)).map_err(|e| field_err("phase", format!("row {row}: {e}")))?,
            distances,
            pgd,
        });
    }
    Ok(Report {
        norm,
        epsilon,
        bounds,
        propagator,
        aggregates,
        records,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    index: usize,
    label: usize,
    prediction: usize,
    radius: f64,
    phase: Phase,
    /// Numbers, `"inf"` for unreachable hyperplanes, `null` at the label.
    distances: Vec<Value>,
    pgd: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonReport {
    norm: Norm,
    epsilon: f64,
    #[serde(rename = "box")]
    bounds: Option<[f64; 2]>,
    propagator: Propagator,
    aggregates: Aggregates,
    records: Vec<JsonRecord>,
}

fn distance_to_json(d: Option<f64>) -> Value {
    match d {
        None => Value::Null,
        Some(v) if v.is_finite() => Value::from(v),
        Some(v) if v > 0.0 => Value::from("inf"),
        Some(_) => Value::from("-inf"),
    }
}

fn distance_from_json(v: &Value) -> Result<Option<f64>> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => Ok(n.as_f64()),
        Value::String(s) if s == "inf" => Ok(Some(f64::INFINITY)),
        Value::String(s) if s == "-inf" => Ok(Some(f64::NEG_INFINITY)),
        other => Err(field_err("distances", format!("unexpected entry {other}"))),
    }
}

pub fn to_json(report: &Report) -> Result<String> {
    let json = JsonReport {
        norm: report.norm,
        epsilon: report.epsilon,
        bounds: report.bounds.map(|b| [b.min, b.max]),
        propagator: report.propagator,
        aggregates: report.aggregates,
        records: report
            .records
            .iter()
            .map(|r| JsonRecord {
                index: r.index,
                label: r.label,
                prediction: r.prediction,
                radius: r.radius,
                phase: r.phase,
                distances: r.distances.iter().map(|&d| distance_to_json(d)).collect(),
                pgd: r.pgd,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&json).map_err(|e| field_err("report", e.to_string()))
}

pub fn from_json(text: &str) -> Result<Report> {
    let json: JsonReport = serde_json::from_str(text).map_err(|e| field_err("report", e.to_string()))?;
    let bounds = match json.bounds {
        None => None,
        Some([lo, hi]) => Some(InputBox::new(lo, hi).map_err(|e| field_err("box", e.to_string()))?),
    };
    let records = json
        .records
        .into_iter()
        .map(|r| {
            Ok(ReportRecord {
                index: r.index,
                label: r.label,
                prediction: r.prediction,
                radius: r.radius,
                phase: r.phase,
                distances: r.distances.iter().map(distance_from_json).collect::<Result<_>>()?,
                pgd: r.pgd,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Report {
        norm: json.norm,
        epsilon: json.epsilon,
        bounds,
        propagator: json.propagator,
        aggregates: json.aggregates,
        records,
    })
}

pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(report),
        Format::Json => to_json(report),
    }
}

pub fn parse(text: &str, format: Format) -> Result<Report> {
    let report = match format {
        Format::Csv => from_csv(text)?,
        Format::Json => from_json(text)?,
    };
    report.verify()?;
    Ok(report)
}

pub fn write_report(report: &Report, path: &Path, format: Format) -> Result<()> {
    let text = render(report, format)?;
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and verifies a report; the format follows the extension.
pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, Format::from_path(path))
}
