//! Dataset CSV and model file reading and writing.
//!
//! Datasets are CSV with header `status,x0,x1,...,xn`. `status` is 1 for an
//! observed record (x0 is the class) and 0 for a censored one (x0 is the
//! censoring threshold). The model file layout is documented in
//! `docs/model-format.md`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::likelihood::{Dataset, Observation, Status};
use crate::model::{ModelSpec, ParameterPoint};

pub const MODEL_FORMAT: &str = "nbcensor-model";
pub const MODEL_VERSION: i64 = 1;
/// Simplex tolerance applied when loading a model from text.
pub const LOAD_SIMPLEX_TOL: f64 = 1e-9;
const CHECKSUM_HEADER: &str = "[checksum]";

fn parse_err(line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn expected_header(spec: &ModelSpec) -> Vec<String> {
    ["status".to_string()]
        .into_iter()
        .chain((0..=spec.n()).map(|i| format!("x{i}")))
        .collect()
}

pub fn parse_dataset<R: Read>(input: R, spec: &ModelSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = expected_header(spec);
    let width = header.len();
    let mut records = Vec::new();
    let mut seen_header = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, 0, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if !seen_header {
            let got: Vec<&str> = row.iter().collect();
            if got != header {
                return Err(parse_err(
                    line,
                    1,
                    format!(
                        "expected header '{}', found '{}'",
                        header.join(","),
                        got.join(",")
                    ),
                ));
            }
            seen_header = true;
            continue;
        }
        if row.len() != width {
            return Err(parse_err(
                line,
                row.len().min(width) + 1,
                format!("expected {width} fields, found {}", row.len()),
            ));
        }
        let field = |col: usize| -> Result<i64> {
            row[col]
                .parse::<i64>()
                .map_err(|_| parse_err(line, col + 1, format!("'{}' is not an integer", &row[col])))
        };
        let status = match field(0)? {
            1 => Status::Observed,
            0 => Status::Censored,
            s => {
                return Err(parse_err(
                    line,
                    1,
                    format!("status must be 0 or 1, got {s}"),
                ))
            }
        };
        let value = field(1)?;
        let r0 = spec.r0() as i64;
        match status {
            Status::Observed if !(1..=r0).contains(&value) => {
                return Err(parse_err(
                    line,
                    2,
                    format!("observed class must be in 1..={r0}, got {value}"),
                ))
            }
            Status::Censored if value > r0 - 1 => {
                return Err(parse_err(
                    line,
                    2,
                    format!(
                        "censored threshold must be ≤ r0−1 = {}, got {value}",
                        r0 - 1
                    ),
                ))
            }
            Status::Censored if value < 0 => {
                return Err(parse_err(
                    line,
                    2,
                    format!("censored threshold must be ≥ 0, got {value}"),
                ))
            }
            _ => {}
        }
        let mut attrs = Vec::with_capacity(spec.n());
        for (i, &ri) in spec.arities().iter().enumerate() {
            let a = field(i + 2)?;
            if !(1..=ri as i64).contains(&a) {
                return Err(parse_err(
                    line,
                    i + 3,
                    format!("attribute x{} must be in 1..={ri}, got {a}", i + 1),
                ));
            }
            attrs.push(a as usize);
        }
        records.push(Observation {
            status,
            value: value as usize,
            attrs,
        });
    }
    Dataset::new(spec.clone(), records)
}

/// Canonical CSV: header, then one line per record in stored order, LF line
/// endings.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    out.write_all(dataset_to_string(dataset).as_bytes())?;
    Ok(())
}

pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut text = expected_header(dataset.spec()).join(",");
    text.push('\n');
    for rec in dataset.records() {
        let status = match rec.status {
            Status::Observed => 1,
            Status::Censored => 0,
        };
        let _ = write!(text, "{status},{}", rec.value);
        for a in &rec.attrs {
            let _ = write!(text, ",{a}");
        }
        text.push('\n');
    }
    text
}

/// SHA-256 of the canonical CSV form, hex encoded.
pub fn dataset_hash(dataset: &Dataset) -> String {
    hex::encode(Sha256::digest(dataset_to_string(dataset).as_bytes()))
}

pub fn read_dataset_file(path: &Path, spec: &ModelSpec) -> Result<Dataset> {
    parse_dataset(std::fs::File::open(path)?, spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub log_cccl: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub tool_version: String,
    pub data_hash: Option<String>,
    pub fit: Option<FitSummary>,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            data_hash: None,
            fit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub parameters: ParameterPoint,
    pub provenance: Provenance,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn float_list(values: &[f64]) -> String {
    format!(
        "[{}]",
        values
            .iter()
            .map(|v| float(*v))
            .collect::<Vec<_>>()
            .join(", ")
    )
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn body_checksum(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let mut body = String::new();
        let _ = writeln!(body, "format = \"{MODEL_FORMAT}\"");
        let _ = writeln!(body, "version = {MODEL_VERSION}");
        body.push_str("\n[spec]\n");
        let _ = writeln!(body, "r0 = {}", self.spec.r0());
        let arities: Vec<String> = self.spec.arities().iter().map(|r| r.to_string()).collect();
        let _ = writeln!(body, "r = [{}]", arities.join(", "));
        body.push_str("\n[parameters]\n");
        let _ = writeln!(body, "prior = {}", float_list(&self.parameters.prior));
        body.push_str("cond = [\n");
        for rows in &self.parameters.cond {
            let rows: Vec<String> = rows.iter().map(|r| float_list(r)).collect();
            let _ = writeln!(body, "  [{}],", rows.join(", "));
        }
        body.push_str("]\n");
        body.push_str("\n[provenance]\n");
        let _ = writeln!(
            body,
            "tool_version = {}",
            quoted(&self.provenance.tool_version)
        );
        if let Some(h) = &self.provenance.data_hash {
            let _ = writeln!(body, "data_hash = {}", quoted(h));
        }
        if let Some(fit) = &self.provenance.fit {
            body.push_str("\n[provenance.fit]\n");
            let _ = writeln!(body, "log_cccl = {}", float(fit.log_cccl));
            let _ = writeln!(body, "iterations = {}", fit.iterations);
            let _ = writeln!(
                body,
                "final_gradient_norm = {}",
                float(fit.final_gradient_norm)
            );
            let _ = writeln!(body, "converged = {}", fit.converged);
            let _ = writeln!(body, "boundary = {}", fit.boundary);
        }
        let sum = body_checksum(&body);
        format!("{body}\n{CHECKSUM_HEADER}\nsha256 = \"{sum}\"\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: RawModel = toml::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if raw.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "unknown format tag '{}'",
                raw.format
            )));
        }
        if raw.version != MODEL_VERSION {
            return Err(Error::Version {
                found: raw.version,
                expected: MODEL_VERSION,
            });
        }
        let spec = ModelSpec::new(raw.spec.r0, raw.spec.r)?;
        let parameters = ParameterPoint {
            prior: raw.parameters.prior,
            cond: raw.parameters.cond,
        };
        parameters.validate(&spec, LOAD_SIMPLEX_TOL)?;
        let marker = format!("\n{CHECKSUM_HEADER}\n");
        let body = text
            .find(&marker)
            .map(|at| &text[..at])
            .ok_or_else(|| Error::ModelFormat("missing checksum section".into()))?;
        let computed = body_checksum(body);
        if computed != raw.checksum.sha256 {
            return Err(Error::Checksum {
                stored: raw.checksum.sha256,
                computed,
            });
        }
        Ok(Self {
            spec,
            parameters,
            provenance: Provenance {
                tool_version: raw.provenance.tool_version,
                data_hash: raw.provenance.data_hash,
                fit: raw.provenance.fit.map(|f| FitSummary {
                    log_cccl: f.log_cccl,
                    iterations: f.iterations,
                    final_gradient_norm: f.final_gradient_norm,
                    converged: f.converged,
                    boundary: f.boundary,
                }),
            },
        })
    }
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_text())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_text(&std::fs::read_to_string(path)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format: String,
    version: i64,
    spec: RawSpec,
    parameters: RawParameters,
    provenance: RawProvenance,
    checksum: RawChecksum,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    r0: usize,
    r: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParameters {
    prior: Vec<f64>,
    cond: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProvenance {
    tool_version: String,
    data_hash: Option<String>,
    fit: Option<RawFit>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    log_cccl: f64,
    iterations: usize,
    final_gradient_norm: f64,
    converged: bool,
    boundary: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChecksum {
    sha256: String,
}
