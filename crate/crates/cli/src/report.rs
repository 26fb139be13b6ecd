//! Reading, validating, and merging the CSVs the simulator emits.

use std::path::{Path, PathBuf};

use fkb_core::engine::CSV_HEADER;

use crate::sweep::SUMMARY_HEADER;
use crate::CliError;

/// Known CSV schemas, by header row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    PerRound,
    Summary,
}

impl Schema {
    fn from_header(header: &str) -> Option<Self> {
        if header == CSV_HEADER {
            Some(Schema::PerRound)
        } else if header == SUMMARY_HEADER {
            Some(Schema::Summary)
        } else {
            None
        }
    }

    fn columns(&self) -> usize {
        match self {
            Schema::PerRound => CSV_HEADER.split(',').count(),
            Schema::Summary => SUMMARY_HEADER.split(',').count(),
        }
    }
}

/// A parsed, validated CSV file.
pub struct ParsedCsv {
    pub schema: Schema,
    pub rows: Vec<csv::StringRecord>,
}

/// Parses one emitted CSV, checking the header against the known schemas
/// and every row for column count and field validity.
pub fn parse_csv(path: &Path) -> Result<ParsedCsv, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    let schema = Schema::from_header(&header).ok_or_else(|| {
        CliError::runtime(format!(
            "{}: unrecognized header `{header}`",
            path.display()
        ))
    })?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        if record.len() != schema.columns() {
            return Err(CliError::runtime(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 2,
                record.len(),
                schema.columns()
            )));
        }
        validate_row(schema, &record, i + 2, path)?;
        rows.push(record);
    }
    Ok(ParsedCsv { schema, rows })
}

fn validate_row(
    schema: Schema,
    record: &csv::StringRecord,
    line: usize,
    path: &Path,
) -> Result<(), CliError> {
    let bad = |what: &str| {
        CliError::runtime(format!("{}: row {line}: {what}", path.display()))
    };
    match schema {
        Schema::PerRound => {
            record[0].parse::<u64>().map_err(|_| bad("seed is not an integer"))?;
            record[1].parse::<usize>().map_err(|_| bad("round is not an integer"))?;
            let acc: f64 = record[6].parse().map_err(|_| bad("accuracy is not a number"))?;
            if !(0.0..=1.0).contains(&acc) {
                return Err(bad("accuracy outside [0, 1]"));
            }
            let loss: f64 = record[7].parse().map_err(|_| bad("loss is not a number"))?;
            if !loss.is_finite() {
                return Err(bad("loss is not finite"));
            }
        }
        Schema::Summary => {
            let status = &record[4];
            if status != "ok" && status != "failed" {
                return Err(bad("status must be ok|failed"));
            }
            if status == "ok" {
                record[5].parse::<f64>().map_err(|_| bad("mean accuracy is not a number"))?;
                record[6].parse::<f64>().map_err(|_| bad("accuracy std is not a number"))?;
            }
        }
    }
    Ok(())
}

/// Validates and concatenates same-schema CSVs; writes the merged CSV to
/// `out` or stdout.
pub fn merge_reports(files: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if files.is_empty() {
        return Err(CliError::config("report needs at least one CSV file".into()));
    }
    let mut schema: Option<Schema> = None;
    let mut merged: Vec<csv::StringRecord> = Vec::new();
    for path in files {
        let parsed = parse_csv(path)?;
        match schema {
            None => schema = Some(parsed.schema),
            Some(s) if s == parsed.schema => {}
            Some(_) => {
                return Err(CliError::config(format!(
                    "{}: schema differs from the first file",
                    path.display()
                )))
            }
        }
        merged.extend(parsed.rows);
    }

    let header = match schema.unwrap() {
        Schema::PerRound => CSV_HEADER,
        Schema::Summary => SUMMARY_HEADER,
    };
    let mut text = String::from(header);
    text.push('\n');
    for row in &merged {
        text.push_str(&row.iter().collect::<Vec<_>>().join(","));
        text.push('\n');
    }

    match out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| CliError::runtime(e.to_string()))?;
            println!("merged {} rows from {} files into {}", merged.len(), files.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
