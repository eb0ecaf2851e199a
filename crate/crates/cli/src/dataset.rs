//! CSV ingestion of samples and CSV emission of online traces.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};
use ridge_identity::{OnlineTrace, Sample};

use crate::error::CliError;

/// Reads a sample from a CSV file with header `x0,…,x{n-1},y`.
///
/// Row `t` of the body becomes example `t` (1-based id). Errors name the
/// physical line of the file.
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Sample, CliError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_reader(file).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_reader<R: Read>(reader: R) -> Result<Sample, CliError> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(CliError::Input("missing header row".into())),
    };
    let dim = check_header(&header)?;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for record in records {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(CliError::Input(format!(
                "line {line}: expected {} fields, found {}",
                dim + 1,
                record.len()
            )));
        }
        let mut values = Vec::with_capacity(dim + 1);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("line {line}, column {}: not a number: {cell:?}", col + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("line {line}, column {}: non-finite value", col + 1)));
            }
            values.push(v);
        }
        outcomes.push(values.pop().expect("record has dim + 1 fields"));
        rows.push(values);
    }
    Ok(Sample::from_rows(dim, rows, outcomes)?)
}

fn check_header(header: &StringRecord) -> Result<usize, CliError> {
    let names: Vec<&str> = header.iter().collect();
    match names.last() {
        Some(&"y") => {}
        _ => return Err(CliError::Input("line 1: header must end with a `y` column".into())),
    }
    let dim = names.len() - 1;
    if dim == 0 {
        return Err(CliError::Input("line 1: header has no signal columns".into()));
    }
    for (i, name) in names[..dim].iter().enumerate() {
        if *name != format!("x{i}") {
            return Err(CliError::Input(format!("line 1: expected column `x{i}`, found `{name}`")));
        }
    }
    Ok(dim)
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::Input(format!("line {}: {e}", p.line())),
        None => CliError::Input(e.to_string()),
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    let mag = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&mag) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "t",
    "y",
    "gamma",
    "d",
    "gamma_clipped",
    "sq_loss",
    "sq_loss_clipped",
    "weighted_loss",
];

pub fn write_trace_csv<W: Write>(trace: &OnlineTrace, out: W) -> Result<(), CliError> {
    let mut w = WriterBuilder::new().from_writer(out);
    let fail = |e: csv::Error| CliError::Input(format!("writing trace: {e}"));
    w.write_record(TRACE_COLUMNS).map_err(fail)?;
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    for s in &trace.steps {
        w.write_record([
            s.t.to_string(),
            format_float(s.outcome),
            format_float(s.gamma),
            format_float(s.d),
            opt(s.gamma_clipped),
            format_float(s.sq_loss),
            opt(s.sq_loss_clipped),
            format_float(s.weighted_loss),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("writing trace: {e}")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub gamma: f64,
    pub d: f64,
}

/// Reads back the `t`, `gamma` and `d` columns of a trace file.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>, CliError> {
    let mut rdr = ReaderBuilder::new().from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("trace is missing column `{name}`")))
    };
    let (ct, cg, cd) = (col("t")?, col("gamma")?, col("d")?);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = line_of(&record);
        let bad = |c: usize| CliError::Input(format!("line {line}, column {}: not a number", c + 1));
        rows.push(TraceRow {
            t: record.get(ct).and_then(|v| v.parse().ok()).ok_or_else(|| bad(ct))?,
            gamma: record.get(cg).and_then(|v| v.parse().ok()).ok_or_else(|| bad(cg))?,
            d: record.get(cd).and_then(|v| v.parse().ok()).ok_or_else(|| bad(cd))?,
        });
    }
    Ok(rows)
}
