use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::MetricSpace;

/// Reads a metric: a header row of point identifiers followed by the `n` rows
/// of the distance matrix.
pub fn read_metric_csv<R: Read>(reader: R) -> Result<MetricSpace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let points: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::with_capacity(points.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("metric row {i}: {s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != points.len() {
        return Err(Error::Parse(format!(
            "{} identifiers but {} matrix rows",
            points.len(),
            rows.len()
        )));
    }
    MetricSpace::validate_and_normalize(&rows, Some(points))
}

/// Writes the normalized matrix in the format read by [`read_metric_csv`].
pub fn write_metric_csv<W: Write>(metric: &MetricSpace, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(metric.points())?;
    for i in 0..metric.len() {
        w.write_record(metric.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads numeric rows (costs or distributions), one per line. A leading row
/// that does not parse as numbers is treated as a header and skipped.
pub fn read_vectors_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => out.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {i}: {e}"))),
        }
    }
    if let Some(first) = out.first() {
        let width = first.len();
        if let Some(bad) = out.iter().position(|r| r.len() != width) {
            return Err(Error::Parse(format!(
                "row {bad} has {} entries, expected {width}",
                out[bad].len()
            )));
        }
    }
    Ok(out)
}

pub fn write_vectors_csv<W: Write>(rows: &[Vec<f64>], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
