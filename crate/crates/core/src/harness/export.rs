use std::path::Path;

use crate::classifier::{Provenance, TrainSet};
use crate::error::{Error, Result};

/// One labelled row of an episode, ready for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionRow {
    pub label: String,
    /// `support`, `ivdh`, `prototype`, `resampled` or `query`.
    pub provenance: String,
    pub feature: Vec<f64>,
}

pub fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Support => "support",
        Provenance::Ivdh => "ivdh",
        Provenance::Prototype => "prototype",
        Provenance::Resampled => "resampled",
    }
}

/// Rows of `ts`, labelled with the class ids in episode order.
pub fn projection_rows(ts: &TrainSet, class_ids: &[String]) -> Vec<ProjectionRow> {
    ts.rows
        .iter()
        .zip(&ts.labels)
        .zip(&ts.provenance)
        .map(|((row, &label), &p)| ProjectionRow {
            label: class_ids[label].clone(),
            provenance: provenance_name(p).to_string(),
            feature: row.clone(),
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `label,provenance,f0,f1,...` with one line per row.
pub fn export_projection(rows: &[ProjectionRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dim = rows.first().map_or(0, |r| r.feature.len());
    if let Some(bad) = rows.iter().find(|r| r.feature.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.feature.len(),
        });
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = ["label".to_string(), "provenance".to_string()]
        .into_iter()
        .chain((0..dim).map(|j| format!("f{j}")));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let fields = [r.label.clone(), r.provenance.clone()]
            .into_iter()
            .chain(r.feature.iter().map(|v| v.to_string()));
        w.write_record(fields).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<Vec<ProjectionRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let feature = record
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ProjectionRow {
            label: field(0),
            provenance: field(1),
            feature,
        });
    }
    Ok(rows)
}
