use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, Result};

const LABEL: &str = "label";

/// Reads a dataset from CSV: a header row naming every column, one of which
/// is `label`. All other columns are features; the bias column is implicit.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv_from(BufReader::new(File::open(path)?))
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let label_col = header
        .iter()
        .position(|h| h.trim() == LABEL)
        .ok_or(DataError::MissingLabelColumn)?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_col)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let width = header.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(DataError::Csv {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| DataError::Csv {
                line,
                message: format!("column {j}: cannot parse {field:?} as a number"),
            })?;
            if j == label_col {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    let f = width - 1;
    let features =
        Array2::from_shape_vec((labels.len(), f), features).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    Dataset::from_features(features.view(), &labels)?.with_feature_names(names)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes features then `label`. `f64` Display is the shortest string that
/// parses back to the same value, so the round trip is exact.
pub fn write_csv_to<W: Write>(ds: &Dataset, w: &mut W) -> Result<()> {
    let mut header: Vec<&str> = ds.feature_names().iter().map(String::as_str).collect();
    header.push(LABEL);
    writeln!(w, "{}", header.join(","))?;
    let x = ds.x();
    for (row, label) in x.rows().into_iter().zip(ds.y()) {
        let mut line = String::new();
        for v in row.iter().skip(1) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&label.to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Csv {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_label_column() {
        let err = read_csv_from("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::MissingLabelColumn));
    }

    #[test]
    fn wrong_arity_reports_line() {
        let err = read_csv_from("a,label\n0.5,1\n0.25\n".as_bytes()).unwrap_err();
        match err {
            DataError::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let err = read_csv_from("a,label\n0.5,1\nx,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DataError::Csv { line: 3, .. }));
    }

    #[test]
    fn label_column_can_sit_anywhere() {
        let ds = read_csv_from("label,a,b\n1,0.1,0.2\n0,0.3,0.4\n".as_bytes()).unwrap();
        assert_eq!(ds.feature_names(), ["a", "b"]);
        assert_eq!(ds.y().to_vec(), vec![1.0, -1.0]);
        assert_eq!(ds.x().row(1).to_vec(), vec![1.0, 0.3, 0.4]);
    }

    #[test]
    fn round_trip_exact() {
        let ds = crate::data::synth_financial(37, 4, 3).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }
}
