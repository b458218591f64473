//! Feature CSV files.
//!
//! A header row is mandatory. The last column holds the integer class label;
//! a column named `group` (anywhere but last) holds an optional integer group
//! tag; every other column is a real-valued feature.

use std::path::Path;

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

fn parse_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Loads a feature CSV. Labels must lie in `[0, classes)` when `classes` is
/// given; otherwise the class count is one more than the largest label.
pub fn load_feature_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(parse_error(
            path,
            1,
            "need at least one feature column and a label column",
        ));
    }
    let label_col = header.len() - 1;
    let group_col = header.iter().position(|h| h.eq_ignore_ascii_case("group"));
    if group_col == Some(label_col) {
        return Err(parse_error(path, 1, "the last column must be the label, not `group`"));
    }
    let feature_cols: Vec<usize> = (0..label_col).filter(|&c| Some(c) != group_col).collect();
    if feature_cols.is_empty() {
        return Err(parse_error(path, 1, "no feature columns"));
    }

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = i + 2;
        let record = record.map_err(|e| parse_error(path, row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_error(
                path,
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut features = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = record[c].parse().map_err(|_| {
                parse_error(
                    path,
                    row,
                    format!("column `{}`: `{}` is not a number", &header[c], &record[c]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(path, row, format!("column `{}` is not finite", &header[c])));
            }
            features.push(v);
        }
        let label: usize = record[label_col].parse().map_err(|_| {
            parse_error(
                path,
                row,
                format!("label `{}` is not a class index", &record[label_col]),
            )
        })?;
        if let Some(c) = classes {
            if label >= c {
                return Err(parse_error(path, row, format!("label {label} outside [0, {c})")));
            }
        }
        let group = match group_col {
            Some(g) => Some(
                record[g]
                    .parse::<u64>()
                    .map_err(|_| parse_error(path, row, format!("group `{}` is not an integer", &record[g])))?,
            ),
            None => None,
        };
        samples.push(Sample { features, label, group });
    }
    if samples.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    let classes = classes.unwrap_or_else(|| samples.iter().map(|s| s.label).max().unwrap_or(0) + 1);
    Dataset::new(samples, classes, feature_cols.len())
}

/// Writes `f0..f{d-1}[,group],label`; reals use the shortest round-trip form.
pub fn write_feature_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let grouped = ds.samples().iter().any(|s| s.group.is_some());
    let mut header: Vec<String> = (0..ds.feature_dim()).map(|j| format!("f{j}")).collect();
    if grouped {
        header.push("group".into());
    }
    header.push("label".into());
    writer.write_record(&header)?;
    for (i, s) in ds.samples().iter().enumerate() {
        let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        if grouped {
            let g = s
                .group
                .ok_or_else(|| Error::param("group", format!("sample {i} has no group while others do")))?;
            row.push(g.to_string());
        }
        row.push(s.label.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_mixture, SyntheticSpec};
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_rows() {
        let f = write("a,b,label\n0.5,1.5,0\n-1,2e-3,1\n");
        let ds = load_feature_csv(f.path(), Some(2)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.samples()[1].features, vec![-1.0, 0.002]);
    }

    #[test]
    fn label_equal_to_class_count_names_row() {
        let f = write("x,label\n1,0\n2,1\n3,2\n");
        match load_feature_csv(f.path(), Some(2)) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let f = write("x,y,label\n1,2,0\n1,0\n");
        assert!(matches!(
            load_feature_csv(f.path(), None),
            Err(Error::Parse { row: 3, .. })
        ));
        let f = write("x,y,label\n1,abc,0\n");
        assert!(matches!(
            load_feature_csv(f.path(), None),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn group_column() {
        let f = write("x,group,label\n1,7,0\n2,3,1\n");
        let ds = load_feature_csv(f.path(), None).unwrap();
        assert_eq!(ds.feature_dim(), 1);
        assert_eq!(ds.samples()[0].group, Some(7));
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn round_trip() {
        let ds = synth_gaussian_mixture(
            &SyntheticSpec {
                classes: 3,
                dim: 4,
                per_class: 15,
                spread: 0.9,
                groups: Some(4),
            },
            2,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_feature_csv(&ds, f.path()).unwrap();
        assert_eq!(load_feature_csv(f.path(), Some(3)).unwrap(), ds);
    }
}
