//! Stream ingestion, shingling, synthetic drift streams, and evaluation.

mod metrics;
mod synth;

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{auc_pr, auc_roc, evaluate, EvalReport, GlobalMetrics, WindowMetrics};
pub use synth::{synth_stream, Concept, DriftKind, DriftSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub name: String,
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub drift_markers: Vec<usize>,
}

/// Ordered instances with optional binary ground truth (1 = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub instances: Vec<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    pub meta: StreamMeta,
    /// Generating concept per instance, for synthetic streams.
    pub concept_ids: Option<Vec<usize>>,
}

impl LabeledStream {
    pub fn new(name: &str, instances: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> Result<Self> {
        let d = instances.first().map_or(0, Vec::len);
        if let Some((i, row)) = instances.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Shape(format!("instance {i} has {} features, expected {d}", row.len())));
        }
        if let Some(l) = &labels {
            if l.len() != instances.len() {
                return Err(Error::Dim {
                    expected: instances.len(),
                    actual: l.len(),
                });
            }
        }
        Ok(Self {
            meta: StreamMeta {
                name: name.to_string(),
                d,
                n: instances.len(),
                drift_markers: Vec::new(),
            },
            instances,
            labels,
            concept_ids: None,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    /// Writes `f1..fd[,label]` with a header row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("f{i}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        out.write_record(&header).map_err(csv_io)?;
        for (i, row) in self.instances.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            out.write_record(&rec).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Which columns to read. With no feature list, every column except the
/// label column is a feature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    pub label_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
}

impl CsvSchema {
    pub fn labeled(label: &str) -> Self {
        Self {
            label_column: Some(label.to_string()),
            feature_columns: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledStream> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    read_csv(file, &name, schema)
}

/// Comma-separated, header row required. Rows are 1-based data rows
/// (the header is not counted).
pub fn read_csv<R: Read>(reader: R, name: &str, schema: &CsvSchema) -> Result<LabeledStream> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 0,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |col: &str| {
        headers.iter().position(|h| h == col).ok_or_else(|| Error::Csv {
            row: 0,
            column: col.to_string(),
            message: "missing column".into(),
        })
    };
    let label_idx = schema.label_column.as_deref().map(find).transpose()?;
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| Some(i) != label_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Empty("no feature columns".into()));
    }
    let mut instances = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Csv {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Csv {
                    row,
                    column: headers[i].clone(),
                    message: format!("'{raw}' is not a finite number"),
                }),
            }
        };
        instances.push(feature_idx.iter().map(|&i| cell(i)).collect::<Result<Vec<_>>>()?);
        if let (Some(li), Some(ls)) = (label_idx, labels.as_mut()) {
            let v = cell(li)?;
            let l = match v {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                _ => {
                    return Err(Error::Csv {
                        row,
                        column: headers[li].clone(),
                        message: format!("label must be 0 or 1, got {v}"),
                    })
                }
            };
            ls.push(l);
        }
    }
    if instances.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }
    LabeledStream::new(name, instances, labels)
}

/// Shingle width for univariate series.
pub const DEFAULT_SHINGLE_WIDTH: usize = 10;

/// Overlapping windows of `width` consecutive points. A window is anomalous
/// iff any point it covers is.
pub fn shingle(series: &[f64], point_labels: Option<&[u8]>, width: usize) -> Result<LabeledStream> {
    if width < 2 {
        return Err(Error::InvalidArgument(format!("shingle width must be >= 2, got {width}")));
    }
    if series.len() < width {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is shorter than width {width}",
            series.len()
        )));
    }
    if let Some(l) = point_labels {
        if l.len() != series.len() {
            return Err(Error::Dim {
                expected: series.len(),
                actual: l.len(),
            });
        }
    }
    let instances: Vec<Vec<f64>> = series.windows(width).map(<[f64]>::to_vec).collect();
    let labels = point_labels.map(|l| l.windows(width).map(|w| u8::from(w.iter().any(|&v| v != 0))).collect());
    LabeledStream::new("shingled", instances, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_shape_and_labels() {
        let s = read_csv("a,b,label\n1,2,0\n3,4,1\n5,6,0\n".as_bytes(), "t", &CsvSchema::labeled("label")).unwrap();
        assert_eq!((s.meta.n, s.meta.d), (3, 2));
        assert_eq!(s.labels.unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn unlabeled_file() {
        let s = read_csv("a,b\n1,2\n".as_bytes(), "t", &CsvSchema::default()).unwrap();
        assert!(s.labels.is_none());
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let err = read_csv("a,b\n1,2\n3,abc\n".as_bytes(), "t", &CsvSchema::default()).unwrap_err();
        match err {
            Error::Csv { row, column, .. } => assert_eq!((row, column.as_str()), (2, "b")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_missing_and_empty_rejected() {
        assert!(read_csv("a,b\n1,2\n3\n".as_bytes(), "t", &CsvSchema::default()).is_err());
        assert!(read_csv("a,b\n1,2\n".as_bytes(), "t", &CsvSchema::labeled("y")).is_err());
        assert!(read_csv("a,b\n".as_bytes(), "t", &CsvSchema::default()).is_err());
    }

    #[test]
    fn shingle_examples() {
        let s = shingle(&[1.0, 2.0, 3.0, 4.0], None, 2).unwrap();
        assert_eq!(s.instances, vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]);
        let mut pl = vec![0u8; 10];
        pl[5] = 1;
        let s = shingle(&[0.0; 10], Some(&pl), 3).unwrap();
        let hot: Vec<usize> = s.labels.unwrap().iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect();
        assert_eq!(hot, vec![3, 4, 5]);
        assert!(shingle(&[1.0], None, 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = LabeledStream::new("x", vec![vec![0.1, -2.5], vec![1e-7, 3.0]], Some(vec![0, 1])).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "x", &CsvSchema::labeled("label")).unwrap();
        assert_eq!(back.instances, s.instances);
        assert_eq!(back.labels, s.labels);
    }
}
