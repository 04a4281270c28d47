//! Tabular datasets: CSV I/O, the join against a feature mapping, and
//! training-split standardization.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checksum;
use crate::kg::FeatureMapping;
use crate::nn::{Real, Tensor2};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("label column `{0}` not found")]
    MissingLabel(String),
    #[error("dataset feature `{0}` has no entry in the feature map")]
    UnmappedFeature(String),
    #[error("dataset is empty")]
    Empty,
    #[error("non-finite value in row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// `n × d` features, `n` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub x: Tensor2<f64>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl TabularDataset {
    pub fn new(
        x: Tensor2<f64>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        assert_eq!(x.rows(), y.len(), "one label per row");
        assert_eq!(x.cols(), feature_names.len(), "one name per column");
        assert_eq!(x.rows(), sample_ids.len(), "one id per row");
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row: i, column: j });
                }
            }
            if !y[i].is_finite() {
                return Err(DataError::NonFinite {
                    row: i,
                    column: x.cols(),
                });
            }
        }
        Ok(TabularDataset {
            x,
            y,
            feature_names,
            sample_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Rows `idx` as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> TabularDataset {
        let mut data = Vec::with_capacity(idx.len() * self.d());
        for &i in idx {
            data.extend_from_slice(self.x.row(i));
        }
        TabularDataset {
            x: Tensor2::from_vec(idx.len(), self.d(), data),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            sample_ids: idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    /// Digest over ids, names and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * (self.x.data().len() + self.n()));
        for name in self.feature_names.iter().chain(&self.sample_ids) {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
        }
        for v in self.x.data().iter().chain(&self.y) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        checksum::sha256_hex(&bytes)
    }

    /// Joins feature columns against `fm` by name. Returns the mapping
    /// restricted and reordered to this dataset's column order.
    pub fn align(&self, fm: &FeatureMapping) -> Result<FeatureMapping> {
        fm.reorder(&self.feature_names).ok_or_else(|| {
            let known: std::collections::HashSet<&str> =
                fm.names().iter().map(String::as_str).collect();
            let missing = self
                .feature_names
                .iter()
                .find(|n| !known.contains(n.as_str()))
                .cloned()
                .unwrap_or_default();
            DataError::UnmappedFeature(missing)
        })
    }

    /// CSV with header `sample_id,<label>,<features..>`.
    pub fn write_csv(&self, path: &Path, label: &str) -> Result<()> {
        let csv_err = |source| DataError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["sample_id".to_owned(), label.to_owned()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(self.d() + 2);
        for i in 0..self.n() {
            record.clear();
            record.push(self.sample_ids[i].clone());
            record.push(format!("{}", self.y[i]));
            record.extend(self.x.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.to_owned(),
            source,
        })
    }

    /// Reads a CSV whose first column is the sample id; `label` names the
    /// target column and every other column is a feature.
    pub fn read_csv(path: &Path, label: &str) -> Result<Self> {
        let csv_err = |source| DataError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
        let mut seen = HashMap::new();
        for (i, h) in header.iter().enumerate() {
            if seen.insert(h.as_str(), i).is_some() {
                return Err(DataError::DuplicateColumn(h.clone()));
            }
        }
        let label_col = header
            .iter()
            .skip(1)
            .position(|h| h == label)
            .map(|p| p + 1)
            .ok_or_else(|| DataError::MissingLabel(label.to_owned()))?;
        let feature_cols: Vec<usize> = (1..header.len()).filter(|&c| c != label_col).collect();
        let feature_names = feature_cols.iter().map(|&c| header[c].clone()).collect();
        let mut data = Vec::new();
        let mut y = Vec::new();
        let mut ids = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = row + 2;
            if rec.len() != header.len() {
                return Err(DataError::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let parse = |c: usize| -> Result<f64> {
                let v: f64 = rec[c].trim().parse().map_err(|_| DataError::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!("column `{}`: `{}` is not a number", header[c], &rec[c]),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(DataError::NonFinite { row, column: c })
                }
            };
            ids.push(rec[0].to_owned());
            y.push(parse(label_col)?);
            for &c in &feature_cols {
                data.push(parse(c)?);
            }
        }
        if ids.is_empty() {
            return Err(DataError::Empty);
        }
        let x = Tensor2::from_vec(ids.len(), feature_cols.len(), data);
        TabularDataset::new(x, y, feature_names, ids)
    }
}

/// Per-column z-scoring fit on training rows; constant columns get unit
/// scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor2<f64>, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform<T: Real>(&self, x: &Tensor2<f64>, rows: &[usize]) -> Tensor2<T> {
        let d = x.cols();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            for ((v, m), s) in x.row(i).iter().zip(&self.mean).zip(&self.scale) {
                out.push(T::of((v - m) / s));
            }
        }
        Tensor2::from_vec(rows.len(), d, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;

    fn toy() -> TabularDataset {
        TabularDataset::new(
            Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 2.0]]),
            vec![0.5, -1.25, 3.0],
            vec!["a".into(), "b".into()],
            vec!["s0".into(), "s1".into(), "s2".into()],
        )
        .unwrap()
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let mut ds = toy();
        ds.x.set(0, 0, 0.1 + 0.2);
        ds.write_csv(&p, "target").unwrap();
        let back = TabularDataset::read_csv(&p, "target").unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.checksum(), ds.checksum());
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,y,a\ns0,1,2\n").unwrap();
        assert!(matches!(TabularDataset::read_csv(&p, "label"), Err(DataError::MissingLabel(_))));
        std::fs::write(&p, "id,y,a\ns0,1,NaN\n").unwrap();
        assert!(matches!(TabularDataset::read_csv(&p, "y"), Err(DataError::NonFinite { .. })));
        std::fs::write(&p, "id,y,a\ns0,1,abc\n").unwrap();
        assert!(matches!(TabularDataset::read_csv(&p, "y"), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn label_column_may_sit_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "id,a,y,b\ns0,1,9,2\ns1,3,8,4\n").unwrap();
        let ds = TabularDataset::read_csv(&p, "y").unwrap();
        assert_eq!(ds.feature_names, ["a", "b"]);
        assert_eq!(ds.y, [9.0, 8.0]);
        assert_eq!(ds.x.row(1), [3.0, 4.0]);
    }

    #[test]
    fn align_reorders_and_rejects_unmapped() {
        let kg = KnowledgeGraph::from_labeled(&[("na", "r", "nb"), ("nb", "r", "nc")]).unwrap();
        let fm = FeatureMapping::from_labels(&[("b", "nb"), ("c", "nc"), ("a", "na")], &kg).unwrap();
        let aligned = toy().align(&fm).unwrap();
        assert_eq!(aligned.names(), ["a", "b"]);
        let fm2 = FeatureMapping::from_labels(&[("a", "na")], &kg).unwrap();
        assert!(matches!(toy().align(&fm2), Err(DataError::UnmappedFeature(n)) if n == "b"));
    }

    #[test]
    fn standardizer_uses_training_rows_only() {
        let ds = toy();
        let s = Standardizer::fit(&ds.x, &[0, 1]);
        assert_eq!(s.mean, [2.0, 2.0]);
        assert_eq!(s.scale, [1.0, 1.0]);
        let z: Tensor2<f64> = s.transform(&ds.x, &[2]);
        assert_eq!(z.data(), [3.0, 0.0]);
    }
}
