//! Datasets: features, hard labels, and optional per-example soft labels.
//!
//! Three sources are supported: CIFAR-style binary batches (one label byte
//! followed by 3072 pixel bytes per record), delimited feature text, and a
//! join of feature text with a soft-label file by image id.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judgments::read_soft_label_file;
use crate::label::LabelDistribution;
use crate::scalar::Scalar;

/// Pixel payload of one CIFAR-style record: 32 x 32 x 3.
pub const CIFAR_FEATURE_DIM: usize = 3072;
const CIFAR_RECORD_BYTES: usize = CIFAR_FEATURE_DIM + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RealFile,
    Synthetic,
}

/// Feature matrix in `[0,1]`, aligned hard labels, and (optionally) one
/// label distribution per example.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelDataset<S> {
    pub name: String,
    pub features: Array2<S>,
    pub hard_labels: Vec<usize>,
    pub soft_labels: Option<Vec<LabelDistribution<S>>>,
    pub n_classes: usize,
    pub provenance: Provenance,
    /// Mean-translation magnitude for synthetic shifted test sets.
    pub shift_level: Option<f64>,
}

impl<S: Scalar> SoftLabelDataset<S> {
    pub fn len(&self) -> usize {
        self.hard_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hard_labels.len();
        if self.features.nrows() != n {
            return Err(Error::data(format!(
                "dataset '{}': {} feature rows vs {n} labels",
                self.name,
                self.features.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::data(format!("dataset '{}' is empty", self.name)));
        }
        for (i, &y) in self.hard_labels.iter().enumerate() {
            if y >= self.n_classes {
                return Err(Error::data(format!(
                    "dataset '{}': label {y} at example {i} out of range for K={}",
                    self.name, self.n_classes
                )));
            }
        }
        for (i, &x) in self.features.iter().enumerate() {
            if !(x >= S::zero() && x <= S::one()) {
                return Err(Error::data(format!(
                    "dataset '{}': feature value {x} at flat index {i} outside [0,1]",
                    self.name
                )));
            }
        }
        if let Some(soft) = &self.soft_labels {
            if soft.len() != n {
                return Err(Error::data(format!(
                    "dataset '{}': {} soft labels vs {n} examples",
                    self.name,
                    soft.len()
                )));
            }
            for (i, dist) in soft.iter().enumerate() {
                if dist.k() != self.n_classes {
                    return Err(Error::data(format!(
                        "dataset '{}': soft label {i} has {} classes, expected {}",
                        self.name,
                        dist.k(),
                        self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row subset in the given index order.
    pub fn subset(&self, indices: &[usize], name: &str) -> Self {
        Self {
            name: name.to_string(),
            features: self.features.select(ndarray::Axis(0), indices),
            hard_labels: indices.iter().map(|&i| self.hard_labels[i]).collect(),
            soft_labels: self
                .soft_labels
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i].clone()).collect()),
            n_classes: self.n_classes,
            provenance: self.provenance,
            shift_level: self.shift_level,
        }
    }
}

/// Where an experiment's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// CIFAR-style binary batch file.
    CifarBinary {
        path: PathBuf,
        #[serde(default)]
        name: Option<String>,
    },
    /// Delimited feature text, optionally joined with a soft-label file.
    FeatureText {
        path: PathBuf,
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        soft_labels: Option<PathBuf>,
        /// Fail when the soft-label file mentions unknown image ids.
        #[serde(default = "default_strict")]
        strict: bool,
    },
}

fn default_strict() -> bool {
    true
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        let (explicit, path) = match self {
            DatasetSpec::CifarBinary { name, path } => (name, path),
            DatasetSpec::FeatureText { name, path, .. } => (name, path),
        };
        explicit.clone().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }
}

#[derive(Debug)]
pub struct LoadOutcome<S> {
    pub dataset: SoftLabelDataset<S>,
    /// Soft-label rows whose image id matched no feature row (non-strict
    /// joins only).
    pub unmatched_soft_ids: Vec<String>,
}

/// Load and validate a dataset.
pub fn load_dataset<S: Scalar>(spec: &DatasetSpec, k: usize) -> Result<LoadOutcome<S>> {
    let outcome = match spec {
        DatasetSpec::CifarBinary { path, .. } => {
            let (hard_labels, features) = load_cifar_binary(path, k)?;
            LoadOutcome {
                dataset: SoftLabelDataset {
                    name: spec.name(),
                    features,
                    hard_labels,
                    soft_labels: None,
                    n_classes: k,
                    provenance: Provenance::RealFile,
                    shift_level: None,
                },
                unmatched_soft_ids: Vec::new(),
            }
        }
        DatasetSpec::FeatureText { path, soft_labels, strict, .. } => {
            let file = File::open(path).map_err(|e| {
                Error::data(format!("cannot open feature file {}: {e}", path.display()))
            })?;
            let data = read_feature_text::<S, _>(BufReader::new(file), k)?;
            let (soft, unmatched) = match soft_labels {
                None => (None, Vec::new()),
                Some(soft_path) => {
                    let soft_file = File::open(soft_path).map_err(|e| {
                        Error::data(format!(
                            "cannot open soft-label file {}: {e}",
                            soft_path.display()
                        ))
                    })?;
                    let map = read_soft_label_file::<S, _>(BufReader::new(soft_file))?;
                    let mut joined = Vec::with_capacity(data.ids.len());
                    for id in &data.ids {
                        let dist = map.get(id).ok_or_else(|| {
                            Error::data(format!("feature row '{id}' has no soft label"))
                        })?;
                        joined.push(dist.clone());
                    }
                    let unmatched: Vec<String> = map
                        .keys()
                        .filter(|id| !data.ids.contains(id))
                        .cloned()
                        .collect();
                    if *strict && !unmatched.is_empty() {
                        return Err(Error::data(format!(
                            "soft-label file names {} unknown image id(s), first: '{}'",
                            unmatched.len(),
                            unmatched[0]
                        )));
                    }
                    (Some(joined), unmatched)
                }
            };
            LoadOutcome {
                dataset: SoftLabelDataset {
                    name: spec.name(),
                    features: data.features,
                    hard_labels: data.labels,
                    soft_labels: soft,
                    n_classes: k,
                    provenance: Provenance::RealFile,
                    shift_level: None,
                },
                unmatched_soft_ids: unmatched,
            }
        }
    };
    outcome.dataset.validate()?;
    Ok(outcome)
}

/// Parse a CIFAR-style binary batch: consecutive 3073-byte records, each one
/// label byte followed by 3072 pixel bytes. Pixels are scaled to `[0,1]`.
pub fn load_cifar_binary<S: Scalar>(path: &Path, k: usize) -> Result<(Vec<usize>, Array2<S>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    parse_cifar_bytes(&bytes, k)
}

pub fn parse_cifar_bytes<S: Scalar>(bytes: &[u8], k: usize) -> Result<(Vec<usize>, Array2<S>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::data(format!(
            "malformed binary length: {} bytes is not a positive multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, CIFAR_FEATURE_DIM));
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= k {
            return Err(Error::data(format!(
                "record {i}: label {label} out of range for K={k}"
            )));
        }
        labels.push(label);
        let mut row = features.row_mut(i);
        for (x, &b) in row.iter_mut().zip(&record[1..]) {
            *x = S::cast(f64::from(b) / 255.0);
        }
    }
    Ok((labels, features))
}

/// Rows of a delimited feature file: `image_id,label,x0..x{D-1}`.
pub struct FeatureTextData<S> {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub features: Array2<S>,
}

pub fn read_feature_text<S: Scalar, R: Read>(reader: R, k: usize) -> Result<FeatureTextData<S>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty feature file"))?
        .map_err(Error::Io)?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "image_id" || columns[1] != "label" {
        return Err(Error::data(format!("unrecognized feature header: {header}")));
    }
    for (i, col) in columns[2..].iter().enumerate() {
        if *col != format!("x{i}") {
            return Err(Error::data(format!("unexpected feature column '{col}'")));
        }
    }
    let d = columns.len() - 2;

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values: Vec<S> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(Error::Io)?;
        let lineno = idx as u64 + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", d + 2, fields.len()),
            ));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad label '{}'", fields[1])))?;
        if label >= k {
            return Err(Error::parse(lineno, format!("label {label} out of range for K={k}")));
        }
        ids.push(fields[0].to_string());
        labels.push(label);
        for raw in &fields[2..] {
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad feature value '{raw}'")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(lineno, format!("feature value {v} outside [0,1]")));
            }
            values.push(S::cast(v));
        }
    }
    if ids.is_empty() {
        return Err(Error::data("feature file has no rows"));
    }
    let n = ids.len();
    let features = Array2::from_shape_vec((n, d), values).expect("row width checked");
    Ok(FeatureTextData { ids, labels, features })
}

pub fn write_feature_text<S: Scalar, W: Write>(
    mut writer: W,
    ids: &[String],
    labels: &[usize],
    features: &Array2<S>,
) -> Result<()> {
    if ids.len() != labels.len() || ids.len() != features.nrows() {
        return Err(Error::data("feature text writer: misaligned ids/labels/features"));
    }
    write!(writer, "image_id,label")?;
    for i in 0..features.ncols() {
        write!(writer, ",x{i}")?;
    }
    writeln!(writer)?;
    for (i, (id, &label)) in ids.iter().zip(labels).enumerate() {
        write!(writer, "{id},{label}")?;
        for &x in features.row(i) {
            write!(writer, ",{:.17e}", x)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_cifar_bytes(n: usize) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(n * CIFAR_RECORD_BYTES);
        for i in 0..n {
            bytes.push((i % 10) as u8);
            for j in 0..CIFAR_FEATURE_DIM {
                bytes.push(((i * 31 + j * 7) % 256) as u8);
            }
        }
        bytes
    }

    #[test]
    fn cifar_batch_of_10000_records_parses() {
        let bytes = synthetic_cifar_bytes(10_000);
        let (labels, features) = parse_cifar_bytes::<f64>(&bytes, 10).unwrap();
        assert_eq!(labels.len(), 10_000);
        assert_eq!(features.nrows(), 10_000);
        assert_eq!(features.ncols(), CIFAR_FEATURE_DIM);
        assert!(labels.iter().all(|&y| y < 10));
        assert!(features.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(features[(0, 1)], 7.0 / 255.0);
        assert_eq!(features[(1, 0)], 31.0 / 255.0);
    }

    #[test]
    fn cifar_rejects_truncated_files() {
        let mut bytes = synthetic_cifar_bytes(3);
        bytes.pop();
        let err = parse_cifar_bytes::<f64>(&bytes, 10).unwrap_err();
        assert!(err.to_string().contains("malformed binary length"));
        assert!(parse_cifar_bytes::<f64>(&[], 10).is_err());
    }

    #[test]
    fn cifar_rejects_out_of_range_labels() {
        let mut bytes = synthetic_cifar_bytes(2);
        bytes[0] = 12;
        let err = parse_cifar_bytes::<f64>(&bytes, 10).unwrap_err();
        assert!(err.to_string().contains("12"));
    }

    fn sample_features() -> (Vec<String>, Vec<usize>, Array2<f64>) {
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let labels = vec![0usize, 1, 0];
        let features =
            Array2::from_shape_vec((3, 2), vec![0.25, 0.5, 1.0, 0.0, 0.125, 0.75]).unwrap();
        (ids, labels, features)
    }

    #[test]
    fn feature_text_round_trips_bit_exactly() {
        let (ids, labels, features) = sample_features();
        let mut buf = Vec::new();
        write_feature_text(&mut buf, &ids, &labels, &features).unwrap();
        let reread = read_feature_text::<f64, _>(buf.as_slice(), 2).unwrap();
        assert_eq!(reread.ids, ids);
        assert_eq!(reread.labels, labels);
        assert_eq!(reread.features, features);

        let mut buf2 = Vec::new();
        write_feature_text(&mut buf2, &reread.ids, &reread.labels, &reread.features).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn join_attaches_soft_labels_in_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let spath = dir.path().join("s.csv");
        let (ids, labels, features) = sample_features();
        write_feature_text(
            &mut File::create(&fpath).unwrap(),
            &ids,
            &labels,
            &features,
        )
        .unwrap();
        let mut soft = std::collections::BTreeMap::new();
        soft.insert("a".to_string(), LabelDistribution::from_counts(&[3, 1], 0.0).unwrap());
        soft.insert("b".to_string(), LabelDistribution::from_counts(&[0, 4], 0.0).unwrap());
        soft.insert("c".to_string(), LabelDistribution::from_counts(&[2, 2], 0.0).unwrap());
        crate::judgments::write_soft_label_file(&mut File::create(&spath).unwrap(), &soft)
            .unwrap();

        let spec = DatasetSpec::FeatureText {
            path: fpath,
            name: Some("joined".into()),
            soft_labels: Some(spath),
            strict: true,
        };
        let out = load_dataset::<f64>(&spec, 2).unwrap();
        let got = out.dataset.soft_labels.unwrap();
        assert_eq!(got[0], soft["a"]);
        assert_eq!(got[1], soft["b"]);
        assert_eq!(got[2], soft["c"]);
        assert!(out.unmatched_soft_ids.is_empty());
    }

    #[test]
    fn strict_join_rejects_unknown_soft_ids() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let spath = dir.path().join("s.csv");
        let (ids, labels, features) = sample_features();
        write_feature_text(&mut File::create(&fpath).unwrap(), &ids, &labels, &features)
            .unwrap();
        let mut soft = std::collections::BTreeMap::new();
        for id in ["a", "b", "c", "ghost"] {
            soft.insert(id.to_string(), LabelDistribution::from_counts(&[1, 1], 0.0).unwrap());
        }
        crate::judgments::write_soft_label_file(&mut File::create(&spath).unwrap(), &soft)
            .unwrap();

        let strict = DatasetSpec::FeatureText {
            path: fpath.clone(),
            name: None,
            soft_labels: Some(spath.clone()),
            strict: true,
        };
        let err = load_dataset::<f64>(&strict, 2).unwrap_err();
        assert!(err.to_string().contains("ghost"), "got: {err}");

        let lenient = DatasetSpec::FeatureText {
            path: fpath,
            name: None,
            soft_labels: Some(spath),
            strict: false,
        };
        let out = load_dataset::<f64>(&lenient, 2).unwrap();
        assert_eq!(out.unmatched_soft_ids, vec!["ghost".to_string()]);
    }

    #[test]
    fn feature_row_without_soft_label_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let spath = dir.path().join("s.csv");
        let (ids, labels, features) = sample_features();
        write_feature_text(&mut File::create(&fpath).unwrap(), &ids, &labels, &features)
            .unwrap();
        let mut soft = std::collections::BTreeMap::new();
        soft.insert("a".to_string(), LabelDistribution::from_counts(&[1, 1], 0.0).unwrap());
        crate::judgments::write_soft_label_file(&mut File::create(&spath).unwrap(), &soft)
            .unwrap();
        let spec = DatasetSpec::FeatureText {
            path: fpath,
            name: None,
            soft_labels: Some(spath),
            strict: false,
        };
        let err = load_dataset::<f64>(&spec, 2).unwrap_err();
        assert!(err.to_string().contains("'b'"), "got: {err}");
    }

    #[test]
    fn feature_text_validates_values() {
        let bad_range = "image_id,label,x0\nimg,0,1.5\n";
        assert!(read_feature_text::<f64, _>(bad_range.as_bytes(), 2).is_err());
        let bad_label = "image_id,label,x0\nimg,9,0.5\n";
        assert!(read_feature_text::<f64, _>(bad_label.as_bytes(), 2).is_err());
        let bad_header = "id,label,x0\nimg,0,0.5\n";
        assert!(read_feature_text::<f64, _>(bad_header.as_bytes(), 2).is_err());
    }

    #[test]
    fn dataset_validation_catches_misalignment() {
        let (_, labels, features) = sample_features();
        let mut ds = SoftLabelDataset::<f64> {
            name: "t".into(),
            features,
            hard_labels: labels,
            soft_labels: None,
            n_classes: 2,
            provenance: Provenance::RealFile,
            shift_level: None,
        };
        ds.validate().unwrap();
        ds.hard_labels.push(0);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn writing_a_loaded_cifar_file_reproduces_the_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let bytes = synthetic_cifar_bytes(64);
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let spec = DatasetSpec::CifarBinary { path, name: Some("bin".into()) };
        let first = load_dataset::<f64>(&spec, 10).unwrap().dataset;
        let second = load_dataset::<f64>(&spec, 10).unwrap().dataset;
        assert_eq!(first, second);
    }
}
