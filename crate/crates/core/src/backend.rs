//! Classifier backend contract.
//!
//! Training loops, metrics, and attacks all talk to models through
//! [`ClassifierBackend`]: probability predictions, the gradient of the
//! cross-entropy loss with respect to the *inputs* (what the attacks
//! consume), a single optimizer step, and parameter snapshot/restore.
//! Snapshots persist as versioned binary blobs with an embedded config
//! digest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::label::LabelDistribution;
use crate::scalar::Scalar;

/// Opaque parameter snapshot. `dims` and `values` are interpreted by the
/// backend that produced them; `backend_kind` guards against mixups.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSnapshot<S> {
    pub backend_kind: String,
    pub dims: Vec<usize>,
    pub values: Vec<S>,
    pub config_digest: String,
}

pub trait ClassifierBackend<S: Scalar>: Send + Sync {
    fn input_dim(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// Predictive distribution per example (rows of `features`).
    fn predict_proba(&self, features: ArrayView2<'_, S>) -> Result<Vec<LabelDistribution<S>>>;

    /// Per-example gradient of that example's cross-entropy loss with
    /// respect to its input features. Output shape equals `features`.
    fn loss_input_gradient(
        &self,
        features: ArrayView2<'_, S>,
        targets: &[LabelDistribution<S>],
    ) -> Result<Array2<S>>;

    /// One optimizer step on the batch; returns the batch mean loss
    /// evaluated before the step.
    fn fit_step(
        &mut self,
        features: ArrayView2<'_, S>,
        targets: &[LabelDistribution<S>],
        learning_rate: S,
    ) -> Result<S>;

    fn snapshot(&self) -> ParamSnapshot<S>;

    /// Restore parameters from a snapshot. Any optimizer state is reset.
    fn restore(&mut self, snapshot: &ParamSnapshot<S>) -> Result<()>;
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"SLBK";
const SNAPSHOT_VERSION: u16 = 1;

/// Write a snapshot as a versioned binary blob. Values are stored as `f64`,
/// which is exact for both `f32` and `f64` parameters.
pub fn write_snapshot<S: Scalar, W: Write>(mut writer: W, snap: &ParamSnapshot<S>) -> Result<()> {
    writer.write_all(SNAPSHOT_MAGIC)?;
    writer.write_u16::<LittleEndian>(SNAPSHOT_VERSION)?;
    write_str(&mut writer, &snap.backend_kind)?;
    write_str(&mut writer, &snap.config_digest)?;
    writer.write_u16::<LittleEndian>(snap.dims.len() as u16)?;
    for &d in &snap.dims {
        writer.write_u64::<LittleEndian>(d as u64)?;
    }
    writer.write_u64::<LittleEndian>(snap.values.len() as u64)?;
    for &v in &snap.values {
        writer.write_f64::<LittleEndian>(v.as_f64())?;
    }
    Ok(())
}

pub fn read_snapshot<S: Scalar, R: Read>(mut reader: R) -> Result<ParamSnapshot<S>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::data("not a model snapshot file"));
    }
    let version = reader.read_u16::<LittleEndian>()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::data(format!("unsupported snapshot version {version}")));
    }
    let backend_kind = read_str(&mut reader)?;
    let config_digest = read_str(&mut reader)?;
    let n_dims = reader.read_u16::<LittleEndian>()?;
    let mut dims = Vec::with_capacity(n_dims as usize);
    for _ in 0..n_dims {
        dims.push(reader.read_u64::<LittleEndian>()? as usize);
    }
    let n_values = reader.read_u64::<LittleEndian>()?;
    let mut values = Vec::with_capacity(n_values as usize);
    for _ in 0..n_values {
        values.push(S::cast(reader.read_f64::<LittleEndian>()?));
    }
    Ok(ParamSnapshot { backend_kind, dims, values, config_digest })
}

pub fn save_snapshot<S: Scalar>(path: &Path, snap: &ParamSnapshot<S>) -> Result<()> {
    write_snapshot(BufWriter::new(File::create(path)?), snap)
}

pub fn load_snapshot<S: Scalar>(path: &Path) -> Result<ParamSnapshot<S>> {
    read_snapshot(BufReader::new(File::open(path)?))
}

fn write_str<W: Write>(writer: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::data("snapshot string field too long"));
    }
    writer.write_u16::<LittleEndian>(bytes.len() as u16)?;
    writer.write_all(bytes)?;
    Ok(())
}

fn read_str<R: Read>(reader: &mut R) -> Result<String> {
    let len = reader.read_u16::<LittleEndian>()?;
    let mut buf = vec![0u8; len as usize];
    reader.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::data("snapshot string field is not utf-8"))
}
