//! On-disk formats: the `ENC1` binary container, the dataset manifest, the
//! atlas CSV and JSON-lines sidecars.
//!
//! Loading is eager: [`load_manifest`] opens and checks every referenced file,
//! so analyses downstream can assume well-formed input.

mod atlas;
mod container;
mod manifest;
mod words;

pub use atlas::{Atlas, Network, Roi};
pub use container::{
    inspect, read_matrix, read_tensor, write_matrix, write_tensor, ContainerInfo, Dtype, Tensor,
    MAGIC,
};
pub use manifest::{
    load_manifest, Dataset, DatasetManifest, LayerSpec, RunSpec, SubjectRun, SubjectSpec,
};
pub use words::{read_jsonl, read_words, write_jsonl, write_words, WordRecord};

use std::path::Path;

use crate::error::{Error, Result};

/// Writes a header and rows of preformatted fields as CSV.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(header).map_err(|e| Error::parse(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
