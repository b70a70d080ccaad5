//! On-disk formats.
//!
//! # Record files (`*.luq`)
//!
//! One generation run per file, all fields little-endian:
//!
//! | offset | size | field                     |
//! |-------:|-----:|---------------------------|
//! | 0      | 4    | magic `LUQ1`              |
//! | 4      | 2    | format version (`u16`, 1) |
//! | 6      | 2    | flags (`u16`, 0)          |
//! | 8      | 4    | vocab size (`u32`)        |
//! | 12     | 4    | steps (`u32`, at least 1) |
//! | 16     | 4    | temperature (`f32`)       |
//! | 20     | 4    | run index (`u32`)         |
//! | 24     | 4·steps | sampled token ids (`u32`) |
//! | …      | 4·steps·vocab | logits (`f32`, step-major) |
//!
//! # Run directories
//!
//! ```text
//! run-dir/
//!   manifest.json
//!   records/{model}/{image}/{question}/T{temperature:.2}/run{index:03}.luq
//! ```
//!
//! # CSV artifacts
//!
//! UTF-8, LF line endings, a mandatory header row, numbers printed with six
//! significant digits. See [`tables`] for the column lists.

mod manifest;
mod record;
pub mod tables;

pub use manifest::{
    check_id, QuestionSpec, RecordEntry, RunManifest, DEFAULT_SEED, MANIFEST_FILE, RECORDS_DIR,
    SCHEMA_VERSION,
};
pub use record::{
    read_record, record_file_size, write_record, RecordFile, RecordHeader, FORMAT_VERSION,
    HEADER_LEN, MAGIC,
};
pub use tables::{
    export_cells, export_correlations, export_figure_data, export_operating_points,
    export_projection, export_summary, format_sig6, import_cells, import_embeddings,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Joins a `/`-separated relative path (as stored in manifests) onto `root`.
pub fn join_relative(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}
