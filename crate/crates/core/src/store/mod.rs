//! Archived data: the append-only event archive and the reference rasters.
//!
//! Layout under a data directory:
//!
//! ```text
//! archive/segment-<n>.ndjson
//! reference/<name>.asc
//! reference/<name>.meta.json
//! ```

mod archive;
mod reference;

use std::path::Path;

use thiserror::Error;

pub use archive::{Archive, ArchiveEntry, LogBackend, MemoryLog, SegmentLog, SyncMode};
pub use reference::{ReferenceRaster, ReferenceStore};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate event_id {0:?}")]
    DuplicateEvent(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("reference raster {0:?} already registered")]
    NameTaken(String),
    #[error("reference raster {0:?} not found")]
    NotFound(String),
    #[error("invalid reference name {0:?}")]
    InvalidName(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Default number of entries per archive segment.
pub const DEFAULT_SEGMENT_LEN: u64 = 50_000;

pub struct GeoDataStore {
    pub archive: Archive,
    pub references: ReferenceStore,
}

impl GeoDataStore {
    pub fn in_memory() -> Self {
        GeoDataStore {
            archive: Archive::in_memory(),
            references: ReferenceStore::in_memory(),
        }
    }

    pub fn open(data_dir: impl AsRef<Path>, segment_len: u64, sync: SyncMode) -> Result<Self, StoreError> {
        let dir = data_dir.as_ref();
        Ok(GeoDataStore {
            archive: Archive::open(dir.join("archive"), segment_len, sync)?,
            references: ReferenceStore::open(dir.join("reference"))?,
        })
    }
}

impl From<crate::formats::FormatError> for StoreError {
    fn from(e: crate::formats::FormatError) -> Self {
        match e {
            crate::formats::FormatError::Io(io) => StoreError::Io(io),
            other => StoreError::Corrupt(other.to_string()),
        }
    }
}
