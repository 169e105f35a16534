//! Read-only registry of reference rasters (baseline population grids and
//! similar externally owned products).

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::StoreError;
use crate::formats;
use crate::model::RasterGrid;

/// An immutable registered raster. Handed out behind `Arc`, so holders can
/// read but never modify the stored copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRaster {
    name: String,
    raster: RasterGrid,
    metadata: BTreeMap<String, String>,
}

impl ReferenceRaster {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn raster(&self) -> &RasterGrid {
        &self.raster
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }
}

pub struct ReferenceStore {
    dir: Option<PathBuf>,
    rasters: RwLock<HashMap<String, Arc<ReferenceRaster>>>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !name.starts_with('.')
}

impl ReferenceStore {
    pub fn in_memory() -> Self {
        ReferenceStore {
            dir: None,
            rasters: RwLock::new(HashMap::new()),
        }
    }

    /// Open a directory of `<name>.asc` + `<name>.meta.json` pairs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut rasters = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(name) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".asc"))
                .map(str::to_string)
            else {
                continue;
            };
            let raster = formats::read_asc(BufReader::new(File::open(&path)?))
                .map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))?;
            let meta_path = dir.join(format!("{name}.meta.json"));
            let metadata = if meta_path.exists() {
                serde_json::from_reader(BufReader::new(File::open(&meta_path)?))
                    .map_err(|e| StoreError::Corrupt(format!("{}: {e}", meta_path.display())))?
            } else {
                BTreeMap::new()
            };
            rasters.insert(
                name.clone(),
                Arc::new(ReferenceRaster {
                    name,
                    raster,
                    metadata,
                }),
            );
        }
        Ok(ReferenceStore {
            dir: Some(dir),
            rasters: RwLock::new(rasters),
        })
    }

    /// Register a raster under a new name. With a backing directory the
    /// raster is written as ESRI ASCII and the stored copy is the re-read
    /// file, so memory and disk agree at the format's precision.
    pub fn register(
        &self,
        name: &str,
        raster: RasterGrid,
        metadata: BTreeMap<String, String>,
    ) -> Result<Arc<ReferenceRaster>, StoreError> {
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        let mut rasters = self.rasters.write().expect("reference registry poisoned");
        if rasters.contains_key(name) {
            return Err(StoreError::NameTaken(name.to_string()));
        }
        let raster = match &self.dir {
            Some(dir) => {
                let asc = dir.join(format!("{name}.asc"));
                formats::write_asc(&raster, BufWriter::new(File::create(&asc)?))?;
                serde_json::to_writer_pretty(
                    BufWriter::new(File::create(dir.join(format!("{name}.meta.json")))?),
                    &metadata,
                )
                .map_err(|e| StoreError::StorageFailure(e.to_string()))?;
                formats::read_asc(BufReader::new(File::open(&asc)?))
                    .map_err(|e| StoreError::Corrupt(e.to_string()))?
            }
            None => raster,
        };
        let stored = Arc::new(ReferenceRaster {
            name: name.to_string(),
            raster,
            metadata,
        });
        rasters.insert(name.to_string(), Arc::clone(&stored));
        Ok(stored)
    }

    pub fn get(&self, name: &str) -> Result<Arc<ReferenceRaster>, StoreError> {
        self.rasters
            .read()
            .expect("reference registry poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .rasters
            .read()
            .expect("reference registry poisoned")
            .keys()
            .cloned()
            .collect();
        names.sort();
        names
    }
}
