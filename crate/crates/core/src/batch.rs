//! Batch views: full recomputation over the archive prefix up to a
//! watermark, plus the persistent registry of view descriptors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{rasterize, ScenarioSpec};
use crate::model::{GeoEvent, GridSpec, RasterGrid, Source, TimeWindow, VenueBins};
use crate::store::Archive;

/// Upper bound on venue bins per view, to keep a typo in `venue_bin_width`
/// from allocating gigabytes.
pub const MAX_VENUE_BINS: i64 = 100_000;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("view {0:?} already registered")]
    NameTaken(String),
    #[error("bin width {bin_width} s does not tile a {window_len} s window")]
    BinMismatch { bin_width: i64, window_len: i64 },
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("watermark {requested} is ahead of the archive ({high_watermark})")]
    WatermarkAhead { requested: u64, high_watermark: u64 },
    #[error("view registry i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("view registry format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub name: String,
    pub spec: GridSpec,
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_filter: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    /// Bin width (seconds) of the per-venue view; `None` disables venue bins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue_bin_width: Option<i64>,
    /// Venues that always appear in the venue view, even without events.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub venues: Vec<String>,
}

impl ViewDescriptor {
    pub fn new(name: &str, spec: GridSpec, window: TimeWindow) -> Self {
        ViewDescriptor {
            name: name.to_string(),
            spec,
            window,
            source_filter: None,
            scenario: None,
            venue_bin_width: None,
            venues: Vec::new(),
        }
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source_filter = Some(source);
        self
    }

    pub fn with_scenario(mut self, scenario: ScenarioSpec) -> Self {
        self.scenario = Some(scenario);
        self
    }

    pub fn with_venue_bins(mut self, bin_width: i64, venues: Vec<String>) -> Self {
        self.venue_bin_width = Some(bin_width);
        self.venues = venues;
        self
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(BatchError::InvalidDescriptor(format!(
                "view name {:?} must be non-empty [A-Za-z0-9_.-]",
                self.name
            )));
        }
        if let Some(bw) = self.venue_bin_width {
            self.venue_bin_count(bw)?;
        }
        Ok(())
    }

    pub fn venue_bin_count(&self, bin_width: i64) -> Result<usize, BatchError> {
        let len = self.window.len_secs();
        if bin_width <= 0 || len % bin_width != 0 || len / bin_width > MAX_VENUE_BINS {
            return Err(BatchError::BinMismatch {
                bin_width,
                window_len: len,
            });
        }
        Ok((len / bin_width) as usize)
    }

    /// Time window an event must fall in: the view window, narrowed to the
    /// scenario window when one is set.
    pub fn effective_window(&self) -> Option<TimeWindow> {
        match &self.scenario {
            Some(s) => self.window.intersect(&s.window),
            None => Some(self.window),
        }
    }

    /// The cell an event contributes to, or `None` if it fails any filter.
    pub fn cell_for(&self, event: &GeoEvent) -> Option<(usize, usize)> {
        if !self.window.contains(event.ts) {
            return None;
        }
        if self.source_filter.is_some_and(|s| s != event.source) {
            return None;
        }
        if self.scenario.as_ref().is_some_and(|s| !s.window.contains(event.ts)) {
            return None;
        }
        self.spec.cell_of(event.lat, event.lon)
    }

    /// Venue bin an event contributes to (requires passing every filter and
    /// carrying a venue_id).
    pub fn venue_bin_for<'e>(&self, event: &'e GeoEvent) -> Option<(&'e str, usize)> {
        let bw = self.venue_bin_width?;
        let venue = event.venue_id.as_deref()?;
        self.cell_for(event)?;
        Some((venue, ((event.ts - self.window.start) / bw) as usize))
    }

    pub fn empty_venue_bins(&self) -> Option<VenueBins> {
        let bw = self.venue_bin_width?;
        let nbins = self.venue_bin_count(bw).ok()?;
        let mut bins = VenueBins::new(self.window.start, bw, nbins);
        for v in &self.venues {
            bins.ensure(v);
        }
        Some(bins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchView {
    pub descriptor: ViewDescriptor,
    pub watermark: u64,
    pub counts: RasterGrid,
    pub built_at: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VenueView {
    pub name: String,
    pub bins: VenueBins,
    pub watermark: u64,
}

fn check_watermark(archive: &Archive, up_to: u64) -> Result<(), BatchError> {
    let hw = archive.high_watermark();
    if up_to > hw {
        return Err(BatchError::WatermarkAhead {
            requested: up_to,
            high_watermark: hw,
        });
    }
    Ok(())
}

/// Recompute the count raster of `descriptor` from archive entries with
/// `seq <= up_to`.
pub fn build_batch_view(archive: &Archive, descriptor: &ViewDescriptor, up_to: u64) -> Result<BatchView, BatchError> {
    check_watermark(archive, up_to)?;
    let counts = match descriptor.effective_window() {
        Some(window) => {
            let entries = archive.scan(window, Some(&descriptor.spec.bbox), Some(up_to));
            rasterize(
                entries
                    .iter()
                    .map(|e| &e.event)
                    .filter(|ev| descriptor.cell_for(ev).is_some()),
                &descriptor.spec,
            )
        }
        None => RasterGrid::zeros(descriptor.spec),
    };
    Ok(BatchView {
        descriptor: descriptor.clone(),
        watermark: up_to,
        counts,
        built_at: crate::now_epoch(),
    })
}

pub fn build_venue_view(
    archive: &Archive,
    descriptor: &ViewDescriptor,
    bin_width: i64,
    up_to: u64,
) -> Result<VenueView, BatchError> {
    check_watermark(archive, up_to)?;
    let nbins = descriptor.venue_bin_count(bin_width)?;
    let mut bins = VenueBins::new(descriptor.window.start, bin_width, nbins);
    for v in &descriptor.venues {
        bins.ensure(v);
    }
    let binned = ViewDescriptor {
        venue_bin_width: Some(bin_width),
        ..descriptor.clone()
    };
    if let Some(window) = descriptor.effective_window() {
        archive.for_each(window, Some(&descriptor.spec.bbox), Some(up_to), |entry| {
            if let Some((venue, bin)) = binned.venue_bin_for(&entry.event) {
                bins.add(venue, bin, 1);
            }
        });
    }
    Ok(VenueView {
        name: descriptor.name.clone(),
        bins,
        watermark: up_to,
    })
}

/// Registered view descriptors, persisted as a JSON array in `views.json`.
pub struct ViewRegistry {
    path: Option<PathBuf>,
    views: RwLock<BTreeMap<String, ViewDescriptor>>,
}

impl ViewRegistry {
    pub fn in_memory() -> Self {
        ViewRegistry {
            path: None,
            views: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, BatchError> {
        let path = path.as_ref().to_path_buf();
        let mut views = BTreeMap::new();
        if path.exists() {
            let list: Vec<ViewDescriptor> = serde_json::from_slice(&fs::read(&path)?)?;
            for d in list {
                d.validate()?;
                views.insert(d.name.clone(), d);
            }
        }
        Ok(ViewRegistry {
            path: Some(path),
            views: RwLock::new(views),
        })
    }

    pub fn register(&self, descriptor: ViewDescriptor) -> Result<(), BatchError> {
        descriptor.validate()?;
        let mut views = self.views.write().expect("view registry poisoned");
        if views.contains_key(&descriptor.name) {
            return Err(BatchError::NameTaken(descriptor.name));
        }
        views.insert(descriptor.name.clone(), descriptor);
        if let Err(e) = self.persist(&views) {
            let name = views.keys().last().cloned();
            tracing::error!(error = %e, ?name, "failed to persist view registry");
            return Err(e);
        }
        Ok(())
    }

    pub fn remove(&self, name: &str) -> Option<ViewDescriptor> {
        let mut views = self.views.write().expect("view registry poisoned");
        let removed = views.remove(name);
        if removed.is_some() {
            if let Err(e) = self.persist(&views) {
                tracing::error!(error = %e, "failed to persist view registry");
            }
        }
        removed
    }

    fn persist(&self, views: &BTreeMap<String, ViewDescriptor>) -> Result<(), BatchError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let list: Vec<&ViewDescriptor> = views.values().collect();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&list)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<ViewDescriptor, BatchError> {
        self.views
            .read()
            .expect("view registry poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| BatchError::UnknownView(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.views.read().expect("view registry poisoned").contains_key(name)
    }

    pub fn list(&self) -> Vec<ViewDescriptor> {
        self.views.read().expect("view registry poisoned").values().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.views.read().expect("view registry poisoned").is_empty()
    }
}

/// Write a descriptor list in the registry's file format.
pub fn write_descriptors(path: impl AsRef<Path>, descriptors: &[ViewDescriptor]) -> Result<(), BatchError> {
    fs::write(path, serde_json::to_vec_pretty(descriptors)?)?;
    Ok(())
}
