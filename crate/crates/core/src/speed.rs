//! The real-time layer: per-view sparse counts for events newer than each
//! view's batch watermark.
//!
//! Every applied contribution is also kept as a delta in arrival order, so
//! raising a view's floor (compaction) or reading it as of a lower floor is
//! an exact subtraction.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::batch::ViewDescriptor;
use crate::model::GeoEvent;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpeedError {
    #[error("seq {seq} is not past the applied ceiling {ceiling}")]
    OutOfOrderSeq { seq: u64, ceiling: u64 },
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("view {0:?} already has a realtime view")]
    AlreadyRegistered(String),
    #[error("floor {requested} is below the current floor {floor}")]
    FloorRegression { requested: u64, floor: u64 },
    #[error("view was compacted to {floor}, past the requested floor {requested}")]
    FloorPassed { requested: u64, floor: u64 },
}

type Cell = (usize, usize);

#[derive(Debug, Clone)]
struct Delta {
    seq: u64,
    cell: Cell,
    venue: Option<(Arc<str>, usize)>,
}

#[derive(Debug)]
struct ViewState {
    descriptor: ViewDescriptor,
    floor: u64,
    cells: HashMap<Cell, u64>,
    venues: HashMap<(Arc<str>, usize), u64>,
    deltas: VecDeque<Delta>,
    interned: HashSet<Arc<str>>,
}

impl ViewState {
    fn intern(&mut self, venue: &str) -> Arc<str> {
        if let Some(v) = self.interned.get(venue) {
            return Arc::clone(v);
        }
        let v: Arc<str> = Arc::from(venue);
        self.interned.insert(Arc::clone(&v));
        v
    }

    fn apply(&mut self, event: &GeoEvent, seq: u64) {
        if seq <= self.floor {
            return;
        }
        let Some(cell) = self.descriptor.cell_for(event) else {
            return;
        };
        let venue = self
            .descriptor
            .venue_bin_for(event)
            .map(|(v, bin)| (self.intern(v), bin));
        *self.cells.entry(cell).or_insert(0) += 1;
        if let Some(key) = &venue {
            *self.venues.entry(key.clone()).or_insert(0) += 1;
        }
        self.deltas.push_back(Delta { seq, cell, venue });
    }
}

fn decrement<K: std::hash::Hash + Eq>(map: &mut HashMap<K, u64>, key: &K) {
    if let Some(c) = map.get_mut(key) {
        *c -= 1;
        if *c == 0 {
            map.remove(key);
        }
    }
}

/// Immutable copy of one view's real-time state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RealtimeView {
    pub name: String,
    /// Exclusive lower bound on the seqs covered.
    pub floor: u64,
    /// Highest seq applied.
    pub ceiling: u64,
    pub cells: BTreeMap<Cell, u64>,
    pub venue_bins: BTreeMap<(String, usize), u64>,
}

impl RealtimeView {
    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }
}

#[derive(Debug, Default)]
struct Inner {
    ceiling: u64,
    views: HashMap<String, ViewState>,
}

#[derive(Debug, Default)]
pub struct SpeedLayer {
    inner: RwLock<Inner>,
}

impl SpeedLayer {
    /// Empty layer whose ceiling starts at `ceiling` (the archive high
    /// watermark at startup).
    pub fn new(ceiling: u64) -> Self {
        SpeedLayer {
            inner: RwLock::new(Inner {
                ceiling,
                views: HashMap::new(),
            }),
        }
    }

    pub fn ceiling(&self) -> u64 {
        self.inner.read().expect("speed layer poisoned").ceiling
    }

    /// Start tracking `descriptor` for events with seq above `floor`.
    pub fn register(&self, descriptor: ViewDescriptor, floor: u64) -> Result<(), SpeedError> {
        let mut inner = self.inner.write().expect("speed layer poisoned");
        if inner.views.contains_key(&descriptor.name) {
            return Err(SpeedError::AlreadyRegistered(descriptor.name));
        }
        inner.views.insert(
            descriptor.name.clone(),
            ViewState {
                descriptor,
                floor,
                cells: HashMap::new(),
                venues: HashMap::new(),
                deltas: VecDeque::new(),
                interned: HashSet::new(),
            },
        );
        Ok(())
    }

    pub fn unregister(&self, name: &str) -> bool {
        self.inner.write().expect("speed layer poisoned").views.remove(name).is_some()
    }

    pub fn apply(&self, event: &GeoEvent, seq: u64) -> Result<(), SpeedError> {
        let mut inner = self.inner.write().expect("speed layer poisoned");
        if seq <= inner.ceiling {
            return Err(SpeedError::OutOfOrderSeq {
                seq,
                ceiling: inner.ceiling,
            });
        }
        for view in inner.views.values_mut() {
            view.apply(event, seq);
        }
        inner.ceiling = seq;
        Ok(())
    }

    pub fn snapshot(&self, name: &str) -> Result<RealtimeView, SpeedError> {
        let inner = self.inner.read().expect("speed layer poisoned");
        let view = inner
            .views
            .get(name)
            .ok_or_else(|| SpeedError::UnknownView(name.to_string()))?;
        Ok(RealtimeView {
            name: name.to_string(),
            floor: view.floor,
            ceiling: inner.ceiling.max(view.floor),
            cells: view.cells.iter().map(|(&k, &v)| (k, v)).collect(),
            venue_bins: view.venues.iter().map(|((v, b), &c)| ((v.to_string(), *b), c)).collect(),
        })
    }

    /// Snapshot covering `(floor, ceiling]` for a floor at or above the
    /// view's current one. Fails with `FloorPassed` once compaction has moved
    /// beyond `floor`.
    pub fn snapshot_at_floor(&self, name: &str, floor: u64) -> Result<RealtimeView, SpeedError> {
        let inner = self.inner.read().expect("speed layer poisoned");
        let view = inner
            .views
            .get(name)
            .ok_or_else(|| SpeedError::UnknownView(name.to_string()))?;
        if floor < view.floor {
            return Err(SpeedError::FloorPassed {
                requested: floor,
                floor: view.floor,
            });
        }
        let mut cells = view.cells.clone();
        let mut venues = view.venues.clone();
        for d in view.deltas.iter().take_while(|d| d.seq <= floor) {
            decrement(&mut cells, &d.cell);
            if let Some(key) = &d.venue {
                decrement(&mut venues, key);
            }
        }
        Ok(RealtimeView {
            name: name.to_string(),
            floor,
            ceiling: inner.ceiling.max(floor),
            cells: cells.into_iter().collect(),
            venue_bins: venues.into_iter().map(|((v, b), c)| ((v.to_string(), b), c)).collect(),
        })
    }

    /// Drop contributions of events with seq <= `new_floor`.
    pub fn compact(&self, name: &str, new_floor: u64) -> Result<(), SpeedError> {
        let mut inner = self.inner.write().expect("speed layer poisoned");
        let view = inner
            .views
            .get_mut(name)
            .ok_or_else(|| SpeedError::UnknownView(name.to_string()))?;
        if new_floor < view.floor {
            return Err(SpeedError::FloorRegression {
                requested: new_floor,
                floor: view.floor,
            });
        }
        while view.deltas.front().is_some_and(|d| d.seq <= new_floor) {
            let d = view.deltas.pop_front().expect("front checked");
            decrement(&mut view.cells, &d.cell);
            if let Some(key) = &d.venue {
                decrement(&mut view.venues, key);
            }
        }
        if view.deltas.is_empty() {
            view.interned.clear();
        }
        view.floor = new_floor;
        Ok(())
    }

    /// Number of retained deltas for `name` (one per counted event).
    pub fn footprint(&self, name: &str) -> Result<usize, SpeedError> {
        let inner = self.inner.read().expect("speed layer poisoned");
        inner
            .views
            .get(name)
            .map(|v| v.deltas.len())
            .ok_or_else(|| SpeedError::UnknownView(name.to_string()))
    }
}
