//! Append-only event archive.
//!
//! On disk the archive is a directory of NDJSON segments,
//! `segment-<n>.ndjson`, each line `{"seq":..,"event":{..}}`. Sequence
//! numbers start at 1 and are dense. Entries are also held in memory, ordered
//! by seq, and rebuilt from the segments on open. A torn final line (crash
//! mid-write) is discarded during recovery.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::model::{BoundingBox, GeoEvent, TimeWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub seq: u64,
    pub event: GeoEvent,
}

/// Where archive lines are persisted.
pub trait LogBackend: Send {
    /// Persist one serialized entry. Must not report success unless the line
    /// was written in full.
    fn append(&mut self, seq: u64, line: &str) -> io::Result<()>;
}

/// Keeps nothing; for tests and throwaway engines.
#[derive(Debug, Default)]
pub struct MemoryLog;

impl LogBackend for MemoryLog {
    fn append(&mut self, _seq: u64, _line: &str) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Flush to the OS after every append (survives process crashes).
    Flush,
    /// Also fsync every append (survives power loss).
    Fsync,
}

pub struct SegmentLog {
    dir: PathBuf,
    segment_len: u64,
    sync: SyncMode,
    current: Option<(u64, BufWriter<File>)>,
}

impl SegmentLog {
    fn segment_path(dir: &Path, n: u64) -> PathBuf {
        dir.join(format!("segment-{n}.ndjson"))
    }

    fn open_segment(&mut self, n: u64) -> io::Result<&mut BufWriter<File>> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(Self::segment_path(&self.dir, n))?;
        self.current = Some((n, BufWriter::new(file)));
        Ok(&mut self.current.as_mut().expect("just set").1)
    }
}

impl LogBackend for SegmentLog {
    fn append(&mut self, seq: u64, line: &str) -> io::Result<()> {
        let segment = (seq - 1) / self.segment_len + 1;
        let fsync = self.sync == SyncMode::Fsync;
        let writer = match &mut self.current {
            Some((n, w)) if *n == segment => w,
            _ => self.open_segment(segment)?,
        };
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if fsync {
            writer.get_ref().sync_data()?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct ArchiveState {
    entries: Vec<Arc<ArchiveEntry>>,
    ids: HashSet<String>,
}

pub struct Archive {
    state: RwLock<ArchiveState>,
    log: Mutex<Box<dyn LogBackend>>,
}

impl Archive {
    pub fn in_memory() -> Self {
        Archive::with_backend(Box::new(MemoryLog))
    }

    /// Empty archive persisting through `backend`.
    pub fn with_backend(backend: Box<dyn LogBackend>) -> Self {
        Archive {
            state: RwLock::new(ArchiveState::default()),
            log: Mutex::new(backend),
        }
    }

    /// Open (or create) a segmented archive under `dir`, recovering every
    /// complete entry.
    pub fn open(dir: impl AsRef<Path>, segment_len: u64, sync: SyncMode) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut segments: Vec<(u64, PathBuf)> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let n = name.strip_prefix("segment-")?.strip_suffix(".ndjson")?.parse().ok()?;
                Some((n, e.path()))
            })
            .collect();
        segments.sort();

        let mut state = ArchiveState::default();
        let last = segments.len().saturating_sub(1);
        for (i, (_, path)) in segments.iter().enumerate() {
            let mut good_len: u64 = 0;
            let mut reader = BufReader::new(File::open(path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                let complete = line.ends_with('\n');
                match serde_json::from_str::<ArchiveEntry>(line.trim_end()) {
                    Ok(entry) if complete => {
                        let expected = state.entries.len() as u64 + 1;
                        if entry.seq != expected {
                            return Err(StoreError::Corrupt(format!(
                                "{}: expected seq {expected}, found {}",
                                path.display(),
                                entry.seq
                            )));
                        }
                        state.ids.insert(entry.event.event_id.clone());
                        state.entries.push(Arc::new(entry));
                        good_len += n as u64;
                    }
                    _ if i == last => {
                        // torn tail from an interrupted write
                        tracing::warn!(path = %path.display(), "discarding incomplete archive tail");
                        break;
                    }
                    _ => {
                        return Err(StoreError::Corrupt(format!(
                            "{}: unreadable entry after seq {}",
                            path.display(),
                            state.entries.len()
                        )))
                    }
                }
            }
            if i == last {
                OpenOptions::new().write(true).open(path)?.set_len(good_len)?;
            }
        }

        let log = SegmentLog {
            dir,
            segment_len: segment_len.max(1),
            sync,
            current: None,
        };
        Ok(Archive {
            state: RwLock::new(state),
            log: Mutex::new(Box::new(log)),
        })
    }

    pub fn append(&self, event: GeoEvent) -> Result<u64, StoreError> {
        // The log mutex makes this the single writer.
        let mut log = self.log.lock().expect("archive log poisoned");
        let seq = {
            let state = self.state.read().expect("archive state poisoned");
            if state.ids.contains(&event.event_id) {
                return Err(StoreError::DuplicateEvent(event.event_id));
            }
            state.entries.len() as u64 + 1
        };
        let entry = ArchiveEntry { seq, event };
        let line = serde_json::to_string(&entry).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        log.append(seq, &line)
            .map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        let mut state = self.state.write().expect("archive state poisoned");
        state.ids.insert(entry.event.event_id.clone());
        state.entries.push(Arc::new(entry));
        Ok(seq)
    }

    pub fn contains_id(&self, event_id: &str) -> bool {
        self.state.read().expect("archive state poisoned").ids.contains(event_id)
    }

    /// Largest durably appended seq; 0 when empty.
    pub fn high_watermark(&self) -> u64 {
        self.state.read().expect("archive state poisoned").entries.len() as u64
    }

    /// Entries with `window.start <= ts < window.end`, inside `bbox` (closed)
    /// when given and with `seq <= up_to_seq` when given, in seq order.
    pub fn scan(
        &self,
        window: TimeWindow,
        bbox: Option<&BoundingBox>,
        up_to_seq: Option<u64>,
    ) -> Vec<Arc<ArchiveEntry>> {
        let mut out = Vec::new();
        self.for_each(window, bbox, up_to_seq, |e| out.push(Arc::clone(e)));
        out
    }

    /// Visit the entries [`scan`](Self::scan) would return without collecting them.
    pub fn for_each(
        &self,
        window: TimeWindow,
        bbox: Option<&BoundingBox>,
        up_to_seq: Option<u64>,
        mut f: impl FnMut(&Arc<ArchiveEntry>),
    ) {
        let prefix = self.prefix(up_to_seq);
        for entry in prefix.iter() {
            let ev = &entry.event;
            if window.contains(ev.ts) && bbox.map_or(true, |b| b.contains(ev.lat, ev.lon)) {
                f(entry);
            }
        }
    }

    /// Entries with `from < seq <= to`, in seq order.
    pub fn range(&self, from: u64, to: u64) -> Vec<Arc<ArchiveEntry>> {
        let state = self.state.read().expect("archive state poisoned");
        let hi = (to as usize).min(state.entries.len());
        let lo = (from as usize).min(hi);
        state.entries[lo..hi].to_vec()
    }

    /// Consistent prefix of the archive, up to `up_to_seq` when given.
    fn prefix(&self, up_to_seq: Option<u64>) -> Vec<Arc<ArchiveEntry>> {
        let state = self.state.read().expect("archive state poisoned");
        let n = up_to_seq.map_or(state.entries.len(), |k| (k as usize).min(state.entries.len()));
        state.entries[..n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(id: &str, ts: i64, lat: f64, lon: f64) -> GeoEvent {
        GeoEvent {
            event_id: id.into(),
            source: Source::Tweet,
            ts,
            lat,
            lon,
            venue_id: None,
            attributes: Default::default(),
        }
    }

    #[test]
    fn seqs_start_at_one_and_dedup() {
        let a = Archive::in_memory();
        assert_eq!(a.high_watermark(), 0);
        assert_eq!(a.append(ev("a", 1, 0.0, 0.0)).unwrap(), 1);
        assert!(matches!(a.append(ev("a", 2, 0.0, 0.0)), Err(StoreError::DuplicateEvent(_))));
        assert_eq!(a.append(ev("b", 2, 0.0, 0.0)).unwrap(), 2);
        assert_eq!(a.append(ev("c", 2, 0.0, 0.0)).unwrap(), 3);
        assert_eq!(a.high_watermark(), 3);
    }

    #[test]
    fn empty_scan() {
        let a = Archive::in_memory();
        assert!(a.scan(TimeWindow::all(), None, None).is_empty());
    }

    #[test]
    fn scan_matches_brute_force_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Archive::in_memory();
        let mut all = Vec::new();
        for i in 0..500 {
            let e = ev(&format!("e{i}"), rng.random_range(1..1000), rng.random_range(35.0..36.0), rng.random_range(-84.0..-83.0));
            a.append(e.clone()).unwrap();
            all.push(e);
        }
        for _ in 0..50 {
            let s = rng.random_range(1..900);
            let w = TimeWindow::new(s, s + rng.random_range(1..500)).unwrap();
            let lat0 = rng.random_range(35.0..35.8);
            let lon0 = rng.random_range(-84.0..-83.2);
            let b = BoundingBox::new(lat0, lon0, lat0 + 0.2, lon0 + 0.3).unwrap();
            let k = rng.random_range(0..=500u64);
            let got: Vec<u64> = a.scan(w, Some(&b), Some(k)).iter().map(|e| e.seq).collect();
            let want: Vec<u64> = all
                .iter()
                .enumerate()
                .filter(|(i, e)| (*i as u64) < k && w.contains(e.ts) && b.contains(e.lat, e.lon))
                .map(|(i, _)| i as u64 + 1)
                .collect();
            assert_eq!(got, want);
            // partition by watermark
            let mut joined = got.clone();
            joined.extend(a.scan(w, Some(&b), None).iter().map(|e| e.seq).filter(|&s| s > k));
            let full: Vec<u64> = a.scan(w, Some(&b), None).iter().map(|e| e.seq).collect();
            assert_eq!(joined, full);
        }
    }

    #[test]
    fn recovery_continues_sequence() {
        let dir = tempfile::tempdir().unwrap();
        {
            let a = Archive::open(dir.path(), 7, SyncMode::Flush).unwrap();
            for i in 0..20 {
                a.append(ev(&format!("e{i}"), 10 + i, 1.0, 1.0)).unwrap();
            }
        }
        let lines: usize = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| fs::read_to_string(e.unwrap().path()).unwrap().lines().count())
            .sum();
        assert_eq!(lines, 20);
        let a = Archive::open(dir.path(), 7, SyncMode::Flush).unwrap();
        assert_eq!(a.high_watermark(), 20);
        assert!(matches!(a.append(ev("e3", 1, 1.0, 1.0)), Err(StoreError::DuplicateEvent(_))));
        assert_eq!(a.append(ev("new", 1, 1.0, 1.0)).unwrap(), 21);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        {
            let a = Archive::open(dir.path(), 100, SyncMode::Flush).unwrap();
            for i in 0..3 {
                a.append(ev(&format!("e{i}"), 10, 1.0, 1.0)).unwrap();
            }
        }
        let seg = dir.path().join("segment-1.ndjson");
        let mut f = OpenOptions::new().append(true).open(&seg).unwrap();
        f.write_all(br#"{"seq":4,"event":{"event_id":"half"#).unwrap();
        drop(f);
        let a = Archive::open(dir.path(), 100, SyncMode::Flush).unwrap();
        assert_eq!(a.high_watermark(), 3);
        assert_eq!(a.append(ev("half", 10, 1.0, 1.0)).unwrap(), 4);
        drop(a);
        let a = Archive::open(dir.path(), 100, SyncMode::Flush).unwrap();
        assert_eq!(a.high_watermark(), 4);
    }

    struct Failing;
    impl LogBackend for Failing {
        fn append(&mut self, _: u64, _: &str) -> io::Result<()> {
            Err(io::Error::other("disk full"))
        }
    }

    #[test]
    fn storage_failure_leaves_archive_unchanged() {
        let a = Archive::with_backend(Box::new(Failing));
        assert!(matches!(a.append(ev("a", 1, 0.0, 0.0)), Err(StoreError::StorageFailure(_))));
        assert_eq!(a.high_watermark(), 0);
        assert!(!a.contains_id("a"));
    }
}
