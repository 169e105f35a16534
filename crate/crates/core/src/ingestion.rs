//! Record validation, the ingest contract and file replay.
//!
//! Live social-media harvesters are replaced by [`replay`], which feeds an
//! NDJSON event file into any [`EventSink`] at a configurable pace.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{GeoEvent, Source};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{field}`: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ValidationError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("duplicate event_id {0:?}")]
    DuplicateEvent(String),
    #[error("ingest failed: {0}")]
    IngestFailed(String),
}

/// One NDJSON line as a flat JSON object. Unknown keys are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord(pub Map<String, Value>);

impl RawRecord {
    pub fn parse(line: &str) -> Result<RawRecord, ValidationError> {
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(map)) => Ok(RawRecord(map)),
            Ok(_) => Err(ValidationError::new("record", "not a JSON object")),
            Err(e) => Err(ValidationError::new("record", format!("unparseable JSON: {e}"))),
        }
    }
}

pub fn validate(raw: &RawRecord) -> Result<GeoEvent, ValidationError> {
    let m = &raw.0;
    let field = |name: &str| m.get(name).filter(|v| !v.is_null());
    let required = |name: &str| field(name).ok_or_else(|| ValidationError::new(name, "missing"));

    let event_id = match required("event_id")? {
        Value::String(s) if !s.is_empty() => s.clone(),
        Value::String(_) => return Err(ValidationError::new("event_id", "empty")),
        _ => return Err(ValidationError::new("event_id", "must be a string")),
    };
    let source = match required("source")? {
        Value::String(s) => s
            .parse::<Source>()
            .map_err(|_| ValidationError::new("source", format!("unknown source {s:?}")))?,
        _ => return Err(ValidationError::new("source", "must be a string")),
    };
    let ts = required("ts")?
        .as_i64()
        .ok_or_else(|| ValidationError::new("ts", "must be an integer"))?;
    if ts <= 0 {
        return Err(ValidationError::new("ts", "must be positive"));
    }
    let coord = |name: &str, limit: f64| -> Result<f64, ValidationError> {
        let v = required(name)?
            .as_f64()
            .ok_or_else(|| ValidationError::new(name, "must be a number"))?;
        if !v.is_finite() || v < -limit || v > limit {
            return Err(ValidationError::new(name, format!("out of range [-{limit}, {limit}]")));
        }
        Ok(v)
    };
    let lat = coord("lat", 90.0)?;
    let lon = coord("lon", 180.0)?;
    let venue_id = match field("venue_id") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(ValidationError::new("venue_id", "must be a string")),
    };
    let attributes = match field("attributes") {
        None => Default::default(),
        Some(Value::Object(obj)) => obj
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k.clone(), s.clone())),
                _ => Err(ValidationError::new("attributes", format!("value of {k:?} must be a string"))),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(ValidationError::new("attributes", "must be an object")),
    };
    Ok(GeoEvent {
        event_id,
        source,
        ts,
        lat,
        lon,
        venue_id,
        attributes,
    })
}

/// Anything that accepts validated events and acknowledges with a sequence
/// number once the event is durable and visible.
pub trait EventSink: Sync {
    fn ingest(&self, event: GeoEvent) -> Result<u64, IngestError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub path: PathBuf,
    /// Playback speed relative to event timestamps; 0 delivers as fast as possible.
    pub speed_factor: f64,
    /// Start over when the file is exhausted, until stopped. Later passes get
    /// `~<pass>` appended to event ids and timestamps shifted past the
    /// previous pass so they are new events.
    #[serde(default)]
    pub r#loop: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub accepted: u64,
    pub rejected: u64,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay failed: {0}")]
    ReplayFailed(String),
}

pub fn replay(spec: &ReplaySpec, sink: &dyn EventSink) -> Result<ReplayReport, ReplayError> {
    replay_until(spec, sink, &AtomicBool::new(false))
}

/// Like [`replay`], but checks `stop` between events.
pub fn replay_until(
    spec: &ReplaySpec,
    sink: &dyn EventSink,
    stop: &AtomicBool,
) -> Result<ReplayReport, ReplayError> {
    if !(spec.speed_factor >= 0.0) || !spec.speed_factor.is_finite() {
        return Err(ReplayError::ReplayFailed("speed_factor must be >= 0".into()));
    }
    let mut report = ReplayReport::default();
    let started = Instant::now();
    let mut first_ts: Option<i64> = None;
    let mut pass: u64 = 0;
    let mut shift: i64 = 0;
    loop {
        let file = File::open(&spec.path)
            .map_err(|e| ReplayError::ReplayFailed(format!("{}: {e}", spec.path.display())))?;
        let (mut min_ts, mut max_ts) = (i64::MAX, i64::MIN);
        for line in BufReader::new(file).lines() {
            if stop.load(Ordering::Relaxed) {
                return Ok(report);
            }
            let line = line.map_err(|e| ReplayError::ReplayFailed(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut event = match RawRecord::parse(&line).and_then(|r| validate(&r)) {
                Ok(ev) => ev,
                Err(e) => {
                    tracing::debug!(error = %e, "rejected record");
                    report.rejected += 1;
                    continue;
                }
            };
            min_ts = min_ts.min(event.ts);
            max_ts = max_ts.max(event.ts);
            if pass > 0 {
                event.event_id = format!("{}~{pass}", event.event_id);
                event.ts += shift;
            }
            if spec.speed_factor > 0.0 {
                let t0 = *first_ts.get_or_insert(event.ts);
                let due = Duration::from_secs_f64((event.ts - t0).max(0) as f64 / spec.speed_factor);
                if let Some(wait) = due.checked_sub(started.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            match sink.ingest(event) {
                Ok(seq) => {
                    report.accepted += 1;
                    report.last_seq = Some(seq);
                }
                Err(e) => {
                    tracing::debug!(error = %e, "ingest refused record");
                    report.rejected += 1;
                }
            }
        }
        if !spec.r#loop || min_ts > max_ts {
            return Ok(report);
        }
        pass += 1;
        shift += max_ts - min_ts + 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::sync::Mutex;

    fn rec(json: &str) -> Result<GeoEvent, ValidationError> {
        validate(&RawRecord::parse(json).unwrap())
    }

    #[test]
    fn well_formed_record() {
        let ev = rec(r#"{"event_id":"x","source":"checkin","ts":1383400800,"lat":35.955,"lon":-83.925,"extra":true}"#).unwrap();
        assert_eq!(ev.source, Source::Checkin);
        assert_eq!(ev.ts, 1_383_400_800);
        assert!(ev.venue_id.is_none());
    }

    #[test]
    fn attributes_preserved() {
        let ev = rec(r#"{"event_id":"x","source":"tweet","ts":5,"lat":0,"lon":0,"venue_id":"v","attributes":{"k":"  v "}}"#).unwrap();
        assert_eq!(ev.attributes["k"], "  v ");
        assert_eq!(ev.venue_id.as_deref(), Some("v"));
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"event_id":"x","source":"checkin","ts":1,"lat":91,"lon":0}"#, "lat"),
            (r#"{"event_id":"x","source":"checkin","ts":1,"lat":0,"lon":-180.5}"#, "lon"),
            (r#"{"event_id":"x","source":"telegraph","ts":1,"lat":0,"lon":0}"#, "source"),
            (r#"{"event_id":"x","source":"checkin","ts":0,"lat":0,"lon":0}"#, "ts"),
            (r#"{"event_id":"x","source":"checkin","ts":1.5,"lat":0,"lon":0}"#, "ts"),
            (r#"{"source":"checkin","ts":1,"lat":0,"lon":0}"#, "event_id"),
            (r#"{"event_id":"x","source":"checkin","ts":1,"lon":0}"#, "lat"),
            (r#"{"event_id":"x","source":"checkin","ts":1,"lat":0,"lon":0,"attributes":{"a":1}}"#, "attributes"),
        ];
        for (json, field) in cases {
            assert_eq!(rec(json).unwrap_err().field, field, "{json}");
        }
        assert_eq!(RawRecord::parse("[1,2]").unwrap_err().field, "record");
        assert_eq!(RawRecord::parse("{oops").unwrap_err().field, "record");
    }

    struct Collect(Mutex<Vec<GeoEvent>>);

    impl EventSink for Collect {
        fn ingest(&self, event: GeoEvent) -> Result<u64, IngestError> {
            let mut v = self.0.lock().unwrap();
            if v.iter().any(|e| e.event_id == event.event_id) {
                return Err(IngestError::DuplicateEvent(event.event_id));
            }
            v.push(event);
            Ok(v.len() as u64)
        }
    }

    fn write_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn valid_line(i: usize) -> String {
        format!(r#"{{"event_id":"e{i}","source":"tweet","ts":{},"lat":35.9,"lon":-83.9}}"#, 1000 + i)
    }

    #[test]
    fn replay_counts_malformed_lines() {
        let mut lines: Vec<String> = (0..8).map(valid_line).collect();
        lines.insert(3, "not json".into());
        lines.push(r#"{"event_id":"bad","source":"tweet","ts":1,"lat":99,"lon":0}"#.into());
        let f = write_file(&lines);
        let sink = Collect(Mutex::new(vec![]));
        let spec = ReplaySpec { path: f.path().into(), speed_factor: 0.0, r#loop: false };
        let report = replay(&spec, &sink).unwrap();
        assert_eq!((report.accepted, report.rejected), (8, 2));
        let ids: Vec<_> = sink.0.lock().unwrap().iter().map(|e| e.event_id.clone()).collect();
        assert_eq!(ids, (0..8).map(|i| format!("e{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn replay_all_valid() {
        let f = write_file(&(0..10).map(valid_line).collect::<Vec<_>>());
        let sink = Collect(Mutex::new(vec![]));
        let spec = ReplaySpec { path: f.path().into(), speed_factor: 0.0, r#loop: false };
        let report = replay(&spec, &sink).unwrap();
        assert_eq!((report.accepted, report.rejected, report.last_seq), (10, 0, Some(10)));
    }

    #[test]
    fn replay_paces_by_timestamp() {
        // 3 events spanning 2 s of event time at 20x -> about 100 ms
        let f = write_file(&[valid_line(0), valid_line(1), valid_line(2)]);
        let sink = Collect(Mutex::new(vec![]));
        let spec = ReplaySpec { path: f.path().into(), speed_factor: 20.0, r#loop: false };
        let t = Instant::now();
        replay(&spec, &sink).unwrap();
        assert!(t.elapsed() >= Duration::from_millis(95));
    }

    #[test]
    fn replay_missing_file_fails() {
        let sink = Collect(Mutex::new(vec![]));
        let spec = ReplaySpec { path: "/nonexistent/events.ndjson".into(), speed_factor: 0.0, r#loop: false };
        assert!(matches!(replay(&spec, &sink), Err(ReplayError::ReplayFailed(_))));
    }

    #[test]
    fn looping_replay_renames_and_stops() {
        let f = write_file(&(0..5).map(valid_line).collect::<Vec<_>>());
        struct StopAfter(Collect, AtomicBool);
        impl EventSink for StopAfter {
            fn ingest(&self, event: GeoEvent) -> Result<u64, IngestError> {
                let seq = self.0.ingest(event)?;
                if seq == 12 {
                    self.1.store(true, Ordering::Relaxed);
                }
                Ok(seq)
            }
        }
        let sink = StopAfter(Collect(Mutex::new(vec![])), AtomicBool::new(false));
        let spec = ReplaySpec { path: f.path().into(), speed_factor: 0.0, r#loop: true };
        let report = replay_until(&spec, &sink, &sink.1).unwrap();
        assert_eq!(report.accepted, 12);
        let events = sink.0 .0.lock().unwrap();
        assert_eq!(events[5].event_id, "e0~1");
        assert!(events[5].ts > events[4].ts);
    }
}
