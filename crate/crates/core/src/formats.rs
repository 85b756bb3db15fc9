//! On-disk formats: line-delimited JSON records, two-column series CSV,
//! and atomic file replacement.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DiffSeries, DynamicsError};
use crate::generator::PairedSample;
use crate::hawkes::{Arrival, EventSequence, HawkesError};
use crate::vocab::{normalize_token, AaodEvent, VocabError};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: event is missing the {slot} slot")]
    MissingSlot { line: usize, slot: &'static str },
    #[error("series: {0}")]
    Series(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Hawkes(#[from] HawkesError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// One event per line. Slots are optional for arrival-only files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    #[serde(rename = "type")]
    pub kind: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<usize>,
}

impl From<&AaodEvent> for EventRecord {
    fn from(e: &AaodEvent) -> Self {
        EventRecord {
            t: e.time,
            kind: e.type_index,
            actor: Some(e.actor.to_string()),
            action: Some(e.action.to_string()),
            object: Some(e.object.to_string()),
            direction: Some(e.direction.to_string()),
            sample_id: None,
        }
    }
}

impl From<&Arrival> for EventRecord {
    fn from(a: &Arrival) -> Self {
        EventRecord {
            t: a.time,
            kind: a.kind,
            actor: None,
            action: None,
            object: None,
            direction: None,
            sample_id: None,
        }
    }
}

impl EventRecord {
    pub fn with_sample(mut self, id: usize) -> Self {
        self.sample_id = Some(id);
        self
    }

    pub fn arrival(&self) -> Arrival {
        Arrival {
            time: self.t,
            kind: self.kind,
        }
    }

    /// `line` is only used in the error.
    pub fn to_event(&self, line: usize) -> Result<AaodEvent, FormatError> {
        let slot = |v: &Option<String>, name: &'static str| {
            v.as_deref()
                .ok_or(FormatError::MissingSlot { line, slot: name })
                .and_then(|s| Ok(normalize_token(s)?))
        };
        Ok(AaodEvent {
            actor: slot(&self.actor, "actor")?,
            action: slot(&self.action, "action")?,
            object: slot(&self.object, "object")?,
            direction: slot(&self.direction, "direction")?,
            time: self.t,
            type_index: self.kind,
        })
    }
}

/// Parse one JSON value per nonblank line.
pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| FormatError::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Fully slotted events, normalized.
pub fn read_events(text: &str) -> Result<Vec<AaodEvent>, FormatError> {
    let records: Vec<EventRecord> = read_jsonl(text)?;
    records.iter().enumerate().map(|(i, r)| r.to_event(i + 1)).collect()
}

pub fn write_events(events: &[AaodEvent]) -> String {
    write_jsonl(&events.iter().map(EventRecord::from).collect::<Vec<_>>())
}

/// Arrival-only view of an event file. The horizon defaults to the last
/// event time when not given.
pub fn read_arrivals(text: &str, horizon: Option<f64>) -> Result<EventSequence, FormatError> {
    let records: Vec<EventRecord> = read_jsonl(text)?;
    let arrivals: Vec<Arrival> = records.iter().map(EventRecord::arrival).collect();
    let horizon = horizon.unwrap_or_else(|| {
        arrivals.iter().map(|a| a.time).fold(0.0, f64::max)
    });
    Ok(EventSequence::from_unsorted(arrivals, horizon)?)
}

/// A timestamp cell: a number, or a `YYYY-MM-DD` date read as Unix days.
pub fn parse_timestamp(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let date = NaiveDate::parse_from_str(cell, "%Y-%m-%d").ok()?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?;
    Some((date - epoch).num_days() as f64)
}

/// Parse `timestamp,value` rows under a header. Levels are differenced
/// with the first row as `y0`; pre-differenced input is taken as is.
pub fn parse_series_csv(text: &str, differenced: bool) -> Result<DiffSeries, FormatError> {
    let (times, values) = parse_columns(text)?;
    if differenced {
        Ok(DiffSeries::new(times, values, None)?)
    } else {
        Ok(DiffSeries::from_levels(&times, &values)?)
    }
}

fn parse_columns(text: &str) -> Result<(Vec<f64>, Vec<f64>), FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| FormatError::Series(format!("line {line}: {e}")))?;
        if row.len() != 2 {
            return Err(FormatError::Series(format!(
                "line {line}: expected 2 columns, found {}",
                row.len()
            )));
        }
        let t = parse_timestamp(&row[0])
            .ok_or_else(|| FormatError::Series(format!("line {line}: bad timestamp {:?}", &row[0])))?;
        let v: f64 = row[1]
            .parse()
            .map_err(|_| FormatError::Series(format!("line {line}: bad value {:?}", &row[1])))?;
        times.push(t);
        values.push(v);
    }
    if times.is_empty() {
        return Err(FormatError::Series("no data rows".into()));
    }
    Ok((times, values))
}

pub fn write_series_csv(header: (&str, &str), times: &[f64], values: &[f64]) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (t, v) in times.iter().zip(values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// One dataset line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub window_end: f64,
    pub month: String,
    pub window: Vec<f64>,
    pub gold: Vec<EventRecord>,
}

impl From<&PairedSample> for SampleRecord {
    fn from(s: &PairedSample) -> Self {
        SampleRecord {
            id: s.id,
            window_end: s.window_end,
            month: s.month.clone(),
            window: s.window.clone(),
            gold: s.gold.events.iter().map(EventRecord::from).collect(),
        }
    }
}

impl SampleRecord {
    pub fn gold_events(&self) -> Result<Vec<AaodEvent>, FormatError> {
        self.gold.iter().enumerate().map(|(i, r)| r.to_event(i + 1)).collect()
    }
}

/// Replace `path` with `bytes` through a sibling temp file and a rename,
/// so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}
