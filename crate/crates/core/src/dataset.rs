//! Polling-station records, canonical CSV ingestion, and filtering.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::MetricKind;

pub const CSV_HEADER: [&str; 6] = ["region", "territory", "station_id", "registered", "ballots", "leader_votes"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header mismatch: expected '{}', found '{found}'", CSV_HEADER.join(","))]
    Header { found: String },
    #[error("row {row}: field '{field}': {message}")]
    Malformed { row: u64, field: String, message: String },
    #[error("{} invariant violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invariant(Vec<Violation>),
    #[error("row {row}: duplicate station key {key}")]
    Duplicate { row: u64, key: String },
}

impl DatasetError {
    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::Io { .. })
    }
}

/// A record that broke `0 <= leader_votes <= ballots <= registered`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub row: u64,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {} station {}: {}", self.row, self.key, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StationRecord {
    pub region: String,
    pub territory: String,
    pub station_id: String,
    pub registered: u64,
    pub ballots: u64,
    pub leader_votes: u64,
}

impl StationRecord {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.region, self.territory, self.station_id)
    }

    fn check(&self) -> Result<(), String> {
        if self.station_id.is_empty() {
            return Err("empty station_id".into());
        }
        if self.ballots > self.registered {
            return Err(format!("ballots {} > registered {}", self.ballots, self.registered));
        }
        if self.leader_votes > self.ballots {
            return Err(format!("leader_votes {} > ballots {}", self.leader_votes, self.ballots));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IngestMode {
    /// Any bad row fails the whole file.
    #[default]
    Strict,
    /// Bad rows are skipped and reported.
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedRow {
    pub row: u64,
    pub reason: String,
}

impl fmt::Display for SkippedRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "skipped row {}: {}", self.row, self.reason)
    }
}

/// An immutable, validated set of station records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElectionDataset {
    election_id: String,
    records: Vec<StationRecord>,
    source_digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ElectionDataset {
    /// Builds a dataset from in-memory records. The digest covers the
    /// canonical CSV rendering, so writing and re-ingesting it yields the
    /// same digest.
    pub fn from_records(election_id: impl Into<String>, records: Vec<StationRecord>) -> Result<Self, DatasetError> {
        let mut violations = Vec::new();
        let mut seen = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let row = i as u64 + 2;
            if let Err(message) = record.check() {
                violations.push(Violation { row, key: record.key(), message });
            }
            if seen.insert(record.key(), row).is_some() {
                return Err(DatasetError::Duplicate { row, key: record.key() });
            }
        }
        if !violations.is_empty() {
            return Err(DatasetError::Invariant(violations));
        }
        let mut dataset = ElectionDataset { election_id: election_id.into(), records, source_digest: String::new() };
        dataset.source_digest = sha256_hex(&dataset.to_csv_bytes());
        Ok(dataset)
    }

    pub fn ingest(path: impl AsRef<Path>, election_id: impl Into<String>) -> Result<Self, DatasetError> {
        Self::ingest_with(path, election_id, IngestMode::Strict).map(|(d, _)| d)
    }

    pub fn ingest_with(
        path: impl AsRef<Path>,
        election_id: impl Into<String>,
        mode: IngestMode,
    ) -> Result<(Self, Vec<SkippedRow>), DatasetError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::from_csv_bytes(&bytes, election_id, mode)
    }

    pub fn from_csv_bytes(
        bytes: &[u8],
        election_id: impl Into<String>,
        mode: IngestMode,
    ) -> Result<(Self, Vec<SkippedRow>), DatasetError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let header = reader.headers().map_err(|e| DatasetError::Header { found: e.to_string() })?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(DatasetError::Header { found: header.iter().collect::<Vec<_>>().join(",") });
        }

        let strict = mode == IngestMode::Strict;
        let mut records = Vec::new();
        let mut skipped = Vec::new();
        let mut violations = Vec::new();
        let mut seen: HashMap<String, u64> = HashMap::new();

        for (i, result) in reader.records().enumerate() {
            // Header is row 1.
            let mut row = i as u64 + 2;
            let parsed = result
                .map_err(|e| {
                    if let Some(pos) = e.position() {
                        row = pos.line();
                    }
                    DatasetError::Malformed { row, field: "record".into(), message: e.to_string() }
                })
                .and_then(|raw| parse_row(&raw, row));
            let record = match parsed {
                Ok(r) => r,
                Err(e) if strict => return Err(e),
                Err(e) => {
                    skipped.push(SkippedRow { row, reason: e.to_string() });
                    continue;
                }
            };
            if let Err(message) = record.check() {
                let v = Violation { row, key: record.key(), message };
                if strict {
                    violations.push(v);
                } else {
                    skipped.push(SkippedRow { row, reason: v.to_string() });
                }
                continue;
            }
            if let Some(first) = seen.get(&record.key()) {
                if strict {
                    return Err(DatasetError::Duplicate { row, key: record.key() });
                }
                skipped.push(SkippedRow {
                    row,
                    reason: format!("duplicate station key {} (first at row {first})", record.key()),
                });
                continue;
            }
            seen.insert(record.key(), row);
            records.push(record);
        }
        if !violations.is_empty() {
            return Err(DatasetError::Invariant(violations));
        }

        let dataset = ElectionDataset { election_id: election_id.into(), records, source_digest: sha256_hex(bytes) };
        Ok((dataset, skipped))
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.records {
            writer
                .write_record([
                    r.region.as_str(),
                    r.territory.as_str(),
                    r.station_id.as_str(),
                    &r.registered.to_string(),
                    &r.ballots.to_string(),
                    &r.leader_votes.to_string(),
                ])
                .expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_bytes()).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
    }

    pub fn election_id(&self) -> &str {
        &self.election_id
    }

    pub fn records(&self) -> &[StationRecord] {
        &self.records
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn parse_row(raw: &csv::StringRecord, row: u64) -> Result<StationRecord, DatasetError> {
    let text = |idx: usize| -> Result<String, DatasetError> {
        raw.get(idx).map(str::to_owned).ok_or_else(|| DatasetError::Malformed {
            row,
            field: CSV_HEADER[idx].into(),
            message: "missing field".into(),
        })
    };
    let count = |idx: usize| -> Result<u64, DatasetError> {
        let value = text(idx)?;
        value.parse::<u64>().map_err(|_| DatasetError::Malformed {
            row,
            field: CSV_HEADER[idx].into(),
            message: format!("'{value}' is not a non-negative integer"),
        })
    };
    let station_id = text(2)?;
    if station_id.is_empty() {
        return Err(DatasetError::Malformed { row, field: "station_id".into(), message: "empty".into() });
    }
    Ok(StationRecord {
        region: text(0)?,
        territory: text(1)?,
        station_id,
        registered: count(3)?,
        ballots: count(4)?,
        leader_votes: count(5)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub min_registered: u64,
    pub exclude_full_turnout: bool,
}

impl FilterSpec {
    /// Histogram default: stations with 100% turnout are left out.
    pub fn histogram() -> Self {
        FilterSpec { exclude_full_turnout: true, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    ZeroRegistered,
    BelowMinRegistered,
    FullTurnout,
    ZeroBallots,
}

impl ExclusionReason {
    pub fn label(self) -> &'static str {
        match self {
            ExclusionReason::ZeroRegistered => "zero registered",
            ExclusionReason::BelowMinRegistered => "below min_registered",
            ExclusionReason::FullTurnout => "full turnout",
            ExclusionReason::ZeroBallots => "zero ballots",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionTally {
    pub zero_registered: u64,
    pub below_min_registered: u64,
    pub full_turnout: u64,
    pub zero_ballots: u64,
}

impl ExclusionTally {
    pub fn add(&mut self, reason: ExclusionReason) {
        match reason {
            ExclusionReason::ZeroRegistered => self.zero_registered += 1,
            ExclusionReason::BelowMinRegistered => self.below_min_registered += 1,
            ExclusionReason::FullTurnout => self.full_turnout += 1,
            ExclusionReason::ZeroBallots => self.zero_ballots += 1,
        }
    }

    pub fn get(&self, reason: ExclusionReason) -> u64 {
        match reason {
            ExclusionReason::ZeroRegistered => self.zero_registered,
            ExclusionReason::BelowMinRegistered => self.below_min_registered,
            ExclusionReason::FullTurnout => self.full_turnout,
            ExclusionReason::ZeroBallots => self.zero_ballots,
        }
    }

    pub fn total(&self) -> u64 {
        self.zero_registered + self.below_min_registered + self.full_turnout + self.zero_ballots
    }
}

/// First applicable exclusion reason, checked in a fixed order.
pub fn exclusion_reason(record: &StationRecord, filter: &FilterSpec, metric: MetricKind) -> Option<ExclusionReason> {
    if record.registered == 0 {
        Some(ExclusionReason::ZeroRegistered)
    } else if record.registered < filter.min_registered {
        Some(ExclusionReason::BelowMinRegistered)
    } else if filter.exclude_full_turnout && record.ballots == record.registered {
        Some(ExclusionReason::FullTurnout)
    } else if metric == MetricKind::LeaderResult && record.ballots == 0 {
        Some(ExclusionReason::ZeroBallots)
    } else {
        None
    }
}

#[derive(Clone, Debug)]
pub struct Filtered<'a> {
    pub included: Vec<&'a StationRecord>,
    pub tally: ExclusionTally,
}

pub fn apply_filter<'a>(dataset: &'a ElectionDataset, filter: &FilterSpec, metric: MetricKind) -> Filtered<'a> {
    let mut included = Vec::with_capacity(dataset.len());
    let mut tally = ExclusionTally::default();
    for record in dataset.records() {
        match exclusion_reason(record, filter, metric) {
            Some(reason) => tally.add(reason),
            None => included.push(record),
        }
    }
    Filtered { included, tally }
}
