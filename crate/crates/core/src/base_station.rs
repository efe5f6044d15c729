//! Base-station aggregator and the privacy boundary.
//!
//! Vehicles send one scalar derivative value per round; the station sums
//! them and broadcasts the sum back. Nothing else crosses the boundary. The
//! message log records both directions and can be written to and audited
//! from a line-delimited file:
//!
//! ```text
//! report,<round>,<vehicle id>,<value>
//! broadcast,<round>,,<value>
//! ```
//!
//! V2V traffic is logged separately, one line per broadcast:
//!
//! ```text
//! <round>,<sender id>,<recipient count>,<recommended speed>
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::VehicleId;

pub const REPORT_KIND: &str = "report";
pub const BROADCAST_KIND: &str = "broadcast";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StationError {
    #[error("round {round}: active vehicle {vehicle} did not report")]
    MissingReport { round: u64, vehicle: VehicleId },
    #[error("round {round}: vehicle {vehicle} reported twice")]
    DuplicateReport { round: u64, vehicle: VehicleId },
    #[error("report for round {report} while round {open} is open")]
    StaleRound { report: u64, open: u64 },
    #[error("no round is open")]
    NoOpenRound,
    #[error("round {round}: report value {value} is not finite")]
    NonFinite { round: u64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub round: u64,
    /// `None` in anonymous mode.
    pub vehicle: Option<VehicleId>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateBroadcast {
    pub round: u64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Record {
    Report(GradientReport),
    Broadcast(AggregateBroadcast),
}

impl Record {
    pub fn round(&self) -> u64 {
        match self {
            Record::Report(r) => r.round,
            Record::Broadcast(b) => b.round,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Record::Report(r) => {
                let id = r.vehicle.map(|v| v.0.to_string()).unwrap_or_default();
                format!("{REPORT_KIND},{},{id},{}", r.round, r.value)
            }
            Record::Broadcast(b) => format!("{BROADCAST_KIND},{},,{}", b.round, b.value),
        }
    }
}

/// Append-only record of everything that crossed the privacy boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    records: Vec<Record>,
}

impl MessageLog {
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", r.to_line());
        }
        out
    }

    pub fn to_raw(&self) -> Vec<RawRecord> {
        parse_records(&self.to_text())
    }
}

/// How identities are handled in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportingMode {
    /// Reports carry vehicle ids; missing and duplicate reports are detected.
    #[default]
    Identified,
    /// Reports carry no id; only the values reach the station.
    Anonymous,
}

/// What to do when an active vehicle does not report in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Leave it out of that round's sum.
    #[default]
    Exclude,
    Reject,
}

/// Result of closing a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub broadcast: AggregateBroadcast,
    pub contributors: usize,
    /// Active vehicles that did not report (identified mode only).
    pub excluded: Vec<VehicleId>,
}

impl Aggregation {
    pub fn empty_fleet(&self) -> bool {
        self.contributors == 0
    }
}

/// Single logical aggregator. A round is opened with the active fleet,
/// collects reports, and is closed with one broadcast; per-vehicle values
/// do not outlive the round.
#[derive(Debug, Clone, Default)]
pub struct BaseStation {
    mode: ReportingMode,
    missing: MissingPolicy,
    open: Option<u64>,
    expected: BTreeSet<VehicleId>,
    identified: BTreeMap<VehicleId, f64>,
    anonymous: Vec<f64>,
    log: MessageLog,
}

impl BaseStation {
    pub fn new(mode: ReportingMode, missing: MissingPolicy) -> Self {
        Self { mode, missing, ..Self::default() }
    }

    pub fn open_round(&mut self, round: u64, active: &[VehicleId]) {
        self.open = Some(round);
        self.expected = active.iter().copied().collect();
        self.identified.clear();
        self.anonymous.clear();
    }

    pub fn submit(&mut self, report: GradientReport) -> Result<(), StationError> {
        let open = self.open.ok_or(StationError::NoOpenRound)?;
        if report.round != open {
            return Err(StationError::StaleRound { report: report.round, open });
        }
        if !report.value.is_finite() {
            return Err(StationError::NonFinite { round: open, value: report.value });
        }
        match (self.mode, report.vehicle) {
            (ReportingMode::Identified, Some(id)) => {
                if self.identified.insert(id, report.value).is_some() {
                    return Err(StationError::DuplicateReport { round: open, vehicle: id });
                }
                self.log.push(Record::Report(report));
            }
            (ReportingMode::Identified, None) | (ReportingMode::Anonymous, _) => {
                self.anonymous.push(report.value);
                self.log.push(Record::Report(GradientReport { vehicle: None, ..report }));
            }
        }
        Ok(())
    }

    pub fn close_round(&mut self) -> Result<Aggregation, StationError> {
        let round = self.open.take().ok_or(StationError::NoOpenRound)?;
        let mut excluded = Vec::new();
        if self.mode == ReportingMode::Identified {
            for &id in &self.expected {
                if !self.identified.contains_key(&id) {
                    if self.missing == MissingPolicy::Reject {
                        self.discard();
                        return Err(StationError::MissingReport { round, vehicle: id });
                    }
                    excluded.push(id);
                }
            }
        }
        // ids ascending, then anonymous values in total order
        let mut value = 0.0;
        for v in self.identified.values() {
            value += v;
        }
        self.anonymous.sort_by(f64::total_cmp);
        for v in &self.anonymous {
            value += v;
        }
        let contributors = self.identified.len() + self.anonymous.len();
        let broadcast = AggregateBroadcast { round, value };
        self.log.push(Record::Broadcast(broadcast));
        self.discard();
        Ok(Aggregation { broadcast, contributors, excluded })
    }

    fn discard(&mut self) {
        self.expected.clear();
        self.identified.clear();
        self.anonymous.clear();
    }

    /// Number of per-vehicle values currently held.
    pub fn retained_values(&self) -> usize {
        self.identified.len() + self.anonymous.len()
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }
}

/// Aggregates one round's reports in a fresh station.
pub fn collect_and_aggregate(
    reports: &[GradientReport],
    round: u64,
    active: &[VehicleId],
    policy: MissingPolicy,
) -> Result<Aggregation, StationError> {
    let mut station = BaseStation::new(ReportingMode::Identified, policy);
    station.open_round(round, active);
    for r in reports {
        station.submit(*r)?;
    }
    station.close_round()
}

/// One recommended-speed broadcast between vehicles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V2vMessage {
    pub round: u64,
    pub sender: VehicleId,
    pub recipients: usize,
    pub speed: f64,
}

impl V2vMessage {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{}", self.round, self.sender.0, self.recipients, self.speed)
    }
}

pub fn v2v_text(messages: &[V2vMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let _ = writeln!(out, "{}", m.to_line());
    }
    out
}

/// A log line split into fields, before any schema is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub fields: Vec<String>,
}

pub fn parse_records(text: &str) -> Vec<RawRecord> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| RawRecord { line: i + 1, fields: l.split(',').map(|f| f.trim().to_string()).collect() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    BaseStation,
    V2v,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFinding {
    pub stream: Stream,
    /// Position of the offending record within its stream.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AuditVerdict {
    Pass,
    Fail(Vec<AuditFinding>),
}

impl AuditVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, AuditVerdict::Pass)
    }
}

/// Optional side information for [`audit_privacy`].
#[derive(Debug, Clone, Default)]
pub struct AuditContext<'a> {
    pub v2v: Option<&'a [RawRecord]>,
    /// Recommended speed of each vehicle at each round, to check that V2V
    /// messages carry exactly that value.
    pub recommended: Option<&'a BTreeMap<(u64, VehicleId), f64>>,
    /// Curve parameters of the fleet; no message may carry one of them.
    pub coefficients: &'a [f64],
}

fn scalar(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Checks that the log only holds scalar derivative reports and their sums,
/// and that V2V traffic only carries recommended speeds.
pub fn audit_privacy(log: &[RawRecord], ctx: &AuditContext<'_>) -> AuditVerdict {
    let secrets: HashSet<u64> =
        ctx.coefficients.iter().filter(|c| **c != 0.0).map(|c| c.to_bits()).collect();
    let mut findings = Vec::new();
    let mut fail = |stream, index, reason: String| findings.push(AuditFinding { stream, index, reason });

    for (index, rec) in log.iter().enumerate() {
        let f = &rec.fields;
        if f.len() != 4 {
            fail(Stream::BaseStation, index, format!("expected 4 fields, found {}", f.len()));
            continue;
        }
        if f[1].parse::<u64>().is_err() {
            fail(Stream::BaseStation, index, format!("bad round `{}`", f[1]));
        }
        match f[0].as_str() {
            REPORT_KIND => {
                if !f[2].is_empty() && f[2].parse::<u32>().is_err() {
                    fail(Stream::BaseStation, index, format!("bad vehicle id `{}`", f[2]));
                }
            }
            BROADCAST_KIND => {
                if !f[2].is_empty() {
                    fail(Stream::BaseStation, index, "broadcast carries a vehicle id".into());
                }
            }
            other => fail(Stream::BaseStation, index, format!("unknown record kind `{other}`")),
        }
        match scalar(&f[3]) {
            None => fail(Stream::BaseStation, index, format!("value `{}` is not a finite scalar", f[3])),
            Some(v) if secrets.contains(&v.to_bits()) => {
                fail(Stream::BaseStation, index, format!("value {v} equals a curve coefficient"))
            }
            Some(_) => {}
        }
    }

    for (index, rec) in ctx.v2v.unwrap_or_default().iter().enumerate() {
        let f = &rec.fields;
        if f.len() != 4 {
            fail(Stream::V2v, index, format!("expected 4 fields, found {}", f.len()));
            continue;
        }
        let round = f[0].parse::<u64>();
        let sender = f[1].parse::<u32>();
        if round.is_err() || sender.is_err() || f[2].parse::<usize>().is_err() {
            fail(Stream::V2v, index, "malformed header fields".into());
            continue;
        }
        let Some(speed) = scalar(&f[3]) else {
            fail(Stream::V2v, index, format!("payload `{}` is not a finite scalar", f[3]));
            continue;
        };
        if secrets.contains(&speed.to_bits()) {
            fail(Stream::V2v, index, format!("payload {speed} equals a curve coefficient"));
        }
        if let Some(map) = ctx.recommended {
            let key = (round.unwrap(), VehicleId(sender.unwrap()));
            match map.get(&key) {
                Some(&s) if s.to_bits() == speed.to_bits() => {}
                Some(&s) => fail(Stream::V2v, index, format!("payload {speed} differs from recommendation {s}")),
                None => fail(Stream::V2v, index, "sender has no recommendation that round".into()),
            }
        }
    }

    if findings.is_empty() {
        AuditVerdict::Pass
    } else {
        AuditVerdict::Fail(findings)
    }
}
