//! Shared domain types and the line-delimited trace format.
//!
//! A trace is UTF-8 text with one JSON object per line. Every record carries
//! `node`, `layer`, `kind` and `ts_ns`; the remaining keys are optional in the
//! format but each event kind has a set of mandatory ones (see
//! [`EventKind::mandatory_keys`]). Key order on input is free; the serializer
//! always writes the canonical order of [`EventKeys`].

use std::fmt;
use std::ops::Sub;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration in integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_MS: Nanos = 1_000_000;

/// System frame numbers wrap at this value.
pub const SFN_MODULUS: u32 = 1024;

/// Upper bound on slots per frame accepted by the parser (numerology 5).
pub const MAX_SLOTS_PER_FRAME: u32 = 320;

/// Upper bound on HARQ process ids accepted by the parser.
pub const MAX_HARQ_PROCESSES: u32 = 32;

/// Nanoseconds since the common epoch shared by every node of one trace.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_ms(ms: u64) -> Self {
        Timestamp(ms * NANOS_PER_MS)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    /// Elapsed time from `earlier` to `self`, or `None` if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> Option<Nanos> {
        self.0.checked_sub(earlier.0)
    }
}

impl Sub for Timestamp {
    type Output = Nanos;

    /// Panics on negative differences; use [`Timestamp::since`] when the order is unknown.
    fn sub(self, rhs: Timestamp) -> Nanos {
        self.0
            .checked_sub(rhs.0)
            .expect("timestamp subtraction went negative")
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Node {
    Ue,
    Gnb,
    Core,
    AppClient,
    AppServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    App,
    Pdcp,
    Rlc,
    Mac,
    Harq,
    N3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Arrival,
    Service,
    SegmentTaken,
    HarqTxAttempt,
    HarqDecodeAttempt,
    RlcReassembled,
    CoreDeparture,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Arrival,
        EventKind::Service,
        EventKind::SegmentTaken,
        EventKind::HarqTxAttempt,
        EventKind::HarqDecodeAttempt,
        EventKind::RlcReassembled,
        EventKind::CoreDeparture,
    ];

    /// Keys that must be present for an event of this kind.
    pub fn mandatory_keys(self) -> &'static [&'static str] {
        match self {
            EventKind::Arrival => &["sn", "size_bytes", "queue_len_bytes"],
            EventKind::Service => &["sn"],
            EventKind::SegmentTaken => &["mem_loc", "size_bytes"],
            EventKind::HarqTxAttempt => &[
                "mem_loc",
                "harq_id",
                "frame_no",
                "slot_no",
                "mcs_index",
                "prbs",
                "tbs_bytes",
                "attempt_no",
            ],
            EventKind::HarqDecodeAttempt => {
                &["harq_id", "frame_no", "slot_no", "attempt_no", "decode_ok"]
            }
            EventKind::RlcReassembled => &["sn"],
            EventKind::CoreDeparture => &["sn"],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            EventKind::Arrival => "ARRIVAL",
            EventKind::Service => "SERVICE",
            EventKind::SegmentTaken => "SEGMENT_TAKEN",
            EventKind::HarqTxAttempt => "HARQ_TX_ATTEMPT",
            EventKind::HarqDecodeAttempt => "HARQ_DECODE_ATTEMPT",
            EventKind::RlcReassembled => "RLC_REASSEMBLED",
            EventKind::CoreDeparture => "CORE_DEPARTURE",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Correlation keys and features attached to an event.
///
/// Field order here is the canonical serialization order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct EventKeys {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sn: Option<u64>,
    /// Abstract handle for the buffer a segment was copied from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mem_loc: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_no: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot_no: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harq_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempt_no: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decode_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcs_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prbs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tbs_bytes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queue_len_bytes: Option<u64>,
}

impl EventKeys {
    fn has(&self, key: &str) -> bool {
        match key {
            "sn" => self.sn.is_some(),
            "mem_loc" => self.mem_loc.is_some(),
            "size_bytes" => self.size_bytes.is_some(),
            "frame_no" => self.frame_no.is_some(),
            "slot_no" => self.slot_no.is_some(),
            "harq_id" => self.harq_id.is_some(),
            "attempt_no" => self.attempt_no.is_some(),
            "decode_ok" => self.decode_ok.is_some(),
            "mcs_index" => self.mcs_index.is_some(),
            "prbs" => self.prbs.is_some(),
            "tbs_bytes" => self.tbs_bytes.is_some(),
            "queue_len_bytes" => self.queue_len_bytes.is_some(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed trace line: {0}")]
    MalformedLine(String),
    #[error("missing mandatory key `{key}`")]
    MissingKey { key: &'static str },
    #[error("key `{key}` out of range: {detail}")]
    DomainError { key: &'static str, detail: String },
}

/// One timestamped measurement point.
///
/// Only constructible through [`TraceEvent::new`] or the parser, both of
/// which enforce the per-kind mandatory keys and value domains.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    node: Node,
    layer: Layer,
    kind: EventKind,
    ts: Timestamp,
    keys: EventKeys,
}

impl TraceEvent {
    pub fn new(
        node: Node,
        layer: Layer,
        kind: EventKind,
        ts: Timestamp,
        keys: EventKeys,
    ) -> Result<Self, TraceError> {
        for key in kind.mandatory_keys() {
            if !keys.has(key) {
                return Err(TraceError::MissingKey { key });
            }
        }
        check_domain(&keys)?;
        Ok(TraceEvent {
            node,
            layer,
            kind,
            ts,
            keys,
        })
    }

    pub fn node(&self) -> Node {
        self.node
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn kind(&self) -> EventKind {
        self.kind
    }

    pub fn ts(&self) -> Timestamp {
        self.ts
    }

    pub fn keys(&self) -> &EventKeys {
        &self.keys
    }
}

fn check_domain(keys: &EventKeys) -> Result<(), TraceError> {
    let bad = |key: &'static str, detail: String| Err(TraceError::DomainError { key, detail });
    if keys.size_bytes == Some(0) {
        return bad("size_bytes", "must be positive".into());
    }
    if keys.tbs_bytes == Some(0) {
        return bad("tbs_bytes", "must be positive".into());
    }
    if keys.attempt_no == Some(0) {
        return bad("attempt_no", "attempts are numbered from 1".into());
    }
    if let Some(slot) = keys.slot_no {
        if slot >= MAX_SLOTS_PER_FRAME {
            return bad("slot_no", format!("{slot} >= {MAX_SLOTS_PER_FRAME}"));
        }
    }
    if let Some(frame) = keys.frame_no {
        if frame >= SFN_MODULUS {
            return bad("frame_no", format!("{frame} >= {SFN_MODULUS}"));
        }
    }
    if let Some(id) = keys.harq_id {
        if id >= MAX_HARQ_PROCESSES {
            return bad("harq_id", format!("{id} >= {MAX_HARQ_PROCESSES}"));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WireEvent<'a> {
    node: Node,
    layer: Layer,
    kind: EventKind,
    ts_ns: u64,
    #[serde(flatten)]
    keys: &'a EventKeys,
}

/// Numbers are read as signed so negative values surface as domain errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    node: Option<Node>,
    layer: Option<Layer>,
    kind: Option<EventKind>,
    ts_ns: Option<i64>,
    sn: Option<i64>,
    mem_loc: Option<i64>,
    size_bytes: Option<i64>,
    frame_no: Option<i64>,
    slot_no: Option<i64>,
    harq_id: Option<i64>,
    attempt_no: Option<i64>,
    decode_ok: Option<bool>,
    mcs_index: Option<i64>,
    prbs: Option<i64>,
    tbs_bytes: Option<i64>,
    queue_len_bytes: Option<i64>,
}

fn non_negative(key: &'static str, v: Option<i64>) -> Result<Option<u64>, TraceError> {
    match v {
        None => Ok(None),
        Some(x) if x < 0 => Err(TraceError::DomainError {
            key,
            detail: format!("{x} is negative"),
        }),
        Some(x) => Ok(Some(x as u64)),
    }
}

fn small(key: &'static str, v: Option<i64>) -> Result<Option<u32>, TraceError> {
    non_negative(key, v)?
        .map(|x| {
            u32::try_from(x).map_err(|_| TraceError::DomainError {
                key,
                detail: format!("{x} does not fit in 32 bits"),
            })
        })
        .transpose()
}

/// Parses one trace line.
pub fn parse_event_line(line: &str) -> Result<TraceEvent, TraceError> {
    let raw: RawEvent =
        serde_json::from_str(line.trim()).map_err(|e| TraceError::MalformedLine(e.to_string()))?;
    let node = raw.node.ok_or(TraceError::MissingKey { key: "node" })?;
    let layer = raw.layer.ok_or(TraceError::MissingKey { key: "layer" })?;
    let kind = raw.kind.ok_or(TraceError::MissingKey { key: "kind" })?;
    let ts = non_negative("ts_ns", raw.ts_ns)?.ok_or(TraceError::MissingKey { key: "ts_ns" })?;
    let keys = EventKeys {
        sn: non_negative("sn", raw.sn)?,
        mem_loc: non_negative("mem_loc", raw.mem_loc)?,
        size_bytes: small("size_bytes", raw.size_bytes)?,
        frame_no: small("frame_no", raw.frame_no)?,
        slot_no: small("slot_no", raw.slot_no)?,
        harq_id: small("harq_id", raw.harq_id)?,
        attempt_no: small("attempt_no", raw.attempt_no)?,
        decode_ok: raw.decode_ok,
        mcs_index: small("mcs_index", raw.mcs_index)?,
        prbs: small("prbs", raw.prbs)?,
        tbs_bytes: small("tbs_bytes", raw.tbs_bytes)?,
        queue_len_bytes: non_negative("queue_len_bytes", raw.queue_len_bytes)?,
    };
    TraceEvent::new(node, layer, kind, Timestamp(ts), keys)
}

/// Renders an event as one canonical line (no trailing newline).
pub fn serialize_event_line(event: &TraceEvent) -> String {
    let wire = WireEvent {
        node: event.node,
        layer: event.layer,
        kind: event.kind,
        ts_ns: event.ts.0,
        keys: &event.keys,
    };
    serde_json::to_string(&wire).expect("trace events always serialize")
}

/// Parses a whole trace, skipping blank lines. Errors carry the 1-based line number.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, (usize, TraceError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_event_line(l).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_trace<W: std::io::Write>(mut out: W, events: &[TraceEvent]) -> std::io::Result<()> {
    for event in events {
        out.write_all(serialize_event_line(event).as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// One HARQ transmission attempt of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarqAttempt {
    pub tx_time: Timestamp,
    pub decode_time: Timestamp,
    pub decode_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// 1-based position of the segment within its packet.
    pub segment_index: u32,
    pub size_bytes: u32,
    /// Ordered by transmission time; the last one decoded successfully.
    pub attempts: Vec<HarqAttempt>,
}

impl SegmentRecord {
    pub fn first_attempt(&self) -> &HarqAttempt {
        self.attempts.first().expect("segment without attempts")
    }

    pub fn final_attempt(&self) -> &HarqAttempt {
        self.attempts.last().expect("segment without attempts")
    }
}

/// All reconstructed timestamps of one packet across the uplink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketJourney {
    pub packet_id: u64,
    pub sn: u64,
    pub app_send_time: Option<Timestamp>,
    pub radio_arrival: Timestamp,
    pub radio_service: Timestamp,
    pub segments: Vec<SegmentRecord>,
    pub radio_departure: Timestamp,
    pub core_departure: Timestamp,
    pub size_bytes: u32,
    pub arrival_frame_no: Option<u32>,
    pub arrival_slot_no: Option<u32>,
}

impl PacketJourney {
    /// Client stack time spent before the packet reached the radio queue.
    pub fn app_ingress(&self) -> Option<Nanos> {
        self.app_send_time
            .and_then(|sent| self.radio_arrival.since(sent))
    }
}

/// Additive split of one packet's end-to-end delay, all in nanoseconds.
///
/// `y_e2e = y_core + y_queue + y_link` and `y_link = y_tx + y_seg + y_retx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayDecomposition {
    pub packet_id: u64,
    pub y_e2e: Nanos,
    pub y_core: Nanos,
    pub y_queue: Nanos,
    pub y_link: Nanos,
    pub y_tx: Nanos,
    pub y_seg: Nanos,
    pub y_retx: Nanos,
    /// 1-based index of the segment with the largest service delay.
    pub m_star: u32,
}

impl DelayDecomposition {
    /// The five leaf components in report order: core, queue, tx, seg, retx.
    pub fn components(&self) -> [Nanos; 5] {
        [
            self.y_core,
            self.y_queue,
            self.y_tx,
            self.y_seg,
            self.y_retx,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tx_attempt_line_maps_keys() {
        let line = r#"{"node":"UE","layer":"HARQ","kind":"HARQ_TX_ATTEMPT","ts_ns":5,"mem_loc":9,"harq_id":3,"frame_no":12,"slot_no":7,"mcs_index":23,"prbs":5,"tbs_bytes":396,"attempt_no":1}"#;
        let ev = parse_event_line(line).unwrap();
        assert_eq!(ev.kind(), EventKind::HarqTxAttempt);
        assert_eq!(ev.keys().frame_no, Some(12));
        assert_eq!(ev.keys().slot_no, Some(7));
        assert_eq!(ev.keys().harq_id, Some(3));
        assert_eq!(
            serialize_event_line(&ev),
            r#"{"node":"UE","layer":"HARQ","kind":"HARQ_TX_ATTEMPT","ts_ns":5,"mem_loc":9,"frame_no":12,"slot_no":7,"harq_id":3,"attempt_no":1,"mcs_index":23,"prbs":5,"tbs_bytes":396}"#
        );
    }

    #[test]
    fn missing_timestamp() {
        let line = r#"{"node":"UE","layer":"RLC","kind":"SERVICE","sn":1}"#;
        assert_eq!(
            parse_event_line(line),
            Err(TraceError::MissingKey { key: "ts_ns" })
        );
    }

    #[test]
    fn missing_kind_key() {
        let line =
            r#"{"node":"UE","layer":"RLC","kind":"ARRIVAL","ts_ns":0,"sn":1,"size_bytes":531}"#;
        assert_eq!(
            parse_event_line(line),
            Err(TraceError::MissingKey {
                key: "queue_len_bytes"
            })
        );
    }

    #[test]
    fn domain_errors() {
        let neg = r#"{"node":"UE","layer":"MAC","kind":"SEGMENT_TAKEN","ts_ns":0,"mem_loc":1,"size_bytes":-4}"#;
        assert!(matches!(
            parse_event_line(neg),
            Err(TraceError::DomainError {
                key: "size_bytes",
                ..
            })
        ));
        let zero = r#"{"node":"UE","layer":"MAC","kind":"SEGMENT_TAKEN","ts_ns":0,"mem_loc":1,"size_bytes":0}"#;
        assert!(matches!(
            parse_event_line(zero),
            Err(TraceError::DomainError {
                key: "size_bytes",
                ..
            })
        ));
        let slot = r#"{"node":"GNB","layer":"HARQ","kind":"HARQ_DECODE_ATTEMPT","ts_ns":0,"harq_id":0,"frame_no":0,"slot_no":999,"attempt_no":1,"decode_ok":true}"#;
        assert!(matches!(
            parse_event_line(slot),
            Err(TraceError::DomainError { key: "slot_no", .. })
        ));
    }

    #[test]
    fn malformed_lines() {
        for line in [
            "",
            "not json",
            r#"{"node":"UE","layer":"RLC","kind":"NOPE","ts_ns":0}"#,
            r#"{"node":"UE","layer":"RLC","kind":"SERVICE","ts_ns":0,"sn":1,"bogus":2}"#,
            r#"{"node":"UE","layer":"RLC","kind":"SERVICE","ts_ns":0,"sn":1,"sn":2}"#,
        ] {
            assert!(
                matches!(parse_event_line(line), Err(TraceError::MalformedLine(_))),
                "{line}"
            );
        }
    }

    #[test]
    fn arrival_at_zero_has_tags() {
        let ev = TraceEvent::new(
            Node::Ue,
            Layer::Rlc,
            EventKind::Arrival,
            Timestamp::ZERO,
            EventKeys {
                sn: Some(0),
                size_bytes: Some(531),
                queue_len_bytes: Some(0),
                ..Default::default()
            },
        )
        .unwrap();
        let line = serialize_event_line(&ev);
        assert!(line.contains(r#""kind":"ARRIVAL""#));
        assert!(line.contains(r#""node":"UE""#));
        assert!(line.contains(r#""ts_ns":0"#));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn parse_trace_reports_line_numbers() {
        let text = "{\"node\":\"UE\",\"layer\":\"RLC\",\"kind\":\"SERVICE\",\"ts_ns\":0,\"sn\":1}\n\nbroken\n";
        let err = parse_trace(text).unwrap_err();
        assert_eq!(err.0, 3);
    }
}
