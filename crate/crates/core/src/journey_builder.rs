//! Rebuilds packet journeys from a raw event stream.
//!
//! Correlation runs in three hops. Packet-level events carry the sequence
//! number. Segments taken by the MAC carry only a buffer handle and a size,
//! so they are attributed to the packet currently in service, advancing to
//! the next queued packet once the current one has handed over all of its
//! bytes. HARQ transmissions reference the buffer handle, and gNB decode
//! attempts are matched to them on `(harq_id, frame_no, slot_no)`.
//!
//! Damage to a packet (a lost event, a handle reused before release) is
//! charged to that packet and reported once, as a single anomaly.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_model::{
    EventKind, HarqAttempt, Layer, Nanos, Node, PacketJourney, SegmentRecord, Timestamp,
    TraceEvent, NANOS_PER_MS,
};

/// Out-of-order events within this window are re-sorted.
pub const RESORT_WINDOW_NS: Nanos = NANOS_PER_MS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("event at {ts} arrived after events at {seen}, beyond the {window}ns re-sort window")]
    UnsortableStream {
        ts: Timestamp,
        seen: Timestamp,
        window: Nanos,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnomalyKind {
    /// A packet whose event set is incomplete or was damaged by a lost event.
    IncompletePacket,
    /// A complete event set that violates the journey invariants.
    InconsistentJourney,
    OrphanSegment,
    OrphanAttempt,
    /// A decode with no matching transmission.
    NoMatch,
    /// Two pending transmissions share a decode key.
    AmbiguousMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub sn: Option<u64>,
    pub ts: Option<Timestamp>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOutput {
    /// Ordered by sequence number.
    pub journeys: Vec<PacketJourney>,
    pub anomalies: Vec<Anomaly>,
}

impl BuildOutput {
    /// Fraction of observed packets that produced an anomaly of any kind.
    pub fn anomaly_rate(&self) -> f64 {
        let total = self.journeys.len() + self.anomalies.len();
        if total == 0 {
            0.0
        } else {
            self.anomalies.len() as f64 / total as f64
        }
    }
}

/// Key that links a UE transmission to its gNB decode attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecodeKey {
    pub harq_id: u32,
    pub frame_no: u32,
    pub slot_no: u32,
}

impl DecodeKey {
    pub fn of(event: &TraceEvent) -> Option<DecodeKey> {
        let k = event.keys();
        Some(DecodeKey {
            harq_id: k.harq_id?,
            frame_no: k.frame_no?,
            slot_no: k.slot_no?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no decode attempt matches {0:?}")]
    NoMatch(Option<DecodeKey>),
    #[error("{count} decode attempts match {key:?}")]
    AmbiguousMatch { key: DecodeKey, count: usize },
}

/// Finds and removes the decode attempt for a transmission attempt.
pub fn match_decode(
    attempt: &TraceEvent,
    pending: &mut Vec<TraceEvent>,
) -> Result<TraceEvent, MatchError> {
    let key = DecodeKey::of(attempt).ok_or(MatchError::NoMatch(None))?;
    let hits: Vec<usize> = pending
        .iter()
        .enumerate()
        .filter(|(_, d)| d.kind() == EventKind::HarqDecodeAttempt && DecodeKey::of(d) == Some(key))
        .map(|(i, _)| i)
        .collect();
    match hits.as_slice() {
        [] => Err(MatchError::NoMatch(Some(key))),
        [i] => Ok(pending.remove(*i)),
        _ => Err(MatchError::AmbiguousMatch {
            key,
            count: hits.len(),
        }),
    }
}

#[derive(Debug, Default)]
struct PartialAttempt {
    tx: Option<Timestamp>,
    decode: Option<(Timestamp, bool)>,
}

#[derive(Debug)]
struct PartialSegment {
    size: Option<u32>,
    attempts: Vec<PartialAttempt>,
    done: bool,
}

#[derive(Debug, Default)]
struct OpenJourney {
    app_send: Option<Timestamp>,
    arrival: Option<Timestamp>,
    size: Option<u32>,
    arrival_frame: Option<u32>,
    arrival_slot: Option<u32>,
    service: Option<Timestamp>,
    segments: Vec<PartialSegment>,
    taken_bytes: u64,
    reassembled: Option<Timestamp>,
    core_departure: Option<Timestamp>,
    problems: Vec<String>,
}

impl OpenJourney {
    fn all_bytes_taken(&self) -> bool {
        self.size.is_some_and(|s| self.taken_bytes >= s as u64)
    }

    fn settled(&self) -> bool {
        self.segments.iter().all(|s| s.done)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SegRef {
    sn: u64,
    idx: usize,
}

#[derive(Debug, Clone, Copy)]
struct PendingTx {
    seg: SegRef,
    attempt: usize,
}

/// Live correlation tables while a stream is consumed.
#[derive(Debug, Default)]
pub struct CorrelationState {
    open: BTreeMap<u64, OpenJourney>,
    /// Packets that arrived at RLC but have not been seen in service yet.
    waiting: VecDeque<u64>,
    in_service: Option<u64>,
    live_segments: HashMap<u64, SegRef>,
    harq_owner: HashMap<u32, SegRef>,
    pending: HashMap<DecodeKey, PendingTx>,
    finished: Vec<PacketJourney>,
    anomalies: Vec<Anomaly>,
}

impl CorrelationState {
    fn journey(&mut self, sn: u64) -> &mut OpenJourney {
        self.open.entry(sn).or_default()
    }

    fn damage(&mut self, sn: u64, problem: String) {
        self.journey(sn).problems.push(problem);
    }

    fn orphan(&mut self, kind: AnomalyKind, ev: &TraceEvent, detail: String) {
        self.anomalies.push(Anomaly {
            kind,
            sn: ev.keys().sn,
            ts: Some(ev.ts()),
            detail,
        });
    }

    fn start_service(&mut self, sn: u64) {
        self.in_service = Some(sn);
        self.waiting.retain(|&w| w != sn);
    }

    /// The packet a segment without a sequence number belongs to.
    fn attribute_segment(&mut self) -> Option<u64> {
        if let Some(cur) = self.in_service {
            if self.open.get(&cur).is_some_and(|j| !j.all_bytes_taken()) {
                return Some(cur);
            }
        }
        let next = self.waiting.pop_front()?;
        self.in_service = Some(next);
        Some(next)
    }

    fn add_segment(&mut self, sn: u64, mem_loc: u64, size: Option<u32>, ts: Timestamp) -> SegRef {
        if let Some(old) = self.live_segments.remove(&mem_loc) {
            self.damage(
                old.sn,
                format!("buffer {mem_loc} reused at {ts} before its segment completed"),
            );
        }
        let j = self.journey(sn);
        j.taken_bytes += size.unwrap_or(0) as u64;
        j.segments.push(PartialSegment {
            size,
            attempts: Vec::new(),
            done: false,
        });
        let seg = SegRef {
            sn,
            idx: j.segments.len() - 1,
        };
        self.live_segments.insert(mem_loc, seg);
        seg
    }

    fn segment(&mut self, seg: SegRef) -> &mut PartialSegment {
        &mut self.journey(seg.sn).segments[seg.idx]
    }

    fn on_segment_taken(&mut self, ev: &TraceEvent) {
        let k = ev.keys();
        let sn = match k.sn {
            Some(sn) => {
                self.start_service(sn);
                Some(sn)
            }
            None => self.attribute_segment(),
        };
        let mem_loc = k.mem_loc.expect("mandatory");
        match sn {
            Some(sn) => {
                self.add_segment(sn, mem_loc, k.size_bytes, ev.ts());
            }
            None => self.orphan(
                AnomalyKind::OrphanSegment,
                ev,
                format!("segment in buffer {mem_loc} taken with no packet waiting"),
            ),
        }
    }

    fn bind_harq(&mut self, harq_id: u32, seg: SegRef) {
        if let Some(prev) = self.harq_owner.insert(harq_id, seg) {
            if prev != seg {
                self.damage(
                    prev.sn,
                    format!("HARQ process {harq_id} reassigned before completion"),
                );
            }
        }
    }

    fn on_tx_attempt(&mut self, ev: &TraceEvent) {
        let k = ev.keys();
        let mem_loc = k.mem_loc.expect("mandatory");
        let attempt_no = k.attempt_no.expect("mandatory") as usize;
        let harq_id = k.harq_id.expect("mandatory");
        let seg = match self.live_segments.get(&mem_loc).copied() {
            Some(seg) => seg,
            None if attempt_no == 1 => match self.attribute_segment() {
                // the segment record itself was lost; keep the attempt with its packet
                Some(sn) => {
                    let seg = self.add_segment(sn, mem_loc, None, ev.ts());
                    self.damage(sn, format!("no segment record for buffer {mem_loc}"));
                    seg
                }
                None => {
                    return self.orphan(
                        AnomalyKind::OrphanAttempt,
                        ev,
                        format!("transmission from unknown buffer {mem_loc}"),
                    )
                }
            },
            None => {
                return self.orphan(
                    AnomalyKind::OrphanAttempt,
                    ev,
                    format!("retransmission from unknown buffer {mem_loc}"),
                )
            }
        };
        let segment = self.segment(seg);
        let expected = segment.attempts.len() + 1;
        let previous_open = segment.attempts.last().is_some_and(|a| a.decode.is_none());
        segment.attempts.push(PartialAttempt {
            tx: Some(ev.ts()),
            decode: None,
        });
        let attempt = segment.attempts.len() - 1;
        if expected != attempt_no || previous_open {
            self.damage(
                seg.sn,
                format!(
                    "attempt {attempt_no} on buffer {mem_loc} does not follow a decoded attempt"
                ),
            );
        }
        self.bind_harq(harq_id, seg);

        let key = DecodeKey::of(ev).expect("mandatory");
        if let Some(prev) = self.pending.insert(key, PendingTx { seg, attempt }) {
            self.damage(
                prev.seg.sn,
                format!("decode key {key:?} reused while pending"),
            );
            self.anomalies.push(Anomaly {
                kind: AnomalyKind::AmbiguousMatch,
                sn: Some(seg.sn),
                ts: Some(ev.ts()),
                detail: format!("two transmissions pending on {key:?}"),
            });
        }
    }

    /// Where a decode with no pending transmission most plausibly belongs.
    fn recover_decode_target(&self, harq_id: u32, attempt_no: usize) -> Option<SegRef> {
        if attempt_no > 1 {
            return self.harq_owner.get(&harq_id).copied();
        }
        let mut fresh = self.live_segments.values().filter(|s| {
            self.open
                .get(&s.sn)
                .is_some_and(|j| j.segments[s.idx].attempts.is_empty())
        });
        match (fresh.next(), fresh.next()) {
            (Some(&s), None) => Some(s),
            _ => None,
        }
    }

    fn on_decode(&mut self, ev: &TraceEvent) {
        let k = ev.keys();
        let key = DecodeKey::of(ev).expect("mandatory");
        let ok = k.decode_ok.expect("mandatory");
        let attempt_no = k.attempt_no.expect("mandatory") as usize;
        let (seg, attempt) = match self.pending.remove(&key) {
            Some(p) => (p.seg, p.attempt),
            None => match self.recover_decode_target(key.harq_id, attempt_no) {
                Some(seg) => {
                    self.damage(seg.sn, format!("decode on {key:?} without a transmission"));
                    let segment = self.segment(seg);
                    segment.attempts.push(PartialAttempt::default());
                    let idx = segment.attempts.len() - 1;
                    self.harq_owner.insert(key.harq_id, seg);
                    (seg, idx)
                }
                None => {
                    return self.orphan(
                        AnomalyKind::NoMatch,
                        ev,
                        format!("decode on {key:?} matches no transmission"),
                    )
                }
            },
        };
        let segment = self.segment(seg);
        segment.attempts[attempt].decode = Some((ev.ts(), ok));
        if ok {
            segment.done = true;
            self.live_segments.retain(|_, s| *s != seg);
            if self.harq_owner.get(&key.harq_id) == Some(&seg) {
                self.harq_owner.remove(&key.harq_id);
            }
        }
    }

    fn set_once(
        &mut self,
        sn: u64,
        what: &str,
        ts: Timestamp,
        pick: fn(&mut OpenJourney) -> &mut Option<Timestamp>,
    ) {
        let j = self.journey(sn);
        let slot = pick(j);
        if slot.is_some() {
            j.problems.push(format!("duplicate {what} at {ts}"));
        } else {
            *slot = Some(ts);
        }
    }

    fn on_event(&mut self, ev: &TraceEvent) {
        let k = ev.keys();
        match ev.kind() {
            EventKind::Arrival => {
                let sn = k.sn.expect("mandatory");
                if ev.node() == Node::AppClient || ev.layer() == Layer::App {
                    self.set_once(sn, "application send", ev.ts(), |j| &mut j.app_send);
                } else if ev.layer() == Layer::Rlc {
                    self.set_once(sn, "radio arrival", ev.ts(), |j| &mut j.arrival);
                    let j = self.journey(sn);
                    j.size = k.size_bytes;
                    j.arrival_frame = k.frame_no;
                    j.arrival_slot = k.slot_no;
                    self.waiting.push_back(sn);
                }
            }
            EventKind::Service => {
                let sn = k.sn.expect("mandatory");
                self.start_service(sn);
                self.set_once(sn, "service", ev.ts(), |j| &mut j.service);
            }
            EventKind::SegmentTaken => self.on_segment_taken(ev),
            EventKind::HarqTxAttempt => self.on_tx_attempt(ev),
            EventKind::HarqDecodeAttempt => self.on_decode(ev),
            EventKind::RlcReassembled => {
                let sn = k.sn.expect("mandatory");
                self.set_once(sn, "reassembly", ev.ts(), |j| &mut j.reassembled);
            }
            EventKind::CoreDeparture => {
                let sn = k.sn.expect("mandatory");
                self.set_once(sn, "core departure", ev.ts(), |j| &mut j.core_departure);
                if self
                    .open
                    .get(&sn)
                    .is_some_and(|j| j.settled() && j.problems.is_empty())
                {
                    let j = self.open.remove(&sn).expect("present");
                    self.close(sn, j);
                }
            }
        }
    }

    fn close(&mut self, sn: u64, j: OpenJourney) {
        match assemble(sn, j) {
            Ok(journey) => self.finished.push(journey),
            Err(anomaly) => self.anomalies.push(anomaly),
        }
    }

    fn finish(mut self) -> BuildOutput {
        // leftover transmissions without decodes are already charged to their packets
        for p in std::mem::take(&mut self.pending).into_values() {
            self.damage(p.seg.sn, "transmission never decoded".into());
        }
        let open = std::mem::take(&mut self.open);
        for (sn, j) in open {
            self.close(sn, j);
        }
        self.finished.sort_by_key(|j| j.sn);
        self.anomalies.sort_by_key(|a| (a.sn.is_none(), a.sn, a.ts));
        BuildOutput {
            journeys: self.finished,
            anomalies: self.anomalies,
        }
    }
}

fn assemble(sn: u64, j: OpenJourney) -> Result<PacketJourney, Anomaly> {
    let mut missing = j.problems.clone();
    let mut need = |what: &str, present: bool| {
        if !present {
            missing.push(format!("missing {what}"));
        }
    };
    need("radio arrival", j.arrival.is_some());
    need("service", j.service.is_some());
    need("segments", !j.segments.is_empty());
    need("reassembly", j.reassembled.is_some());
    need("core departure", j.core_departure.is_some());
    need("all segment bytes", j.all_bytes_taken());
    for (i, s) in j.segments.iter().enumerate() {
        let complete = s.size.is_some()
            && !s.attempts.is_empty()
            && s.attempts
                .iter()
                .all(|a| a.tx.is_some() && a.decode.is_some())
            && s.done;
        need(&format!("attempts of segment {}", i + 1), complete);
    }
    if !missing.is_empty() {
        return Err(Anomaly {
            kind: AnomalyKind::IncompletePacket,
            sn: Some(sn),
            ts: j.arrival.or(j.service),
            detail: missing.join("; "),
        });
    }

    let segments: Vec<SegmentRecord> = j
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| SegmentRecord {
            segment_index: i as u32 + 1,
            size_bytes: s.size.expect("checked"),
            attempts: s
                .attempts
                .iter()
                .map(|a| {
                    let (decode_time, decode_ok) = a.decode.expect("checked");
                    HarqAttempt {
                        tx_time: a.tx.expect("checked"),
                        decode_time,
                        decode_ok,
                    }
                })
                .collect(),
        })
        .collect();
    let journey = PacketJourney {
        packet_id: sn,
        sn,
        app_send_time: j.app_send,
        radio_arrival: j.arrival.expect("checked"),
        radio_service: segments[0].first_attempt().tx_time,
        radio_departure: j.reassembled.expect("checked"),
        core_departure: j.core_departure.expect("checked"),
        size_bytes: j.size.expect("checked"),
        arrival_frame_no: j.arrival_frame,
        arrival_slot_no: j.arrival_slot,
        segments,
    };

    let inconsistent = |detail: String| Anomaly {
        kind: AnomalyKind::InconsistentJourney,
        sn: Some(sn),
        ts: Some(journey.radio_arrival),
        detail,
    };
    let first_tx = journey
        .segments
        .iter()
        .map(|s| s.first_attempt().tx_time)
        .min()
        .expect("non-empty");
    let last_decode = journey
        .segments
        .iter()
        .map(|s| s.final_attempt().decode_time)
        .max()
        .expect("non-empty");
    if j.service != Some(first_tx) || journey.radio_service != first_tx {
        return Err(inconsistent(
            "service time differs from first transmission".into(),
        ));
    }
    if journey.radio_departure != last_decode {
        return Err(inconsistent(
            "reassembly differs from last successful decode".into(),
        ));
    }
    for s in &journey.segments {
        let (last, earlier) = s.attempts.split_last().expect("non-empty");
        if !last.decode_ok || earlier.iter().any(|a| a.decode_ok) {
            return Err(inconsistent(format!(
                "segment {} decode outcomes out of order",
                s.segment_index
            )));
        }
    }
    if !(journey.radio_arrival <= journey.radio_service
        && journey.radio_departure <= journey.core_departure)
    {
        return Err(inconsistent("timestamps out of order".into()));
    }
    Ok(journey)
}

/// Restores timestamp order within [`RESORT_WINDOW_NS`], keeping input order on ties.
struct Resorter {
    heap: BinaryHeap<Reverse<(Timestamp, u64)>>,
    held: HashMap<u64, TraceEvent>,
    seq: u64,
    newest: Timestamp,
    window: Nanos,
}

impl Resorter {
    fn new(window: Nanos) -> Self {
        Resorter {
            heap: BinaryHeap::new(),
            held: HashMap::new(),
            seq: 0,
            newest: Timestamp::ZERO,
            window,
        }
    }

    fn push(&mut self, ev: TraceEvent, out: &mut impl FnMut(TraceEvent)) -> Result<(), BuildError> {
        let ts = ev.ts();
        if ts.0 + self.window < self.newest.0 {
            return Err(BuildError::UnsortableStream {
                ts,
                seen: self.newest,
                window: self.window,
            });
        }
        self.newest = self.newest.max(ts);
        self.heap.push(Reverse((ts, self.seq)));
        self.held.insert(self.seq, ev);
        self.seq += 1;
        let horizon = self.newest.0.saturating_sub(self.window);
        while let Some(&Reverse((t, s))) = self.heap.peek() {
            if t.0 >= horizon {
                break;
            }
            self.heap.pop();
            out(self.held.remove(&s).expect("held"));
        }
        Ok(())
    }

    fn drain(&mut self, out: &mut impl FnMut(TraceEvent)) {
        while let Some(Reverse((_, s))) = self.heap.pop() {
            out(self.held.remove(&s).expect("held"));
        }
    }
}

/// Reconstructs journeys from an event stream in (approximately) timestamp order.
pub fn build_journeys<I>(events: I) -> Result<BuildOutput, BuildError>
where
    I: IntoIterator<Item = TraceEvent>,
{
    let mut state = CorrelationState::default();
    let mut resorter = Resorter::new(RESORT_WINDOW_NS);
    let mut feed = |ev: TraceEvent| state.on_event(&ev);
    for ev in events {
        resorter.push(ev, &mut feed)?;
    }
    resorter.drain(&mut feed);
    Ok(state.finish())
}
