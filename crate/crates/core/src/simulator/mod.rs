//! Slot-driven model of a single-UE uplink: periodic traffic into one RLC
//! queue, configured-grant occasions on the TDD uplink slots, segmentation to
//! the transport block size, per-segment HARQ and a core-network hop.
//!
//! [`simulate`] returns the raw trace a measurement setup would record and
//! the ground truth it was generated from.

pub mod config;
pub mod tdd;

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    default_tbs_table, tbs_lookup, ConfigError, CoreConfig, ExperimentConfig, RadioConfig,
    TbsEntry, TddConfig, TrafficConfig, OPTIMIZED_OFFSET_NS,
};
pub use tdd::{next_grant_occasion, next_grant_slot, GrantPlan, GrantSlot};

use crate::decomposer::decompose;
use crate::trace_model::{
    DelayDecomposition, EventKeys, EventKind, HarqAttempt, Layer, Node, PacketJourney,
    SegmentRecord, Timestamp, TraceEvent, SFN_MODULUS,
};

/// HARQ processes available to the UE.
pub const HARQ_PROCESSES: u32 = 16;

/// Splits a packet into transport-block-sized segments.
pub fn segment_packet(size_bytes: u32, tbs_bytes: u32) -> Vec<u32> {
    assert!(size_bytes > 0 && tbs_bytes > 0);
    let full = size_bytes / tbs_bytes;
    let mut sizes = vec![tbs_bytes; full as usize];
    if !size_bytes.is_multiple_of(tbs_bytes) {
        sizes.push(size_bytes % tbs_bytes);
    }
    sizes
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub journey: PacketJourney,
    pub decomposition: DelayDecomposition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationOutput {
    /// Sorted by timestamp; ties keep causal emission order.
    pub events: Vec<TraceEvent>,
    /// One entry per packet, ordered by sequence number.
    pub truth: Vec<GroundTruth>,
}

struct Queued {
    sn: u64,
    remaining: u32,
}

struct InFlight {
    journey: PacketJourney,
    untaken: u32,
    open_segments: u32,
}

struct Retx {
    due_slot: u64,
    sn: u64,
    seg: usize,
    mem_loc: u64,
    harq_id: u32,
}

struct EventLog {
    events: Vec<(Timestamp, u64, TraceEvent)>,
    seq: u64,
}

impl EventLog {
    fn push(&mut self, node: Node, layer: Layer, kind: EventKind, ts: Timestamp, keys: EventKeys) {
        let ev = TraceEvent::new(node, layer, kind, ts, keys)
            .expect("simulator emits well-formed events");
        self.events.push((ts, self.seq, ev));
        self.seq += 1;
    }
}

/// Lowest-first handle allocator with deferred release.
#[derive(Default)]
struct HandlePool {
    free: BTreeSet<u64>,
    next: u64,
    releases: Vec<(Timestamp, u64)>,
}

impl HandlePool {
    fn reclaim(&mut self, now: Timestamp) {
        let free = &mut self.free;
        self.releases.retain(|&(at, h)| {
            if at <= now {
                free.insert(h);
                false
            } else {
                true
            }
        });
    }

    fn take(&mut self) -> u64 {
        if let Some(h) = self.free.pop_first() {
            h
        } else {
            self.next += 1;
            self.next - 1
        }
    }

    fn release_at(&mut self, at: Timestamp, h: u64) {
        self.releases.push((at, h));
    }
}

struct Radio<'a> {
    cfg: &'a ExperimentConfig,
    plan: GrantPlan,
    tbs: u32,
    harq_rng: ChaCha8Rng,
    core_rng: ChaCha8Rng,
    log: EventLog,
    mem: HandlePool,
    /// `None` while a process holds a segment, otherwise when it became free.
    harq_free_since: Vec<Option<Timestamp>>,
    in_flight: HashMap<u64, InFlight>,
    retx: VecDeque<Retx>,
    truth: Vec<GroundTruth>,
}

impl Radio<'_> {
    fn free_harq(&mut self, now: Timestamp) -> Option<u32> {
        let id = self
            .harq_free_since
            .iter()
            .position(|f| f.is_some_and(|since| since <= now))?;
        self.harq_free_since[id] = None;
        Some(id as u32)
    }

    /// Runs one HARQ attempt of a segment in `abs_slot`.
    fn transmit(&mut self, abs_slot: u64, sn: u64, seg: usize, mem_loc: u64, harq_id: u32) {
        let tdd = &self.cfg.tdd;
        let radio = &self.cfg.radio;
        let slot_start = Timestamp(tdd.slot_start(abs_slot));
        let tx_time = Timestamp(slot_start.0 - tdd.preparation_time_ns);
        let decode_time = Timestamp(slot_start.0 + radio.tx_decode_latency_ns);
        let spf = tdd.slots_per_frame as u64;
        let frame_no = ((abs_slot / spf) % SFN_MODULUS as u64) as u32;
        let slot_no = (abs_slot % spf) as u32;

        let flight = self
            .in_flight
            .get_mut(&sn)
            .expect("segment of unknown packet");
        let segment = &mut flight.journey.segments[seg];
        let attempt_no = segment.attempts.len() as u32 + 1;
        let fails =
            attempt_no < radio.max_harq_attempts && self.harq_rng.gen_bool(radio.harq_fail_prob);
        segment.attempts.push(HarqAttempt {
            tx_time,
            decode_time,
            decode_ok: !fails,
        });

        self.log.push(
            Node::Ue,
            Layer::Harq,
            EventKind::HarqTxAttempt,
            tx_time,
            EventKeys {
                mem_loc: Some(mem_loc),
                harq_id: Some(harq_id),
                frame_no: Some(frame_no),
                slot_no: Some(slot_no),
                attempt_no: Some(attempt_no),
                mcs_index: Some(radio.mcs_index),
                prbs: Some(radio.grant_prbs),
                tbs_bytes: Some(self.tbs),
                ..Default::default()
            },
        );
        self.log.push(
            Node::Gnb,
            Layer::Harq,
            EventKind::HarqDecodeAttempt,
            decode_time,
            EventKeys {
                harq_id: Some(harq_id),
                frame_no: Some(frame_no),
                slot_no: Some(slot_no),
                attempt_no: Some(attempt_no),
                decode_ok: Some(!fails),
                ..Default::default()
            },
        );

        if fails {
            self.retx.push_back(Retx {
                due_slot: abs_slot + radio.harq_rtt_slots as u64,
                sn,
                seg,
                mem_loc,
                harq_id,
            });
            return;
        }

        self.mem.release_at(decode_time, mem_loc);
        self.harq_free_since[harq_id as usize] = Some(decode_time);
        flight.open_segments -= 1;
        if flight.open_segments == 0 && flight.untaken == 0 {
            let flight = self.in_flight.remove(&sn).expect("present");
            self.complete(flight.journey);
        }
    }

    fn complete(&mut self, mut journey: PacketJourney) {
        let departure = journey
            .segments
            .iter()
            .map(|s| s.final_attempt().decode_time)
            .max()
            .expect("packet has segments");
        let core = &self.cfg.core;
        let core_delay = if core.jitter_ns == 0 {
            core.base_delay_ns
        } else {
            let j = core.jitter_ns as i64;
            (core.base_delay_ns as i64 + self.core_rng.gen_range(-j..=j)) as u64
        };
        journey.radio_departure = departure;
        journey.core_departure = Timestamp(departure.0 + core_delay);
        let sn_keys = || EventKeys {
            sn: Some(journey.sn),
            ..Default::default()
        };
        self.log.push(
            Node::Gnb,
            Layer::Rlc,
            EventKind::RlcReassembled,
            journey.radio_departure,
            sn_keys(),
        );
        self.log.push(
            Node::Core,
            Layer::N3,
            EventKind::CoreDeparture,
            journey.core_departure,
            sn_keys(),
        );
        let decomposition = decompose(&journey).expect("simulated journeys are consistent");
        self.truth.push(GroundTruth {
            journey,
            decomposition,
        });
    }
}

/// Runs one experiment. Deterministic for a given configuration and seed.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutput, ConfigError> {
    cfg.validate()?;
    let tdd = &cfg.tdd;
    let traffic = &cfg.traffic;
    let tbs = cfg.radio.tbs_bytes()?;
    let packet_size = cfg.packet_size_bytes();

    let mut arrival_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    arrival_rng.set_stream(1);
    let mut harq_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    harq_rng.set_stream(2);
    let mut core_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    core_rng.set_stream(3);

    // Traffic starts one period after the epoch so negative jitter stays representable.
    let jitter = traffic.arrival_jitter_ns as i64;
    let arrivals: Vec<Timestamp> = (0..traffic.packet_count)
        .map(|k| {
            let nominal = (k + 1) * traffic.period_ns + traffic.arrival_offset_ns;
            let dj = if jitter == 0 {
                0
            } else {
                arrival_rng.gen_range(-jitter..=jitter)
            };
            Timestamp((nominal as i64 + dj) as u64)
        })
        .collect();

    let mut radio = Radio {
        cfg,
        plan: GrantPlan::new(tdd, cfg.radio.grant_period_slots),
        tbs,
        harq_rng,
        core_rng,
        log: EventLog {
            events: Vec::with_capacity(arrivals.len() * 8),
            seq: 0,
        },
        mem: HandlePool::default(),
        harq_free_since: vec![Some(Timestamp::ZERO); HARQ_PROCESSES as usize],
        in_flight: HashMap::new(),
        retx: VecDeque::new(),
        truth: Vec::with_capacity(arrivals.len()),
    };

    let mut queue: VecDeque<Queued> = VecDeque::new();
    let mut queued_bytes: u64 = 0;
    let mut next_arrival = 0usize;
    let mut grant_credit = 0u32;
    let spf = tdd.slots_per_frame as u64;
    let slot_ns = tdd.slot_duration_ns();

    let mut abs_slot = match arrivals.first() {
        Some(&t) => next_grant_slot(t, tdd).abs_slot(tdd),
        None => 0,
    };
    while next_arrival < arrivals.len()
        || !queue.is_empty()
        || !radio.retx.is_empty()
        || !radio.in_flight.is_empty()
    {
        let decision = Timestamp(tdd.slot_start(abs_slot) - tdd.preparation_time_ns);

        while next_arrival < arrivals.len() && arrivals[next_arrival] <= decision {
            let sn = next_arrival as u64;
            let at = arrivals[next_arrival];
            let frame = (at.0 / tdd.frame_duration_ns) % SFN_MODULUS as u64;
            let slot = (at.0 / slot_ns) % spf;
            radio.log.push(
                Node::Ue,
                Layer::Rlc,
                EventKind::Arrival,
                at,
                EventKeys {
                    sn: Some(sn),
                    size_bytes: Some(packet_size),
                    frame_no: Some(frame as u32),
                    slot_no: Some(slot as u32),
                    queue_len_bytes: Some(queued_bytes),
                    ..Default::default()
                },
            );
            queue.push_back(Queued {
                sn,
                remaining: packet_size,
            });
            queued_bytes += packet_size as u64;
            radio.in_flight.insert(
                sn,
                InFlight {
                    journey: PacketJourney {
                        packet_id: sn,
                        sn,
                        app_send_time: None,
                        radio_arrival: at,
                        radio_service: Timestamp::ZERO,
                        segments: Vec::new(),
                        radio_departure: Timestamp::ZERO,
                        core_departure: Timestamp::ZERO,
                        size_bytes: packet_size,
                        arrival_frame_no: Some(frame as u32),
                        arrival_slot_no: Some(slot as u32),
                    },
                    untaken: packet_size,
                    open_segments: 0,
                },
            );
            next_arrival += 1;
        }

        radio.mem.reclaim(decision);
        if radio.plan.is_occasion(abs_slot) && !queue.is_empty() {
            grant_credit += 1;
        }
        // retransmissions go first; a displaced new-data grant moves to the next uplink slot
        if let Some(pos) = radio.retx.iter().position(|r| r.due_slot <= abs_slot) {
            let r = radio.retx.remove(pos).expect("index in range");
            radio.transmit(abs_slot, r.sn, r.seg, r.mem_loc, r.harq_id);
        } else if grant_credit > 0 && !queue.is_empty() {
            if let Some(harq_id) = radio.free_harq(decision) {
                grant_credit -= 1;
                let head = queue.front_mut().expect("non-empty");
                let sn = head.sn;
                let size = head.remaining.min(tbs);
                head.remaining -= size;
                queued_bytes -= size as u64;
                if head.remaining == 0 {
                    queue.pop_front();
                }
                let mem_loc = radio.mem.take();
                let flight = radio.in_flight.get_mut(&sn).expect("queued packet");
                if flight.journey.segments.is_empty() {
                    flight.journey.radio_service = decision;
                    radio.log.push(
                        Node::Ue,
                        Layer::Rlc,
                        EventKind::Service,
                        decision,
                        EventKeys {
                            sn: Some(sn),
                            ..Default::default()
                        },
                    );
                }
                flight.untaken -= size;
                flight.open_segments += 1;
                let seg = flight.journey.segments.len();
                flight.journey.segments.push(SegmentRecord {
                    segment_index: seg as u32 + 1,
                    size_bytes: size,
                    attempts: Vec::new(),
                });
                radio.log.push(
                    Node::Ue,
                    Layer::Mac,
                    EventKind::SegmentTaken,
                    decision,
                    EventKeys {
                        mem_loc: Some(mem_loc),
                        size_bytes: Some(size),
                        ..Default::default()
                    },
                );
                radio.transmit(abs_slot, sn, seg, mem_loc, harq_id);
            }
        }
        if queue.is_empty() {
            grant_credit = 0;
        }

        abs_slot = if queue.is_empty() && radio.retx.is_empty() && next_arrival < arrivals.len() {
            // idle: jump straight to the first slot that can serve the next arrival
            next_grant_slot(arrivals[next_arrival], tdd)
                .abs_slot(tdd)
                .max(radio.plan.next_uplink_after(abs_slot))
        } else {
            radio.plan.next_uplink_after(abs_slot)
        };
    }

    let Radio { log, mut truth, .. } = radio;
    let mut events = log.events;
    events.sort_by_key(|&(ts, seq, _)| (ts, seq));
    truth.sort_by_key(|t| t.journey.sn);
    Ok(SimulationOutput {
        events: events.into_iter().map(|(_, _, e)| e).collect(),
        truth,
    })
}
