//! Generators shared by the property and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use ranlat_core::journey_builder::build_journeys;
use ranlat_core::simulator::{simulate, ExperimentConfig};
use ranlat_core::trace_model::{
    EventKeys, EventKind, HarqAttempt, Layer, Node, PacketJourney, SegmentRecord, Timestamp,
    TraceEvent, MAX_HARQ_PROCESSES, MAX_SLOTS_PER_FRAME, SFN_MODULUS,
};

const NODES: [Node; 5] = [
    Node::Ue,
    Node::Gnb,
    Node::Core,
    Node::AppClient,
    Node::AppServer,
];
const LAYERS: [Layer; 6] = [
    Layer::App,
    Layer::Pdcp,
    Layer::Rlc,
    Layer::Mac,
    Layer::Harq,
    Layer::N3,
];

/// A valid event of a random kind.  Mandatory keys are always present, the
/// other keys only sometimes.
pub fn random_event<R: Rng>(rng: &mut R) -> TraceEvent {
    let kind = *EventKind::ALL.choose(rng).unwrap();
    let mandatory = kind.mandatory_keys();
    let mut want = |key: &str| mandatory.contains(&key) || rng.gen_bool(0.2);
    let mut keys = EventKeys::default();
    let present: Vec<&str> = [
        "sn",
        "mem_loc",
        "size_bytes",
        "frame_no",
        "slot_no",
        "harq_id",
        "attempt_no",
        "decode_ok",
        "mcs_index",
        "prbs",
        "tbs_bytes",
        "queue_len_bytes",
    ]
    .into_iter()
    .filter(|k| want(k))
    .collect();
    for key in present {
        match key {
            "sn" => keys.sn = Some(rng.gen_range(0..=i64::MAX as u64)),
            "mem_loc" => keys.mem_loc = Some(rng.gen_range(0..1 << 40)),
            "size_bytes" => keys.size_bytes = Some(rng.gen_range(1..=u32::MAX)),
            "frame_no" => keys.frame_no = Some(rng.gen_range(0..SFN_MODULUS)),
            "slot_no" => keys.slot_no = Some(rng.gen_range(0..MAX_SLOTS_PER_FRAME)),
            "harq_id" => keys.harq_id = Some(rng.gen_range(0..MAX_HARQ_PROCESSES)),
            "attempt_no" => keys.attempt_no = Some(rng.gen_range(1..=8)),
            "decode_ok" => keys.decode_ok = Some(rng.gen()),
            "mcs_index" => keys.mcs_index = Some(rng.gen_range(0..32)),
            "prbs" => keys.prbs = Some(rng.gen_range(0..275)),
            "tbs_bytes" => keys.tbs_bytes = Some(rng.gen_range(1..100_000)),
            "queue_len_bytes" => keys.queue_len_bytes = Some(rng.gen_range(0..=i64::MAX as u64)),
            _ => unreachable!(),
        }
    }
    TraceEvent::new(
        *NODES.choose(rng).unwrap(),
        *LAYERS.choose(rng).unwrap(),
        kind,
        Timestamp(rng.gen_range(0..=i64::MAX as u64)),
        keys,
    )
    .unwrap()
}

fn upper_snake<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

/// Renders an event as JSON with shuffled keys and random whitespace.
pub fn render_scrambled<R: Rng>(ev: &TraceEvent, rng: &mut R) -> String {
    let k = ev.keys();
    let mut fields: Vec<(String, String)> = vec![
        ("node".into(), format!("\"{}\"", upper_snake(ev.node()))),
        ("layer".into(), format!("\"{}\"", upper_snake(ev.layer()))),
        ("kind".into(), format!("\"{}\"", ev.kind())),
        ("ts_ns".into(), ev.ts().0.to_string()),
    ];
    let mut num = |name: &str, v: Option<u64>| {
        if let Some(v) = v {
            fields.push((name.into(), v.to_string()));
        }
    };
    num("sn", k.sn);
    num("mem_loc", k.mem_loc);
    num("size_bytes", k.size_bytes.map(u64::from));
    num("frame_no", k.frame_no.map(u64::from));
    num("slot_no", k.slot_no.map(u64::from));
    num("harq_id", k.harq_id.map(u64::from));
    num("attempt_no", k.attempt_no.map(u64::from));
    num("mcs_index", k.mcs_index.map(u64::from));
    num("prbs", k.prbs.map(u64::from));
    num("tbs_bytes", k.tbs_bytes.map(u64::from));
    num("queue_len_bytes", k.queue_len_bytes);
    if let Some(ok) = k.decode_ok {
        fields.push(("decode_ok".into(), ok.to_string()));
    }
    fields.shuffle(rng);
    let mut ws = || [" ", "", "\t", "  "].choose(rng).unwrap().to_string();
    let body: Vec<String> = fields
        .iter()
        .map(|(name, v)| format!("{}\"{name}\"{}:{}{v}{}", ws(), ws(), ws(), ws()))
        .collect();
    format!("{}{{{}}}{}", ws(), body.join(","), ws())
}

/// A structurally valid journey with random segments and attempts.
pub fn random_journey<R: Rng>(rng: &mut R, max_segments: usize) -> PacketJourney {
    let arrival = rng.gen_range(0..1_000_000u64);
    let service = arrival + rng.gen_range(0..10_000_000);
    let mut segments = Vec::new();
    let mut departure = service;
    for i in 0..rng.gen_range(1..=max_segments) {
        let mut t = service + rng.gen_range(0..20_000_000);
        let n = rng.gen_range(1..=4);
        let attempts: Vec<HarqAttempt> = (0..n)
            .map(|a| {
                let tx = t;
                let decode = tx + rng.gen_range(1..2_000_000);
                t = decode + rng.gen_range(0..5_000_000);
                HarqAttempt {
                    tx_time: Timestamp(tx),
                    decode_time: Timestamp(decode),
                    decode_ok: a == n - 1,
                }
            })
            .collect();
        departure = departure.max(attempts.last().unwrap().decode_time.0);
        segments.push(SegmentRecord {
            segment_index: i as u32 + 1,
            size_bytes: rng.gen_range(1..1000),
            attempts,
        });
    }
    // service coincides with the earliest first transmission
    let first_tx = segments
        .iter()
        .map(|s| s.attempts[0].tx_time.0)
        .min()
        .unwrap();
    PacketJourney {
        packet_id: 0,
        sn: 0,
        app_send_time: None,
        radio_arrival: Timestamp(arrival.min(first_tx)),
        radio_service: Timestamp(first_tx),
        segments,
        radio_departure: Timestamp(departure),
        core_departure: Timestamp(departure + rng.gen_range(0..1_000_000)),
        size_bytes: 1,
        arrival_frame_no: None,
        arrival_slot_no: None,
    }
}

/// Deletes each event of a simulated trace in turn and checks that exactly
/// one anomaly appears and every other journey is rebuilt unchanged.
pub fn check_single_deletions(preset: &str, fail_prob: f64, packets: u64, seed: u64) {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.radio.harq_fail_prob = fail_prob;
    cfg.traffic.packet_count = packets;
    cfg.rng_seed = seed;
    let out = simulate(&cfg).unwrap();
    let truth: Vec<_> = out.truth.iter().map(|t| &t.journey).collect();
    for i in 0..out.events.len() {
        let mut events = out.events.clone();
        let removed = events.remove(i);
        let built = build_journeys(events).unwrap();
        assert_eq!(
            built.anomalies.len(),
            1,
            "deleting event {i} ({:?} {:?}): {:#?}",
            removed.kind(),
            removed.keys(),
            built.anomalies
        );
        assert_eq!(built.journeys.len(), truth.len() - 1, "deleting event {i}");
        let lost = built.anomalies[0].sn;
        let mut kept = built.journeys.iter();
        for t in &truth {
            if Some(t.sn) == lost {
                continue;
            }
            assert_eq!(
                kept.next(),
                Some(*t),
                "deleting event {i} ({:?})",
                removed.kind()
            );
        }
    }
}
