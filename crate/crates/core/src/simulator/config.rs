//! Experiment parameters and the named presets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_model::{Nanos, NANOS_PER_MS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("no TBS entry for {prbs} PRBs at MCS {mcs}")]
    UnknownGrant { prbs: u32, mcs: u32 },
    #[error("unknown preset `{0}` (expected a, b or c)")]
    UnknownPreset(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TddConfig {
    pub frame_duration_ns: Nanos,
    pub slots_per_frame: u32,
    /// Repeating `D`/`U` slot pattern, starting at slot 0 of every frame.
    pub pattern: String,
    /// How long before its slot the MAC starts preparing a transmission.
    pub preparation_time_ns: Nanos,
}

impl Default for TddConfig {
    fn default() -> Self {
        TddConfig {
            frame_duration_ns: 10 * NANOS_PER_MS,
            slots_per_frame: 20,
            pattern: "DDDDDDDUUU".into(),
            preparation_time_ns: NANOS_PER_MS / 2,
        }
    }
}

impl TddConfig {
    pub fn slot_duration_ns(&self) -> Nanos {
        self.frame_duration_ns / self.slots_per_frame as Nanos
    }

    pub fn pattern_len(&self) -> u64 {
        self.pattern.len() as u64
    }

    pub fn pattern_period_ns(&self) -> Nanos {
        self.slot_duration_ns() * self.pattern_len()
    }

    /// Whether the absolute slot index is an uplink slot.
    pub fn is_uplink(&self, abs_slot: u64) -> bool {
        self.pattern.as_bytes()[(abs_slot % self.pattern_len()) as usize] == b'U'
    }

    pub fn slot_start(&self, abs_slot: u64) -> Nanos {
        abs_slot * self.slot_duration_ns()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slots_per_frame == 0 || self.frame_duration_ns == 0 {
            return invalid("frame duration and slots per frame must be positive");
        }
        if !self
            .frame_duration_ns
            .is_multiple_of(self.slots_per_frame as u64)
        {
            return invalid("frame duration must be a whole number of nanoseconds per slot");
        }
        if self.slots_per_frame > crate::trace_model::MAX_SLOTS_PER_FRAME {
            return invalid("too many slots per frame");
        }
        if self.pattern.is_empty() || self.pattern.bytes().any(|c| c != b'D' && c != b'U') {
            return invalid("TDD pattern must be a non-empty string of D and U");
        }
        if !(self.slots_per_frame as usize).is_multiple_of(self.pattern.len()) {
            return invalid("TDD pattern length must divide slots per frame");
        }
        if !self.pattern.contains('U') {
            return invalid("TDD pattern needs at least one uplink slot");
        }
        if self.preparation_time_ns >= self.pattern_period_ns() {
            return invalid("preparation time must be shorter than the TDD pattern period");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TbsEntry {
    pub prbs: u32,
    pub mcs: u32,
    pub tbs_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub grant_prbs: u32,
    pub mcs_index: u32,
    pub tbs_table: Vec<TbsEntry>,
    /// Independent failure probability of every HARQ attempt but the last.
    pub harq_fail_prob: f64,
    pub max_harq_attempts: u32,
    /// Minimum distance in slots between a failed attempt and its retransmission.
    pub harq_rtt_slots: u32,
    /// From slot start at the UE to decode completion at the gNB.
    pub tx_decode_latency_ns: Nanos,
    pub header_overhead_bytes: u32,
    /// Configured-grant periodicity. The first uplink slot of every window of
    /// this many slots is a new-data occasion; 1 makes every uplink slot one.
    pub grant_period_slots: u32,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            grant_prbs: 5,
            mcs_index: 23,
            tbs_table: default_tbs_table(),
            harq_fail_prob: 0.01,
            max_harq_attempts: 4,
            harq_rtt_slots: 8,
            tx_decode_latency_ns: NANOS_PER_MS,
            header_overhead_bytes: 31,
            grant_period_slots: 10,
        }
    }
}

/// The two grant sizes observed at MCS 23.
pub fn default_tbs_table() -> Vec<TbsEntry> {
    vec![
        TbsEntry {
            prbs: 5,
            mcs: 23,
            tbs_bytes: 396,
        },
        TbsEntry {
            prbs: 10,
            mcs: 23,
            tbs_bytes: 792,
        },
    ]
}

/// Looks up the transport block size for a grant.
pub fn tbs_lookup(prbs: u32, mcs: u32, table: &[TbsEntry]) -> Result<u32, ConfigError> {
    table
        .iter()
        .find(|e| e.prbs == prbs && e.mcs == mcs)
        .map(|e| e.tbs_bytes)
        .ok_or(ConfigError::UnknownGrant { prbs, mcs })
}

impl RadioConfig {
    pub fn tbs_bytes(&self) -> Result<u32, ConfigError> {
        tbs_lookup(self.grant_prbs, self.mcs_index, &self.tbs_table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub payload_bytes: u32,
    pub period_ns: Nanos,
    /// Nominal packet arrival time relative to the frame start.
    pub arrival_offset_ns: Nanos,
    /// Half-width of the uniform jitter added to every arrival.
    pub arrival_jitter_ns: Nanos,
    pub packet_count: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            payload_bytes: 500,
            period_ns: 10 * NANOS_PER_MS,
            arrival_offset_ns: 4 * NANOS_PER_MS,
            arrival_jitter_ns: 750_000,
            packet_count: 120_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoreConfig {
    pub base_delay_ns: Nanos,
    pub jitter_ns: Nanos,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            base_delay_ns: 300_000,
            jitter_ns: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tdd: TddConfig,
    pub radio: RadioConfig,
    pub traffic: TrafficConfig,
    pub core: CoreConfig,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tdd: TddConfig::default(),
            radio: RadioConfig::default(),
            traffic: TrafficConfig::default(),
            core: CoreConfig::default(),
            rng_seed: 1,
        }
    }
}

/// Arrival offset that the sweep selects for preset b.
pub const OPTIMIZED_OFFSET_NS: Nanos = 2 * NANOS_PER_MS;

impl ExperimentConfig {
    /// Named experiment presets.
    ///
    /// * `a`: baseline, 5 PRBs (396 byte TBS) so every packet is segmented.
    /// * `b`: 10 PRBs (792 byte TBS), no segmentation.
    /// * `c`: like `b` with the arrival offset moved next to a grant occasion.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        match name {
            "a" => {}
            "b" => cfg.radio.grant_prbs = 10,
            "c" => {
                cfg.radio.grant_prbs = 10;
                cfg.traffic.arrival_offset_ns = OPTIMIZED_OFFSET_NS;
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Bytes a packet occupies in the RLC queue.
    pub fn packet_size_bytes(&self) -> u32 {
        self.traffic.payload_bytes + self.radio.header_overhead_bytes
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tdd.validate()?;
        let r = &self.radio;
        if !(0.0..1.0).contains(&r.harq_fail_prob) {
            return invalid("harq_fail_prob must lie in [0, 1)");
        }
        if r.max_harq_attempts == 0 {
            return invalid("max_harq_attempts must be at least 1");
        }
        if r.tx_decode_latency_ns == 0 {
            return invalid("tx_decode_latency_ns must be positive");
        }
        if r.harq_rtt_slots == 0 {
            return invalid("harq_rtt_slots must be positive");
        }
        // A retransmission is prepared only after the failed attempt was decoded.
        let rtt_ns = r.harq_rtt_slots as u64 * self.tdd.slot_duration_ns();
        if rtt_ns < self.tdd.preparation_time_ns + r.tx_decode_latency_ns {
            return invalid("HARQ round trip is shorter than preparation plus decode latency");
        }
        if r.grant_period_slots == 0
            || !self
                .tdd
                .slots_per_frame
                .is_multiple_of(r.grant_period_slots)
        {
            return invalid("grant_period_slots must divide slots_per_frame");
        }
        if r.tbs_table.iter().any(|e| e.tbs_bytes == 0) {
            return invalid("TBS entries must be positive");
        }
        r.tbs_bytes()?;
        let plan = super::tdd::GrantPlan::new(&self.tdd, r.grant_period_slots);
        if plan.occasions_per_frame() == 0 {
            return invalid("grant periodicity leaves no uplink occasion in a frame");
        }
        let t = &self.traffic;
        if t.payload_bytes == 0 {
            return invalid("payload_bytes must be positive");
        }
        if t.period_ns == 0 || t.arrival_offset_ns >= t.period_ns {
            return invalid("arrival_offset_ns must lie in [0, period_ns)");
        }
        if 2 * t.arrival_jitter_ns >= t.period_ns {
            return invalid("arrival jitter must be below half the traffic period");
        }
        if self.core.jitter_ns > self.core.base_delay_ns {
            return invalid("core jitter must not exceed the base core delay");
        }
        Ok(())
    }
}
