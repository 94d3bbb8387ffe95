//! Delay statistics: empirical CCDF and violation probabilities, per-component
//! contributions to violations, frame-relative timing histograms, departure
//! slot probabilities and the arrival-offset sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{simulate, ConfigError, ExperimentConfig, TddConfig};
use crate::trace_model::{DelayDecomposition, Nanos, PacketJourney, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("no samples")]
    EmptyInput,
    #[error("no delay exceeds {tau_ns}ns")]
    NoViolations { tau_ns: Nanos },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Empirical `P(delay > x)` evaluated at every distinct sample value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcdfCurve {
    pub points: Vec<(Nanos, f64)>,
    pub sample_count: usize,
}

impl CcdfCurve {
    /// `P(delay > x)` for any `x`.
    pub fn exceedance(&self, x: Nanos) -> f64 {
        // last point with delay <= x carries the answer
        let idx = self.points.partition_point(|&(d, _)| d <= x);
        if idx == 0 {
            1.0
        } else {
            self.points[idx - 1].1
        }
    }

    /// Smallest sample delay whose exceedance probability is at most `p`.
    pub fn quantile(&self, p: f64) -> Option<Nanos> {
        self.points.iter().find(|&&(_, q)| q <= p).map(|&(d, _)| d)
    }
}

pub fn ccdf(delays: &[Nanos]) -> Result<CcdfCurve, AnalyticsError> {
    if delays.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut sorted = delays.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut points = Vec::new();
    let mut i = 0;
    while i < n {
        let value = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == value {
            j += 1;
        }
        points.push((value, (n - j) as f64 / n as f64));
        i = j;
    }
    Ok(CcdfCurve {
        points,
        sample_count: n,
    })
}

/// Fraction of samples strictly greater than `tau`.
pub fn dvp(delays: &[Nanos], tau: Nanos) -> Result<f64, AnalyticsError> {
    if delays.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let over = delays.iter().filter(|&&d| d > tau).count();
    Ok(over as f64 / delays.len() as f64)
}

/// One value per leaf delay component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentShares {
    pub core: f64,
    pub queue: f64,
    pub tx: f64,
    pub seg: f64,
    pub retx: f64,
}

impl ComponentShares {
    fn from_array(a: [f64; 5]) -> Self {
        ComponentShares {
            core: a[0],
            queue: a[1],
            tx: a[2],
            seg: a[3],
            retx: a[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.core, self.queue, self.tx, self.seg, self.retx]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

pub const COMPONENT_NAMES: [&str; 5] = ["core", "queue", "tx", "seg", "retx"];

/// How much each component accounts for within a set of packets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    /// `None` for the all-packets aggregate.
    pub tau_ns: Option<Nanos>,
    /// Mean over packets of `component / e2e`.
    pub mean_share: ComponentShares,
    /// Sum of each component over sum of e2e delays.
    pub ratio_of_sums: ComponentShares,
    pub violating_count: usize,
}

fn contribution<'a>(
    selected: impl Iterator<Item = &'a DelayDecomposition>,
    tau_ns: Option<Nanos>,
) -> Option<ContributionReport> {
    let mut ratios = [0.0; 5];
    let mut sums = [0u128; 5];
    let mut total: u128 = 0;
    let mut count = 0usize;
    for d in selected.filter(|d| d.y_e2e > 0) {
        let e2e = d.y_e2e as f64;
        for (k, c) in d.components().into_iter().enumerate() {
            ratios[k] += c as f64 / e2e;
            sums[k] += c as u128;
        }
        total += d.y_e2e as u128;
        count += 1;
    }
    if count == 0 {
        return None;
    }
    Some(ContributionReport {
        tau_ns,
        mean_share: ComponentShares::from_array(ratios.map(|r| r / count as f64)),
        ratio_of_sums: ComponentShares::from_array(sums.map(|s| s as f64 / total as f64)),
        violating_count: count,
    })
}

/// Expected share of each component among packets with `y_e2e > tau`.
pub fn conditional_contribution(
    decomps: &[DelayDecomposition],
    tau: Nanos,
) -> Result<ContributionReport, AnalyticsError> {
    contribution(decomps.iter().filter(|d| d.y_e2e > tau), Some(tau))
        .ok_or(AnalyticsError::NoViolations { tau_ns: tau })
}

/// Shares over every packet with a positive end-to-end delay.
pub fn overall_contribution(
    decomps: &[DelayDecomposition],
) -> Result<ContributionReport, AnalyticsError> {
    contribution(decomps.iter(), None).ok_or(AnalyticsError::EmptyInput)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampKind {
    Arrival,
    /// Service start of the packet (its first segment).
    Service,
    /// First transmission of the given 1-based segment.
    SegmentService(u32),
    Departure,
}

impl TimestampKind {
    fn pick(self, j: &PacketJourney) -> Option<Timestamp> {
        match self {
            TimestampKind::Arrival => Some(j.radio_arrival),
            TimestampKind::Service => Some(j.radio_service),
            TimestampKind::SegmentService(m) => j
                .segments
                .get((m as usize).checked_sub(1)?)
                .map(|s| s.first_attempt().tx_time),
            TimestampKind::Departure => Some(j.radio_departure),
        }
    }
}

/// Frames spanned by [`frame_relative_histogram`].
pub const HISTOGRAM_FRAMES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRelativeHistogram {
    pub kind: TimestampKind,
    pub bin_width_ns: Nanos,
    /// `HISTOGRAM_FRAMES * slots_per_frame` bins from the arrival frame start.
    pub counts: Vec<u64>,
    /// Samples beyond the last bin.
    pub overflow: u64,
    /// Packets that have no timestamp of this kind (e.g. a missing segment).
    pub skipped: u64,
}

impl FrameRelativeHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

/// Offset of a timestamp from the start of the frame its packet arrived in.
pub fn frame_relative_offset(j: &PacketJourney, t: Timestamp, tdd: &TddConfig) -> Nanos {
    let frame_start = j.radio_arrival.0 / tdd.frame_duration_ns * tdd.frame_duration_ns;
    t.0 - frame_start
}

pub fn frame_relative_histogram(
    journeys: &[PacketJourney],
    kind: TimestampKind,
    tdd: &TddConfig,
) -> FrameRelativeHistogram {
    let bin = tdd.slot_duration_ns();
    let bins = (HISTOGRAM_FRAMES * tdd.slots_per_frame) as usize;
    let mut counts = vec![0u64; bins];
    let (mut overflow, mut skipped) = (0, 0);
    for j in journeys {
        let Some(t) = kind.pick(j) else {
            skipped += 1;
            continue;
        };
        let idx = (frame_relative_offset(j, t, tdd) / bin) as usize;
        match counts.get_mut(idx) {
            Some(c) => *c += 1,
            None => overflow += 1,
        }
    }
    FrameRelativeHistogram {
        kind,
        bin_width_ns: bin,
        counts,
        overflow,
        skipped,
    }
}

/// Empirical probability of radio departure in each slot of the frame.
pub fn departure_slot_distribution(journeys: &[PacketJourney], tdd: &TddConfig) -> Vec<f64> {
    let spf = tdd.slots_per_frame as u64;
    let mut counts = vec![0u64; spf as usize];
    for j in journeys {
        counts[((j.radio_departure.0 / tdd.slot_duration_ns()) % spf) as usize] += 1;
    }
    let n = journeys.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub offset_ns: Nanos,
    pub mean_queue_delay_ns: f64,
    pub mean_e2e_ns: f64,
    /// `(tau_ns, dvp)` for each requested target.
    pub dvp_at_targets: Vec<(Nanos, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSweepResult {
    pub rows: Vec<SweepRow>,
    pub theta_star: Nanos,
}

impl OffsetSweepResult {
    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .find(|r| r.offset_ns == self.theta_star)
            .expect("theta_star is one of the rows")
    }
}

fn mean(values: impl Iterator<Item = u64>) -> f64 {
    let (sum, n) = values.fold((0u128, 0u64), |(s, n), v| (s + v as u128, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

/// Simulates `base` at every arrival offset (same seed) and picks the offset
/// with the lowest mean queuing delay, preferring the smallest on ties.
pub fn offset_sweep(
    base: &ExperimentConfig,
    offsets: &[Nanos],
    targets: &[Nanos],
) -> Result<OffsetSweepResult, AnalyticsError> {
    if offsets.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let rows: Vec<SweepRow> = offsets
        .par_iter()
        .map(|&offset| {
            let mut cfg = base.clone();
            cfg.traffic.arrival_offset_ns = offset;
            let out = simulate(&cfg)?;
            let e2e: Vec<Nanos> = out.truth.iter().map(|t| t.decomposition.y_e2e).collect();
            let dvp_at_targets = targets
                .iter()
                .map(|&tau| Ok((tau, dvp(&e2e, tau)?)))
                .collect::<Result<_, AnalyticsError>>()?;
            Ok(SweepRow {
                offset_ns: offset,
                mean_queue_delay_ns: mean(out.truth.iter().map(|t| t.decomposition.y_queue)),
                mean_e2e_ns: mean(e2e.iter().copied()),
                dvp_at_targets,
            })
        })
        .collect::<Result<_, AnalyticsError>>()?;
    let theta_star = rows
        .iter()
        .min_by(|a, b| {
            a.mean_queue_delay_ns
                .total_cmp(&b.mean_queue_delay_ns)
                .then(a.offset_ns.cmp(&b.offset_ns))
        })
        .expect("non-empty")
        .offset_ns;
    Ok(OffsetSweepResult { rows, theta_star })
}
