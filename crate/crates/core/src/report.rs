//! Reports tying the pipeline together: the analysis of one trace against a
//! set of delay targets, run manifests, and the CSV / JSON-lines writers used
//! by the command-line tool.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    ccdf, conditional_contribution, departure_slot_distribution, dvp, frame_relative_histogram,
    overall_contribution, AnalyticsError, CcdfCurve, ContributionReport, FrameRelativeHistogram,
    OffsetSweepResult, TimestampKind,
};
use crate::decomposer::{decompose, DecomposeError};
use crate::journey_builder::{build_journeys, Anomaly, BuildError};
use crate::simulator::{ConfigError, ExperimentConfig, GroundTruth, TddConfig};
use crate::trace_model::{DelayDecomposition, Nanos, PacketJourney, TraceEvent, NANOS_PER_MS};

/// Fraction of anomalous packets above which an analysis counts as failed input.
pub const DEFAULT_ANOMALY_THRESHOLD: f64 = 0.01;

/// Exceedance levels reported as delay quantiles.
pub const REPORT_QUANTILES: [f64; 5] = [0.5, 0.9, 0.99, 0.999, 0.9999];

/// Segment indices get their own service-time histogram up to this many.
const MAX_SEGMENT_HISTOGRAMS: u32 = 8;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: {source}")]
    Trace {
        line: usize,
        source: crate::trace_model::TraceError,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A delay requirement: `P(e2e > tau) <= epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub tau_ns: Nanos,
    pub epsilon: f64,
}

fn ms_to_ns(text: &str) -> Result<Nanos, ReportError> {
    let ms: f64 = text
        .trim()
        .parse()
        .map_err(|_| ReportError::Argument(format!("`{text}` is not a number of milliseconds")))?;
    if !ms.is_finite() || ms < 0.0 {
        return Err(ReportError::Argument(format!(
            "`{text}` must be a non-negative duration"
        )));
    }
    Ok((ms * NANOS_PER_MS as f64).round() as Nanos)
}

/// Parses `"tau_ms:epsilon,..."`, e.g. `"5:1e-2,15:1e-4"`.
pub fn parse_targets(text: &str) -> Result<Vec<Target>, ReportError> {
    let targets = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (tau, eps) = item.split_once(':').ok_or_else(|| {
                ReportError::Argument(format!("target `{item}` is not tau_ms:epsilon"))
            })?;
            let epsilon: f64 = eps
                .trim()
                .parse()
                .map_err(|_| ReportError::Argument(format!("bad epsilon `{eps}`")))?;
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(ReportError::Argument(format!(
                    "epsilon `{eps}` outside [0, 1]"
                )));
            }
            Ok(Target {
                tau_ns: ms_to_ns(tau)?,
                epsilon,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if targets.is_empty() {
        return Err(ReportError::Argument("no targets given".into()));
    }
    Ok(targets)
}

/// Parses a comma-separated list of offsets in milliseconds, or
/// `start:stop:step` (inclusive stop).
pub fn parse_offsets(text: &str) -> Result<Vec<Nanos>, ReportError> {
    let parts: Vec<&str> = text.split(':').collect();
    let offsets = if parts.len() == 3 {
        let (start, stop, step) = (
            ms_to_ns(parts[0])?,
            ms_to_ns(parts[1])?,
            ms_to_ns(parts[2])?,
        );
        if step == 0 || stop < start {
            return Err(ReportError::Argument(format!(
                "empty offset range `{text}`"
            )));
        }
        (0..)
            .map(|k| start + k * step)
            .take_while(|&o| o <= stop)
            .collect()
    } else {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(ms_to_ns)
            .collect::<Result<Vec<_>, _>>()?
    };
    if offsets.is_empty() {
        return Err(ReportError::Argument("no offsets given".into()));
    }
    Ok(offsets)
}

/// Everything needed to reproduce an output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub config: Option<ExperimentConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVerdict {
    pub tau_ns: Nanos,
    pub epsilon: f64,
    pub dvp: f64,
    pub pass: bool,
    /// Component shares among violators; absent when nothing violates.
    pub violators: Option<ContributionReport>,
}

/// Mean of each delay component in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentMeans {
    pub e2e: f64,
    pub core: f64,
    pub queue: f64,
    pub link: f64,
    pub tx: f64,
    pub seg: f64,
    pub retx: f64,
}

impl ComponentMeans {
    pub fn of(decomps: &[DelayDecomposition]) -> Self {
        let n = decomps.len().max(1) as f64;
        let mean = |f: fn(&DelayDecomposition) -> Nanos| {
            decomps.iter().map(|d| f(d) as u128).sum::<u128>() as f64 / n
        };
        ComponentMeans {
            e2e: mean(|d| d.y_e2e),
            core: mean(|d| d.y_core),
            queue: mean(|d| d.y_queue),
            link: mean(|d| d.y_link),
            tx: mean(|d| d.y_tx),
            seg: mean(|d| d.y_seg),
            retx: mean(|d| d.y_retx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub quantile: f64,
    pub delay_ns: Nanos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub packet_count: usize,
    pub anomaly_count: usize,
    pub anomaly_rate: f64,
    pub anomaly_threshold: f64,
    pub anomalies_by_kind: BTreeMap<String, usize>,
    pub means_ns: ComponentMeans,
    pub e2e_quantiles: Vec<QuantilePoint>,
    pub verdicts: Vec<TargetVerdict>,
    pub all_packets: ContributionReport,
    pub histograms: Vec<FrameRelativeHistogram>,
    /// Probability of radio departure in each slot of the frame.
    pub departure_slot_probability: Vec<f64>,
}

impl AnalysisSummary {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn anomaly_threshold_exceeded(&self) -> bool {
        self.anomaly_rate > self.anomaly_threshold
    }
}

/// Full result of analysing one trace.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub summary: AnalysisSummary,
    pub journeys: Vec<PacketJourney>,
    pub anomalies: Vec<Anomaly>,
    pub decompositions: Vec<DelayDecomposition>,
    pub ccdf: CcdfCurve,
}

/// A report body together with the manifest of the run that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub manifest: RunManifest,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone)]
pub struct DecomposedTrace {
    pub journeys: Vec<PacketJourney>,
    pub anomalies: Vec<Anomaly>,
    /// Parallel to `journeys`.
    pub decompositions: Vec<DelayDecomposition>,
}

/// Rebuilds journeys and decomposes every complete one.
pub fn decompose_trace(events: Vec<TraceEvent>) -> Result<DecomposedTrace, ReportError> {
    let built = build_journeys(events)?;
    let decompositions = built
        .journeys
        .iter()
        .map(decompose)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecomposedTrace {
        journeys: built.journeys,
        anomalies: built.anomalies,
        decompositions,
    })
}

/// Build, decompose and evaluate a trace against `targets`.
pub fn analyze(
    events: Vec<TraceEvent>,
    targets: &[Target],
    tdd: &TddConfig,
    anomaly_threshold: f64,
) -> Result<Analysis, ReportError> {
    let DecomposedTrace {
        journeys,
        anomalies,
        decompositions,
    } = decompose_trace(events)?;
    let anomaly_rate = {
        let total = journeys.len() + anomalies.len();
        if total == 0 {
            0.0
        } else {
            anomalies.len() as f64 / total as f64
        }
    };
    let e2e: Vec<Nanos> = decompositions.iter().map(|d| d.y_e2e).collect();
    let curve = ccdf(&e2e)?;

    let verdicts = targets
        .iter()
        .map(|t| {
            let p = dvp(&e2e, t.tau_ns)?;
            let violators = match conditional_contribution(&decompositions, t.tau_ns) {
                Ok(c) => Some(c),
                Err(AnalyticsError::NoViolations { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(TargetVerdict {
                tau_ns: t.tau_ns,
                epsilon: t.epsilon,
                dvp: p,
                pass: p <= t.epsilon,
                violators,
            })
        })
        .collect::<Result<Vec<_>, AnalyticsError>>()?;

    let max_segments = journeys
        .iter()
        .map(|j| j.segments.len() as u32)
        .max()
        .unwrap_or(0)
        .min(MAX_SEGMENT_HISTOGRAMS);
    let mut kinds = vec![TimestampKind::Arrival, TimestampKind::Service];
    kinds.extend((1..=max_segments).map(TimestampKind::SegmentService));
    kinds.push(TimestampKind::Departure);
    let histograms = kinds
        .into_iter()
        .map(|k| frame_relative_histogram(&journeys, k, tdd))
        .collect();

    let mut anomalies_by_kind = BTreeMap::new();
    for a in &anomalies {
        *anomalies_by_kind
            .entry(format!("{:?}", a.kind))
            .or_insert(0) += 1;
    }

    let summary = AnalysisSummary {
        packet_count: journeys.len(),
        anomaly_count: anomalies.len(),
        anomaly_rate,
        anomaly_threshold,
        anomalies_by_kind,
        means_ns: ComponentMeans::of(&decompositions),
        e2e_quantiles: REPORT_QUANTILES
            .iter()
            .filter_map(|&q| {
                curve.quantile(1.0 - q).map(|delay_ns| QuantilePoint {
                    quantile: q,
                    delay_ns,
                })
            })
            .collect(),
        verdicts,
        all_packets: overall_contribution(&decompositions)?,
        histograms,
        departure_slot_probability: departure_slot_distribution(&journeys, tdd),
    };
    Ok(Analysis {
        summary,
        journeys,
        anomalies,
        decompositions,
        ccdf: curve,
    })
}

#[derive(Serialize)]
struct DecompositionRow {
    packet_id: u64,
    y_e2e: Nanos,
    y_core: Nanos,
    y_queue: Nanos,
    y_link: Nanos,
    y_tx: Nanos,
    y_seg: Nanos,
    y_retx: Nanos,
    m_star: u32,
    arrival_frame_no: Option<u32>,
    arrival_slot_no: Option<u32>,
}

/// One row per packet; `journeys` supplies the arrival frame and slot when it
/// lines up with `decomps`.
pub fn write_decompositions_csv<W: Write>(
    out: W,
    decomps: &[DelayDecomposition],
    journeys: &[PacketJourney],
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for (i, d) in decomps.iter().enumerate() {
        let j = journeys.get(i).filter(|j| j.packet_id == d.packet_id);
        w.serialize(DecompositionRow {
            packet_id: d.packet_id,
            y_e2e: d.y_e2e,
            y_core: d.y_core,
            y_queue: d.y_queue,
            y_link: d.y_link,
            y_tx: d.y_tx,
            y_seg: d.y_seg,
            y_retx: d.y_retx,
            m_star: d.m_star,
            arrival_frame_no: j.and_then(|j| j.arrival_frame_no),
            arrival_slot_no: j.and_then(|j| j.arrival_slot_no),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ccdf_csv<W: Write>(out: W, curve: &CcdfCurve) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delay_ns", "exceedance"])?;
    for &(d, p) in &curve.points {
        w.write_record([d.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per (timestamp kind, bin).
pub fn write_histograms_csv<W: Write>(
    out: W,
    histograms: &[FrameRelativeHistogram],
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "bin_start_ns", "count"])?;
    for h in histograms {
        let kind = match h.kind {
            TimestampKind::Arrival => "arrival".to_string(),
            TimestampKind::Service => "service".to_string(),
            TimestampKind::SegmentService(m) => format!("segment_{m}"),
            TimestampKind::Departure => "departure".to_string(),
        };
        for (i, c) in h.counts.iter().enumerate() {
            w.write_record([
                kind.clone(),
                (i as u64 * h.bin_width_ns).to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, sweep: &OffsetSweepResult) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let taus: Vec<Nanos> = sweep
        .rows
        .first()
        .map(|r| r.dvp_at_targets.iter().map(|&(t, _)| t).collect())
        .unwrap_or_default();
    let mut header = vec![
        "offset_ns".to_string(),
        "mean_queue_delay_ns".to_string(),
        "mean_e2e_ns".to_string(),
    ];
    header.extend(taus.iter().map(|t| format!("dvp_{t}ns")));
    header.push("theta_star".into());
    w.write_record(&header)?;
    for r in &sweep.rows {
        let mut rec = vec![
            r.offset_ns.to_string(),
            r.mean_queue_delay_ns.to_string(),
            r.mean_e2e_ns.to_string(),
        ];
        rec.extend(r.dvp_at_targets.iter().map(|&(_, p)| p.to_string()));
        rec.push((r.offset_ns == sweep.theta_star).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON document per line.
pub fn write_json_lines<W: Write, T: Serialize>(
    mut out: W,
    items: &[T],
) -> Result<(), ReportError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_json_lines<R: BufRead, T: for<'de> Deserialize<'de>>(
    input: R,
) -> Result<Vec<T>, ReportError> {
    let mut items = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok(items)
}

pub fn write_truth<W: Write>(out: W, truth: &[GroundTruth]) -> Result<(), ReportError> {
    write_json_lines(out, truth)
}

pub fn read_truth<R: BufRead>(input: R) -> Result<Vec<GroundTruth>, ReportError> {
    read_json_lines(input)
}

/// Parses a whole trace file, reporting the first bad line.
pub fn read_trace(text: &str) -> Result<Vec<TraceEvent>, ReportError> {
    crate::trace_model::parse_trace(text)
        .map_err(|(line, source)| ReportError::Trace { line, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::simulate;

    #[test]
    fn targets_parse() {
        let t = parse_targets("5:1e-2, 15:1e-4").unwrap();
        assert_eq!(
            t,
            vec![
                Target {
                    tau_ns: 5_000_000,
                    epsilon: 1e-2
                },
                Target {
                    tau_ns: 15_000_000,
                    epsilon: 1e-4
                }
            ]
        );
        assert_eq!(parse_targets("0.5:0.1").unwrap()[0].tau_ns, 500_000);
        for bad in ["", "5", "5:x", "-1:0.1", "5:2"] {
            assert!(parse_targets(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn offsets_parse() {
        assert_eq!(parse_offsets("0:9:1").unwrap().len(), 10);
        assert_eq!(parse_offsets("0,2.5").unwrap(), vec![0, 2_500_000]);
        assert!(parse_offsets("3:1:1").is_err());
        assert!(parse_offsets("0:5:0").is_err());
        assert!(parse_offsets("a").is_err());
    }

    fn preset_analysis(name: &str) -> Analysis {
        let mut cfg = ExperimentConfig::preset(name).unwrap();
        cfg.traffic.packet_count = 5000;
        let out = simulate(&cfg).unwrap();
        let targets = parse_targets("5:1e-2,15:1e-4").unwrap();
        analyze(out.events, &targets, &cfg.tdd, DEFAULT_ANOMALY_THRESHOLD).unwrap()
    }

    #[test]
    fn baseline_misses_the_tight_target() {
        let a = preset_analysis("a");
        assert_eq!(a.summary.packet_count, 5000);
        assert_eq!(a.summary.anomaly_count, 0);
        assert!(!a.summary.verdicts[0].pass);
        assert!(a.summary.verdicts[0].dvp > 0.9);
        // arrival, service, two segments, departure
        assert_eq!(a.summary.histograms.len(), 5);
        let p: f64 = a.summary.departure_slot_probability.iter().sum();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let r = analyze(
            Vec::new(),
            &parse_targets("5:0.01").unwrap(),
            &TddConfig::default(),
            0.01,
        );
        assert!(matches!(
            r,
            Err(ReportError::Analytics(AnalyticsError::EmptyInput))
        ));
    }

    #[test]
    fn csv_writers_emit_one_row_per_item() {
        let a = preset_analysis("b");
        let mut buf = Vec::new();
        write_decompositions_csv(&mut buf, &a.decompositions, &a.journeys).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5001);
        assert!(text.starts_with("packet_id,y_e2e,y_core,y_queue,y_link,y_tx,y_seg,y_retx,m_star,"));
        let mut buf = Vec::new();
        write_ccdf_csv(&mut buf, &a.ccdf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            a.ccdf.points.len() + 1
        );
    }

    #[test]
    fn truth_round_trips_through_json_lines() {
        let mut cfg = ExperimentConfig::preset("a").unwrap();
        cfg.traffic.packet_count = 50;
        let truth = simulate(&cfg).unwrap().truth;
        let mut buf = Vec::new();
        write_truth(&mut buf, &truth).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), truth);
    }
}
