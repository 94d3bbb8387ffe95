//! Splits a packet journey into core, queuing and link delay, and the link
//! delay further into transmission, segmentation and retransmission delay.
//!
//! The link split is anchored on the segment with the largest service delay
//! (final decode minus first transmission). Its first attempt gives the
//! transmission delay, the span from its first to its final decode gives the
//! retransmission delay, and whatever link delay is left is attributed to
//! segmentation.

use thiserror::Error;

use crate::trace_model::{DelayDecomposition, Nanos, PacketJourney, SegmentRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("packet {packet_id}: {reason}")]
    InvalidJourney { packet_id: u64, reason: String },
}

/// Final decode time minus first transmission time of a segment.
pub fn segment_service_delay(seg: &SegmentRecord) -> Nanos {
    seg.final_attempt().decode_time - seg.first_attempt().tx_time
}

/// 1-based index of the segment with the largest service delay; ties go to the lowest index.
pub fn select_m_star(journey: &PacketJourney) -> u32 {
    let mut best = (0usize, 0u64);
    for (i, seg) in journey.segments.iter().enumerate() {
        let d = segment_service_delay(seg);
        if i == 0 || d > best.1 {
            best = (i, d);
        }
    }
    best.0 as u32 + 1
}

fn check(journey: &PacketJourney) -> Result<(), String> {
    let j = journey;
    if j.segments.is_empty() {
        return Err("no segments".into());
    }
    if !(j.radio_arrival <= j.radio_service
        && j.radio_service <= j.radio_departure
        && j.radio_departure <= j.core_departure)
    {
        return Err("radio arrival, service, departure and core departure out of order".into());
    }
    for seg in &j.segments {
        if seg.attempts.is_empty() {
            return Err(format!("segment {} has no attempts", seg.segment_index));
        }
        if seg.attempts.iter().any(|a| a.tx_time >= a.decode_time) {
            return Err(format!(
                "segment {} decodes before it is sent",
                seg.segment_index
            ));
        }
        if seg
            .attempts
            .windows(2)
            .any(|w| w[0].tx_time >= w[1].tx_time)
        {
            return Err(format!(
                "segment {} attempts not ordered",
                seg.segment_index
            ));
        }
        if seg.first_attempt().tx_time < j.radio_service {
            return Err(format!("segment {} sent before service", seg.segment_index));
        }
        if seg.final_attempt().decode_time > j.radio_departure {
            return Err(format!(
                "segment {} decoded after departure",
                seg.segment_index
            ));
        }
    }
    Ok(())
}

pub fn decompose(journey: &PacketJourney) -> Result<DelayDecomposition, DecomposeError> {
    check(journey).map_err(|reason| DecomposeError::InvalidJourney {
        packet_id: journey.packet_id,
        reason,
    })?;
    let m_star = select_m_star(journey);
    let anchor = &journey.segments[m_star as usize - 1];
    let first = anchor.first_attempt();
    let last = anchor.final_attempt();

    let y_queue = journey.radio_service - journey.radio_arrival;
    let y_link = journey.radio_departure - journey.radio_service;
    let y_core = journey.core_departure - journey.radio_departure;
    let y_tx = first.decode_time - first.tx_time;
    let y_retx = last.decode_time - first.decode_time;
    // non-negative: the anchor starts no earlier than service and ends no later than departure
    let y_seg = y_link - y_tx - y_retx;

    Ok(DelayDecomposition {
        packet_id: journey.packet_id,
        y_e2e: journey.core_departure - journey.radio_arrival,
        y_core,
        y_queue,
        y_link,
        y_tx,
        y_seg,
        y_retx,
        m_star,
    })
}
