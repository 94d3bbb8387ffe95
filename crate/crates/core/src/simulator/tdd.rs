//! Slot arithmetic over the repeating TDD pattern.

use serde::{Deserialize, Serialize};

use super::config::TddConfig;
use crate::trace_model::{Timestamp, SFN_MODULUS};

/// An uplink transmission opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantSlot {
    /// Frame counter since the epoch (not wrapped).
    pub frame_no: u64,
    pub slot_no: u32,
    pub slot_start: Timestamp,
}

impl GrantSlot {
    fn from_abs(abs_slot: u64, tdd: &TddConfig) -> Self {
        let spf = tdd.slots_per_frame as u64;
        GrantSlot {
            frame_no: abs_slot / spf,
            slot_no: (abs_slot % spf) as u32,
            slot_start: Timestamp(tdd.slot_start(abs_slot)),
        }
    }

    pub fn abs_slot(&self, tdd: &TddConfig) -> u64 {
        self.frame_no * tdd.slots_per_frame as u64 + self.slot_no as u64
    }

    /// Frame number as it appears on the air interface.
    pub fn sfn(&self) -> u32 {
        (self.frame_no % SFN_MODULUS as u64) as u32
    }

    /// When the MAC starts serving this slot.
    pub fn service_start(&self, tdd: &TddConfig) -> Timestamp {
        Timestamp(self.slot_start.0 - tdd.preparation_time_ns)
    }
}

/// First absolute slot whose service start (slot start minus preparation) is at or after `t`.
fn first_servable_slot(t: Timestamp, tdd: &TddConfig) -> u64 {
    let slot = tdd.slot_duration_ns();
    (t.0 + tdd.preparation_time_ns).div_ceil(slot)
}

/// Earliest uplink slot whose service can start at or after `t`.
pub fn next_grant_slot(t: Timestamp, tdd: &TddConfig) -> GrantSlot {
    let mut abs = first_servable_slot(t, tdd);
    while !tdd.is_uplink(abs) {
        abs += 1;
    }
    GrantSlot::from_abs(abs, tdd)
}

/// Which uplink slots carry a configured-grant occasion for new data.
///
/// The frame is cut into windows of `period` slots and the first uplink slot
/// of each window is an occasion. Retransmissions may use any uplink slot and
/// take precedence; an occasion they displace moves to the next uplink slot.
#[derive(Debug, Clone)]
pub struct GrantPlan {
    uplink: Vec<bool>,
    occasion: Vec<bool>,
}

impl GrantPlan {
    pub fn new(tdd: &TddConfig, period: u32) -> Self {
        let spf = tdd.slots_per_frame as usize;
        let period = period.max(1) as usize;
        let uplink: Vec<bool> = (0..spf as u64).map(|s| tdd.is_uplink(s)).collect();
        let mut occasion = vec![false; spf];
        for window in (0..spf).step_by(period) {
            if let Some(first) = (window..(window + period).min(spf)).find(|&s| uplink[s]) {
                occasion[first] = true;
            }
        }
        GrantPlan { uplink, occasion }
    }

    fn idx(&self, abs_slot: u64) -> usize {
        (abs_slot % self.uplink.len() as u64) as usize
    }

    pub fn is_uplink(&self, abs_slot: u64) -> bool {
        self.uplink[self.idx(abs_slot)]
    }

    pub fn is_occasion(&self, abs_slot: u64) -> bool {
        self.occasion[self.idx(abs_slot)]
    }

    pub fn occasions_per_frame(&self) -> usize {
        self.occasion.iter().filter(|&&o| o).count()
    }

    /// Next uplink slot strictly after `abs_slot`.
    pub fn next_uplink_after(&self, abs_slot: u64) -> u64 {
        let mut s = abs_slot + 1;
        while !self.is_uplink(s) {
            s += 1;
        }
        s
    }
}

/// Earliest new-data grant occasion whose service can start at or after `t`.
pub fn next_grant_occasion(t: Timestamp, tdd: &TddConfig, plan: &GrantPlan) -> GrantSlot {
    let mut abs = first_servable_slot(t, tdd);
    while !plan.is_occasion(abs) {
        abs += 1;
    }
    GrantSlot::from_abs(abs, tdd)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    #[test]
    fn boundary_equality_picks_that_slot() {
        let tdd = TddConfig::default();
        // slot 7 starts at 3.5 ms, service may start at 3.0 ms
        let g = next_grant_slot(Timestamp(3 * MS), &tdd);
        assert_eq!(
            (g.frame_no, g.slot_no, g.slot_start),
            (0, 7, Timestamp(3_500_000))
        );
        let g = next_grant_slot(Timestamp(3 * MS + 1), &tdd);
        assert_eq!(g.slot_no, 8);
    }

    #[test]
    fn wraps_to_next_period() {
        let tdd = TddConfig::default();
        // last uplink slot of the first period is slot 9 (service at 4.0 ms)
        let g = next_grant_slot(Timestamp(4 * MS + 1), &tdd);
        assert_eq!((g.frame_no, g.slot_no), (0, 17));
        let g = next_grant_slot(Timestamp(9 * MS + 1), &tdd);
        assert_eq!((g.frame_no, g.slot_no), (1, 7));
        assert_eq!(g.sfn(), 1);
    }

    #[test]
    fn gap_is_periodic_and_decreasing_between_opportunities() {
        let tdd = TddConfig::default();
        let period = tdd.pattern_period_ns();
        let n = 10_000u64;
        let gaps: Vec<i64> = (0..2 * n)
            .map(|i| {
                let t = Timestamp(MS + i * period / n);
                next_grant_slot(t, &tdd).slot_start.0 as i64 - t.0 as i64
            })
            .collect();
        for i in 0..n as usize {
            assert_eq!(gaps[i], gaps[i + n as usize], "period mismatch at {i}");
        }
        // between consecutive jumps the gap falls linearly with slope -1
        let step = (period / n) as i64;
        let mut jumps = 0;
        for w in gaps.windows(2) {
            if w[1] > w[0] {
                jumps += 1;
            } else {
                assert_eq!(w[0] - w[1], step);
            }
        }
        // three uplink slots per pattern period, two periods sampled
        assert!((5..=6).contains(&jumps), "{jumps}");
    }

    #[test]
    fn occasions_follow_grant_period() {
        let tdd = TddConfig::default();
        let plan = GrantPlan::new(&tdd, 10);
        let occ: Vec<u64> = (0..20).filter(|&s| plan.is_occasion(s)).collect();
        assert_eq!(occ, vec![7, 17]);
        let every = GrantPlan::new(&tdd, 1);
        let occ: Vec<u64> = (0..20).filter(|&s| every.is_occasion(s)).collect();
        assert_eq!(occ, vec![7, 8, 9, 17, 18, 19]);

        let g = next_grant_occasion(Timestamp(3 * MS + 1), &tdd, &plan);
        assert_eq!(g.slot_no, 17);
        assert_eq!(g.service_start(&tdd), Timestamp(8 * MS));
        assert_eq!(plan.next_uplink_after(9), 17);
    }
}
