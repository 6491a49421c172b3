//! Plane-switch mechanisms: egress queues, quantized JSQ adaptive routing
//! over stale snapshots with weighted admission, ECN marking, and PFC
//! pause/resume hysteresis. Event plumbing lives in the simulator; these
//! pieces are pure state transitions.

use crate::units::{Rate, SimTime};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BUFFER_BYTES: u64 = 600 * 1000;
pub const DEFAULT_AR_BUCKET_BYTES: u64 = 4 * 1024;

#[derive(Debug, Clone)]
pub struct EgressQueue {
    pub depth: u64,
    pub capacity: u64,
    pub paused: bool,
    pub serializing_until: SimTime,
    // Counters exported to telemetry.
    pub tx_bytes: u64,
    pub ecn_marks: u64,
    pub drops: u64,
    pub pause_total: SimTime,
    pub pause_since: Option<SimTime>,
    // PFC hysteresis arm: true after XOFF until depth falls to xon.
    xoff_sent: bool,
}

impl EgressQueue {
    pub fn new(capacity: u64) -> Self {
        EgressQueue {
            depth: 0,
            capacity,
            paused: false,
            serializing_until: SimTime::ZERO,
            tx_bytes: 0,
            ecn_marks: 0,
            drops: 0,
            pause_total: SimTime::ZERO,
            pause_since: None,
            xoff_sent: false,
        }
    }

    pub fn set_paused(&mut self, paused: bool, now: SimTime) {
        if paused && !self.paused {
            self.pause_since = Some(now);
        } else if !paused && self.paused {
            if let Some(since) = self.pause_since.take() {
                self.pause_total += now.saturating_sub(since);
            }
        }
        self.paused = paused;
    }
}

/// Outcome of an enqueue attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueResult {
    /// Accepted; flag says whether the packet was ECN-marked.
    Accepted { ecn_marked: bool },
    /// Buffer exhausted with PFC disabled: packet dropped.
    Dropped,
}

/// Enqueue `bytes` onto an egress queue. With PFC enabled the buffer can
/// transiently exceed capacity only by in-flight headroom, which the xoff
/// threshold accounts for; overflow is a drop only in lossy mode.
pub fn enqueue(
    q: &mut EgressQueue,
    bytes: u64,
    ecn_threshold: u64,
    pfc_enabled: bool,
) -> EnqueueResult {
    if !pfc_enabled && q.depth + bytes > q.capacity {
        q.drops += 1;
        return EnqueueResult::Dropped;
    }
    q.depth += bytes;
    let ecn_marked = q.depth > ecn_threshold;
    if ecn_marked {
        q.ecn_marks += 1;
    }
    EnqueueResult::Accepted { ecn_marked }
}

/// Stale quantized snapshot of per-port egress depths.
#[derive(Debug, Clone)]
pub struct ArState {
    pub snapshot: Vec<u64>,
    pub period: SimTime,
    pub last_refresh: SimTime,
    pub bucket_bytes: u64,
}

impl ArState {
    pub fn new(num_ports: usize, period: SimTime, bucket_bytes: u64) -> Self {
        assert!(bucket_bytes > 0);
        ArState {
            snapshot: vec![0; num_ports],
            period,
            last_refresh: SimTime::ZERO,
            bucket_bytes,
        }
    }
}

/// Refresh snapshot buckets from true depths: bucket(q) = floor(depth / B).
pub fn refresh_ar_snapshot(ar: &mut ArState, depths: &[u64], now: SimTime) {
    debug_assert_eq!(ar.snapshot.len(), depths.len());
    for (s, &d) in ar.snapshot.iter_mut().zip(depths) {
        *s = d / ar.bucket_bytes;
    }
    ar.last_refresh = now;
}

/// Quantized JSQ with weighted admission: each candidate port with weight w
/// is excluded from this decision with probability 1-w; among admitted
/// ports the minimal snapshot bucket wins, ties broken uniformly. If every
/// port is excluded by the draw, all are re-admitted. Returns the index
/// into the candidate slice, or None for an empty group.
pub fn ar_select_port(buckets: &[u64], weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    debug_assert_eq!(buckets.len(), weights.len());
    if buckets.is_empty() {
        return None;
    }
    let mut admitted: Vec<usize> = (0..buckets.len())
        .filter(|&i| weights[i] >= 1.0 || rng.gen::<f64>() < weights[i])
        .collect();
    if admitted.is_empty() {
        admitted = (0..buckets.len()).collect();
    }
    let min_bucket = admitted.iter().map(|&i| buckets[i]).min().unwrap();
    let minimal: Vec<usize> = admitted
        .into_iter()
        .filter(|&i| buckets[i] == min_bucket)
        .collect();
    Some(minimal[rng.gen_range(0..minimal.len())])
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PfcConfig {
    pub enabled: bool,
    pub xoff_bytes: u64,
    pub xon_bytes: u64,
}

impl PfcConfig {
    /// Standard lossless headroom: xoff leaves room for one upstream RTT of
    /// in-flight data; xon re-arms at half of xoff.
    pub fn for_link(buffer_bytes: u64, link_rate: Rate, upstream_rtt: SimTime) -> Self {
        let headroom = link_rate.bytes_in(upstream_rtt);
        let xoff = buffer_bytes.saturating_sub(headroom).max(1);
        PfcConfig {
            enabled: true,
            xoff_bytes: xoff,
            xon_bytes: (xoff / 2).max(1),
        }
    }

    pub fn disabled() -> Self {
        PfcConfig {
            enabled: false,
            xoff_bytes: u64::MAX,
            xon_bytes: u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfcFrame {
    Pause,
    Resume,
}

/// Evaluate PFC hysteresis after a depth change. Crossing xoff upward emits
/// one Pause until depth falls to xon, which emits one Resume.
pub fn pfc_transition(q: &mut EgressQueue, cfg: &PfcConfig) -> Option<PfcFrame> {
    if !cfg.enabled {
        return None;
    }
    if !q.xoff_sent && q.depth >= cfg.xoff_bytes {
        q.xoff_sent = true;
        Some(PfcFrame::Pause)
    } else if q.xoff_sent && q.depth <= cfg.xon_bytes {
        q.xoff_sent = false;
        Some(PfcFrame::Resume)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strict_jsq_picks_empty_port() {
        // Depths [10 KB, 0 KB], B = 4 KB, weights 1.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let buckets = [10 * 1024 / 4096, 0];
        for _ in 0..100 {
            assert_eq!(ar_select_port(&buckets, &[1.0, 1.0], &mut rng), Some(1));
        }
    }

    #[test]
    fn jsq_oracle_exact_snapshot_picks_true_minimum() {
        // d = 0 / B = 1: snapshot equals true depth; the chosen port must be
        // a brute-force minimum. 100k random states.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let n = 2 + (rng.gen::<u64>() % 7) as usize;
            let depths: Vec<u64> = (0..n).map(|_| rng.gen::<u64>() % 1000).collect();
            let weights = vec![1.0; n];
            let chosen = ar_select_port(&depths, &weights, &mut rng).unwrap();
            let min = *depths.iter().min().unwrap();
            assert_eq!(depths[chosen], min);
        }
    }

    #[test]
    fn equal_depth_selection_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let buckets = [3u64, 3, 3, 3];
        let weights = [1.0; 4];
        let mut counts = [0f64; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[ar_select_port(&buckets, &weights, &mut rng).unwrap()] += 1.0;
        }
        let expect = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
        // 3 dof, p > 0.01 requires chi2 < 11.34.
        assert!(chi2 < 11.34, "chi2 = {chi2}");
    }

    #[test]
    fn weighted_admission_steers_four_to_one() {
        // Weights [1.0, 0.25] with equal depths: port 0 is always admitted,
        // port 1 joins 25% of draws, and ties split evenly when both are in.
        // Closed form: p1 = 0.25 * 0.5 = 0.125.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let buckets = [2u64, 2];
        let weights = [1.0, 0.25];
        let n = 200_000;
        let mut c1 = 0u64;
        for _ in 0..n {
            if ar_select_port(&buckets, &weights, &mut rng) == Some(1) {
                c1 += 1;
            }
        }
        let p1 = c1 as f64 / n as f64;
        assert!((p1 - 0.125).abs() < 0.005, "p1 = {p1}");
    }

    #[test]
    fn all_excluded_readmits_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Zero weights: every draw excludes everything, so the group is
        // re-admitted and plain JSQ applies.
        let buckets = [4u64, 1];
        assert_eq!(ar_select_port(&buckets, &[0.0, 0.0], &mut rng), Some(1));
        assert_eq!(ar_select_port(&[], &[], &mut rng), None);
    }

    #[test]
    fn snapshot_quantizes_by_bucket() {
        let mut ar = ArState::new(3, SimTime::from_us(1), 4096);
        refresh_ar_snapshot(&mut ar, &[0, 4095, 8192], SimTime::from_us(5));
        assert_eq!(ar.snapshot, vec![0, 0, 2]);
        assert_eq!(ar.last_refresh, SimTime::from_us(5));
    }

    #[test]
    fn ecn_boundary_marks_strictly_above_threshold() {
        let mut q = EgressQueue::new(DEFAULT_BUFFER_BYTES);
        // Depth lands exactly one byte below threshold: no mark.
        let threshold = 10_000;
        assert_eq!(
            enqueue(&mut q, threshold - 1, threshold, true),
            EnqueueResult::Accepted { ecn_marked: false }
        );
        // Next packet pushes depth above threshold: marked.
        assert_eq!(
            enqueue(&mut q, 2, threshold, true),
            EnqueueResult::Accepted { ecn_marked: true }
        );
        assert_eq!(q.ecn_marks, 1);
    }

    #[test]
    fn lossy_mode_drops_on_overflow() {
        let mut q = EgressQueue::new(10_000);
        assert!(matches!(
            enqueue(&mut q, 9_000, u64::MAX, false),
            EnqueueResult::Accepted { .. }
        ));
        assert_eq!(enqueue(&mut q, 2_000, u64::MAX, false), EnqueueResult::Dropped);
        assert_eq!(q.drops, 1);
        assert_eq!(q.depth, 9_000);
    }

    #[test]
    fn pfc_hysteresis_single_pause_until_xon() {
        let cfg = PfcConfig {
            enabled: true,
            xoff_bytes: 500_000,
            xon_bytes: 250_000,
        };
        let mut q = EgressQueue::new(600_000);
        q.depth = 500_000;
        assert_eq!(pfc_transition(&mut q, &cfg), Some(PfcFrame::Pause));
        // Further growth emits nothing until xon re-arms.
        q.depth = 550_000;
        assert_eq!(pfc_transition(&mut q, &cfg), None);
        q.depth = 300_000;
        assert_eq!(pfc_transition(&mut q, &cfg), None);
        q.depth = 250_000;
        assert_eq!(pfc_transition(&mut q, &cfg), Some(PfcFrame::Resume));
        // Re-arms for the next crossing.
        q.depth = 500_000;
        assert_eq!(pfc_transition(&mut q, &cfg), Some(PfcFrame::Pause));
    }

    #[test]
    fn pfc_headroom_sizing() {
        // 400 Gbps, 2 us upstream RTT: headroom = 100 KB.
        let cfg = PfcConfig::for_link(600_000, Rate::from_gbps(400), SimTime::from_us(2));
        assert_eq!(cfg.xoff_bytes, 600_000 - 100_000);
        assert_eq!(cfg.xon_bytes, 250_000);
    }

    #[test]
    fn pause_accounting_accumulates() {
        let mut q = EgressQueue::new(600_000);
        q.set_paused(true, SimTime::from_us(10));
        q.set_paused(false, SimTime::from_us(25));
        q.set_paused(true, SimTime::from_us(30));
        q.set_paused(false, SimTime::from_us(35));
        assert_eq!(q.pause_total, SimTime::from_us(20));
    }
}
