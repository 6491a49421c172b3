//! High-frequency counters, per-microsecond bandwidth histograms,
//! percentile statistics, and the fleet analytics built on them:
//! straggler detection via bimodality and symmetry-group outlier
//! localization.

use crate::units::{Rate, SimTime};
use serde::{Deserialize, Serialize};

/// Nearest-rank percentile: the ceil(p*n)-th order statistic.
/// Returns `None` on empty input.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PercentileSummary {
    pub metric: String,
    pub p01: f64,
    pub p50: f64,
    pub p99: f64,
    pub mean: f64,
    pub n: usize,
}

impl PercentileSummary {
    pub fn from_samples(metric: &str, samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Some(PercentileSummary {
            metric: metric.to_string(),
            p01: percentile(samples, 0.01)?,
            p50: percentile(samples, 0.50)?,
            p99: percentile(samples, 0.99)?,
            mean,
            n: samples.len(),
        })
    }
}

/// A streamed counter series sampled at a fixed HFT interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HftSeries {
    pub entity: String,
    pub metric: String,
    pub interval: SimTime,
    pub samples: Vec<(SimTime, f64)>,
}

/// Per-entity bandwidth histogram over fixed-width time bins.
///
/// Counts bins by achieved rate, bucketed over [0, line rate]. Updated
/// online as bytes are recorded; `finish` flushes the trailing bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BwHistogram {
    pub entity: String,
    pub bin_width: SimTime,
    pub line_rate: Rate,
    pub num_buckets: usize,
    pub buckets: Vec<u64>,
    cur_bin: u64,
    cur_bytes: u64,
    finished: bool,
}

impl BwHistogram {
    pub fn new(entity: &str, bin_width: SimTime, line_rate: Rate, num_buckets: usize) -> Self {
        BwHistogram {
            entity: entity.to_string(),
            bin_width,
            line_rate,
            num_buckets,
            buckets: vec![0; num_buckets],
            cur_bin: 0,
            cur_bytes: 0,
            finished: false,
        }
    }

    fn bucket_of(&self, bytes: u64) -> usize {
        let cap_bytes = self.line_rate.bytes_in(self.bin_width).max(1);
        let frac = bytes as f64 / cap_bytes as f64;
        ((frac * self.num_buckets as f64) as usize).min(self.num_buckets - 1)
    }

    pub fn record(&mut self, time: SimTime, bytes: u64) {
        debug_assert!(!self.finished);
        let bin = time.as_ns() / self.bin_width.as_ns();
        if bin > self.cur_bin {
            let b = self.bucket_of(self.cur_bytes);
            self.buckets[b] += 1;
            // Bins with no traffic at all land in the idle bucket.
            self.buckets[0] += bin - self.cur_bin - 1;
            self.cur_bin = bin;
            self.cur_bytes = 0;
        }
        self.cur_bytes += bytes;
    }

    /// Close the histogram at `end`; trailing bins count as idle.
    pub fn finish(&mut self, end: SimTime) {
        if self.finished {
            return;
        }
        let end_bin = end.as_ns() / self.bin_width.as_ns();
        let b = self.bucket_of(self.cur_bytes);
        self.buckets[b] += 1;
        if end_bin > self.cur_bin {
            self.buckets[0] += end_bin - self.cur_bin - 1;
        }
        self.finished = true;
    }

    pub fn total_bins(&self) -> u64 {
        self.buckets.iter().sum()
    }

    /// Fraction of bins outside the two healthy modes (~0 and ~line rate),
    /// with a mode band of +-10% of line rate.
    pub fn midband_mass(&self) -> f64 {
        let total = self.total_bins();
        if total == 0 {
            return 0.0;
        }
        let lo = (self.num_buckets as f64 * 0.10).ceil() as usize;
        let hi = (self.num_buckets as f64 * 0.90).floor() as usize;
        let mid: u64 = self.buckets[lo..hi].iter().sum();
        mid as f64 / total as f64
    }
}

/// Rank NICs by the probability mass their bandwidth histogram places
/// outside the bimodal {idle, line-rate} pattern. A NIC is flagged when its
/// mid-band mass exceeds the population median by `factor` (default 5).
pub fn detect_straggler(histograms: &[BwHistogram], factor: f64) -> Vec<(String, f64)> {
    assert!(histograms.len() >= 3, "straggler detection needs >= 3 NICs");
    let masses: Vec<f64> = histograms.iter().map(|h| h.midband_mass()).collect();
    let med = percentile(&masses, 0.50).unwrap();
    let mut ranked: Vec<(String, f64)> = histograms
        .iter()
        .zip(&masses)
        .filter(|(_, &m)| m > factor * med && m > 0.0)
        .map(|(h, &m)| (h.entity.clone(), m))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked
}

/// Flag ports in a symmetry group whose mean bandwidth deviates from the
/// group median by more than `k` median-absolute-deviations.
pub fn symmetry_outliers(port_means: &[(String, f64)], k: f64) -> Vec<String> {
    assert!(port_means.len() >= 4, "symmetry groups need >= 4 ports");
    let values: Vec<f64> = port_means.iter().map(|&(_, v)| v).collect();
    let med = percentile(&values, 0.50).unwrap();
    let devs: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = percentile(&devs, 0.50).unwrap();
    // Guard against a degenerate zero MAD on constant groups.
    let spread = mad.max(1e-6 * med.abs()).max(1e-12);
    port_means
        .iter()
        .filter(|&&(_, v)| (v - med).abs() > k * spread)
        .map(|(name, _)| name.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollectiveKind {
    All2All,
    RingAllGather,
    RingReduceScatter,
    OneToMany,
    Bisection,
    SendReceive,
}

/// Closed-form CCT on an uncongested fabric: a bandwidth term plus a hop
/// latency term per dependent round.
pub fn ideal_cct(
    kind: CollectiveKind,
    n: usize,
    total_bytes: u64,
    line_rate: Rate,
    hop_latency: SimTime,
) -> SimTime {
    match kind {
        CollectiveKind::RingAllGather | CollectiveKind::RingReduceScatter => {
            let chunk = total_bytes / n as u64;
            let per_round = line_rate.serialize_time(chunk) + hop_latency;
            SimTime(per_round.as_ns() * (n as u64 - 1))
        }
        CollectiveKind::All2All => {
            // Each rank sends S/n, split over n-1 peers, all in parallel.
            let per_rank = total_bytes / n as u64;
            line_rate.serialize_time(per_rank) + hop_latency
        }
        CollectiveKind::SendReceive | CollectiveKind::OneToMany | CollectiveKind::Bisection => {
            line_rate.serialize_time(total_bytes) + hop_latency
        }
    }
}

/// Ratio ideal/actual in (0, 1].
pub fn normalized_cct(ideal: SimTime, actual: SimTime) -> f64 {
    assert!(actual.as_ns() > 0);
    (ideal.as_ns() as f64 / actual.as_ns() as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[5.0], 0.99), Some(5.0));
        let v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(percentile(&v, 0.99), Some(99.0));
        assert_eq!(percentile(&v, 0.01), Some(1.0));
        assert_eq!(percentile(&[], 0.5), None);
    }

    #[test]
    fn summary_orders_percentiles() {
        let v: Vec<f64> = (0..1000).map(|x| (x * 7919 % 997) as f64).collect();
        let s = PercentileSummary::from_samples("m", &v).unwrap();
        assert!(s.p01 <= s.p50 && s.p50 <= s.p99);
    }

    fn synthetic_hist(entity: &str, midband_bins: u64, total: u64) -> BwHistogram {
        let mut h = BwHistogram::new(entity, SimTime::from_us(1), Rate::from_gbps(400), 20);
        h.buckets[0] = (total - midband_bins) / 2;
        h.buckets[19] = total - midband_bins - h.buckets[0];
        h.buckets[10] = midband_bins;
        h.finished = true;
        h
    }

    #[test]
    fn bimodal_population_yields_no_suspects() {
        let hists: Vec<BwHistogram> = (0..5).map(|i| synthetic_hist(&format!("nic{i}"), 0, 100)).collect();
        assert!(detect_straggler(&hists, 5.0).is_empty());
    }

    #[test]
    fn straggler_ranked_first_by_midband_mass() {
        let mut hists: Vec<BwHistogram> =
            (0..7).map(|i| synthetic_hist(&format!("nic{i}"), 1, 100)).collect();
        hists[3] = synthetic_hist("nic3", 60, 100);
        hists[5] = synthetic_hist("nic5", 30, 100);
        let ranked = detect_straggler(&hists, 5.0);
        // Oracle: sort by mass descending.
        assert_eq!(ranked[0].0, "nic3");
        assert_eq!(ranked[1].0, "nic5");
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn histogram_bins_sum_to_window() {
        let mut h = BwHistogram::new("p", SimTime::from_us(1), Rate::from_gbps(100), 10);
        h.record(SimTime::from_ns(100), 4096);
        h.record(SimTime::from_ns(2_500), 4096);
        h.record(SimTime::from_ns(2_700), 4096);
        h.finish(SimTime::from_us(10));
        assert_eq!(h.total_bins(), 10);
    }

    #[test]
    fn constructed_outlier_flagged() {
        let ports: Vec<(String, f64)> = (0..8)
            .map(|i| (format!("port{i}"), if i == 2 { 200.0 } else { 100.0 }))
            .collect();
        assert_eq!(symmetry_outliers(&ports, 5.0), vec!["port2".to_string()]);
    }

    #[test]
    fn uniform_group_has_no_outliers() {
        let ports: Vec<(String, f64)> = (0..8)
            .map(|i| (format!("port{i}"), 100.0 + 0.5 * (i % 3) as f64))
            .collect();
        assert!(symmetry_outliers(&ports, 5.0).is_empty());
    }

    #[test]
    fn ring_ideal_matches_closed_form() {
        let n = 4;
        let total = 4_000_000u64;
        let rate = Rate::from_gbps(100);
        let lat = SimTime::from_us(2);
        let ideal = ideal_cct(CollectiveKind::RingAllGather, n, total, rate, lat);
        let chunk = total / n as u64;
        let expect = (n as u64 - 1) * (rate.serialize_time(chunk).as_ns() + lat.as_ns());
        assert_eq!(ideal.as_ns(), expect);
    }
}
