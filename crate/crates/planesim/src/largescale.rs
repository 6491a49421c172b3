//! Models that complement the packet simulator where packet-level detail is
//! either unnecessary or computationally out of reach:
//!
//! * a fluid single-switch microbenchmark for the effect of stale adaptive
//!   routing snapshots on queue depth,
//! * a closed-form All2All latency-sensitivity model,
//! * a flow-level ring-collective model for convergence-time and fabric-flap
//!   studies at thousands of endpoints.

use crate::engine::RngFactory;
use crate::faults::{sample_flap_schedule, FlapProcess, Outage};
use crate::telemetry::percentile;
use crate::units::{Rate, SimTime};
use rand::Rng;

// ---------------------------------------------------------------------------
// Single-switch AR snapshot-delay microbenchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SwitchBenchParams {
    pub ports: usize,
    pub port_rate: Rate,
    /// Offered load as a fraction of aggregate capacity.
    pub load: f64,
    pub packet_bytes: u64,
    pub bucket_bytes: u64,
    pub buffer_bytes: u64,
    pub horizon: SimTime,
    pub warmup: SimTime,
    pub sample_interval: SimTime,
}

impl Default for SwitchBenchParams {
    fn default() -> Self {
        SwitchBenchParams {
            ports: 256,
            port_rate: Rate::from_gbps(100),
            load: 0.9,
            packet_bytes: 4096,
            bucket_bytes: 4096,
            buffer_bytes: 600_000,
            horizon: SimTime::from_ms(20),
            warmup: SimTime::from_ms(4),
            sample_interval: SimTime::from_us(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwitchBenchResult {
    pub p99_depth_bytes: f64,
    pub max_depth_bytes: f64,
    pub mean_depth_bytes: f64,
}

/// Fluid-drain model of one output-queued switch whose adaptive routing
/// works from a queue-depth snapshot refreshed every `delay`. Arrivals form
/// an aggregate Poisson stream; each packet joins a uniformly chosen member
/// of the stale minimum-bucket set, reselecting among non-full ports when
/// the choice would overflow. Queues drain continuously at line rate.
pub fn switch_ar_delay_bench(
    p: &SwitchBenchParams,
    delay: SimTime,
    seed: u64,
) -> SwitchBenchResult {
    let n = p.ports;
    let drain_bps = p.port_rate.bps() as f64 / 8.0 * 1e-9; // bytes per ns
    // Aggregate packet arrival rate (packets per ns).
    let lambda = p.load * n as f64 * drain_bps / p.packet_bytes as f64;
    let mut rng = RngFactory::new(seed).stream("switch-bench");

    let mut depth = vec![0.0f64; n];
    let mut touched = vec![0u64; n]; // last update time, ns
    let mut tie_set: Vec<usize> = (0..n).collect();
    let mut next_snap = 0u64;
    let mut next_sample = p.sample_interval.as_ns();
    let mut t = 0.0f64;
    let horizon = p.horizon.as_ns();
    let warmup = p.warmup.as_ns();
    let mut samples: Vec<f64> = Vec::new();
    let snap_every = delay.as_ns().max(1);

    let refresh = |depth: &mut [f64], touched: &mut [u64], now: u64| -> Vec<usize> {
        let mut min_bucket = u64::MAX;
        for i in 0..depth.len() {
            let dt = (now - touched[i]) as f64;
            depth[i] = (depth[i] - dt * drain_bps).max(0.0);
            touched[i] = now;
        }
        for d in depth.iter() {
            min_bucket = min_bucket.min(*d as u64 / p.bucket_bytes);
        }
        (0..depth.len())
            .filter(|&i| (depth[i] as u64) / p.bucket_bytes == min_bucket)
            .collect()
    };

    loop {
        let gap = -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / lambda;
        t += gap;
        let now = t as u64;
        if now >= horizon {
            break;
        }
        while next_snap <= now {
            tie_set = refresh(&mut depth, &mut touched, next_snap);
            next_snap += snap_every;
        }
        while next_sample <= now {
            for i in 0..n {
                let dt = (next_sample - touched[i]) as f64;
                depth[i] = (depth[i] - dt * drain_bps).max(0.0);
                touched[i] = next_sample;
            }
            if next_sample >= warmup {
                samples.extend_from_slice(&depth);
            }
            next_sample += p.sample_interval.as_ns();
        }
        // Choose from the stale tie set; fall back to any non-full port.
        let mut port = tie_set[rng.gen_range(0..tie_set.len())];
        let dt = (now - touched[port]) as f64;
        depth[port] = (depth[port] - dt * drain_bps).max(0.0);
        touched[port] = now;
        if depth[port] + p.packet_bytes as f64 > p.buffer_bytes as f64 {
            let open: Vec<usize> = tie_set
                .iter()
                .copied()
                .filter(|&i| {
                    let d = (depth[i] - (now - touched[i]) as f64 * drain_bps).max(0.0);
                    d + p.packet_bytes as f64 <= p.buffer_bytes as f64
                })
                .collect();
            let pool: Vec<usize> = if open.is_empty() {
                (0..n)
                    .filter(|&i| {
                        let d = (depth[i] - (now - touched[i]) as f64 * drain_bps).max(0.0);
                        d + p.packet_bytes as f64 <= p.buffer_bytes as f64
                    })
                    .collect()
            } else {
                open
            };
            if pool.is_empty() {
                continue; // every port full: the packet is dropped
            }
            port = pool[rng.gen_range(0..pool.len())];
            let dt = (now - touched[port]) as f64;
            depth[port] = (depth[port] - dt * drain_bps).max(0.0);
            touched[port] = now;
        }
        depth[port] += p.packet_bytes as f64;
    }

    let p99 = percentile(&samples, 0.99).unwrap_or(0.0);
    let max = samples.iter().copied().fold(0.0f64, f64::max);
    let mean = if samples.is_empty() {
        0.0
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    };
    SwitchBenchResult {
        p99_depth_bytes: p99,
        max_depth_bytes: max,
        mean_depth_bytes: mean,
    }
}

// ---------------------------------------------------------------------------
// All2All latency sensitivity (closed form)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct All2AllLatencyModel {
    pub ranks: usize,
    /// Per-endpoint line rate in bytes per second.
    pub line_rate_bps: f64,
    /// Number of peer exchanges whose handshakes overlap.
    pub pipeline_window: f64,
}

impl Default for All2AllLatencyModel {
    fn default() -> Self {
        All2AllLatencyModel {
            ranks: 64,
            line_rate_bps: 94.0e9, // bytes/s of goodput at 800 Gbps line
            pipeline_window: 4.0,
        }
    }
}

impl All2AllLatencyModel {
    /// Completion time of an All2All of aggregate size `size_bytes` per rank
    /// at one-way latency `oneway`: the per-peer payloads serialize on the
    /// NIC while the per-peer rendezvous round trips pipeline with depth
    /// `pipeline_window`.
    pub fn cct_secs(&self, size_bytes: f64, oneway: SimTime) -> f64 {
        let n = self.ranks as f64;
        let per_peer = size_bytes / n;
        let bw_term = (n - 1.0) * per_peer / self.line_rate_bps;
        let lat_term = (n - 1.0) * 2.0 * oneway.as_secs_f64() / self.pipeline_window;
        bw_term + lat_term
    }

    /// Bus bandwidth in bytes/s: algorithm bandwidth times (n-1)/n.
    pub fn busbw(&self, size_bytes: f64, oneway: SimTime) -> f64 {
        let n = self.ranks as f64;
        size_bytes / self.cct_secs(size_bytes, oneway) * (n - 1.0) / n
    }
}

// ---------------------------------------------------------------------------
// Flow-level ring-collective model under flaps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RingFleetParams {
    pub collectives: usize,
    pub ranks_per_collective: usize,
    pub planes: usize,
    /// Pristine per-iteration collective time.
    pub iteration_time: SimTime,
    pub horizon: SimTime,
    /// Aggregate flap onset rate across all host-plane links, per second.
    pub flaps_per_second: f64,
    pub flap_duration: SimTime,
}

impl Default for RingFleetParams {
    fn default() -> Self {
        RingFleetParams {
            collectives: 16,
            ranks_per_collective: 64,
            planes: 4,
            iteration_time: SimTime::from_ms(200),
            horizon: SimTime::from_secs(60),
            flaps_per_second: 1.67,
            flap_duration: SimTime::from_secs(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FleetResult {
    /// P99 of per-iteration slowdown (iteration CCT over pristine CCT)
    /// pooled across every collective and iteration.
    pub p99_slowdown: f64,
    pub mean_slowdown: f64,
    pub iterations: usize,
}

/// Sample one host-link flap schedule for the fleet. Links are numbered
/// host * planes + plane across all collectives' ranks.
pub fn sample_fleet_flaps(p: &RingFleetParams, seed: u64) -> Vec<Outage> {
    let hosts = p.collectives * p.ranks_per_collective;
    let links: Vec<crate::topology::LinkId> =
        (0..hosts * p.planes).map(crate::topology::LinkId).collect();
    let proc = FlapProcess::from_aggregate_rate(
        p.flaps_per_second * 60.0,
        links.len(),
        p.flap_duration.as_secs_f64(),
        p.horizon,
    );
    sample_flap_schedule(&proc, &links, &mut RngFactory::new(seed).stream("fleet-flaps"))
}

/// Tightly coupled ring collectives progress at the rate of their slowest
/// rank. A rank whose host-plane link is down stalls completely until the
/// NIC's plane exclusion converges (`convergence` after onset), then runs at
/// (planes-1)/planes until the link returns.
pub fn ring_fleet_p99(
    p: &RingFleetParams,
    flaps: &[Outage],
    convergence: SimTime,
) -> FleetResult {
    let ranks = p.ranks_per_collective;
    let hosts = p.collectives * ranks;
    // Per-host outage windows (merged over planes): (down, excluded, up).
    let mut per_host: Vec<Vec<(u64, u64, u64)>> = vec![Vec::new(); hosts];
    for o in flaps {
        let host = o.link.0 / p.planes;
        if host < hosts {
            let excl = o.down.as_ns().saturating_add(convergence.as_ns());
            per_host[host].push((o.down.as_ns(), excl, o.up.as_ns()));
        }
    }
    let degraded = (p.planes - 1) as f64 / p.planes as f64;

    // Collective rate at time t = min over ranks; a rank in (down, excl) has
    // rate 0, in (excl, up) rate `degraded`, else 1. Integrate iteration by
    // iteration over the shared timeline.
    let mut slowdowns: Vec<f64> = Vec::new();
    let work = p.iteration_time.as_ns() as f64; // pristine rate is 1
    for c in 0..p.collectives {
        let hosts_of_c: Vec<usize> = (c * ranks..(c + 1) * ranks).collect();
        // Breakpoints of the collective's min-rate function.
        let mut edges: Vec<u64> = vec![0, p.horizon.as_ns()];
        for &h in &hosts_of_c {
            for &(d, e, u) in &per_host[h] {
                edges.extend([d, e.min(u), u]);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let rate_at = |t: u64| -> f64 {
            let mut r = 1.0f64;
            for &h in &hosts_of_c {
                for &(d, e, u) in &per_host[h] {
                    if t >= d && t < u {
                        r = r.min(if t < e { 0.0 } else { degraded });
                    }
                }
            }
            r
        };
        // March through iterations by accumulating progress.
        let mut t = 0.0f64;
        let mut seg = 0usize;
        let mut iter_start = 0.0f64;
        let mut done = 0.0f64;
        let horizon = p.horizon.as_ns() as f64;
        while t < horizon {
            let seg_end = if seg + 1 < edges.len() {
                edges[seg + 1] as f64
            } else {
                horizon
            };
            let r = rate_at(t as u64);
            if r <= 0.0 {
                t = seg_end;
                seg += 1;
                if seg + 1 >= edges.len() && t >= horizon {
                    break;
                }
                continue;
            }
            let need = (work - done) / r;
            if t + need <= seg_end {
                t += need;
                slowdowns.push((t - iter_start) / work);
                iter_start = t;
                done = 0.0;
            } else {
                done += (seg_end - t) * r;
                t = seg_end;
                seg += 1;
            }
            if t >= horizon {
                break;
            }
        }
    }
    let p99 = percentile(&slowdowns, 0.99).unwrap_or(1.0);
    let mean = if slowdowns.is_empty() {
        1.0
    } else {
        slowdowns.iter().sum::<f64>() / slowdowns.len() as f64
    };
    FleetResult {
        p99_slowdown: p99,
        mean_slowdown: mean,
        iterations: slowdowns.len(),
    }
}

// ---------------------------------------------------------------------------
// Fabric-flap (leaf-spine) insensitivity model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FabricFlapParams {
    pub leaves: usize,
    pub uplinks_per_leaf: usize,
    /// Offered load per leaf as a fraction of full uplink capacity.
    pub leaf_load: f64,
    pub horizon: SimTime,
    pub flaps_per_second: f64,
    pub flap_duration: SimTime,
    /// Base one-way latency entering the per-collective latency term.
    pub oneway: SimTime,
    pub ranks: usize,
    pub line_rate_bps: f64,
}

impl Default for FabricFlapParams {
    fn default() -> Self {
        FabricFlapParams {
            leaves: 32,
            uplinks_per_leaf: 16,
            leaf_load: 0.9,
            horizon: SimTime::from_secs(60),
            flaps_per_second: 1.67,
            flap_duration: SimTime::from_secs(1),
            oneway: SimTime::from_us(5),
            ranks: 64,
            line_rate_bps: 94.0e9,
        }
    }
}

/// Normalized CCT of an All2All of the given size with and without fabric
/// (leaf-uplink) flaps. Adaptive routing spreads a leaf's traffic over its
/// live uplinks, so a flap only slows a collective while a leaf's live
/// capacity falls below its offered load; the bandwidth term is stretched by
/// that deficit averaged over the run.
pub fn fabric_flap_normalized_cct(
    p: &FabricFlapParams,
    size_bytes: f64,
    with_flaps: bool,
    seed: u64,
) -> f64 {
    let model = All2AllLatencyModel {
        ranks: p.ranks,
        line_rate_bps: p.line_rate_bps,
        pipeline_window: 4.0,
    };
    let ideal = model.cct_secs(size_bytes, p.oneway);
    if !with_flaps {
        return 1.0;
    }
    let links: Vec<crate::topology::LinkId> = (0..p.leaves * p.uplinks_per_leaf)
        .map(crate::topology::LinkId)
        .collect();
    let proc = FlapProcess::from_aggregate_rate(
        p.flaps_per_second * 60.0,
        links.len(),
        p.flap_duration.as_secs_f64(),
        p.horizon,
    );
    let flaps = sample_flap_schedule(
        &proc,
        &links,
        &mut RngFactory::new(seed).stream("fabric-flaps"),
    );
    // Expected per-leaf capacity deficit: a leaf with k of u uplinks down
    // serves min(1, (u-k)/u / load) of its demand.
    let mut down_ns = vec![0u64; p.leaves];
    for o in &flaps {
        let leaf = o.link.0 / p.uplinks_per_leaf;
        down_ns[leaf] += o.up.saturating_sub(o.down).as_ns();
    }
    let horizon_ns = p.horizon.as_ns() as f64;
    let u = p.uplinks_per_leaf as f64;
    // Fraction of time one uplink is down on the worst leaf, treated as the
    // binding rank for the P99 collective.
    let worst = down_ns.iter().copied().max().unwrap_or(0) as f64 / horizon_ns;
    let degraded_rate = ((u - 1.0) / u / p.leaf_load).min(1.0);
    let eff_rate = 1.0 - worst + worst * degraded_rate;
    let bw_term = model.cct_secs(size_bytes, SimTime::ZERO);
    let lat_term = ideal - bw_term;
    (bw_term / eff_rate + lat_term) / ideal
}
