//! Endpoint NIC mechanisms: per-(destination, plane) congestion-control
//! contexts driven by RTT probes and CNPs, the two-stage plane load
//! balancer, out-of-order reassembly, and retransmit tracking. The event
//! plumbing (pacing, probe echoes, CNP delivery) lives in the simulator.

use crate::units::{Rate, SimTime};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DEFAULT_MTU_BYTES: u64 = 4096;

/// Congestion-control parameters; defaults sized for a 3 ms failover
/// envelope and DCQCN/Swift-style rate dynamics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CcParams {
    /// Multiplicative decrease factor on CNP.
    pub alpha: f64,
    /// RTT tolerance band: decrease only when rtt > target * (1 + beta).
    pub beta: f64,
    /// Additive increase per tick, bps.
    pub delta_bps: u64,
    pub t_inc: SimTime,
    pub t_probe: SimTime,
    pub t_timeout: SimTime,
    /// Consecutive probe timeouts before a plane is declared Failed.
    pub k_threshold: u32,
    /// Minimum CNP spacing per (flow, plane).
    pub t_cnp: SimTime,
    pub rtt_target: SimTime,
    pub min_rate: Rate,
    pub line_rate: Rate,
}

impl CcParams {
    pub fn defaults(line_rate: Rate, rtt_target: SimTime) -> Self {
        CcParams {
            alpha: 0.25,
            beta: 0.5,
            delta_bps: line_rate.bps() / 100,
            t_inc: SimTime::from_us(50),
            t_probe: SimTime::from_us(100),
            t_timeout: SimTime::from_us(500),
            k_threshold: 3,
            t_cnp: SimTime::from_us(50),
            rtt_target,
            min_rate: line_rate.scale(1, 1000),
            line_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaneState {
    Eligible,
    Failed,
}

/// One congestion-control context per (destination, plane).
#[derive(Debug, Clone)]
pub struct CcContext {
    pub plane: usize,
    pub rate: Rate,
    pub rtt_est: SimTime,
    pub timeouts: u32,
    pub state: PlaneState,
}

impl CcContext {
    pub fn new(plane: usize, params: &CcParams) -> Self {
        CcContext {
            plane,
            rate: params.line_rate,
            rtt_est: params.rtt_target,
            timeouts: 0,
            state: PlaneState::Eligible,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CcSignal {
    Cnp,
    RttSample(SimTime),
    IncreaseTick,
    ProbeTimeout,
}

/// Apply one CC signal. CNP: multiplicative decrease. RTT above the target
/// band: proportional decrease. Tick: additive increase toward line rate.
/// Timeout: count toward Failed; any successful RTT sample clears it.
pub fn cc_update(ctx: &mut CcContext, signal: CcSignal, params: &CcParams) {
    match signal {
        CcSignal::Cnp => {
            let r = (ctx.rate.bps() as f64 * (1.0 - params.alpha)) as u64;
            ctx.rate = Rate(r.max(params.min_rate.bps()));
        }
        CcSignal::RttSample(rtt) => {
            // EWMA smoothing (7/8 old, 1/8 new).
            ctx.rtt_est = SimTime((ctx.rtt_est.as_ns() * 7 + rtt.as_ns()) / 8);
            let bound = params.rtt_target.as_ns() as f64 * (1.0 + params.beta);
            if (rtt.as_ns() as f64) > bound {
                let scaled =
                    ctx.rate.bps() as f64 * params.rtt_target.as_ns() as f64 / rtt.as_ns() as f64;
                ctx.rate = Rate((scaled as u64).max(params.min_rate.bps()));
            }
            ctx.timeouts = 0;
            ctx.state = PlaneState::Eligible;
        }
        CcSignal::IncreaseTick => {
            ctx.rate = Rate((ctx.rate.bps() + params.delta_bps).min(params.line_rate.bps()));
        }
        CcSignal::ProbeTimeout => {
            ctx.timeouts += 1;
            if ctx.timeouts >= params.k_threshold {
                ctx.state = PlaneState::Failed;
            }
        }
    }
}

/// Two-stage plane selection. Stage 1: non-Failed planes whose allowance
/// covers this flow's per-plane target share (tx_rate split across the
/// non-Failed planes); if that empties, fall back to all non-Failed planes.
/// Stage 2: shallowest local egress queue, ties uniform. Returns None only
/// when every plane is Failed.
pub fn plb_select_plane(
    tx_rate: Rate,
    contexts: &[CcContext],
    local_queues: &[u64],
    rng: &mut impl Rng,
) -> Option<usize> {
    debug_assert_eq!(contexts.len(), local_queues.len());
    let alive: Vec<usize> = (0..contexts.len())
        .filter(|&p| contexts[p].state != PlaneState::Failed)
        .collect();
    if alive.is_empty() {
        return None;
    }
    let share = tx_rate.bps() / alive.len() as u64;
    let mut eligible: Vec<usize> = alive
        .iter()
        .copied()
        .filter(|&p| contexts[p].rate.bps() >= share)
        .collect();
    if eligible.is_empty() {
        eligible = alive;
    }
    let min_depth = eligible.iter().map(|&p| local_queues[p]).min().unwrap();
    let shallowest: Vec<usize> = eligible
        .into_iter()
        .filter(|&p| local_queues[p] == min_depth)
        .collect();
    Some(shallowest[rng.gen_range(0..shallowest.len())])
}

/// Out-of-order reassembly for one in-flight message; completion fires
/// exactly once when every packet has arrived, duplicates are idempotent.
#[derive(Debug, Clone)]
pub struct ReassemblyState {
    received: Vec<bool>,
    pub bytes_received: u64,
    pub total_bytes: u64,
    completed: bool,
}

impl ReassemblyState {
    pub fn new(num_packets: usize, total_bytes: u64) -> Self {
        ReassemblyState {
            received: vec![false; num_packets],
            bytes_received: 0,
            total_bytes,
            completed: false,
        }
    }

    /// Record one packet; returns true exactly when this arrival completes
    /// the message.
    pub fn receive(&mut self, packet_index: usize, bytes: u64) -> bool {
        if self.received[packet_index] {
            return false;
        }
        self.received[packet_index] = true;
        self.bytes_received += bytes;
        if !self.completed && self.received.iter().all(|&r| r) {
            self.completed = true;
            return true;
        }
        false
    }

    pub fn is_complete(&self) -> bool {
        self.completed
    }
}

/// Selective-repeat retransmit tracking: outstanding packets with send
/// timestamps; a packet is due once its age exceeds 3x the smoothed RTT.
/// Retransmits re-enter the PLB rather than being pinned to a plane.
#[derive(Debug, Clone, Default)]
pub struct RetransmitState {
    outstanding: HashMap<u64, (SimTime, usize)>, // packet id -> (sent, plane)
}

impl RetransmitState {
    pub fn on_send(&mut self, packet_id: u64, now: SimTime, plane: usize) {
        self.outstanding.insert(packet_id, (now, plane));
    }

    pub fn on_ack(&mut self, packet_id: u64) {
        self.outstanding.remove(&packet_id);
    }

    pub fn is_outstanding(&self, packet_id: u64) -> bool {
        self.outstanding.contains_key(&packet_id)
    }

    /// Packets overdue at `now`, sorted by id for determinism.
    pub fn due(&self, now: SimTime, srtt: SimTime) -> Vec<u64> {
        let timeout = SimTime(srtt.as_ns() * 3);
        let mut v: Vec<u64> = self
            .outstanding
            .iter()
            .filter(|(_, &(sent, _))| now.saturating_sub(sent) >= timeout)
            .map(|(&id, _)| id)
            .collect();
        v.sort_unstable();
        v
    }

    /// Packets currently assigned to `plane` (for re-dispatch when a plane
    /// is declared Failed), sorted by id.
    pub fn on_plane(&self, plane: usize) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .outstanding
            .iter()
            .filter(|(_, &(_, p))| p == plane)
            .map(|(&id, _)| id)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn len(&self) -> usize {
        self.outstanding.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outstanding.is_empty()
    }
}

/// Number of MTU-sized packets for a message.
pub fn packet_count(size_bytes: u64, mtu: u64) -> usize {
    (size_bytes.div_ceil(mtu)) as usize
}
