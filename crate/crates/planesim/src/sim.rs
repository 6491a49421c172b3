//! The integrated packet-level simulator: NIC pacing and plane load
//! balancing, switch forwarding with quantized-JSQ adaptive routing, ECN,
//! PFC, RTT probes, CNPs, retransmission, link flaps, and telemetry
//! accumulation, all driven by one deterministic event queue.

use crate::controlplane::WeightTable;
use crate::engine::{EventHandle, EventQueue, RngFactory};
use crate::faults::Outage;
use crate::nic::{
    cc_update, packet_count, plb_select_plane, CcContext, CcParams, CcSignal, PlaneState,
    ReassemblyState, RetransmitState, DEFAULT_MTU_BYTES,
};
use crate::switch::{
    ar_select_port, enqueue, pfc_transition, EgressQueue, EnqueueResult, PfcConfig, PfcFrame,
    DEFAULT_AR_BUCKET_BYTES, DEFAULT_BUFFER_BYTES,
};
use crate::telemetry::BwHistogram;
use crate::topology::{LinkId, LinkKind, LinkState, NodeId, Topology};
use crate::units::{Rate, SimTime};
use crate::workloads::{CctRecord, CollectiveInstance, Message};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

const PROBE_BYTES: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// Per-packet AR + per-plane CC + PLB (the full mechanism set).
    Spx,
    /// ECMP flow hashing, one shared CC context, no AR and no probes.
    EthBaseline,
    /// PLB and AR, but one rate shared across all plane contexts.
    GlobalCc,
    /// Per-packet entropy jointly picks plane and intra-plane path; one
    /// shared CC context.
    EsrBaseline,
}

#[derive(Debug, Clone)]
pub struct SimParams {
    pub mechanism: Mechanism,
    pub cc: CcParams,
    pub mtu: u64,
    pub ar_bucket: u64,
    /// AR snapshot period d; zero means exact (refresh on every decision).
    pub ar_period: SimTime,
    pub ecn_threshold: u64,
    pub pfc_enabled: bool,
    pub buffer_bytes: u64,
    /// Per-plane NIC egress cap; small so PLB stays reactive.
    pub nic_queue_cap: u64,
    /// Per-(dest, plane) in-flight byte cap (transmission window).
    pub window_bytes: u64,
    pub t_end: SimTime,
    pub collect_nic_histograms: bool,
    /// Record per-packet delivery latency samples when set.
    pub collect_latency: bool,
    pub hist_bin: SimTime,
    pub hft_interval: Option<SimTime>,
}

impl SimParams {
    pub fn for_topology(topo: &Topology, mechanism: Mechanism, t_end: SimTime) -> Self {
        let plane_rate = topo.spec.nic_plane_rate();
        let base_rtt = SimTime(
            4 * topo.spec.host_link_delay_ns + 4 * topo.spec.fabric_link_delay_ns,
        );
        let rtt_target = SimTime(base_rtt.as_ns() * 2 + 16_000);
        let cc = CcParams::defaults(plane_rate, rtt_target);
        SimParams {
            mechanism,
            cc,
            mtu: DEFAULT_MTU_BYTES,
            ar_bucket: DEFAULT_AR_BUCKET_BYTES,
            ar_period: SimTime::from_ns(500),
            ecn_threshold: DEFAULT_BUFFER_BYTES / 4,
            pfc_enabled: true,
            buffer_bytes: DEFAULT_BUFFER_BYTES,
            nic_queue_cap: 4 * DEFAULT_MTU_BYTES,
            window_bytes: plane_rate.bytes_in(rtt_target).max(8 * DEFAULT_MTU_BYTES),
            t_end,
            collect_nic_histograms: false,
            collect_latency: false,
            hist_bin: SimTime::from_us(1),
            hft_interval: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PacketKind {
    Data,
    Probe { probe_id: u64 },
    ProbeEcho { probe_id: u64 },
}

#[derive(Debug, Clone)]
struct Packet {
    id: u64,
    src: usize,
    dst: usize,
    msg: usize,
    index: usize,
    bytes: u64,
    plane: usize,
    ecn: bool,
    entropy: u64,
    sent: SimTime,
    kind: PacketKind,
}

/// One direction of a link: dir 0 is toward the fabric (host->leaf,
/// leaf->spine), dir 1 the reverse.
struct DirLink {
    q: EgressQueue,
    packets: VecDeque<Packet>,
    busy: bool,
    pause_count: u32,
    snap_bucket: u64,
}

#[derive(Debug)]
enum Ev {
    Arrive { packet: Packet, node: NodeId },
    TxDone { dl: usize },
    PauseSet { dl: usize, pause: bool },
    ArSnapshot,
    CcTick { host: usize },
    ProbeFire { host: usize, dest: usize, plane: usize },
    ProbeTimeout { probe_id: u64 },
    Pump { host: usize },
    RetxCheck { host: usize },
    Ack { host: usize, packet_id: u64 },
    Cnp { host: usize, dest: usize, plane: usize },
    MsgReady { msg: usize },
    LinkDown(LinkId),
    LinkUp(LinkId),
    HftFlush,
}

struct QpState {
    ready: VecDeque<usize>,
    cur_msg: Option<usize>,
    cur_index: usize,
}

struct HostState {
    qps: HashMap<usize, QpState>,
    dests: Vec<usize>,
    rr_cursor: usize,
    contexts: HashMap<usize, Vec<CcContext>>,
    pacing: HashMap<(usize, usize), SimTime>,
    inflight: HashMap<(usize, usize), u64>,
    last_cnp_tx: HashMap<(usize, usize), SimTime>,
    retx: RetransmitState,
    retx_queue: VecDeque<u64>,
    pump_wake: Option<SimTime>,
    tx_bytes_per_plane: Vec<u64>,
    rx_bytes: u64,
    hist: Option<BwHistogram>,
}

struct MsgState {
    msg: Message,
    pending_deps: usize,
    ready: bool,
    completed: bool,
    reassembly: ReassemblyState,
}

#[derive(Debug, Clone, Copy)]
struct PacketMeta {
    src: usize,
    dst: usize,
    msg: usize,
    index: usize,
    bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkCounters {
    pub tx_bytes: [u64; 2],
    pub drops: [u64; 2],
    pub ecn_marks: [u64; 2],
    pub pause_ns: [u64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct HftRow {
    pub time: SimTime,
    pub entity: String,
    pub metric: String,
    pub value: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub end_time: SimTime,
    pub packets_injected: u64,
    pub packets_retransmitted: u64,
    pub packets_delivered: u64,
    pub duplicates: u64,
    pub packets_dropped: u64,
    pub bytes_injected: u64,
    pub bytes_delivered_unique: u64,
    pub messages_completed: u64,
    pub messages_total: u64,
    pub ccts: Vec<CctRecord>,
    pub collectives: Vec<CollectiveInstance>,
    pub host_tx_bytes_per_plane: Vec<Vec<u64>>,
    pub host_rx_bytes: Vec<u64>,
    pub link_counters: Vec<LinkCounters>,
    #[serde(skip)]
    pub nic_histograms: Vec<BwHistogram>,
    pub hft: Vec<HftRow>,
    /// Per-packet delivery latencies in ns (when collection was enabled).
    #[serde(skip)]
    pub latency_ns: Vec<u64>,
    pub outages: Vec<Outage>,
    pub conservation_ok: bool,
    /// (time, host) throughput samples are derivable from hft rows.
    pub total_drops: u64,
}

pub struct Simulator {
    topo: Topology,
    params: SimParams,
    weights: WeightTable,
    q: EventQueue<Ev>,
    dls: Vec<DirLink>,
    in_dls: HashMap<NodeId, Vec<usize>>,
    pfc: Vec<PfcConfig>,
    hosts: Vec<HostState>,
    msgs: Vec<MsgState>,
    collectives: Vec<CollectiveInstance>,
    coll_pending: HashMap<usize, u64>,
    coll_start: HashMap<usize, SimTime>,
    coll_end: HashMap<usize, SimTime>,
    dependents: HashMap<usize, Vec<usize>>,
    packet_meta: HashMap<u64, PacketMeta>,
    probe_reg: HashMap<u64, (usize, usize, usize, SimTime, EventHandle)>,
    next_packet_id: u64,
    next_probe_id: u64,
    host_rng: Vec<ChaCha8Rng>,
    switch_rng: ChaCha8Rng,
    seed: u64,
    outages: Vec<Outage>,
    // Conservation counters.
    injected: u64,
    retransmitted: u64,
    delivered: u64,
    duplicates: u64,
    dropped: u64,
    bytes_injected: u64,
    wire_count: u64,
    messages_completed: u64,
    hft_rows: Vec<HftRow>,
    latency_samples: Vec<u64>,
    hft_last_tx: Vec<u64>,
    hft_last_tx_plane: Vec<Vec<u64>>,
    hft_last_rx: Vec<u64>,
    stopped_at: SimTime,
}

impl Simulator {
    pub fn new(
        topo: Topology,
        params: SimParams,
        messages: Vec<Message>,
        collectives: Vec<CollectiveInstance>,
        seed: u64,
    ) -> Self {
        assert_eq!(topo.spec.pods, 1, "the packet simulator is two-tier");
        let rngf = RngFactory::new(seed);
        let num_hosts = topo.num_hosts();
        let num_planes = topo.spec.planes;
        let planes = topo.planes();

        let mut dls = Vec::with_capacity(topo.links.len() * 2);
        let mut pfc = Vec::with_capacity(topo.links.len() * 2);
        for l in &topo.links {
            for _dir in 0..2 {
                dls.push(DirLink {
                    q: EgressQueue::new(params.buffer_bytes),
                    packets: VecDeque::new(),
                    busy: false,
                    pause_count: 0,
                    snap_bucket: 0,
                });
                let cfg = if params.pfc_enabled {
                    // Upstream RTT for headroom: two propagation delays.
                    PfcConfig::for_link(
                        params.buffer_bytes,
                        l.capacity,
                        SimTime(l.delay.as_ns() * 2 + 2_000),
                    )
                } else {
                    PfcConfig::disabled()
                };
                pfc.push(cfg);
            }
        }

        let mut in_dls: HashMap<NodeId, Vec<usize>> = HashMap::new();
        for l in &topo.links {
            let (a, b) = endpoints(l);
            // dir 0 goes a -> b, so it is an ingress of b; dir 1 of a.
            in_dls.entry(b).or_default().push(l.id.0 * 2);
            in_dls.entry(a).or_default().push(l.id.0 * 2 + 1);
        }

        let hosts = (0..num_hosts)
            .map(|h| HostState {
                qps: HashMap::new(),
                dests: Vec::new(),
                rr_cursor: 0,
                contexts: HashMap::new(),
                pacing: HashMap::new(),
                inflight: HashMap::new(),
                last_cnp_tx: HashMap::new(),
                retx: RetransmitState::default(),
                retx_queue: VecDeque::new(),
                pump_wake: None,
                tx_bytes_per_plane: vec![0; planes],
                rx_bytes: 0,
                hist: if params.collect_nic_histograms {
                    Some(BwHistogram::new(
                        &format!("nic{h}"),
                        params.hist_bin,
                        topo.spec.nic_line_rate(),
                        20,
                    ))
                } else {
                    None
                },
            })
            .collect();

        let mut dependents: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut msg_states = Vec::new();
        let max_id = messages.iter().map(|m| m.id).max().map_or(0, |m| m + 1);
        let mut slots: Vec<Option<MsgState>> = (0..max_id).map(|_| None).collect();
        for m in &messages {
            for &d in &m.deps {
                dependents.entry(d).or_default().push(m.id);
            }
            let n = packet_count(m.size_bytes, params.mtu);
            slots[m.id] = Some(MsgState {
                msg: m.clone(),
                pending_deps: m.deps.len(),
                ready: false,
                completed: false,
                reassembly: ReassemblyState::new(n, m.size_bytes),
            });
        }
        for (i, s) in slots.into_iter().enumerate() {
            msg_states.push(s.unwrap_or(MsgState {
                msg: Message {
                    id: i,
                    source: 0,
                    destination: 0,
                    size_bytes: 0,
                    deps: Vec::new(),
                    earliest_start: SimTime::ZERO,
                    collective: usize::MAX,
                },
                pending_deps: 0,
                ready: false,
                completed: true,
                reassembly: ReassemblyState::new(1, 0),
            }));
        }

        let mut coll_pending: HashMap<usize, u64> = HashMap::new();
        for m in &messages {
            *coll_pending.entry(m.collective).or_default() += 1;
        }

        let host_rng = (0..num_hosts)
            .map(|h| rngf.stream_indexed("host", h as u64))
            .collect();

        Simulator {
            topo,
            params,
            weights: WeightTable::default(),
            q: EventQueue::new(),
            dls,
            in_dls,
            pfc,
            hosts,
            msgs: msg_states,
            collectives,
            coll_pending,
            coll_start: HashMap::new(),
            coll_end: HashMap::new(),
            dependents,
            packet_meta: HashMap::new(),
            probe_reg: HashMap::new(),
            next_packet_id: 0,
            next_probe_id: 0,
            host_rng,
            switch_rng: rngf.stream("switch"),
            seed,
            outages: Vec::new(),
            injected: 0,
            retransmitted: 0,
            delivered: 0,
            duplicates: 0,
            dropped: 0,
            bytes_injected: 0,
            wire_count: 0,
            messages_completed: 0,
            hft_rows: Vec::new(),
            latency_samples: Vec::new(),
            hft_last_tx: vec![0; num_hosts],
            hft_last_tx_plane: vec![vec![0; num_planes]; num_hosts],
            hft_last_rx: vec![0; num_hosts],
            stopped_at: SimTime::ZERO,
        }
    }

    pub fn set_weight_table(&mut self, weights: WeightTable) {
        self.weights = weights;
    }

    /// Schedule link outages (flaps) before running.
    pub fn add_outages(&mut self, outages: &[Outage]) {
        for o in outages {
            if o.down >= self.params.t_end {
                continue;
            }
            self.q.schedule(o.down, Ev::LinkDown(o.link));
            if o.up < self.params.t_end {
                self.q.schedule(o.up, Ev::LinkUp(o.link));
            }
            self.outages.push(*o);
        }
    }

    pub fn run(mut self) -> RunReport {
        // Seed workload-start events.
        let ids: Vec<usize> = self
            .msgs
            .iter()
            .filter(|s| !s.completed && s.pending_deps == 0)
            .map(|s| s.msg.id)
            .collect();
        for id in ids {
            let t = self.msgs[id].msg.earliest_start;
            self.q.schedule(t, Ev::MsgReady { msg: id });
        }
        if self.params.ar_period > SimTime::ZERO {
            self.q.schedule(self.params.ar_period, Ev::ArSnapshot);
        }
        if let Some(iv) = self.params.hft_interval {
            self.q.schedule(iv, Ev::HftFlush);
        }
        let total_msgs = self.msgs.iter().filter(|s| !s.completed).count() as u64;

        let trace = std::env::var("PLANESIM_TRACE").is_ok();
        let mut pops: u64 = 0;
        while let Some(t) = self.q.peek_time() {
            if t > self.params.t_end {
                break;
            }
            let (now, ev) = self.q.pop().unwrap();
            if trace {
                pops += 1;
                if pops % 200_000 == 0 {
                    eprintln!(
                        "pops={}M t={}us qlen={} ev={}",
                        pops / 1_000_000,
                        now.as_ns() / 1000,
                        self.q.len(),
                        ev_name(&ev)
                    );
                }
            }
            self.dispatch(now, ev);
            if self.messages_completed == total_msgs && total_msgs > 0 {
                self.stopped_at = now;
                break;
            }
            self.stopped_at = now;
        }
        self.finish(total_msgs)
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Arrive { packet, node } => {
                if packet.kind == PacketKind::Data {
                    self.wire_count -= 1;
                }
                self.on_arrive(now, packet, node);
            }
            Ev::TxDone { dl } => self.on_tx_done(now, dl),
            Ev::PauseSet { dl, pause } => self.on_pause_set(now, dl, pause),
            Ev::ArSnapshot => {
                for (i, d) in self.dls.iter_mut().enumerate() {
                    let _ = i;
                    d.snap_bucket = d.q.depth / self.params.ar_bucket;
                }
                let next = now + self.params.ar_period;
                if next <= self.params.t_end {
                    self.q.schedule(next, Ev::ArSnapshot);
                }
            }
            Ev::CcTick { host } => {
                if std::env::var("PLANESIM_CC_TRACE").is_ok()
                    && host == 6
                    && now.as_ns() % 400_000 == 0
                {
                    for (&d, ctxs) in self.hosts[host].contexts.iter() {
                        let rates: Vec<u64> =
                            ctxs.iter().map(|c| c.rate.bps() / 1_000_000_000).collect();
                        let rtts: Vec<u64> =
                            ctxs.iter().map(|c| c.rtt_est.as_ns() / 1000).collect();
                        eprintln!("CC t={} d={} r={:?} rtt={:?}", now.as_ns() / 1000, d, rates, rtts);
                    }
                }
                let params = self.params.cc;
                for ctxs in self.hosts[host].contexts.values_mut() {
                    for c in ctxs.iter_mut() {
                        cc_update(c, CcSignal::IncreaseTick, &params);
                    }
                }
                let next = now + params.t_inc;
                if next <= self.params.t_end {
                    self.q.schedule(next, Ev::CcTick { host });
                }
                self.pump(now, host);
            }
            Ev::ProbeFire { host, dest, plane } => self.on_probe_fire(now, host, dest, plane),
            Ev::ProbeTimeout { probe_id } => self.on_probe_timeout(now, probe_id),
            Ev::Pump { host } => {
                // Only the event matching the recorded wake time is live;
                // anything else is a superseded duplicate.
                if self.hosts[host].pump_wake == Some(now) {
                    self.hosts[host].pump_wake = None;
                    self.pump(now, host);
                }
            }
            Ev::RetxCheck { host } => self.on_retx_check(now, host),
            Ev::Ack { host, packet_id } => self.on_ack(now, host, packet_id),
            Ev::Cnp { host, dest, plane } => self.on_cnp(now, host, dest, plane),
            Ev::MsgReady { msg } => self.on_msg_ready(now, msg),
            Ev::LinkDown(l) => self.on_link_state(now, l, LinkState::Down),
            Ev::LinkUp(l) => self.on_link_state(now, l, LinkState::Up),
            Ev::HftFlush => self.on_hft_flush(now),
        }
    }

    // ---- NIC send path ----

    fn on_msg_ready(&mut self, now: SimTime, msg: usize) {
        let (dest, coll, src) = {
            let s = &mut self.msgs[msg];
            debug_assert!(!s.ready && !s.completed);
            s.ready = true;
            (s.msg.destination, s.msg.collective, s.msg.source)
        };
        self.coll_start.entry(coll).or_insert(now);
        let first_to_dest = !self.hosts[src].qps.contains_key(&dest);
        let qp = self.hosts[src].qps.entry(dest).or_insert_with(|| QpState {
            ready: VecDeque::new(),
            cur_msg: None,
            cur_index: 0,
        });
        qp.ready.push_back(msg);
        if first_to_dest {
            self.hosts[src].dests.push(dest);
            self.init_contexts(now, src, dest);
        }
        self.pump(now, src);
    }

    fn init_contexts(&mut self, now: SimTime, host: usize, dest: usize) {
        let planes = self.topo.planes();
        let cc = self.params.cc;
        let first_context = self.hosts[host].contexts.is_empty();
        self.hosts[host]
            .contexts
            .entry(dest)
            .or_insert_with(|| (0..planes).map(|p| CcContext::new(p, &cc)).collect());
        if first_context {
            self.q.schedule(now + cc.t_inc, Ev::CcTick { host });
            self.q
                .schedule(now + cc.t_probe, Ev::RetxCheck { host });
        }
        if matches!(self.params.mechanism, Mechanism::Spx | Mechanism::GlobalCc) {
            for plane in 0..planes {
                self.q
                    .schedule_in(cc.t_probe, Ev::ProbeFire { host, dest, plane });
            }
        }
    }

    /// Drain as many packets as constraints allow; note the earliest future
    /// unblock time and schedule a wake-up for it.
    fn pump(&mut self, now: SimTime, host: usize) {
        let mut next_wake: Option<SimTime> = None;
        // Retransmits take priority and re-enter the PLB.
        while let Some(&pid) = self.hosts[host].retx_queue.front() {
            let Some(meta) = self.packet_meta.get(&pid).copied() else {
                self.hosts[host].retx_queue.pop_front();
                continue;
            };
            match self.try_send(now, host, meta, Some(pid)) {
                SendOutcome::Sent => {
                    self.hosts[host].retx_queue.pop_front();
                    self.retransmitted += 1;
                }
                SendOutcome::BlockedUntil(t) => {
                    next_wake = Some(next_wake.map_or(t, |w: SimTime| w.min(t)));
                    break;
                }
                SendOutcome::Blocked => break,
            }
        }
        if self.hosts[host].retx_queue.is_empty() {
            // Round-robin across destinations.
            let n_dests = self.hosts[host].dests.len();
            let mut exhausted = 0;
            while exhausted < n_dests {
                let cursor = self.hosts[host].rr_cursor % n_dests.max(1);
                let dest = self.hosts[host].dests[cursor];
                match self.next_packet_for(host, dest) {
                    None => {
                        self.hosts[host].rr_cursor = (cursor + 1) % n_dests;
                        exhausted += 1;
                        continue;
                    }
                    Some(meta) => match self.try_send(now, host, meta, None) {
                        SendOutcome::Sent => {
                            self.commit_packet_cursor(host, dest);
                            self.hosts[host].rr_cursor = (cursor + 1) % n_dests;
                            exhausted = 0;
                        }
                        SendOutcome::BlockedUntil(t) => {
                            next_wake = Some(next_wake.map_or(t, |w: SimTime| w.min(t)));
                            self.hosts[host].rr_cursor = (cursor + 1) % n_dests;
                            exhausted += 1;
                        }
                        SendOutcome::Blocked => {
                            self.hosts[host].rr_cursor = (cursor + 1) % n_dests;
                            exhausted += 1;
                        }
                    },
                }
            }
        }
        if let Some(t) = next_wake {
            let t = t.max(now);
            let better = self.hosts[host].pump_wake.is_none_or(|w| t < w);
            if better {
                if std::env::var("PLANESIM_TRACE_PUMP").is_ok() {
                    eprintln!("SCHED host={host} now={} wake={}", now.as_ns(), t.as_ns());
                }
                self.hosts[host].pump_wake = Some(t);
                self.q.schedule(t, Ev::Pump { host });
            }
        }
    }

    /// Peek the next fresh packet for (host, dest) without consuming it.
    fn next_packet_for(&mut self, host: usize, dest: usize) -> Option<PacketMeta> {
        let mtu = self.params.mtu;
        let qp = self.hosts[host].qps.get_mut(&dest)?;
        loop {
            if qp.cur_msg.is_none() {
                let m = qp.ready.pop_front()?;
                qp.cur_msg = Some(m);
                qp.cur_index = 0;
            }
            let m = qp.cur_msg.unwrap();
            let total = packet_count(self.msgs[m].msg.size_bytes, mtu);
            if qp.cur_index >= total {
                qp.cur_msg = None;
                continue;
            }
            let idx = qp.cur_index;
            let size = self.msgs[m].msg.size_bytes;
            let bytes = (size - idx as u64 * mtu).min(mtu);
            return Some(PacketMeta {
                src: host,
                dst: dest,
                msg: m,
                index: idx,
                bytes,
            });
        }
    }

    fn commit_packet_cursor(&mut self, host: usize, dest: usize) {
        let qp = self.hosts[host].qps.get_mut(&dest).unwrap();
        qp.cur_index += 1;
    }

    fn choose_plane(&mut self, now: SimTime, host: usize, dest: usize, entropy: &mut u64) -> Option<usize> {
        let planes = self.topo.planes();
        match self.params.mechanism {
            Mechanism::Spx | Mechanism::GlobalCc => {
                // A plane whose pacing gate is still closed counts as deep:
                // picking it would stall the flow until the gate opens even
                // though other planes could send immediately.
                let depths: Vec<u64> = (0..planes)
                    .map(|p| {
                        let gated = self.hosts[host]
                            .pacing
                            .get(&(dest, p))
                            .is_some_and(|&t| t > now);
                        if gated {
                            u64::MAX
                        } else {
                            self.dls[self.topo.host_links[host][p].0 * 2].q.depth
                        }
                    })
                    .collect();
                let active = self.hosts[host].dests.len().max(1) as u64;
                let tx_rate = Rate(self.topo.spec.nic_line_rate().0 / active);
                let h = &mut self.hosts[host];
                let ctxs = h.contexts.get(&dest).unwrap();
                plb_select_plane(tx_rate, ctxs, &depths, &mut self.host_rng[host])
            }
            Mechanism::EthBaseline => Some(flow_hash(host as u64, dest as u64, 0) as usize % planes),
            Mechanism::EsrBaseline => {
                *entropy = self.host_rng[host].gen::<u64>();
                Some((*entropy % planes as u64) as usize)
            }
        }
    }

    fn try_send(
        &mut self,
        now: SimTime,
        host: usize,
        meta: PacketMeta,
        retx_of: Option<u64>,
    ) -> SendOutcome {
        let mut entropy = 0u64;
        if retx_of.is_some() && self.params.mechanism == Mechanism::EthBaseline {
            // Repath a timed-out flow-hashed packet: a fresh entropy perturbs
            // the fabric hash so the retransmit avoids the original path.
            entropy = self.host_rng[host].gen::<u64>() | 1;
        }
        let Some(plane) = self.choose_plane(now, host, meta.dst, &mut entropy) else {
            // Every plane Failed: retry after a probe interval.
            return SendOutcome::BlockedUntil(now + self.params.cc.t_probe);
        };
        // Pacing context: shared (index 0) for ETH/ESR, per-plane otherwise.
        let ctx_plane = match self.params.mechanism {
            Mechanism::EthBaseline | Mechanism::EsrBaseline => 0,
            _ => plane,
        };
        let key = (meta.dst, ctx_plane);
        let next_ok = self.hosts[host].pacing.get(&key).copied().unwrap_or(SimTime::ZERO);
        if next_ok > now {
            let wake = match self.params.mechanism {
                Mechanism::Spx | Mechanism::GlobalCc => (0..self.topo.planes())
                    .filter_map(|p| self.hosts[host].pacing.get(&(meta.dst, p)).copied())
                    .filter(|&t| t > now)
                    .min()
                    .unwrap_or(next_ok),
                _ => next_ok,
            };
            return SendOutcome::BlockedUntil(wake);
        }
        if self.hosts[host].inflight.get(&key).copied().unwrap_or(0) + meta.bytes
            > self.params.window_bytes
        {
            return SendOutcome::Blocked; // unblocked by acks
        }
        let dl = self.topo.host_links[host][plane].0 * 2;
        if self.dls[dl].q.depth + meta.bytes > self.params.nic_queue_cap {
            return SendOutcome::Blocked; // unblocked by TxDone on this dl
        }
        // Commit the send.
        let rate = self.hosts[host].contexts.get(&meta.dst).unwrap()[ctx_plane].rate;
        let pace = rate.serialize_time(meta.bytes);
        let base = next_ok.max(now);
        self.hosts[host].pacing.insert(key, base + pace);
        *self.hosts[host].inflight.entry(key).or_default() += meta.bytes;

        let id = match retx_of {
            Some(pid) => pid,
            None => {
                let id = self.next_packet_id;
                self.next_packet_id += 1;
                self.packet_meta.insert(id, meta);
                id
            }
        };
        self.hosts[host].retx.on_send(id, now, plane);
        let packet = Packet {
            id,
            src: meta.src,
            dst: meta.dst,
            msg: meta.msg,
            index: meta.index,
            bytes: meta.bytes,
            plane,
            ecn: false,
            entropy,
            sent: now,
            kind: PacketKind::Data,
        };
        self.injected += 1;
        self.bytes_injected += meta.bytes;
        self.hosts[host].tx_bytes_per_plane[plane] += meta.bytes;
        if let Some(h) = self.hosts[host].hist.as_mut() {
            h.record(now, meta.bytes);
        }
        self.enqueue_on(now, dl, packet);
        SendOutcome::Sent
    }

    // ---- Queue + link machinery ----

    fn enqueue_on(&mut self, now: SimTime, dl: usize, mut packet: Packet) {
        let res = enqueue(
            &mut self.dls[dl].q,
            packet.bytes,
            self.params.ecn_threshold,
            self.params.pfc_enabled,
        );
        match res {
            EnqueueResult::Dropped => {
                // Queue-level drop counter is maintained inside enqueue.
                if packet.kind == PacketKind::Data {
                    self.dropped += 1;
                }
            }
            EnqueueResult::Accepted { ecn_marked } => {
                if ecn_marked && packet.kind == PacketKind::Data {
                    packet.ecn = true;
                }
                self.dls[dl].packets.push_back(packet);
                if let Some(frame) = pfc_transition(&mut self.dls[dl].q, &self.pfc[dl]) {
                    self.emit_pfc(now, dl, frame);
                }
                self.try_start_tx(now, dl);
            }
        }
    }

    fn emit_pfc(&mut self, now: SimTime, dl: usize, frame: PfcFrame) {
        // The congested egress queue sits at this dl's head (transmitting)
        // node. Pause only the ingress links that can feed this egress under
        // up/down forwarding: up-queues are fed by host links, down-queues by
        // up links. Pausing everything indiscriminately creates a circular
        // buffer dependency between leaf up-queues and spine down-queues and
        // can deadlock the fabric.
        let head = dl_head(&self.topo, dl);
        let congested_kind = self.topo.links[dl / 2].kind;
        let pause = frame == PfcFrame::Pause;
        let Some(ins) = self.in_dls.get(&head) else { return };
        for &in_dl in ins.clone().iter() {
            let feeder_kind = self.topo.links[in_dl / 2].kind;
            let feeds = match (head, congested_kind) {
                // Leaf up-queue (leaf -> spine): fed by host ingress.
                (NodeId::Leaf { .. }, LinkKind::LeafSpine { .. }) => {
                    matches!(feeder_kind, LinkKind::HostLeaf { .. })
                }
                // Leaf down-queue (leaf -> host): fed by spine ingress.
                (NodeId::Leaf { .. }, LinkKind::HostLeaf { .. }) => {
                    matches!(feeder_kind, LinkKind::LeafSpine { .. })
                }
                // Spine down-queue (spine -> leaf): fed by leaf up ingress.
                (NodeId::Spine { .. }, _) => {
                    matches!(feeder_kind, LinkKind::LeafSpine { .. })
                }
                // Host NIC queues have no upstream to pause.
                _ => false,
            };
            if feeds {
                let delay = self.topo.links[in_dl / 2].delay;
                self.q.schedule(now + delay, Ev::PauseSet { dl: in_dl, pause });
            }
        }
    }

    fn on_pause_set(&mut self, now: SimTime, dl: usize, pause: bool) {
        if pause {
            self.dls[dl].pause_count += 1;
            self.dls[dl].q.set_paused(true, now);
        } else {
            self.dls[dl].pause_count = self.dls[dl].pause_count.saturating_sub(1);
            if self.dls[dl].pause_count == 0 {
                self.dls[dl].q.set_paused(false, now);
                self.try_start_tx(now, dl);
            }
        }
    }

    fn try_start_tx(&mut self, now: SimTime, dl: usize) {
        let link = &self.topo.links[dl / 2];
        if self.dls[dl].busy
            || self.dls[dl].pause_count > 0
            || self.dls[dl].packets.is_empty()
            || !link.is_up()
        {
            return;
        }
        let bytes = self.dls[dl].packets.front().unwrap().bytes;
        let ser = link.capacity.serialize_time(bytes);
        self.dls[dl].busy = true;
        self.q.schedule(now + ser, Ev::TxDone { dl });
    }

    fn on_tx_done(&mut self, now: SimTime, dl: usize) {
        self.dls[dl].busy = false;
        let Some(packet) = self.dls[dl].packets.pop_front() else { return };
        self.dls[dl].q.depth = self.dls[dl].q.depth.saturating_sub(packet.bytes);
        let link = &self.topo.links[dl / 2];
        let (up, delay, kind) = (link.is_up(), link.delay, link.kind);
        if !up {
            self.drop_packet(&packet);
        } else {
            self.dls[dl].q.tx_bytes += packet.bytes;
            let to = dl_tail(&self.topo, dl);
            if packet.kind == PacketKind::Data {
                self.wire_count += 1;
            }
            self.q.schedule(now + delay, Ev::Arrive { packet, node: to });
        }
        if let Some(frame) = pfc_transition(&mut self.dls[dl].q, &self.pfc[dl]) {
            self.emit_pfc(now, dl, frame);
        }
        // NIC egress drained: the owning host may have more to send.
        if let LinkKind::HostLeaf { host, .. } = kind {
            if dl % 2 == 0 {
                self.pump(now, host);
            }
        }
        self.try_start_tx(now, dl);
    }

    fn drop_packet(&mut self, packet: &Packet) {
        // Probe losses surface as timeouts; only data drops are counted.
        if packet.kind == PacketKind::Data {
            self.dropped += 1;
        }
    }

    fn on_link_state(&mut self, now: SimTime, link: LinkId, state: LinkState) {
        self.topo.set_link_state(link, state);
        for dir in 0..2 {
            let dl = link.0 * 2 + dir;
            if state == LinkState::Down {
                // Queued packets are lost; the in-flight head drops at TxDone.
                let keep = if self.dls[dl].busy { 1 } else { 0 };
                while self.dls[dl].packets.len() > keep {
                    let p = self.dls[dl].packets.pop_back().unwrap();
                    self.dls[dl].q.depth = self.dls[dl].q.depth.saturating_sub(p.bytes);
                    self.drop_packet(&p);
                }
                if let Some(frame) = pfc_transition(&mut self.dls[dl].q, &self.pfc[dl]) {
                    self.emit_pfc(now, dl, frame);
                }
            } else {
                self.try_start_tx(now, dl);
            }
        }
    }

    // ---- Forwarding ----

    fn on_arrive(&mut self, now: SimTime, packet: Packet, node: NodeId) {
        match node {
            NodeId::Host(h) => self.on_receive(now, h, packet),
            NodeId::Leaf { plane, idx } => {
                let dest_leaf = self.topo.leaf_of_host(packet.dst);
                if dest_leaf == idx {
                    let l = self.topo.host_links[packet.dst][plane];
                    if self.topo.link(l).is_up() {
                        self.enqueue_on(now, l.0 * 2 + 1, packet);
                    } else {
                        self.drop_packet(&packet);
                    }
                } else {
                    let group = self.topo.leaf_ecmp_group(plane, idx, packet.dst);
                    self.forward_fabric(now, packet, &group, plane, idx, dest_leaf, 0);
                }
            }
            NodeId::Spine { plane, idx } => {
                let dest_leaf = self.topo.leaf_of_host(packet.dst);
                let group = self.topo.spine_ecmp_group(plane, idx, dest_leaf);
                self.forward_fabric(now, packet, &group, plane, idx, dest_leaf, 1);
            }
            NodeId::Core { .. } => unreachable!("two-tier forwarding only"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_fabric(
        &mut self,
        now: SimTime,
        packet: Packet,
        group: &[LinkId],
        plane: usize,
        sw_idx: usize,
        dest_leaf: usize,
        dir: usize,
    ) {
        if group.is_empty() {
            self.drop_packet(&packet);
            return;
        }
        let chosen = match self.params.mechanism {
            Mechanism::Spx | Mechanism::GlobalCc => {
                let buckets: Vec<u64> = group
                    .iter()
                    .map(|&l| {
                        let dl = l.0 * 2 + dir;
                        if self.params.ar_period == SimTime::ZERO {
                            self.dls[dl].q.depth / self.params.ar_bucket
                        } else {
                            self.dls[dl].snap_bucket
                        }
                    })
                    .collect();
                let weights: Vec<f64> = if dir == 0 {
                    group
                        .iter()
                        .map(|&l| self.weights.weight_of(&self.topo, plane, sw_idx, dest_leaf, l))
                        .collect()
                } else {
                    vec![1.0; group.len()]
                };
                ar_select_port(&buckets, &weights, &mut self.switch_rng).unwrap()
            }
            Mechanism::EthBaseline => {
                // Retransmits carry a fresh entropy so a flow black-holed by
                // a failed path repaths on timeout, like hardware repathing.
                let h = flow_hash(
                    packet.src as u64 ^ packet.entropy.rotate_left(17),
                    packet.dst as u64,
                    (plane as u64) << 32 | sw_idx as u64 | (dir as u64) << 48,
                );
                (h % group.len() as u64) as usize
            }
            Mechanism::EsrBaseline => {
                let h = flow_hash(packet.entropy, sw_idx as u64, dir as u64);
                (h % group.len() as u64) as usize
            }
        };
        self.enqueue_on(now, group[chosen].0 * 2 + dir, packet);
    }

    // ---- Receive path ----

    fn on_receive(&mut self, now: SimTime, host: usize, packet: Packet) {
        match packet.kind {
            PacketKind::Probe { probe_id } => {
                // Echo back through the fabric on the same plane.
                let echo = Packet {
                    id: packet.id,
                    src: host,
                    dst: packet.src,
                    msg: usize::MAX,
                    index: 0,
                    bytes: PROBE_BYTES,
                    plane: packet.plane,
                    ecn: false,
                    entropy: 0,
                    sent: now,
                    kind: PacketKind::ProbeEcho { probe_id },
                };
                let l = self.topo.host_links[host][packet.plane];
                if std::env::var("PLANESIM_DEBUG").is_ok() && packet.src == 8 && host == 17 {
                    eprintln!("t={} probe {probe_id} echoed at dest, link up={}", now.as_ns(), self.topo.link(l).is_up());
                }
                if self.topo.link(l).is_up() {
                    self.enqueue_on(now, l.0 * 2, echo);
                }
            }
            PacketKind::ProbeEcho { probe_id } => self.on_probe_echo(now, host, probe_id),
            PacketKind::Data => {
                self.delivered += 1;
                self.hosts[host].rx_bytes += packet.bytes;
                if self.params.collect_latency {
                    self.latency_samples
                        .push(now.saturating_sub(packet.sent).as_ns());
                }
                // Hardware-style per-packet ack, propagation-only delay.
                let delay = self.oneway_delay(packet.src, packet.dst);
                self.q.schedule(
                    now + delay,
                    Ev::Ack {
                        host: packet.src,
                        packet_id: packet.id,
                    },
                );
                if packet.ecn {
                    self.maybe_emit_cnp(now, host, &packet);
                }
                let s = &mut self.msgs[packet.msg];
                let fresh = !s.reassembly.is_complete();
                let done = s.reassembly.receive(packet.index, packet.bytes);
                if !fresh || (!done && s.reassembly.bytes_received == 0) {
                    // nothing
                }
                if !done && !fresh {
                    self.duplicates += 1;
                }
                if done {
                    self.on_msg_complete(now, packet.msg);
                }
            }
        }
    }

    fn maybe_emit_cnp(&mut self, now: SimTime, host: usize, packet: &Packet) {
        let key = (packet.src, packet.plane);
        let last = self.hosts[host].last_cnp_tx.get(&key).copied();
        if last.is_some_and(|t| now.saturating_sub(t) < self.params.cc.t_cnp) {
            return;
        }
        self.hosts[host].last_cnp_tx.insert(key, now);
        let delay = self.oneway_delay(packet.src, packet.dst);
        self.q.schedule(
            now + delay,
            Ev::Cnp {
                host: packet.src,
                dest: packet.dst,
                plane: packet.plane,
            },
        );
    }

    fn on_cnp(&mut self, now: SimTime, host: usize, dest: usize, plane: usize) {
        let params = self.params.cc;
        let mech = self.params.mechanism;
        let Some(ctxs) = self.hosts[host].contexts.get_mut(&dest) else { return };
        match mech {
            Mechanism::Spx => cc_update(&mut ctxs[plane], CcSignal::Cnp, &params),
            Mechanism::GlobalCc => {
                // One shared rate: the decrease lands on every plane context.
                for c in ctxs.iter_mut() {
                    cc_update(c, CcSignal::Cnp, &params);
                }
            }
            Mechanism::EthBaseline | Mechanism::EsrBaseline => {
                cc_update(&mut ctxs[0], CcSignal::Cnp, &params)
            }
        }
        self.pump(now, host);
    }

    fn on_ack(&mut self, now: SimTime, host: usize, packet_id: u64) {
        if !self.hosts[host].retx.is_outstanding(packet_id) {
            return;
        }
        self.hosts[host].retx.on_ack(packet_id);
        if let Some(meta) = self.packet_meta.remove(&packet_id) {
            let ctx_plane = match self.params.mechanism {
                Mechanism::EthBaseline | Mechanism::EsrBaseline => 0,
                // The window is keyed by the plane the packet was last sent
                // on; retransmits may have moved it, so find any entry.
                _ => usize::MAX,
            };
            if ctx_plane == usize::MAX {
                for p in 0..self.topo.planes() {
                    if let Some(v) = self.hosts[host].inflight.get_mut(&(meta.dst, p)) {
                        if *v >= meta.bytes {
                            *v -= meta.bytes;
                            break;
                        }
                    }
                }
            } else if let Some(v) = self.hosts[host].inflight.get_mut(&(meta.dst, 0)) {
                *v = v.saturating_sub(meta.bytes);
            }
        }
        self.pump(now, host);
    }

    fn on_msg_complete(&mut self, now: SimTime, msg: usize) {
        let coll = {
            let s = &mut self.msgs[msg];
            if s.completed {
                return;
            }
            s.completed = true;
            s.msg.collective
        };
        self.messages_completed += 1;
        if let Some(p) = self.coll_pending.get_mut(&coll) {
            *p -= 1;
            if *p == 0 {
                self.coll_end.insert(coll, now);
            }
        }
        if let Some(deps) = self.dependents.get(&msg).cloned() {
            for d in deps {
                let s = &mut self.msgs[d];
                s.pending_deps -= 1;
                if s.pending_deps == 0 {
                    let t = s.msg.earliest_start.max(now);
                    self.q.schedule(t, Ev::MsgReady { msg: d });
                }
            }
        }
    }

    // ---- Probes, timeouts, retransmits ----

    fn on_probe_fire(&mut self, now: SimTime, host: usize, dest: usize, plane: usize) {
        if !self.hosts[host].contexts.contains_key(&dest) {
            return;
        }
        let probe_id = self.next_probe_id;
        self.next_probe_id += 1;
        let handle = self
            .q
            .schedule(now + self.params.cc.t_timeout, Ev::ProbeTimeout { probe_id });
        self.probe_reg
            .insert(probe_id, (host, dest, plane, now, handle));
        let packet = Packet {
            id: u64::MAX,
            src: host,
            dst: dest,
            msg: usize::MAX,
            index: 0,
            bytes: PROBE_BYTES,
            plane,
            ecn: false,
            entropy: 0,
            sent: now,
            kind: PacketKind::Probe { probe_id },
        };
        if std::env::var("PLANESIM_DEBUG").is_ok() && host == 8 && dest == 17 {
            eprintln!("t={} probe {probe_id} fired plane={plane}", now.as_ns());
        }
        let l = self.topo.host_links[host][plane];
        if self.topo.link(l).is_up() {
            self.enqueue_on(now, l.0 * 2, packet);
        }
        // else: no echo will come; the timeout fires regardless.
        let next = now + self.params.cc.t_probe;
        if next <= self.params.t_end {
            self.q.schedule(next, Ev::ProbeFire { host, dest, plane });
        }
    }

    fn on_probe_echo(&mut self, now: SimTime, host: usize, probe_id: u64) {
        let Some((h, dest, plane, sent, handle)) = self.probe_reg.remove(&probe_id) else {
            return;
        };
        debug_assert_eq!(h, host);
        if std::env::var("PLANESIM_DEBUG").is_ok() && host == 8 && dest == 17 {
            eprintln!("t={} probe {probe_id} echo received plane={plane}", now.as_ns());
        }
        self.q.cancel(handle);
        let rtt = now.saturating_sub(sent);
        let params = self.params.cc;
        let mech = self.params.mechanism;
        let Some(ctxs) = self.hosts[host].contexts.get_mut(&dest) else { return };
        let was_failed = ctxs[plane].state == PlaneState::Failed;
        cc_update(&mut ctxs[plane], CcSignal::RttSample(rtt), &params);
        if mech == Mechanism::GlobalCc {
            // Shared rate: propagate the (possibly reduced) rate everywhere.
            let r = ctxs[plane].rate;
            for c in ctxs.iter_mut() {
                c.rate = c.rate.min(r);
            }
        }
        if was_failed {
            self.pump(now, host);
        }
    }

    fn on_probe_timeout(&mut self, now: SimTime, probe_id: u64) {
        let Some((host, dest, plane, _sent, _)) = self.probe_reg.remove(&probe_id) else {
            return;
        };
        let params = self.params.cc;
        let newly_failed = {
            let Some(ctxs) = self.hosts[host].contexts.get_mut(&dest) else { return };
            let before = ctxs[plane].state;
            cc_update(&mut ctxs[plane], CcSignal::ProbeTimeout, &params);
            before != PlaneState::Failed && ctxs[plane].state == PlaneState::Failed
        };
        if newly_failed {
            if std::env::var("PLANESIM_DEBUG").is_ok() {
                eprintln!("t={} host={host} dest={dest} plane={plane} FAILED", now.as_ns());
            }
            // Outstanding packets on the failed plane re-enter the PLB.
            let ids = self.hosts[host].retx.on_plane(plane);
            for id in ids {
                if self.packet_meta.contains_key(&id)
                    && !self.hosts[host].retx_queue.contains(&id)
                {
                    self.hosts[host].retx_queue.push_back(id);
                }
            }
            // Their window bytes are effectively lost; release them so the
            // retransmits are not self-blocked.
            self.hosts[host].inflight.insert((dest, plane), 0);
            self.pump(now, host);
        }
    }

    fn on_retx_check(&mut self, now: SimTime, host: usize) {
        let srtt = self
            .hosts[host]
            .contexts
            .values()
            .flat_map(|v| v.iter())
            .map(|c| c.rtt_est)
            .max()
            .unwrap_or(self.params.cc.rtt_target);
        let due = self.hosts[host].retx.due(now, srtt);
        for id in due {
            if self.packet_meta.contains_key(&id) && !self.hosts[host].retx_queue.contains(&id) {
                self.hosts[host].retx_queue.push_back(id);
            }
        }
        let next = now + self.params.cc.t_probe;
        if next <= self.params.t_end {
            self.q.schedule(next, Ev::RetxCheck { host });
        }
        if !self.hosts[host].retx_queue.is_empty() {
            self.pump(now, host);
        }
    }

    // ---- Telemetry ----

    fn on_hft_flush(&mut self, now: SimTime) {
        for h in 0..self.hosts.len() {
            let total: u64 = self.hosts[h].tx_bytes_per_plane.iter().sum();
            let delta = total - self.hft_last_tx[h];
            self.hft_last_tx[h] = total;
            self.hft_rows.push(HftRow {
                time: now,
                entity: format!("nic{h}"),
                metric: "tx_bytes".into(),
                value: delta,
            });
            for p in 0..self.topo.spec.planes {
                let t = self.hosts[h].tx_bytes_per_plane[p];
                let last = &mut self.hft_last_tx_plane[h][p];
                let d = t - *last;
                *last = t;
                self.hft_rows.push(HftRow {
                    time: now,
                    entity: format!("nic{h}.p{p}"),
                    metric: "tx_bytes".into(),
                    value: d,
                });
            }
            let rx = self.hosts[h].rx_bytes;
            let last_rx = &mut self.hft_last_rx[h];
            let dr = rx - *last_rx;
            *last_rx = rx;
            self.hft_rows.push(HftRow {
                time: now,
                entity: format!("nic{h}"),
                metric: "rx_bytes".into(),
                value: dr,
            });
        }
        if let Some(iv) = self.params.hft_interval {
            let next = now + iv;
            if next <= self.params.t_end {
                self.q.schedule(next, Ev::HftFlush);
            }
        }
    }

    fn oneway_delay(&self, a: usize, b: usize) -> SimTime {
        let spec = &self.topo.spec;
        if self.topo.leaf_of_host(a) == self.topo.leaf_of_host(b) {
            SimTime(2 * spec.host_link_delay_ns + 100)
        } else {
            SimTime(2 * spec.host_link_delay_ns + 2 * spec.fabric_link_delay_ns + 100)
        }
    }

    fn finish(mut self, total_msgs: u64) -> RunReport {
        let end = self.stopped_at;
        // Structural byte conservation: every injected copy is delivered,
        // dropped, queued, or on the wire.
        let queued: u64 = self
            .dls
            .iter()
            .map(|d| d.packets.iter().filter(|p| p.kind == PacketKind::Data).count() as u64)
            .sum();
        let data_wire = self.wire_count_data();
        let accounted = self.delivered + self.dropped_data() + queued + data_wire;
        let conservation_ok = accounted == self.injected;
        if !conservation_ok {
            eprintln!(
                "conservation: injected={} retx={} delivered={} dropped={} queued={} wire={}",
                self.injected,
                self.retransmitted,
                self.delivered,
                self.dropped_data(),
                queued,
                data_wire
            );
        }

        for h in &mut self.hosts {
            if let Some(hist) = h.hist.as_mut() {
                hist.finish(end);
            }
        }
        let ccts: Vec<CctRecord> = {
            let mut v: Vec<CctRecord> = self
                .coll_end
                .iter()
                .map(|(&c, &e)| CctRecord {
                    collective: c,
                    start: self.coll_start[&c],
                    end: e,
                })
                .collect();
            v.sort_by_key(|r| r.collective);
            v
        };
        let link_counters = self
            .topo
            .links
            .iter()
            .map(|l| {
                let a = &self.dls[l.id.0 * 2].q;
                let b = &self.dls[l.id.0 * 2 + 1].q;
                LinkCounters {
                    tx_bytes: [a.tx_bytes, b.tx_bytes],
                    drops: [a.drops, b.drops],
                    ecn_marks: [a.ecn_marks, b.ecn_marks],
                    pause_ns: [a.pause_total.as_ns(), b.pause_total.as_ns()],
                }
            })
            .collect();
        RunReport {
            mechanism: self.params.mechanism,
            seed: self.seed,
            end_time: end,
            packets_injected: self.injected,
            packets_retransmitted: self.retransmitted,
            packets_delivered: self.delivered,
            duplicates: self.duplicates,
            packets_dropped: self.dropped,
            bytes_injected: self.bytes_injected,
            bytes_delivered_unique: self
                .msgs
                .iter()
                .map(|m| m.reassembly.bytes_received)
                .sum(),
            messages_completed: self.messages_completed,
            messages_total: total_msgs,
            ccts,
            collectives: self.collectives.clone(),
            host_tx_bytes_per_plane: self
                .hosts
                .iter()
                .map(|h| h.tx_bytes_per_plane.clone())
                .collect(),
            host_rx_bytes: self.hosts.iter().map(|h| h.rx_bytes).collect(),
            link_counters,
            nic_histograms: self
                .hosts
                .iter()
                .filter_map(|h| h.hist.clone())
                .collect(),
            hft: std::mem::take(&mut self.hft_rows),
            latency_ns: std::mem::take(&mut self.latency_samples),
            outages: self.outages.clone(),
            conservation_ok,
            total_drops: self.dropped,
        }
    }

    fn wire_count_data(&self) -> u64 {
        // Probes and echoes are excluded from the wire counter.
        self.wire_count
    }

    fn dropped_data(&self) -> u64 {
        self.dropped
    }
}

fn ev_name(ev: &Ev) -> &'static str {
    match ev {
        Ev::Arrive { .. } => "Arrive",
        Ev::TxDone { .. } => "TxDone",
        Ev::PauseSet { .. } => "PauseSet",
        Ev::ArSnapshot => "ArSnapshot",
        Ev::CcTick { .. } => "CcTick",
        Ev::ProbeFire { .. } => "ProbeFire",
        Ev::ProbeTimeout { .. } => "ProbeTimeout",
        Ev::Pump { .. } => "Pump",
        Ev::RetxCheck { .. } => "RetxCheck",
        Ev::Ack { .. } => "Ack",
        Ev::Cnp { .. } => "Cnp",
        Ev::MsgReady { .. } => "MsgReady",
        Ev::LinkDown { .. } => "LinkDown",
        Ev::LinkUp { .. } => "LinkUp",
        Ev::HftFlush => "HftFlush",
    }
}

enum SendOutcome {
    Sent,
    Blocked,
    BlockedUntil(SimTime),
}

fn endpoints(l: &crate::topology::Link) -> (NodeId, NodeId) {
    match l.kind {
        LinkKind::HostLeaf { host, leaf } => (
            NodeId::Host(host),
            NodeId::Leaf {
                plane: l.plane,
                idx: leaf,
            },
        ),
        LinkKind::LeafSpine { leaf, spine, .. } => (
            NodeId::Leaf {
                plane: l.plane,
                idx: leaf,
            },
            NodeId::Spine {
                plane: l.plane,
                idx: spine,
            },
        ),
        LinkKind::SpineCore { spine, core, .. } => (
            NodeId::Spine {
                plane: l.plane,
                idx: spine,
            },
            NodeId::Core {
                plane: l.plane,
                idx: core,
            },
        ),
    }
}

/// Node a directed link delivers into.
fn dl_tail(topo: &Topology, dl: usize) -> NodeId {
    let (a, b) = endpoints(&topo.links[dl / 2]);
    if dl % 2 == 0 {
        b
    } else {
        a
    }
}

/// Transmitting node of a directed link; its egress queue lives here.
fn dl_head(topo: &Topology, dl: usize) -> NodeId {
    let (a, b) = endpoints(&topo.links[dl / 2]);
    if dl % 2 == 0 {
        a
    } else {
        b
    }
}

fn flow_hash(a: u64, b: u64, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in [a, b, salt] {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_multiplane_fat_tree, FatTreeSpec};
    use crate::workloads::{gen_all2all, CollectiveKind};

    fn small_spec(planes: usize) -> FatTreeSpec {
        FatTreeSpec {
            planes,
            leaves_per_plane: 2,
            spines_per_plane: 2,
            hosts_per_leaf: 2,
            parallel_links: 1,
            nic_plane_gbps: 100,
            fabric_gbps: 0,
            host_link_delay_ns: 500,
            fabric_link_delay_ns: 500,
            pods: 1,
        }
    }

    fn sendrecv_workload(src: usize, dst: usize, bytes: u64) -> (Vec<Message>, Vec<CollectiveInstance>) {
        let msgs = vec![Message {
            id: 0,
            source: src,
            destination: dst,
            size_bytes: bytes,
            deps: Vec::new(),
            earliest_start: SimTime::ZERO,
            collective: 0,
        }];
        let colls = vec![CollectiveInstance {
            id: 0,
            kind: CollectiveKind::SendReceive,
            ranks: vec![src, dst],
            total_bytes: bytes,
        }];
        (msgs, colls)
    }

    #[test]
    fn empty_workload_reports_zero_traffic() {
        let topo = build_multiplane_fat_tree(&small_spec(2)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(1));
        let report = Simulator::new(topo, params, Vec::new(), Vec::new(), 1).run();
        assert_eq!(report.packets_injected, 0);
        assert_eq!(report.packets_delivered, 0);
    }

    #[test]
    fn single_packet_latency_analytic() {
        // One 1500-byte packet, same-leaf pair at 100 Gbps, 500 ns links:
        // NIC serialize 120 ns + 500 ns + leaf serialize 120 ns + 500 ns.
        let mut spec = small_spec(1);
        spec.hosts_per_leaf = 2;
        let topo = build_multiplane_fat_tree(&spec).unwrap();
        let mut params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(1));
        params.mtu = 1500;
        let (msgs, colls) = sendrecv_workload(0, 1, 1500);
        let report = Simulator::new(topo, params, msgs, colls, 1).run();
        assert_eq!(report.messages_completed, 1);
        assert_eq!(report.ccts[0].end, SimTime::from_ns(1240));
    }

    #[test]
    fn cross_leaf_transfer_completes_and_conserves_bytes() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(20));
        let (msgs, colls) = sendrecv_workload(0, 2, 1_000_000);
        let report = Simulator::new(topo, params, msgs, colls, 7).run();
        assert_eq!(report.messages_completed, 1);
        assert_eq!(report.bytes_delivered_unique, 1_000_000);
        assert_eq!(report.packets_dropped, 0);
        assert!(report.conservation_ok);
    }

    #[test]
    fn plane_spray_roughly_uniform() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(50));
        let (msgs, colls) = sendrecv_workload(0, 2, 8_000_000);
        let report = Simulator::new(topo, params, msgs, colls, 3).run();
        assert_eq!(report.messages_completed, 1);
        let shares = &report.host_tx_bytes_per_plane[0];
        let total: u64 = shares.iter().sum();
        for &s in shares {
            let frac = s as f64 / total as f64;
            assert!((frac - 0.25).abs() < 0.05, "plane share {frac}");
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let run = |seed| {
            let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(20));
            let (msgs, colls) = gen_workload();
            Simulator::new(topo.clone(), params, msgs, colls, seed).run()
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.ccts.len(), b.ccts.len());
        for (x, y) in a.ccts.iter().zip(&b.ccts) {
            assert_eq!((x.start, x.end), (y.start, y.end));
        }
        assert_eq!(a.packets_injected, b.packets_injected);
        assert_eq!(a.host_tx_bytes_per_plane, b.host_tx_bytes_per_plane);
        let c = run(12);
        assert_ne!(a.host_tx_bytes_per_plane, c.host_tx_bytes_per_plane);

        fn gen_workload() -> (Vec<Message>, Vec<CollectiveInstance>) {
            let mut id = 0;
            let ranks: Vec<usize> = (0..4).collect();
            let msgs = gen_all2all(0, &ranks, 8_000_000, &mut id);
            let colls = vec![CollectiveInstance {
                id: 0,
                kind: CollectiveKind::All2All,
                ranks,
                total_bytes: 8_000_000,
            }];
            (msgs, colls)
        }
    }

    #[test]
    fn all2all_lossless_no_drops() {
        let topo = build_multiplane_fat_tree(&small_spec(2)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(50));
        let mut id = 0;
        let ranks: Vec<usize> = (0..4).collect();
        let msgs = gen_all2all(0, &ranks, 16_000_000, &mut id);
        let colls = vec![CollectiveInstance {
            id: 0,
            kind: CollectiveKind::All2All,
            ranks,
            total_bytes: 16_000_000,
        }];
        let report = Simulator::new(topo, params, msgs, colls, 5).run();
        assert_eq!(report.messages_completed, report.messages_total);
        assert_eq!(report.packets_dropped, 0);
        assert!(report.conservation_ok);
    }

    #[test]
    fn host_link_failure_recovers_via_other_planes() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let link = topo.host_links[0][1]; // plane 1 of the sender
        let params = SimParams::for_topology(&topo, Mechanism::Spx, SimTime::from_ms(30));
        let (msgs, colls) = sendrecv_workload(0, 2, 10_000_000);
        let mut sim = Simulator::new(topo, params, msgs, colls, 9);
        sim.add_outages(&[Outage {
            link,
            down: SimTime::from_us(100),
            up: SimTime::from_ms(25),
        }]);
        let report = sim.run();
        assert_eq!(report.messages_completed, 1, "transfer must finish on 3 planes");
        assert_eq!(report.bytes_delivered_unique, 10_000_000);
    }

    #[test]
    fn eth_baseline_transfers_complete() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::EthBaseline, SimTime::from_ms(50));
        let (msgs, colls) = sendrecv_workload(1, 3, 2_000_000);
        let report = Simulator::new(topo, params, msgs, colls, 2).run();
        assert_eq!(report.messages_completed, 1);
        // A hashed flow stays on a single plane.
        let used: usize = report.host_tx_bytes_per_plane[1]
            .iter()
            .filter(|&&b| b > 0)
            .count();
        assert_eq!(used, 1);
    }

    #[test]
    fn esr_baseline_sprays_planes() {
        let topo = build_multiplane_fat_tree(&small_spec(4)).unwrap();
        let params = SimParams::for_topology(&topo, Mechanism::EsrBaseline, SimTime::from_ms(50));
        let (msgs, colls) = sendrecv_workload(1, 3, 4_000_000);
        let report = Simulator::new(topo, params, msgs, colls, 2).run();
        assert_eq!(report.messages_completed, 1);
        let used: usize = report.host_tx_bytes_per_plane[1]
            .iter()
            .filter(|&&b| b > 0)
            .count();
        assert_eq!(used, 4);
    }
}
