//! Scenario configuration: TOML-encoded run descriptions covering the
//! packet simulator and the analytic/fluid study modes, with validation
//! that names the offending key path.

use crate::controlplane::{compute_weights, WeightTable};
use crate::engine::RngFactory;
use crate::faults::{
    apply_static_failures, sample_flap_schedule, FailureScope, FlapProcess, Outage,
    StaticFailurePlan,
};
use crate::sim::{Mechanism, SimParams};
use crate::topology::{
    build_multiplane_fat_tree, trim_nonblocking, FatTreeSpec, LinkId, LinkState, Topology,
};
use crate::units::SimTime;
use crate::workloads::{
    gen_all2all, gen_bisection, gen_one_to_many, gen_ring, rail_bisection_pairs,
    CollectiveInstance, Message,
};
use crate::telemetry::CollectiveKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Top-level run description. `mode` selects the engine; the packet mode is
/// the full simulator, the others are the analytic / fluid studies.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RunConfig {
    Packet(ScenarioConfig),
    SwitchBench(SwitchBenchConfig),
    All2allModel(All2AllModelConfig),
    BallsInBins(BallsConfig),
    Fleet(FleetConfig),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            RunConfig::Packet(c) => c.validate(),
            RunConfig::SwitchBench(c) => c.validate(),
            RunConfig::All2allModel(c) => c.validate(),
            RunConfig::BallsInBins(c) => c.validate(),
            RunConfig::Fleet(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            RunConfig::Packet(c) => c.seed,
            RunConfig::SwitchBench(c) => c.seed,
            RunConfig::All2allModel(_) => 0,
            RunConfig::BallsInBins(c) => c.seed,
            RunConfig::Fleet(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            RunConfig::Packet(c) => c.seed = seed,
            RunConfig::SwitchBench(c) => c.seed = seed,
            RunConfig::All2allModel(_) => {}
            RunConfig::BallsInBins(c) => c.seed = seed,
            RunConfig::Fleet(c) => c.seed = seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Packet-simulator scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub t_end_us: u64,
    pub mechanism: Mechanism,
    pub topology: FatTreeSpec,
    /// Trim uplinks to 1:1 for these active hosts before the run.
    #[serde(default)]
    pub trim_active_hosts: Option<Vec<usize>>,
    #[serde(default)]
    pub cc: CcOverrides,
    #[serde(default)]
    pub switch: SwitchConfig,
    #[serde(default)]
    pub nic: NicConfig,
    #[serde(default)]
    pub workload: Vec<WorkloadConfig>,
    #[serde(default)]
    pub faults: FaultConfig,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub t_inc_us: Option<u64>,
    pub t_probe_us: Option<u64>,
    pub t_timeout_us: Option<u64>,
    pub k_threshold: Option<u32>,
    pub t_cnp_us: Option<u64>,
    pub rtt_target_us: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub ar_bucket_bytes: u64,
    pub ar_period_ns: u64,
    /// None selects the automatic threshold (a quarter of the buffer).
    pub ecn_threshold_bytes: Option<u64>,
    pub pfc: bool,
    pub buffer_bytes: u64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            ar_bucket_bytes: crate::switch::DEFAULT_AR_BUCKET_BYTES,
            ar_period_ns: 500,
            ecn_threshold_bytes: None,
            pfc: true,
            buffer_bytes: crate::switch::DEFAULT_BUFFER_BYTES,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicConfig {
    pub mtu_bytes: u64,
    pub queue_cap_bytes: u64,
    /// Zero selects one bandwidth-delay product.
    pub window_bytes: u64,
}

impl Default for NicConfig {
    fn default() -> Self {
        NicConfig {
            mtu_bytes: crate::nic::DEFAULT_MTU_BYTES,
            queue_cap_bytes: 4 * crate::nic::DEFAULT_MTU_BYTES,
            window_bytes: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadConfig {
    All2all {
        /// Participating hosts; omitted means every host.
        ranks: Option<Vec<usize>>,
        total_bytes: u64,
    },
    Ring {
        ranks: Option<Vec<usize>>,
        total_bytes: u64,
    },
    OneToMany {
        srcs: Vec<usize>,
        dsts: Vec<usize>,
        burst_bytes: u64,
        gap_us: u64,
        bursts: usize,
        spacing_us: u64,
    },
    Bisection {
        bytes: u64,
    },
    SendReceive {
        source: usize,
        destination: usize,
        size_bytes: u64,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Permanently failed links, by id.
    #[serde(default)]
    pub static_links: Vec<usize>,
    /// Or a sampled fraction of a scope ("leaf-uplinks" | "all-fabric").
    pub static_scope: Option<String>,
    pub static_fraction: Option<f64>,
    /// Recompute AR weights after static failures (on by default).
    pub weighted_ar: Option<bool>,
    /// Stochastic flaps on fabric links.
    pub flaps_per_minute: Option<f64>,
    pub flap_duration_s: Option<f64>,
    /// Explicit outage windows.
    #[serde(default)]
    pub outages: Vec<OutageConfig>,
    /// Leaves trimmed to a subset of their uplinks in one plane.
    #[serde(default)]
    pub degraded_leaves: Vec<DegradedLeafConfig>,
}

/// One degraded leaf: all but `keep_uplinks` of the (plane, leaf) uplinks
/// go permanently down.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradedLeafConfig {
    pub plane: usize,
    pub leaf: usize,
    pub keep_uplinks: usize,
}

/// One explicit outage window, addressed either by raw link id or by the
/// (host, plane) pair of a host link.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageConfig {
    pub link: Option<usize>,
    pub host: Option<usize>,
    pub plane: Option<usize>,
    pub down_us: u64,
    pub up_us: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryConfig {
    #[serde(default)]
    pub nic_histograms: bool,
    #[serde(default)]
    pub latency: bool,
    pub hft_interval_us: Option<u64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology
            .validate()
            .map_err(|e| invalid("topology", e.to_string()))?;
        let hosts = self.topology.total_hosts();
        if self.t_end_us == 0 {
            return Err(invalid("t_end_us", "must be positive"));
        }
        if self.workload.is_empty() {
            return Err(invalid("workload", "at least one workload required"));
        }
        for (i, w) in self.workload.iter().enumerate() {
            let key = format!("workload[{i}]");
            let check = |hs: &[usize], field: &str| -> Result<(), ConfigError> {
                for &h in hs {
                    if h >= hosts {
                        return Err(invalid(
                            &format!("{key}.{field}"),
                            format!("host {h} does not exist (total {hosts})"),
                        ));
                    }
                }
                Ok(())
            };
            match w {
                WorkloadConfig::All2all { ranks, total_bytes }
                | WorkloadConfig::Ring { ranks, total_bytes } => {
                    if *total_bytes == 0 {
                        return Err(invalid(&format!("{key}.total_bytes"), "must be positive"));
                    }
                    if let Some(r) = ranks {
                        if r.len() < 2 {
                            return Err(invalid(&format!("{key}.ranks"), "needs at least 2"));
                        }
                        check(r, "ranks")?;
                    }
                }
                WorkloadConfig::OneToMany { srcs, dsts, .. } => {
                    check(srcs, "srcs")?;
                    check(dsts, "dsts")?;
                    if srcs.iter().any(|s| dsts.contains(s)) {
                        return Err(invalid(&format!("{key}.srcs"), "overlaps dsts"));
                    }
                }
                WorkloadConfig::Bisection { bytes } => {
                    if *bytes == 0 {
                        return Err(invalid(&format!("{key}.bytes"), "must be positive"));
                    }
                }
                WorkloadConfig::SendReceive {
                    source,
                    destination,
                    ..
                } => {
                    check(&[*source, *destination], "source/destination")?;
                    if source == destination {
                        return Err(invalid(&format!("{key}.destination"), "equals source"));
                    }
                }
            }
        }
        if let Some(f) = self.faults.static_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(invalid("faults.static_fraction", "outside [0, 1)"));
            }
            if self.faults.static_scope.is_none() {
                return Err(invalid("faults.static_scope", "required with static_fraction"));
            }
        }
        if let Some(s) = &self.faults.static_scope {
            if s != "leaf-uplinks" && s != "all-fabric" {
                return Err(invalid(
                    "faults.static_scope",
                    "expected \"leaf-uplinks\" or \"all-fabric\"",
                ));
            }
        }
        if self.faults.flaps_per_minute.is_some() != self.faults.flap_duration_s.is_some() {
            return Err(invalid(
                "faults.flap_duration_s",
                "flaps_per_minute and flap_duration_s go together",
            ));
        }
        Ok(())
    }
}

/// Everything the packet simulator needs, resolved from a scenario config.
pub struct BuiltScenario {
    pub topo: Topology,
    pub params: SimParams,
    pub messages: Vec<Message>,
    pub collectives: Vec<CollectiveInstance>,
    pub outages: Vec<Outage>,
    pub weights: WeightTable,
    pub failed_links: Vec<LinkId>,
    /// True when the scenario injects no faults at all.
    pub failure_free: bool,
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<BuiltScenario, ConfigError> {
    cfg.validate()?;
    let rngf = RngFactory::new(cfg.seed);
    let mut topo =
        build_multiplane_fat_tree(&cfg.topology).map_err(|e| invalid("topology", e.to_string()))?;
    if let Some(active) = &cfg.trim_active_hosts {
        topo = trim_nonblocking(&topo, active)
            .map_err(|e| invalid("trim_active_hosts", e.to_string()))?;
    }

    // Static failures, then weight recomputation over the surviving fabric.
    let mut failed_links: Vec<LinkId> = Vec::new();
    let plan = if !cfg.faults.static_links.is_empty() {
        Some(StaticFailurePlan::Links(
            cfg.faults.static_links.iter().map(|&i| LinkId(i)).collect(),
        ))
    } else if let (Some(scope), Some(frac)) =
        (&cfg.faults.static_scope, cfg.faults.static_fraction)
    {
        let scope = if scope == "leaf-uplinks" {
            FailureScope::LeafUplinks
        } else {
            FailureScope::AllFabric
        };
        Some(StaticFailurePlan::Sampled {
            scope,
            fraction: frac,
        })
    } else {
        None
    };
    if let Some(plan) = plan {
        let (t, failed) = apply_static_failures(&topo, &plan, &mut rngf.stream("static-failures"))
            .map_err(|e| invalid("faults", e.to_string()))?;
        topo = t;
        failed_links = failed;
    }
    for (i, d) in cfg.faults.degraded_leaves.iter().enumerate() {
        let key = format!("faults.degraded_leaves[{i}]");
        if d.plane >= topo.planes() {
            return Err(invalid(&key, format!("plane {} does not exist", d.plane)));
        }
        let Some(uplinks) = topo.uplinks.get(d.plane).and_then(|u| u.get(d.leaf)).cloned() else {
            return Err(invalid(&key, format!("leaf {} does not exist", d.leaf)));
        };
        if d.keep_uplinks == 0 || d.keep_uplinks >= uplinks.len() {
            return Err(invalid(
                &key,
                format!("keep_uplinks must be in 1..{}", uplinks.len()),
            ));
        }
        for &l in &uplinks[d.keep_uplinks..] {
            topo.set_link_state(l, LinkState::Down);
            failed_links.push(l);
        }
    }
    let weights = if !failed_links.is_empty() && cfg.faults.weighted_ar.unwrap_or(true) {
        compute_weights(&topo)
    } else {
        WeightTable::default()
    };

    let t_end = SimTime::from_us(cfg.t_end_us);
    let mut params = SimParams::for_topology(&topo, cfg.mechanism, t_end);
    let o = &cfg.cc;
    if let Some(v) = o.alpha {
        params.cc.alpha = v;
    }
    if let Some(v) = o.beta {
        params.cc.beta = v;
    }
    if let Some(v) = o.t_inc_us {
        params.cc.t_inc = SimTime::from_us(v);
    }
    if let Some(v) = o.t_probe_us {
        params.cc.t_probe = SimTime::from_us(v);
    }
    if let Some(v) = o.t_timeout_us {
        params.cc.t_timeout = SimTime::from_us(v);
    }
    if let Some(v) = o.k_threshold {
        params.cc.k_threshold = v;
    }
    if let Some(v) = o.t_cnp_us {
        params.cc.t_cnp = SimTime::from_us(v);
    }
    if let Some(v) = o.rtt_target_us {
        params.cc.rtt_target = SimTime::from_us(v);
    }
    params.ar_bucket = cfg.switch.ar_bucket_bytes;
    params.ar_period = SimTime::from_ns(cfg.switch.ar_period_ns);
    params.buffer_bytes = cfg.switch.buffer_bytes;
    params.ecn_threshold = cfg
        .switch
        .ecn_threshold_bytes
        .unwrap_or(cfg.switch.buffer_bytes / 4);
    params.pfc_enabled = cfg.switch.pfc;
    params.mtu = cfg.nic.mtu_bytes;
    params.nic_queue_cap = cfg.nic.queue_cap_bytes;
    if cfg.nic.window_bytes > 0 {
        params.window_bytes = cfg.nic.window_bytes;
    }
    params.collect_nic_histograms = cfg.telemetry.nic_histograms;
    params.collect_latency = cfg.telemetry.latency;
    params.hft_interval = cfg.telemetry.hft_interval_us.map(SimTime::from_us);

    // Workloads.
    let all_hosts: Vec<usize> = (0..topo.num_hosts()).collect();
    let mut next_id = 0usize;
    let mut next_coll = 0usize;
    let mut messages = Vec::new();
    let mut collectives = Vec::new();
    for w in &cfg.workload {
        match w {
            WorkloadConfig::All2all { ranks, total_bytes } => {
                let r = ranks.as_ref().unwrap_or(&all_hosts);
                messages.extend(gen_all2all(next_coll, r, *total_bytes, &mut next_id));
                collectives.push(CollectiveInstance {
                    id: next_coll,
                    kind: CollectiveKind::All2All,
                    ranks: r.clone(),
                    total_bytes: *total_bytes,
                });
                next_coll += 1;
            }
            WorkloadConfig::Ring { ranks, total_bytes } => {
                let r = ranks.as_ref().unwrap_or(&all_hosts);
                messages.extend(gen_ring(next_coll, r, *total_bytes, &mut next_id));
                collectives.push(CollectiveInstance {
                    id: next_coll,
                    kind: CollectiveKind::RingAllGather,
                    ranks: r.clone(),
                    total_bytes: *total_bytes,
                });
                next_coll += 1;
            }
            WorkloadConfig::OneToMany {
                srcs,
                dsts,
                burst_bytes,
                gap_us,
                bursts,
                spacing_us,
            } => {
                let (m, c) = gen_one_to_many(
                    next_coll,
                    srcs,
                    dsts,
                    *burst_bytes,
                    SimTime::from_us(*gap_us),
                    *bursts,
                    SimTime::from_us(*spacing_us),
                    &mut next_id,
                );
                next_coll += c.len();
                messages.extend(m);
                collectives.extend(c);
            }
            WorkloadConfig::Bisection { bytes } => {
                let leaves = cfg.topology.pods * cfg.topology.leaves_per_plane;
                let pairs = rail_bisection_pairs(leaves, cfg.topology.hosts_per_leaf);
                messages.extend(gen_bisection(next_coll, &pairs, *bytes, &mut next_id));
                collectives.push(CollectiveInstance {
                    id: next_coll,
                    kind: CollectiveKind::Bisection,
                    ranks: pairs.iter().flat_map(|&(a, b)| [a, b]).collect(),
                    total_bytes: *bytes * 2 * pairs.len() as u64,
                });
                next_coll += 1;
            }
            WorkloadConfig::SendReceive {
                source,
                destination,
                size_bytes,
            } => {
                messages.push(Message {
                    id: next_id,
                    source: *source,
                    destination: *destination,
                    size_bytes: *size_bytes,
                    deps: Vec::new(),
                    earliest_start: SimTime::ZERO,
                    collective: next_coll,
                });
                next_id += 1;
                collectives.push(CollectiveInstance {
                    id: next_coll,
                    kind: CollectiveKind::SendReceive,
                    ranks: vec![*source, *destination],
                    total_bytes: *size_bytes,
                });
                next_coll += 1;
            }
        }
    }

    // Flaps and explicit outages.
    let mut outages: Vec<Outage> = Vec::new();
    for (i, o) in cfg.faults.outages.iter().enumerate() {
        let link = match (o.link, o.host, o.plane) {
            (Some(l), None, None) => {
                if l >= topo.links.len() {
                    return Err(invalid(
                        &format!("faults.outages[{i}].link"),
                        format!("link {l} does not exist"),
                    ));
                }
                LinkId(l)
            }
            (None, Some(h), Some(p)) => {
                if h >= topo.num_hosts() || p >= topo.planes() {
                    return Err(invalid(
                        &format!("faults.outages[{i}].host"),
                        format!("host {h} / plane {p} does not exist"),
                    ));
                }
                topo.host_links[h][p]
            }
            _ => {
                return Err(invalid(
                    &format!("faults.outages[{i}]"),
                    "specify either link or host+plane",
                ));
            }
        };
        if o.up_us <= o.down_us {
            return Err(invalid(
                &format!("faults.outages[{i}].up_us"),
                "must exceed down_us",
            ));
        }
        outages.push(Outage {
            link,
            down: SimTime::from_us(o.down_us),
            up: SimTime::from_us(o.up_us),
        });
    }
    if let (Some(fpm), Some(dur)) = (cfg.faults.flaps_per_minute, cfg.faults.flap_duration_s) {
        let fabric: Vec<LinkId> = topo.fabric_links().map(|l| l.id).collect();
        let proc = FlapProcess::from_aggregate_rate(fpm, fabric.len(), dur, t_end);
        outages.extend(sample_flap_schedule(
            &proc,
            &fabric,
            &mut rngf.stream("flaps"),
        ));
    }
    outages.sort_by_key(|o| (o.down, o.link));

    let failure_free =
        failed_links.is_empty() && outages.is_empty();
    Ok(BuiltScenario {
        topo,
        params,
        messages,
        collectives,
        outages,
        weights,
        failed_links,
        failure_free,
    })
}

// ---------------------------------------------------------------------------
// Study-mode configs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchBenchConfig {
    pub seed: u64,
    pub ports: usize,
    pub port_gbps: u64,
    pub load: f64,
    pub packet_bytes: u64,
    /// AR quantization bucket; defaults to the packet size.
    pub bucket_bytes: Option<u64>,
    pub buffer_bytes: u64,
    pub horizon_ms: u64,
    /// Snapshot delays to sweep, in nanoseconds.
    pub delays_ns: Vec<u64>,
}

impl SwitchBenchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ports == 0 {
            return Err(invalid("ports", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.load) {
            return Err(invalid("load", "outside (0, 1]"));
        }
        if self.delays_ns.is_empty() {
            return Err(invalid("delays_ns", "must not be empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct All2AllModelConfig {
    pub ranks: usize,
    pub line_rate_gbytes: f64,
    pub pipeline_window: f64,
    pub oneway_latencies_us: Vec<u64>,
    pub sizes_bytes: Vec<u64>,
}

impl All2AllModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ranks < 2 {
            return Err(invalid("ranks", "needs at least 2"));
        }
        if self.oneway_latencies_us.is_empty() || self.sizes_bytes.is_empty() {
            return Err(invalid("sizes_bytes", "latency and size lists must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallsConfig {
    pub seed: u64,
    pub leaves: usize,
    pub spines: usize,
    pub parallel_links: usize,
    pub fail_fractions: Vec<f64>,
    pub trials: usize,
    pub buckets: usize,
}

impl BallsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.leaves < 2 || self.spines < 1 {
            return Err(invalid("leaves", "need at least 2 leaves and 1 spine"));
        }
        for f in &self.fail_fractions {
            if !(0.0..1.0).contains(f) {
                return Err(invalid("fail_fractions", "entries must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    pub seed: u64,
    pub collectives: usize,
    pub ranks_per_collective: usize,
    pub planes: usize,
    pub iteration_ms: u64,
    pub horizon_s: u64,
    pub flaps_per_second: f64,
    pub flap_duration_s: f64,
    /// Convergence times to sweep, in milliseconds.
    pub convergence_ms: Vec<u64>,
}

impl FleetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.collectives == 0 || self.ranks_per_collective == 0 {
            return Err(invalid("collectives", "must be positive"));
        }
        if self.planes < 2 {
            return Err(invalid("planes", "needs at least 2"));
        }
        if self.convergence_ms.is_empty() {
            return Err(invalid("convergence_ms", "must not be empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "packet"
seed = 7
t_end_us = 1000
mechanism = "spx"

[topology]
planes = 2
leaves_per_plane = 2
spines_per_plane = 2
hosts_per_leaf = 2
parallel_links = 1
nic_plane_gbps = 100
fabric_gbps = 0
host_link_delay_ns = 500
fabric_link_delay_ns = 500
pods = 1

[[workload]]
kind = "send-receive"
source = 0
destination = 1
size_bytes = 4096
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let echo = cfg.to_toml();
        let again = RunConfig::from_toml(&echo).unwrap();
        assert_eq!(echo, again.to_toml());
        assert_eq!(cfg.seed(), 7);
    }

    #[test]
    fn missing_seed_is_a_parse_error() {
        let broken = MINIMAL.replace("seed = 7\n", "");
        let err = RunConfig::from_toml(&broken).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn bad_host_reference_names_key_path() {
        let broken = MINIMAL.replace("destination = 1", "destination = 99");
        let err = RunConfig::from_toml(&broken).unwrap_err().to_string();
        assert!(err.contains("workload[0]"), "{err}");
        assert!(err.contains("99"), "{err}");
    }

    #[test]
    fn build_scenario_produces_messages() {
        let RunConfig::Packet(cfg) = RunConfig::from_toml(MINIMAL).unwrap() else {
            unreachable!()
        };
        let built = build_scenario(&cfg).unwrap();
        assert_eq!(built.messages.len(), 1);
        assert!(built.failure_free);
        assert!(built.weights.is_empty());
    }

    #[test]
    fn static_fraction_requires_scope() {
        let broken = format!("{MINIMAL}\n[faults]\nstatic_fraction = 0.1\n");
        let err = RunConfig::from_toml(&broken).unwrap_err().to_string();
        assert!(err.contains("faults.static_scope"), "{err}");
    }

    #[test]
    fn static_failures_enable_weighted_ar() {
        let with_faults = format!(
            "{MINIMAL}\n[faults]\nstatic_scope = \"leaf-uplinks\"\nstatic_fraction = 0.25\n"
        );
        let RunConfig::Packet(cfg) = RunConfig::from_toml(&with_faults).unwrap() else {
            unreachable!()
        };
        let built = build_scenario(&cfg).unwrap();
        assert!(!built.failed_links.is_empty());
        assert!(!built.failure_free);
    }
}
