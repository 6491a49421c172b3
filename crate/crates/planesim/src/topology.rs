//! Multi-plane rail-optimized fat-tree topologies.
//!
//! Planes are disconnected copies of a leaf-spine (optionally podded
//! three-tier) fabric; every host NIC has one port per plane. Parallel
//! links between the same switch pair carry identical capacity and delay.

use crate::units::{Rate, SimTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Host(usize),
    Leaf { plane: usize, idx: usize },
    Spine { plane: usize, idx: usize },
    Core { plane: usize, idx: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    /// Host plane port to its leaf. `host` is the global host index.
    HostLeaf { host: usize, leaf: usize },
    /// Leaf uplink to a spine; `parallel` distinguishes parallel links.
    LeafSpine { leaf: usize, spine: usize, parallel: usize },
    /// Spine uplink to a core switch (three-tier only).
    SpineCore { spine: usize, core: usize, parallel: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub plane: usize,
    pub kind: LinkKind,
    pub capacity: Rate,
    pub delay: SimTime,
    pub state: LinkState,
}

impl Link {
    pub fn is_up(&self) -> bool {
        self.state == LinkState::Up
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FatTreeSpec {
    pub planes: usize,
    pub leaves_per_plane: usize,
    pub spines_per_plane: usize,
    pub hosts_per_leaf: usize,
    /// Parallel leaf-spine links per (leaf, spine) pair.
    pub parallel_links: usize,
    /// Per-plane NIC port rate (e.g. 200 Gbps per plane of an 800 Gbps NIC).
    pub nic_plane_gbps: u64,
    /// Fabric link rate; defaults to the NIC plane rate when zero.
    #[serde(default)]
    pub fabric_gbps: u64,
    pub host_link_delay_ns: u64,
    pub fabric_link_delay_ns: u64,
    /// Pods for three-tier fabrics. Only the capacity-graph analyzers accept
    /// pods > 1; the event simulator is two-tier.
    #[serde(default = "one")]
    pub pods: usize,
}

fn one() -> usize {
    1
}

impl FatTreeSpec {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let all_counts = [
            self.planes,
            self.leaves_per_plane,
            self.hosts_per_leaf,
            self.parallel_links,
            self.pods,
        ];
        if all_counts.iter().any(|&c| c == 0) || self.nic_plane_gbps == 0 {
            return Err(TopologyError::InvalidSpec(
                "planes, leaves, hosts, parallel links, pods and NIC rate must all be >= 1".into(),
            ));
        }
        if self.pods > 1 && self.spines_per_plane == 0 {
            return Err(TopologyError::InvalidSpec(
                "podded topologies need at least one spine per pod".into(),
            ));
        }
        Ok(())
    }

    pub fn total_hosts(&self) -> usize {
        self.pods * self.leaves_per_plane * self.hosts_per_leaf
    }

    pub fn nic_plane_rate(&self) -> Rate {
        Rate::from_gbps(self.nic_plane_gbps)
    }

    pub fn fabric_rate(&self) -> Rate {
        if self.fabric_gbps == 0 {
            self.nic_plane_rate()
        } else {
            Rate::from_gbps(self.fabric_gbps)
        }
    }

    /// Total NIC line rate across all planes.
    pub fn nic_line_rate(&self) -> Rate {
        Rate(self.nic_plane_rate().0 * self.planes as u64)
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("invalid fat-tree spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible trim: {0}")]
    InfeasibleTrim(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub spec: FatTreeSpec,
    pub links: Vec<Link>,
    /// host_links[host][plane] -> host-leaf link.
    pub host_links: Vec<Vec<LinkId>>,
    /// uplinks[plane][leaf] -> all leaf-spine links of that leaf.
    pub uplinks: Vec<Vec<Vec<LinkId>>>,
    /// downlinks[plane][spine][leaf] -> parallel links toward that leaf.
    pub downlinks: Vec<Vec<Vec<Vec<LinkId>>>>,
    /// Rail label per host (port index within its node), placement metadata
    /// only; rails never alter forwarding.
    pub rail_of_host: Vec<usize>,
}

impl Topology {
    pub fn num_hosts(&self) -> usize {
        self.host_links.len()
    }

    pub fn planes(&self) -> usize {
        self.spec.planes
    }

    pub fn leaf_of_host(&self, host: usize) -> usize {
        // Global leaf index: pods are laid out consecutively.
        host / self.spec.hosts_per_leaf
    }

    pub fn hosts_under_leaf(&self, leaf: usize) -> std::ops::Range<usize> {
        let h = self.spec.hosts_per_leaf;
        leaf * h..(leaf + 1) * h
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0]
    }

    pub fn set_link_state(&mut self, id: LinkId, state: LinkState) {
        self.links[id.0].state = state;
    }

    /// All leaf-spine links, all planes.
    pub fn fabric_links(&self) -> impl Iterator<Item = &Link> {
        self.links
            .iter()
            .filter(|l| matches!(l.kind, LinkKind::LeafSpine { .. }))
    }

    /// Live ECMP port group at a leaf toward `dest_host`, for one plane.
    ///
    /// A local destination resolves to its single down port; a remote one to
    /// every live uplink. Order is deterministic (link id ascending). An
    /// empty group means the destination is unreachable in this plane.
    pub fn leaf_ecmp_group(&self, plane: usize, leaf: usize, dest_host: usize) -> Vec<LinkId> {
        if self.leaf_of_host(dest_host) == leaf {
            let l = self.host_links[dest_host][plane];
            if self.link(l).is_up() {
                return vec![l];
            }
            return Vec::new();
        }
        self.uplinks[plane][leaf]
            .iter()
            .copied()
            .filter(|&l| self.link(l).is_up())
            .collect()
    }

    /// Live ECMP group at a spine toward the destination leaf.
    pub fn spine_ecmp_group(&self, plane: usize, spine: usize, dest_leaf: usize) -> Vec<LinkId> {
        self.downlinks[plane][spine][dest_leaf]
            .iter()
            .copied()
            .filter(|&l| self.link(l).is_up())
            .collect()
    }

    /// Total live uplink capacity of a leaf in one plane, in bps.
    pub fn leaf_uplink_capacity(&self, plane: usize, leaf: usize) -> u64 {
        self.uplinks[plane][leaf]
            .iter()
            .filter(|&&l| self.link(l).is_up())
            .map(|&l| self.link(l).capacity.0)
            .sum()
    }
}

/// Build a multi-plane fat tree per the spec. Forwarding is implicit in the
/// ECMP group accessors: leaves forward locally via down ports and remotely
/// via live uplinks, spines via the down-port group toward the destination
/// leaf.
pub fn build_multiplane_fat_tree(spec: &FatTreeSpec) -> Result<Topology, TopologyError> {
    spec.validate()?;
    let p = spec.planes;
    let leaves = spec.pods * spec.leaves_per_plane;
    let spines = spec.pods * spec.spines_per_plane;
    let hosts = spec.total_hosts();
    let nic_rate = spec.nic_plane_rate();
    let fabric_rate = spec.fabric_rate();

    let mut links = Vec::new();
    let mut host_links = vec![Vec::with_capacity(p); hosts];
    let mut uplinks = vec![vec![Vec::new(); leaves]; p];
    let mut downlinks = vec![vec![vec![Vec::new(); leaves]; spines]; p];

    let push = |links: &mut Vec<Link>, plane, kind, capacity, delay| {
        let id = LinkId(links.len());
        links.push(Link {
            id,
            plane,
            kind,
            capacity,
            delay,
            state: LinkState::Up,
        });
        id
    };

    for plane in 0..p {
        for host in 0..hosts {
            let leaf = host / spec.hosts_per_leaf;
            let id = push(
                &mut links,
                plane,
                LinkKind::HostLeaf { host, leaf },
                nic_rate,
                SimTime::from_ns(spec.host_link_delay_ns),
            );
            host_links[host].push(id);
        }
        for pod in 0..spec.pods {
            for leaf_i in 0..spec.leaves_per_plane {
                let leaf = pod * spec.leaves_per_plane + leaf_i;
                for spine_i in 0..spec.spines_per_plane {
                    let spine = pod * spec.spines_per_plane + spine_i;
                    for parallel in 0..spec.parallel_links {
                        let id = push(
                            &mut links,
                            plane,
                            LinkKind::LeafSpine {
                                leaf,
                                spine,
                                parallel,
                            },
                            fabric_rate,
                            SimTime::from_ns(spec.fabric_link_delay_ns),
                        );
                        uplinks[plane][leaf].push(id);
                        downlinks[plane][spine][leaf].push(id);
                    }
                }
            }
        }
        if spec.pods > 1 {
            // Three-tier: every spine connects to every core of its plane.
            // Core count mirrors spines-per-pod; capacity-graph use only.
            for spine in 0..spines {
                for core in 0..spec.spines_per_plane {
                    push(
                        &mut links,
                        plane,
                        LinkKind::SpineCore {
                            spine,
                            core,
                            parallel: 0,
                        },
                        fabric_rate,
                        SimTime::from_ns(spec.fabric_link_delay_ns),
                    );
                }
            }
        }
    }

    let rail_of_host = (0..hosts).map(|h| h % spec.hosts_per_leaf).collect();

    Ok(Topology {
        spec: spec.clone(),
        links,
        host_links,
        uplinks,
        downlinks,
        rail_of_host,
    })
}

/// Disable surplus parallel uplinks so that per-leaf uplink capacity matches
/// the host-facing capacity of the active hosts under that leaf. Disabled
/// links are spread round-robin across spines.
pub fn trim_nonblocking(
    topology: &Topology,
    active_hosts: &[usize],
) -> Result<Topology, TopologyError> {
    let mut topo = topology.clone();
    let spec = topo.spec.clone();
    let spec = &spec;
    let leaves = spec.pods * spec.leaves_per_plane;

    let mut active_per_leaf = vec![0usize; leaves];
    for &h in active_hosts {
        if h >= topo.num_hosts() {
            return Err(TopologyError::InfeasibleTrim(format!(
                "active host {h} does not exist"
            )));
        }
        active_per_leaf[topo.leaf_of_host(h)] += 1;
    }

    let fabric_bps = spec.fabric_rate().0;
    for plane in 0..spec.planes {
        for leaf in 0..leaves {
            let want_bps = active_per_leaf[leaf] as u64 * spec.nic_plane_rate().0;
            let have: Vec<LinkId> = topo.uplinks[plane][leaf]
                .iter()
                .copied()
                .filter(|&l| topo.link(l).is_up())
                .collect();
            let have_bps: u64 = have.iter().map(|&l| topo.link(l).capacity.0).sum();
            if want_bps > have_bps {
                return Err(TopologyError::InfeasibleTrim(format!(
                    "leaf {leaf} plane {plane}: active hosts need {want_bps} bps, uplinks have {have_bps}"
                )));
            }
            // Keep ceil(want/fabric_rate) uplinks; drop the rest uniformly
            // across spines (round-robin by spine index).
            let keep = if want_bps == 0 {
                0
            } else {
                ((want_bps + fabric_bps - 1) / fabric_bps) as usize
            };
            let drop_n = have.len().saturating_sub(keep);
            let mut dropped = 0;
            let mut parallel_round = spec.parallel_links;
            while dropped < drop_n && parallel_round > 0 {
                parallel_round -= 1;
                for spine_i in 0..spec.spines_per_plane {
                    if dropped >= drop_n {
                        break;
                    }
                    let pod = leaf / spec.leaves_per_plane;
                    let spine = pod * spec.spines_per_plane + spine_i;
                    // Highest parallel index first so remaining parallel
                    // groups stay dense.
                    let candidate = topo.downlinks[plane][spine][leaf]
                        .iter()
                        .copied()
                        .filter(|&l| topo.link(l).is_up())
                        .filter(|&l| match topo.link(l).kind {
                            LinkKind::LeafSpine { parallel, .. } => parallel == parallel_round,
                            _ => false,
                        })
                        .next_back();
                    if let Some(l) = candidate {
                        topo.set_link_state(l, LinkState::Down);
                        dropped += 1;
                    }
                }
            }
        }
    }
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(planes: usize, leaves: usize, spines: usize, hosts: usize, par: usize) -> FatTreeSpec {
        FatTreeSpec {
            planes,
            leaves_per_plane: leaves,
            spines_per_plane: spines,
            hosts_per_leaf: hosts,
            parallel_links: par,
            nic_plane_gbps: 200,
            fabric_gbps: 0,
            host_link_delay_ns: 500,
            fabric_link_delay_ns: 500,
            pods: 1,
        }
    }

    #[test]
    fn degenerate_single_leaf() {
        let t = build_multiplane_fat_tree(&spec(1, 1, 0, 2, 1)).unwrap();
        assert_eq!(t.links.len(), 2);
        // Both hosts reachable through the single leaf in one switch hop.
        assert_eq!(t.leaf_ecmp_group(0, 0, 1).len(), 1);
    }

    #[test]
    fn link_count_formula() {
        // P=4, 3 leaves, 2 spines, 16 hosts/leaf, parallel=1:
        // 4 * (48 + 3*2) = 216.
        let t = build_multiplane_fat_tree(&spec(4, 3, 2, 16, 1)).unwrap();
        assert_eq!(t.links.len(), 216);
        for h in 0..t.num_hosts() {
            assert_eq!(t.host_links[h].len(), 4);
        }
    }

    #[test]
    fn blackwell_ultra_mp_scale_accepted() {
        // 288 nodes, 4 planes, 2-level fat tree.
        let s = spec(4, 18, 16, 16, 1);
        let t = build_multiplane_fat_tree(&s).unwrap();
        assert_eq!(t.num_hosts(), 288);
        assert_eq!(t.planes(), 4);
    }

    #[test]
    fn plane_isolation() {
        let t = build_multiplane_fat_tree(&spec(4, 2, 2, 4, 1)).unwrap();
        // No link ever spans planes; reachability per plane only.
        for l in &t.links {
            let _ = l.plane; // every link belongs to exactly one plane
        }
        for h in 0..t.num_hosts() {
            for (plane, &l) in t.host_links[h].iter().enumerate() {
                assert_eq!(t.link(l).plane, plane);
            }
        }
    }

    #[test]
    fn ecmp_group_enumeration_and_down_links() {
        let t = build_multiplane_fat_tree(&spec(1, 2, 2, 2, 2)).unwrap();
        // leaf 0 -> host under leaf 1: 2 spines x 2 parallel = 4 ports.
        let g = t.leaf_ecmp_group(0, 0, 2);
        assert_eq!(g.len(), 4);
        let mut t2 = t.clone();
        t2.set_link_state(g[0], LinkState::Down);
        let g2 = t2.leaf_ecmp_group(0, 0, 2);
        assert_eq!(g2.len(), 3);
        assert!(!g2.contains(&g[0]));
        // local host -> single down port
        assert_eq!(t.leaf_ecmp_group(0, 0, 1).len(), 1);
    }

    #[test]
    fn trim_identity_on_one_to_one() {
        let s = spec(1, 2, 2, 2, 1); // 2 hosts/leaf @200G, 2 uplinks @200G: 1:1
        let t = build_multiplane_fat_tree(&s).unwrap();
        let active: Vec<usize> = (0..t.num_hosts()).collect();
        let t2 = trim_nonblocking(&t, &active).unwrap();
        assert!(t2.links.iter().all(|l| l.is_up()));
    }

    #[test]
    fn trim_half_hosts_halves_uplinks_balanced() {
        let s = spec(1, 2, 2, 4, 2); // 4 hosts/leaf, 2 spines x 2 parallel = 4 uplinks
        let t = build_multiplane_fat_tree(&s).unwrap();
        // Activate half the hosts under each leaf.
        let active: Vec<usize> = vec![0, 1, 4, 5];
        let t2 = trim_nonblocking(&t, &active).unwrap();
        for leaf in 0..2 {
            assert_eq!(
                t2.leaf_uplink_capacity(0, leaf),
                2 * Rate::from_gbps(200).0
            );
            // Balanced per spine (+-1 link).
            let mut per_spine = [0i64; 2];
            for &l in &t2.uplinks[0][leaf] {
                if let LinkKind::LeafSpine { spine, .. } = t2.link(l).kind {
                    if t2.link(l).is_up() {
                        per_spine[spine] += 1;
                    }
                }
            }
            assert!((per_spine[0] - per_spine[1]).abs() <= 1);
        }
    }

    #[test]
    fn trim_symmetry_across_leaves() {
        let s = spec(2, 3, 2, 8, 4);
        let t = build_multiplane_fat_tree(&s).unwrap();
        // 4 of 8 hosts active under each leaf.
        let active: Vec<usize> = (0..3).flat_map(|leaf| (0..4).map(move |i| leaf * 8 + i)).collect();
        let t2 = trim_nonblocking(&t, &active).unwrap();
        let caps: Vec<u64> = (0..3).map(|l| t2.leaf_uplink_capacity(0, l)).collect();
        assert!(caps.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn infeasible_trim_reported() {
        let s = spec(1, 1, 1, 4, 1); // 4 hosts @200G but only 1 uplink
        let t = build_multiplane_fat_tree(&s).unwrap();
        let err = trim_nonblocking(&t, &[0, 1, 2, 3]).unwrap_err();
        assert!(matches!(err, TopologyError::InfeasibleTrim(_)));
    }
}
