//! Offline graph computations over topology snapshots: leaf-pair max-flow,
//! weighted-AR tables proportional to remaining healthy capacity, and the
//! balls-in-bins failure-distribution study.

use crate::topology::{FatTreeSpec, LinkId, LinkKind, LinkState, Topology};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashMap;

/// Directed capacity graph for one plane, capacities in bps.
#[derive(Debug, Clone)]
pub struct CapacityGraph {
    num_nodes: usize,
    // Dinic adjacency: (to, capacity, index of reverse edge).
    adj: Vec<Vec<(usize, u64, usize)>>,
}

impl CapacityGraph {
    pub fn new(num_nodes: usize) -> Self {
        CapacityGraph {
            num_nodes,
            adj: vec![Vec::new(); num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Add an undirected link: capacity `cap` in each direction.
    pub fn add_link(&mut self, a: usize, b: usize, cap: u64) {
        let ai = self.adj[a].len();
        let bi = self.adj[b].len();
        self.adj[a].push((b, cap, bi));
        self.adj[b].push((a, cap, ai));
    }

    /// Exact max-flow via Dinic's algorithm.
    pub fn max_flow(&self, src: usize, dst: usize) -> u64 {
        if src == dst {
            return u64::MAX;
        }
        let mut adj = self.adj.clone();
        let mut flow = 0u64;
        loop {
            // BFS level graph.
            let mut level = vec![usize::MAX; self.num_nodes];
            level[src] = 0;
            let mut queue = std::collections::VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &(v, cap, _) in &adj[u] {
                    if cap > 0 && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if level[dst] == usize::MAX {
                return flow;
            }
            // DFS blocking flow.
            let mut iter = vec![0usize; self.num_nodes];
            loop {
                let pushed = dfs(&mut adj, &level, &mut iter, src, dst, u64::MAX);
                if pushed == 0 {
                    break;
                }
                flow += pushed;
            }
        }

        fn dfs(
            adj: &mut Vec<Vec<(usize, u64, usize)>>,
            level: &[usize],
            iter: &mut [usize],
            u: usize,
            dst: usize,
            limit: u64,
        ) -> u64 {
            if u == dst {
                return limit;
            }
            while iter[u] < adj[u].len() {
                let (v, cap, rev) = adj[u][iter[u]];
                if cap > 0 && level[v] == level[u] + 1 {
                    let pushed = dfs(adj, level, iter, v, dst, limit.min(cap));
                    if pushed > 0 {
                        adj[u][iter[u]].1 -= pushed;
                        adj[v][rev].1 += pushed;
                        return pushed;
                    }
                }
                iter[u] += 1;
            }
            0
        }
    }
}

/// Node numbering inside a single-plane capacity graph.
#[derive(Debug, Clone)]
pub struct PlaneGraph {
    pub graph: CapacityGraph,
    pub num_leaves: usize,
    pub num_spines: usize,
}

impl PlaneGraph {
    pub fn leaf(&self, idx: usize) -> usize {
        idx
    }
    pub fn spine(&self, idx: usize) -> usize {
        self.num_leaves + idx
    }
    pub fn core(&self, idx: usize) -> usize {
        self.num_leaves + self.num_spines + idx
    }
}

/// Build the live fabric capacity graph of one plane (leaves, spines and, in
/// three-tier specs, cores; host links excluded).
pub fn plane_capacity_graph(topo: &Topology, plane: usize) -> PlaneGraph {
    plane_capacity_graph_excluding(topo, plane, &[])
}

fn plane_capacity_graph_excluding(topo: &Topology, plane: usize, skip: &[LinkId]) -> PlaneGraph {
    let spec = &topo.spec;
    let num_leaves = spec.pods * spec.leaves_per_plane;
    let num_spines = spec.pods * spec.spines_per_plane;
    let num_cores = if spec.pods > 1 { spec.spines_per_plane } else { 0 };
    let mut pg = PlaneGraph {
        graph: CapacityGraph::new(num_leaves + num_spines + num_cores),
        num_leaves,
        num_spines,
    };
    // Merge parallel links into one edge per endpoint pair.
    let mut merged: HashMap<(usize, usize), u64> = HashMap::new();
    for l in &topo.links {
        if l.plane != plane || !l.is_up() || skip.contains(&l.id) {
            continue;
        }
        match l.kind {
            LinkKind::LeafSpine { leaf, spine, .. } => {
                *merged
                    .entry((pg.leaf(leaf), pg.spine(spine)))
                    .or_default() += l.capacity.0;
            }
            LinkKind::SpineCore { spine, core, .. } => {
                *merged.entry((pg.spine(spine), pg.core(core))).or_default() += l.capacity.0;
            }
            LinkKind::HostLeaf { .. } => {}
        }
    }
    let mut edges: Vec<_> = merged.into_iter().collect();
    edges.sort();
    for ((a, b), cap) in edges {
        pg.graph.add_link(a, b, cap);
    }
    pg
}

/// Exact max-flow between two leaves of one plane, in bps.
pub fn max_flow(topo: &Topology, plane: usize, src_leaf: usize, dst_leaf: usize) -> u64 {
    let pg = plane_capacity_graph(topo, plane);
    pg.graph.max_flow(pg.leaf(src_leaf), pg.leaf(dst_leaf))
}

/// Per-(plane, leaf, destination-leaf, uplink) forwarding weights in [0, 1].
///
/// The weight of an uplink is the downstream bottleneck (max-flow through
/// that uplink alone toward the destination) normalized to the best uplink.
/// A pristine symmetric fabric yields all-ones.
#[derive(Debug, Clone, Default)]
pub struct WeightTable {
    // (plane, leaf, dest_leaf) -> per-uplink weights, parallel to
    // topology.uplinks[plane][leaf].
    weights: HashMap<(usize, usize, usize), Vec<f64>>,
}

impl WeightTable {
    pub fn get(&self, plane: usize, leaf: usize, dest_leaf: usize) -> Option<&Vec<f64>> {
        self.weights.get(&(plane, leaf, dest_leaf))
    }

    /// Weight for a specific uplink; defaults to 1 when no table entry
    /// exists (pristine fabric).
    pub fn weight_of(&self, topo: &Topology, plane: usize, leaf: usize, dest_leaf: usize, link: LinkId) -> f64 {
        match self.weights.get(&(plane, leaf, dest_leaf)) {
            None => 1.0,
            Some(row) => topo.uplinks[plane][leaf]
                .iter()
                .position(|&l| l == link)
                .map(|i| row[i])
                .unwrap_or(1.0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn compute_weights(topo: &Topology) -> WeightTable {
    let spec = &topo.spec;
    let num_leaves = spec.pods * spec.leaves_per_plane;
    let mut table = WeightTable::default();
    for plane in 0..spec.planes {
        for leaf in 0..num_leaves {
            let uplinks = &topo.uplinks[plane][leaf];
            // Group live uplinks by next-hop spine.
            let mut group_cap: HashMap<usize, u64> = HashMap::new();
            for &up in uplinks {
                let l = topo.link(up);
                if let (true, LinkKind::LeafSpine { spine, .. }) = (l.is_up(), l.kind) {
                    *group_cap.entry(spine).or_default() += l.capacity.0;
                }
            }
            for dest in 0..num_leaves {
                if dest == leaf {
                    continue;
                }
                // Downstream flow follows valid up/down paths only: remove
                // every leaf attachment except the destination's, so flow
                // cannot detour through another leaf.
                let skip: Vec<LinkId> = topo
                    .links
                    .iter()
                    .filter(|l| l.plane == plane)
                    .filter(|l| match l.kind {
                        LinkKind::LeafSpine { leaf: ll, .. } => ll != dest,
                        _ => false,
                    })
                    .map(|l| l.id)
                    .collect();
                let pg = plane_capacity_graph_excluding(topo, plane, &skip);
                // Ratio of usable downstream capacity to offered uplink
                // capacity, per spine group.
                let mut ratios: HashMap<usize, f64> = HashMap::new();
                for (&spine, &cap) in &group_cap {
                    let downstream = pg.graph.max_flow(pg.spine(spine), pg.leaf(dest));
                    ratios.insert(spine, (downstream.min(cap)) as f64 / cap as f64);
                }
                let best = ratios.values().cloned().fold(0.0f64, f64::max);
                let row: Vec<f64> = uplinks
                    .iter()
                    .map(|&up| {
                        let l = topo.link(up);
                        if !l.is_up() || best == 0.0 {
                            return 0.0;
                        }
                        match l.kind {
                            LinkKind::LeafSpine { spine, .. } => ratios[&spine] / best,
                            _ => 0.0,
                        }
                    })
                    .collect();
                if row.iter().any(|&w| (w - 1.0).abs() > 1e-12) {
                    table.weights.insert((plane, leaf, dest), row);
                }
            }
        }
    }
    table
}

/// One histogram row: bucket lower edge (fraction of pristine) and the
/// average leaf-pair count across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketRow {
    pub bucket_low_frac: f64,
    pub avg_pair_count: f64,
}

/// Balls-in-bins failure study: sample uniform random fabric-link failures
/// at fraction `fail_fraction`, compute all leaf-pair max-flows, and bucket
/// them as a percentage of the pristine value.
pub fn balls_in_bins(
    spec: &FatTreeSpec,
    fail_fraction: f64,
    trials: usize,
    buckets: usize,
    rng: &mut impl Rng,
) -> Vec<BucketRow> {
    assert!((0.0..1.0).contains(&fail_fraction));
    assert!(buckets >= 1 && trials >= 1);
    let topo = crate::topology::build_multiplane_fat_tree(spec).expect("invalid spec");
    let plane = 0;
    let fabric: Vec<LinkId> = topo
        .fabric_links()
        .filter(|l| l.plane == plane)
        .map(|l| l.id)
        .collect();
    let num_leaves = spec.pods * spec.leaves_per_plane;
    let pristine = max_flow(&topo, plane, 0, 1.min(num_leaves - 1)).max(1);

    let mut counts = vec![0u64; buckets];
    let fail_n = (fail_fraction * fabric.len() as f64).round() as usize;
    for _ in 0..trials {
        let mut t = topo.clone();
        let mut pool = fabric.clone();
        pool.shuffle(rng);
        for &l in pool.iter().take(fail_n) {
            t.set_link_state(l, LinkState::Down);
        }
        for a in 0..num_leaves {
            for b in (a + 1)..num_leaves {
                let f = max_flow(&t, plane, a, b);
                let frac = f as f64 / pristine as f64;
                let idx = ((frac * buckets as f64) as usize).min(buckets - 1);
                counts[idx] += 1;
            }
        }
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| BucketRow {
            bucket_low_frac: i as f64 / buckets as f64,
            avg_pair_count: c as f64 / trials as f64,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_multiplane_fat_tree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(leaves: usize, spines: usize, par: usize) -> FatTreeSpec {
        FatTreeSpec {
            planes: 1,
            leaves_per_plane: leaves,
            spines_per_plane: spines,
            hosts_per_leaf: 1,
            parallel_links: par,
            nic_plane_gbps: 200,
            fabric_gbps: 0,
            host_link_delay_ns: 500,
            fabric_link_delay_ns: 500,
            pods: 1,
        }
    }

    /// Brute-force augmenting-path oracle (Edmonds-Karp), independent of the
    /// Dinic implementation above.
    fn edmonds_karp(g: &CapacityGraph, src: usize, dst: usize) -> u64 {
        let n = g.num_nodes();
        // Dense residual matrix; the adjacency stores both directions
        // explicitly, so summing gives each direction its full capacity.
        let mut cap = vec![vec![0u64; n]; n];
        for (u, edges) in g.adj.iter().enumerate() {
            for &(v, c, _) in edges {
                cap[u][v] += c;
            }
        }
        let mut flow = 0;
        loop {
            let mut parent = vec![usize::MAX; n];
            parent[src] = src;
            let mut q = std::collections::VecDeque::from([src]);
            while let Some(u) = q.pop_front() {
                for v in 0..n {
                    if parent[v] == usize::MAX && cap[u][v] > 0 {
                        parent[v] = u;
                        q.push_back(v);
                    }
                }
            }
            if parent[dst] == usize::MAX {
                return flow;
            }
            let mut bottleneck = u64::MAX;
            let mut v = dst;
            while v != src {
                let u = parent[v];
                bottleneck = bottleneck.min(cap[u][v]);
                v = u;
            }
            let mut v = dst;
            while v != src {
                let u = parent[v];
                cap[u][v] -= bottleneck;
                cap[v][u] += bottleneck;
                v = u;
            }
            flow += bottleneck;
        }
    }

    #[test]
    fn pristine_leaf_spine_max_flow_is_uplink_total() {
        let topo = build_multiplane_fat_tree(&spec(4, 3, 2)).unwrap();
        let u = topo.leaf_uplink_capacity(0, 0);
        assert_eq!(max_flow(&topo, 0, 0, 1), u);
    }

    #[test]
    fn one_uplink_down_reduces_by_cut_arithmetic() {
        let topo = build_multiplane_fat_tree(&spec(3, 4, 1)).unwrap();
        let u = topo.leaf_uplink_capacity(0, 0);
        let mut t = topo.clone();
        t.set_link_state(t.uplinks[0][0][0], LinkState::Down);
        assert_eq!(max_flow(&t, 0, 0, 1), u / 4 * 3);
    }

    #[test]
    fn dinic_matches_augmenting_path_oracle_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 4 + (rng.next_u64() % 17) as usize; // <= 20 nodes
            let mut g = CapacityGraph::new(n);
            let edges = n + (rng.next_u64() % (2 * n as u64)) as usize;
            for _ in 0..edges {
                let a = (rng.next_u64() % n as u64) as usize;
                let b = (rng.next_u64() % n as u64) as usize;
                if a != b {
                    g.add_link(a, b, 1 + rng.next_u64() % 100);
                }
            }
            let src = 0;
            let dst = n - 1;
            assert_eq!(g.max_flow(src, dst), edmonds_karp(&g, src, dst));
        }
    }

    use rand::RngCore;

    #[test]
    fn max_flow_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let topo = build_multiplane_fat_tree(&spec(4, 4, 2)).unwrap();
        let mut t = topo.clone();
        let fabric: Vec<LinkId> = t.fabric_links().map(|l| l.id).collect();
        for &l in fabric.iter().filter(|_| rng.next_u64() % 4 == 0) {
            t.set_link_state(l, LinkState::Down);
        }
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert_eq!(max_flow(&t, 0, a, b), max_flow(&t, 0, b, a));
                }
            }
        }
    }

    #[test]
    fn pristine_weights_all_ones() {
        let topo = build_multiplane_fat_tree(&spec(3, 2, 1)).unwrap();
        let w = compute_weights(&topo);
        assert!(w.is_empty()); // all-ones table stores nothing
        assert_eq!(w.weight_of(&topo, 0, 0, 1, topo.uplinks[0][0][0]), 1.0);
    }

    #[test]
    fn remote_failure_halves_weight_toward_affected_destination() {
        // Two spines, destination leaf D = 2 with spine-1 parallel link down:
        // D is reachable via S0 at full rate, via S1 at half rate.
        let topo = build_multiplane_fat_tree(&spec(3, 2, 2)).unwrap();
        let mut t = topo.clone();
        // Disable one of the two parallel links between spine 1 and leaf 2.
        let down = t.downlinks[0][1][2][0];
        t.set_link_state(down, LinkState::Down);
        let w = compute_weights(&t);
        let ups = &t.uplinks[0][0];
        // Uplinks toward spine 0 keep weight 1.0; toward spine 1, 0.5.
        for &up in ups {
            let weight = w.weight_of(&t, 0, 0, 2, up);
            match t.link(up).kind {
                LinkKind::LeafSpine { spine: 0, .. } => assert_eq!(weight, 1.0),
                LinkKind::LeafSpine { spine: 1, .. } => assert_eq!(weight, 0.5),
                _ => unreachable!(),
            }
            // Unconstrained destination leaf 1 keeps weight 1.0 everywhere.
            assert_eq!(w.weight_of(&t, 0, 0, 1, up), 1.0);
        }
    }

    #[test]
    fn weight_monotone_under_downstream_removal() {
        let topo = build_multiplane_fat_tree(&spec(3, 2, 3)).unwrap();
        let mut t = topo.clone();
        let up = t.uplinks[0][0][0]; // leaf 0 -> spine 0, parallel 0
        let before = compute_weights(&t).weight_of(&t, 0, 0, 2, up);
        // Remove a link downstream of spine 0 toward leaf 2.
        let down = t.downlinks[0][0][2][0];
        t.set_link_state(down, LinkState::Down);
        let after = compute_weights(&t).weight_of(&t, 0, 0, 2, up);
        assert!(after <= before + 1e-12);
    }

    #[test]
    fn balls_in_bins_f0_all_in_top_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = balls_in_bins(&spec(4, 2, 1), 0.0, 2, 8, &mut rng);
        let pairs = 4.0 * 3.0 / 2.0;
        assert_eq!(rows.last().unwrap().avg_pair_count, pairs);
        assert!(rows[..7].iter().all(|r| r.avg_pair_count == 0.0));
    }
}
