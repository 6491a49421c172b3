//! Static link failures and stochastic link flaps.
//!
//! Flap onsets per link form a Poisson process with rate 1/MTBF; a flapped
//! link stays down for a fixed duration, overlapping onsets on the same
//! link merging into one extended outage. The control plane is never
//! notified of flaps; static failures trigger weight recomputation before
//! the run.

use crate::topology::{LinkId, LinkKind, LinkState, Topology};
use crate::units::SimTime;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("infeasible failure plan: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlapProcess {
    /// Per-link mean time between flap onsets, seconds.
    pub mtbf_secs: f64,
    /// Outage duration per flap, seconds.
    pub duration_secs: f64,
    pub horizon: SimTime,
}

impl FlapProcess {
    /// Back-derive the per-link MTBF from a cluster-aggregate flap rate
    /// (flaps per minute across `num_links` links).
    pub fn from_aggregate_rate(
        flaps_per_minute: f64,
        num_links: usize,
        duration_secs: f64,
        horizon: SimTime,
    ) -> Self {
        let per_link_rate = flaps_per_minute / 60.0 / num_links as f64;
        FlapProcess {
            mtbf_secs: 1.0 / per_link_rate,
            duration_secs,
            horizon,
        }
    }
}

/// One contiguous outage window on one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outage {
    pub link: LinkId,
    pub down: SimTime,
    pub up: SimTime,
}

/// Sample a flap schedule: exponential inter-onset gaps per link,
/// overlapping windows on one link merged.
pub fn sample_flap_schedule(
    process: &FlapProcess,
    links: &[LinkId],
    rng: &mut impl Rng,
) -> Vec<Outage> {
    assert!(process.mtbf_secs > 0.0 && process.duration_secs > 0.0);
    let horizon_s = process.horizon.as_secs_f64();
    let dur_ns = (process.duration_secs * 1e9) as u64;
    let mut outages = Vec::new();
    for &link in links {
        let mut t = 0.0f64;
        let mut windows: Vec<(u64, u64)> = Vec::new();
        loop {
            // Exponential gap with mean MTBF.
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            t += -process.mtbf_secs * u.ln();
            if t >= horizon_s {
                break;
            }
            let down = (t * 1e9) as u64;
            let up = down + dur_ns;
            match windows.last_mut() {
                Some(last) if down <= last.1 => last.1 = last.1.max(up),
                _ => windows.push((down, up)),
            }
        }
        for (down, up) in windows {
            outages.push(Outage {
                link,
                down: SimTime(down),
                up: SimTime(up),
            });
        }
    }
    outages.sort_by_key(|o| (o.down, o.link));
    outages
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub enum FailureScope {
    LeafUplinks,
    AllFabric,
}

/// Either an explicit link list or a sampled fraction of a scope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StaticFailurePlan {
    Links(Vec<LinkId>),
    Sampled { scope: FailureScope, fraction: f64 },
}

/// Apply permanent failures to a topology snapshot. The caller recomputes
/// ECMP groups (implicit: groups are derived from live links) and AR
/// weights afterwards. Returns the failed link list alongside the topology;
/// fully disconnected destinations are allowed but flagged.
pub fn apply_static_failures(
    topo: &Topology,
    plan: &StaticFailurePlan,
    rng: &mut impl Rng,
) -> Result<(Topology, Vec<LinkId>), FaultError> {
    let mut t = topo.clone();
    let chosen: Vec<LinkId> = match plan {
        StaticFailurePlan::Links(ids) => {
            for &id in ids {
                if id.0 >= t.links.len() {
                    return Err(FaultError::Infeasible(format!("link {} does not exist", id.0)));
                }
            }
            ids.clone()
        }
        StaticFailurePlan::Sampled { scope, fraction } => {
            if !(0.0..1.0).contains(fraction) {
                return Err(FaultError::Infeasible(format!(
                    "fraction {fraction} outside [0, 1)"
                )));
            }
            let mut pool: Vec<LinkId> = t
                .links
                .iter()
                .filter(|l| l.is_up())
                .filter(|l| match (scope, l.kind) {
                    (FailureScope::LeafUplinks, LinkKind::LeafSpine { .. }) => true,
                    (FailureScope::AllFabric, LinkKind::LeafSpine { .. })
                    | (FailureScope::AllFabric, LinkKind::SpineCore { .. }) => true,
                    _ => false,
                })
                .map(|l| l.id)
                .collect();
            pool.shuffle(rng);
            let n = (fraction * pool.len() as f64).round() as usize;
            pool.truncate(n);
            pool
        }
    };
    for &id in &chosen {
        t.set_link_state(id, LinkState::Down);
    }
    Ok((t, chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_multiplane_fat_tree, FatTreeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> FatTreeSpec {
        FatTreeSpec {
            planes: 1,
            leaves_per_plane: 4,
            spines_per_plane: 4,
            hosts_per_leaf: 4,
            parallel_links: 2,
            nic_plane_gbps: 200,
            fabric_gbps: 0,
            host_link_delay_ns: 500,
            fabric_link_delay_ns: 500,
            pods: 1,
        }
    }

    #[test]
    fn overlapping_flaps_merge() {
        // MTBF close to the duration forces overlaps.
        let process = FlapProcess {
            mtbf_secs: 1.0,
            duration_secs: 5.0,
            horizon: SimTime::from_secs(100),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let outages = sample_flap_schedule(&process, &[LinkId(0)], &mut rng);
        for w in outages.windows(2) {
            assert!(w[1].down > w[0].up, "outages on one link must not overlap");
        }
    }

    #[test]
    fn schedules_reproducible_by_seed() {
        let process = FlapProcess {
            mtbf_secs: 30.0,
            duration_secs: 1.0,
            horizon: SimTime::from_secs(300),
        };
        let links: Vec<LinkId> = (0..20).map(LinkId).collect();
        let a = sample_flap_schedule(&process, &links, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_flap_schedule(&process, &links, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_mean_concurrent_down_links() {
        // Cluster aggregate 10 flaps/min, duration 10 s: expected concurrent
        // down count = (10/60)*10 ~= 1.67, independent of link count.
        let links: Vec<LinkId> = (0..200).map(LinkId).collect();
        let horizon = SimTime::from_secs(40_000);
        let process = FlapProcess::from_aggregate_rate(10.0, links.len(), 10.0, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let outages = sample_flap_schedule(&process, &links, &mut rng);
        // Integrate total down-time across links; mean concurrent =
        // total_down / horizon.
        let total_down_ns: u64 = outages.iter().map(|o| o.up.0 - o.down.0).sum();
        let mean = total_down_ns as f64 / horizon.as_ns() as f64;
        let expect = 10.0 / 60.0 * 10.0;
        assert!(
            (mean - expect).abs() / expect < 0.05,
            "mean concurrent down {mean} vs expected {expect}"
        );
    }

    #[test]
    fn concurrent_count_is_poisson_chi_square() {
        let links: Vec<LinkId> = (0..500).map(LinkId).collect();
        let horizon = SimTime::from_secs(100_000);
        let process = FlapProcess::from_aggregate_rate(10.0, links.len(), 10.0, horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let outages = sample_flap_schedule(&process, &links, &mut rng);
        // Sample the concurrent-down count at regular instants well separated
        // compared to the flap duration.
        let lambda: f64 = 10.0 / 60.0 * 10.0;
        let step = SimTime::from_secs(50);
        let mut counts: Vec<usize> = Vec::new();
        let mut t = step;
        while t < horizon {
            let c = outages.iter().filter(|o| o.down <= t && t < o.up).count();
            counts.push(c);
            t = t + step;
        }
        // Chi-square against Poisson(lambda) over bins {0,1,2,3,4+}.
        let n = counts.len() as f64;
        let mut observed = [0f64; 5];
        for &c in &counts {
            observed[c.min(4)] += 1.0;
        }
        let mut p = (-lambda).exp();
        let mut expected = [0f64; 5];
        let mut cum = 0.0;
        for (k, e) in expected.iter_mut().enumerate().take(4) {
            *e = p * n;
            cum += p;
            p *= lambda / (k as f64 + 1.0);
        }
        expected[4] = (1.0 - cum) * n;
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e).powi(2) / e)
            .sum();
        // 4 dof, p > 0.01 requires chi2 < 13.28.
        assert!(chi2 < 13.28, "chi2 = {chi2}");
    }

    #[test]
    fn zero_fraction_is_identity() {
        let topo = build_multiplane_fat_tree(&spec()).unwrap();
        let plan = StaticFailurePlan::Sampled {
            scope: FailureScope::LeafUplinks,
            fraction: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (t, failed) = apply_static_failures(&topo, &plan, &mut rng).unwrap();
        assert!(failed.is_empty());
        assert!(t.links.iter().all(|l| l.is_up()));
    }

    #[test]
    fn fraction_removes_exact_capacity() {
        let topo = build_multiplane_fat_tree(&spec()).unwrap();
        let total_up: usize = topo.fabric_links().count();
        let plan = StaticFailurePlan::Sampled {
            scope: FailureScope::LeafUplinks,
            fraction: 0.10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (t, failed) = apply_static_failures(&topo, &plan, &mut rng).unwrap();
        assert_eq!(failed.len(), (total_up as f64 * 0.10).round() as usize);
        let live: usize = t.fabric_links().filter(|l| l.is_up()).count();
        assert_eq!(live, total_up - failed.len());
    }

    #[test]
    fn link_state_round_trips_after_all_ups() {
        let topo = build_multiplane_fat_tree(&spec()).unwrap();
        let mut t = topo.clone();
        let ids: Vec<LinkId> = t.fabric_links().take(5).map(|l| l.id).collect();
        for &id in &ids {
            t.set_link_state(id, LinkState::Down);
        }
        for &id in &ids {
            t.set_link_state(id, LinkState::Up);
        }
        assert!(t.links.iter().all(|l| l.is_up()));
    }
}
