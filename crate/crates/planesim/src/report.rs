//! CSV artifact emission and the content-digest manifest used by the
//! determinism check.

use crate::sim::RunReport;
use crate::telemetry::PercentileSummary;
use crate::units::Rate;
use crate::workloads::{bus_bandwidth, CollectiveInstance};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// Write the packet-run artifact set and return the manifest digest.
pub fn write_packet_artifacts(
    dir: &Path,
    resolved_config: &str,
    report: &RunReport,
    collectives: &[CollectiveInstance],
) -> io::Result<String> {
    fs::create_dir_all(dir)?;

    // cct.csv
    let mut cct = String::from(
        "collective,kind,ranks,total_bytes,start_ns,end_ns,cct_ns,busbw_gbps\n",
    );
    for r in &report.ccts {
        let inst = collectives.iter().find(|c| c.id == r.collective);
        let (kind, n, total) = inst
            .map(|c| (format!("{:?}", c.kind), c.ranks.len(), c.total_bytes))
            .unwrap_or(("Unknown".into(), 0, 0));
        let busbw = inst
            .map(|c| bus_bandwidth(c.kind, n, total, r.cct()) * 8.0)
            .unwrap_or(0.0);
        writeln!(
            cct,
            "{},{},{},{},{},{},{},{:.4}",
            r.collective,
            kind,
            n,
            total,
            r.start.as_ns(),
            r.end.as_ns(),
            r.cct().as_ns(),
            busbw
        )
        .unwrap();
    }
    fs::write(dir.join("cct.csv"), cct)?;

    // summary.csv
    let mut summary = String::from("metric,p01,p50,p99,mean,n\n");
    let mut add = |name: &str, samples: &[f64]| {
        if let Some(s) = PercentileSummary::from_samples(name, samples) {
            writeln!(
                summary,
                "{},{:.3},{:.3},{:.3},{:.3},{}",
                s.metric, s.p01, s.p50, s.p99, s.mean, s.n
            )
            .unwrap();
        }
    };
    let cct_ns: Vec<f64> = report.ccts.iter().map(|r| r.cct().as_ns() as f64).collect();
    add("cct_ns", &cct_ns);
    let lat: Vec<f64> = report.latency_ns.iter().map(|&v| v as f64).collect();
    add("packet_latency_ns", &lat);
    let tx: Vec<f64> = report
        .host_tx_bytes_per_plane
        .iter()
        .map(|p| p.iter().sum::<u64>() as f64)
        .collect();
    add("host_tx_bytes", &tx);
    fs::write(dir.join("summary.csv"), summary)?;

    // hft.csv
    let mut hft = String::from("time_ns,entity,metric,value\n");
    for row in &report.hft {
        writeln!(hft, "{},{},{},{}", row.time.as_ns(), row.entity, row.metric, row.value)
            .unwrap();
    }
    fs::write(dir.join("hft.csv"), hft)?;

    // hist.csv
    let mut hist = String::from("entity,bucket_low_frac,count\n");
    for h in &report.nic_histograms {
        for (i, &c) in h.buckets.iter().enumerate() {
            writeln!(
                hist,
                "{},{:.4},{}",
                h.entity,
                i as f64 / h.num_buckets as f64,
                c
            )
            .unwrap();
        }
    }
    fs::write(dir.join("hist.csv"), hist)?;

    // flaps.csv
    let mut flaps = String::from("link,down_ns,up_ns\n");
    for o in &report.outages {
        writeln!(flaps, "{},{},{}", o.link.0, o.down.as_ns(), o.up.as_ns()).unwrap();
    }
    fs::write(dir.join("flaps.csv"), flaps)?;

    fs::write(dir.join("config.toml"), resolved_config)?;
    write_manifest(dir)
}

/// Write a generic study-mode artifact set: one CSV plus the config echo.
pub fn write_study_artifacts(
    dir: &Path,
    resolved_config: &str,
    csv_name: &str,
    csv: &str,
) -> io::Result<String> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(csv_name), csv)?;
    fs::write(dir.join("config.toml"), resolved_config)?;
    write_manifest(dir)
}

/// Hash every artifact (except the manifest itself) in name order and write
/// manifest.txt listing per-file digests plus the combined digest. Returns
/// the combined digest.
pub fn write_manifest(dir: &Path) -> io::Result<String> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    let mut combined = Sha256::new();
    let mut body = String::new();
    for n in &names {
        let data = fs::read(dir.join(n))?;
        let d = hex(&Sha256::digest(&data));
        combined.update(n.as_bytes());
        combined.update(d.as_bytes());
        writeln!(body, "{d}  {n}").unwrap();
    }
    let digest = hex(&combined.finalize());
    writeln!(body, "{digest}  TOTAL").unwrap();
    fs::write(dir.join("manifest.txt"), body)?;
    Ok(digest)
}

pub fn read_manifest_digest(dir: &Path) -> io::Result<String> {
    let text = fs::read_to_string(dir.join("manifest.txt"))?;
    text.lines()
        .find(|l| l.ends_with("  TOTAL"))
        .map(|l| l.split_whitespace().next().unwrap_or("").to_string())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "manifest has no TOTAL line"))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Nic line-rate helper for busbw conversions in study CSVs.
pub fn gbps(rate: Rate) -> f64 {
    rate.as_gbps_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::SimTime;
    use crate::workloads::CctRecord;
    use crate::telemetry::CollectiveKind;

    fn dummy_report() -> RunReport {
        RunReport {
            mechanism: crate::sim::Mechanism::Spx,
            seed: 1,
            end_time: SimTime::from_us(10),
            packets_injected: 3,
            packets_retransmitted: 0,
            packets_delivered: 3,
            duplicates: 0,
            packets_dropped: 0,
            bytes_injected: 3000,
            bytes_delivered_unique: 3000,
            messages_completed: 1,
            messages_total: 1,
            ccts: vec![CctRecord {
                collective: 0,
                start: SimTime::ZERO,
                end: SimTime::from_us(10),
            }],
            collectives: Vec::new(),
            host_tx_bytes_per_plane: vec![vec![3000]],
            host_rx_bytes: vec![0, 3000],
            link_counters: Vec::new(),
            nic_histograms: Vec::new(),
            hft: Vec::new(),
            latency_ns: vec![1000, 1200, 1100],
            outages: Vec::new(),
            conservation_ok: true,
            total_drops: 0,
        }
    }

    #[test]
    fn artifacts_written_and_digest_stable() {
        let tmp = tempfile::tempdir().unwrap();
        let colls = vec![CollectiveInstance {
            id: 0,
            kind: CollectiveKind::SendReceive,
            ranks: vec![0, 1],
            total_bytes: 3000,
        }];
        let d1 =
            write_packet_artifacts(tmp.path(), "seed = 1\n", &dummy_report(), &colls).unwrap();
        let d2 =
            write_packet_artifacts(tmp.path(), "seed = 1\n", &dummy_report(), &colls).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(read_manifest_digest(tmp.path()).unwrap(), d1);
        for f in ["cct.csv", "summary.csv", "hft.csv", "hist.csv", "flaps.csv", "config.toml"] {
            assert!(tmp.path().join(f).exists(), "{f} missing");
        }
        let cct = std::fs::read_to_string(tmp.path().join("cct.csv")).unwrap();
        assert!(cct.lines().count() == 2);
        assert!(cct.contains("10000"), "{cct}");
    }

    #[test]
    fn digest_changes_with_content() {
        let tmp = tempfile::tempdir().unwrap();
        let d1 = write_packet_artifacts(tmp.path(), "seed = 1\n", &dummy_report(), &[]).unwrap();
        let mut r = dummy_report();
        r.ccts[0].end = SimTime::from_us(11);
        let d2 = write_packet_artifacts(tmp.path(), "seed = 1\n", &r, &[]).unwrap();
        assert_ne!(d1, d2);
    }
}
