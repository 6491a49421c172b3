//! Scenario-driven command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime invariant
//! violation (e.g. drops detected in a lossless failure-free run).

use clap::{Args, Parser, Subcommand};
use planesim::config::{build_scenario, RunConfig};
use planesim::controlplane::{balls_in_bins, compute_weights, max_flow};
use planesim::engine::RngFactory;
use planesim::largescale::{
    ring_fleet_p99, sample_fleet_flaps, switch_ar_delay_bench, All2AllLatencyModel,
    RingFleetParams, SwitchBenchParams,
};
use planesim::report;
use planesim::sim::Simulator;
use planesim::telemetry::percentile;
use planesim::topology::{build_multiplane_fat_tree, FatTreeSpec};
use planesim::units::{Rate, SimTime};
use rand::Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "planesim", about = "Multi-plane fabric simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario and write its artifact directory.
    Run(RunArgs),
    /// Run a parameter grid and merge the per-run summaries into one CSV.
    Sweep(SweepArgs),
    /// Control-plane analytics without a simulation run.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Artifact output directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ConfigSource,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid axis, e.g. --grid "switch.ar_period_ns=100,500,1000".
    /// Multiple axes form a cartesian product.
    #[arg(long)]
    grid: Vec<String>,
}

#[derive(Args)]
struct ConfigSource {
    /// Scenario config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset name (see presets/).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    what: AnalyzeCommand,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Leaf-pair max-flow distribution under sampled fabric failures.
    BallsInBins {
        #[arg(long, default_value_t = 32)]
        leaves: usize,
        #[arg(long, default_value_t = 16)]
        spines: usize,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 32)]
        buckets: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Weighted-AR table for a (possibly degraded) topology.
    Weights {
        #[arg(long)]
        config: PathBuf,
    },
    /// Single leaf-pair max-flow value.
    Maxflow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        plane: usize,
        #[arg(long)]
        src_leaf: usize,
        #[arg(long)]
        dst_leaf: usize,
    },
}

const PRESETS: &[(&str, &str)] = &[
    ("sendrecv", include_str!("../presets/sendrecv.toml")),
    ("fig1a", include_str!("../presets/fig1a.toml")),
    ("fig1b", include_str!("../presets/fig1b.toml")),
    ("fig1c", include_str!("../presets/fig1c.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
    ("failover", include_str!("../presets/failover.toml")),
    ("asymmetry", include_str!("../presets/asymmetry.toml")),
    ("isolation", include_str!("../presets/isolation.toml")),
    ("scurve", include_str!("../presets/scurve.toml")),
    ("convergence", include_str!("../presets/convergence.toml")),
];

fn load_config(source: &ConfigSource) -> Result<String, String> {
    match (&source.config, &source.preset) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display())),
        (None, Some(name)) => PRESETS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                format!("unknown preset {name}; available: {}", names.join(", "))
            }),
        (None, None) => Err("one of --config or --preset is required".into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match result {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<ExitCode, (u8, String)>;

fn config_err(msg: impl Into<String>) -> (u8, String) {
    (2, msg.into())
}

fn runtime_err(msg: impl Into<String>) -> (u8, String) {
    (3, msg.into())
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let text = load_config(&args.source).map_err(config_err)?;
    let mut cfg = RunConfig::from_toml(&text).map_err(|e| config_err(e.to_string()))?;
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    execute_run(&cfg, &args.out_dir)
}

/// Execute one resolved config into `dir`. Returns the manifest digest via
/// stdout; maps runtime invariant violations to exit 3.
fn execute_run(cfg: &RunConfig, dir: &Path) -> CmdResult {
    let echo = cfg.to_toml();
    let digest = match cfg {
        RunConfig::Packet(c) => {
            let built = build_scenario(c).map_err(|e| config_err(e.to_string()))?;
            let mut sim = Simulator::new(
                built.topo,
                built.params.clone(),
                built.messages,
                built.collectives.clone(),
                c.seed,
            );
            sim.set_weight_table(built.weights);
            sim.add_outages(&built.outages);
            let rep = sim.run();
            let digest = report::write_packet_artifacts(dir, &echo, &rep, &built.collectives)
                .map_err(|e| runtime_err(e.to_string()))?;
            if !rep.conservation_ok {
                return Err(runtime_err("byte conservation violated"));
            }
            if built.params.pfc_enabled && built.failure_free && rep.packets_dropped > 0 {
                return Err(runtime_err(format!(
                    "{} drops in a lossless failure-free run",
                    rep.packets_dropped
                )));
            }
            println!(
                "completed {}/{} messages, {} packets, digest {digest}",
                rep.messages_completed, rep.messages_total, rep.packets_delivered
            );
            digest
        }
        RunConfig::SwitchBench(c) => {
            let mut csv = String::from("delay_ns,p99_depth_bytes,mean_depth_bytes\n");
            for &d in &c.delays_ns {
                let p = SwitchBenchParams {
                    ports: c.ports,
                    port_rate: Rate::from_gbps(c.port_gbps),
                    load: c.load,
                    packet_bytes: c.packet_bytes,
                    bucket_bytes: c.bucket_bytes.unwrap_or(c.packet_bytes),
                    buffer_bytes: c.buffer_bytes,
                    horizon: SimTime::from_ms(c.horizon_ms),
                    warmup: SimTime::from_ms(c.horizon_ms / 5),
                    sample_interval: SimTime::from_us(1),
                };
                let r = switch_ar_delay_bench(&p, SimTime::from_ns(d), c.seed);
                writeln!(csv, "{d},{:.0},{:.0}", r.p99_depth_bytes, r.mean_depth_bytes)
                    .unwrap();
            }
            report::write_study_artifacts(dir, &echo, "switch_bench.csv", &csv)
                .map_err(|e| runtime_err(e.to_string()))?
        }
        RunConfig::All2allModel(c) => {
            let model = All2AllLatencyModel {
                ranks: c.ranks,
                line_rate_bps: c.line_rate_gbytes * 1e9,
                pipeline_window: c.pipeline_window,
            };
            let mut csv = String::from("oneway_us,size_bytes,cct_us,busbw_gbytes\n");
            for &l in &c.oneway_latencies_us {
                for &s in &c.sizes_bytes {
                    let lat = SimTime::from_us(l);
                    let cct = model.cct_secs(s as f64, lat);
                    writeln!(
                        csv,
                        "{l},{s},{:.3},{:.4}",
                        cct * 1e6,
                        model.busbw(s as f64, lat) / 1e9
                    )
                    .unwrap();
                }
            }
            report::write_study_artifacts(dir, &echo, "all2all_model.csv", &csv)
                .map_err(|e| runtime_err(e.to_string()))?
        }
        RunConfig::BallsInBins(c) => {
            let csv = balls_csv(
                c.leaves,
                c.spines,
                c.parallel_links,
                &c.fail_fractions,
                c.trials,
                c.buckets,
                c.seed,
            );
            report::write_study_artifacts(dir, &echo, "balls.csv", &csv)
                .map_err(|e| runtime_err(e.to_string()))?
        }
        RunConfig::Fleet(c) => {
            let p = RingFleetParams {
                collectives: c.collectives,
                ranks_per_collective: c.ranks_per_collective,
                planes: c.planes,
                iteration_time: SimTime::from_ms(c.iteration_ms),
                horizon: SimTime::from_secs(c.horizon_s),
                flaps_per_second: c.flaps_per_second,
                flap_duration: SimTime::from_ns((c.flap_duration_s * 1e9) as u64),
            };
            let flaps = sample_fleet_flaps(&p, c.seed);
            let mut csv =
                String::from("convergence_ms,p99_slowdown,mean_slowdown,iterations\n");
            for &cms in &c.convergence_ms {
                let r = ring_fleet_p99(&p, &flaps, SimTime::from_ms(cms));
                writeln!(
                    csv,
                    "{cms},{:.4},{:.4},{}",
                    r.p99_slowdown, r.mean_slowdown, r.iterations
                )
                .unwrap();
            }
            report::write_study_artifacts(dir, &echo, "fleet.csv", &csv)
                .map_err(|e| runtime_err(e.to_string()))?
        }
    };
    let _ = digest;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let text = load_config(&args.source).map_err(config_err)?;
    let base: toml::Value =
        toml::from_str(&text).map_err(|e| config_err(format!("config parse error: {e}")))?;
    // Validate the base config up front.
    RunConfig::from_toml(&text).map_err(|e| config_err(e.to_string()))?;

    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for g in &args.grid {
        let (key, vals) = g
            .split_once('=')
            .ok_or_else(|| config_err(format!("grid axis {g:?} missing '='")))?;
        let vals: Vec<String> = vals.split(',').map(|s| s.trim().to_string()).collect();
        if vals.is_empty() || vals.iter().any(|v| v.is_empty()) {
            return Err(config_err(format!("grid axis {key} has empty values")));
        }
        axes.push((key.trim().to_string(), vals));
    }

    let header_keys: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
    let mut merged = String::new();
    writeln!(
        merged,
        "{}seed,status,messages_total,messages_completed,packets_dropped,p99_cct_ns,min_busbw_gbps",
        header_keys
            .iter()
            .map(|k| format!("{k},"))
            .collect::<String>()
    )
    .unwrap();

    let points = cartesian(&axes);
    let base_seed = args.seed.unwrap_or_else(|| {
        RunConfig::from_toml(&text).map(|c| c.seed()).unwrap_or(0)
    });
    let mut any_failed = false;
    for (i, point) in points.iter().enumerate() {
        let mut doc = base.clone();
        for ((key, _), val) in axes.iter().zip(point.iter()) {
            set_path(&mut doc, key, val)
                .map_err(|e| config_err(format!("grid key {key}: {e}")))?;
        }
        let text = toml::to_string(&doc).map_err(|e| config_err(e.to_string()))?;
        // Keep derived seeds within TOML's integer range for the echo.
        let seed: u64 = RngFactory::new(base_seed)
            .stream_indexed("sweep", i as u64)
            .gen::<u64>()
            >> 1;
        let row_prefix: String = point.iter().map(|v| format!("{v},")).collect();
        let run_dir = args.out_dir.join(format!("run_{i:03}"));
        let row = match run_grid_point(&text, seed, &run_dir) {
            Ok(stats) => format!("{row_prefix}{seed},ok,{stats}"),
            Err((_, msg)) => {
                any_failed = true;
                let msg = msg.replace([',', '\n'], ";");
                format!("{row_prefix}{seed},error: {msg},,,,,")
            }
        };
        merged.push_str(&row);
        merged.push('\n');
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| runtime_err(e.to_string()))?;
    std::fs::write(args.out_dir.join("sweep.csv"), merged)
        .map_err(|e| runtime_err(e.to_string()))?;
    if any_failed {
        Err(runtime_err("one or more sweep rows failed"))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

/// Run one grid point; returns the merged-CSV stat columns.
fn run_grid_point(text: &str, seed: u64, dir: &Path) -> Result<String, (u8, String)> {
    let mut cfg = RunConfig::from_toml(text).map_err(|e| config_err(e.to_string()))?;
    cfg.set_seed(seed);
    match &cfg {
        RunConfig::Packet(c) => {
            let built = build_scenario(c).map_err(|e| config_err(e.to_string()))?;
            let collectives = built.collectives.clone();
            let params = built.params.clone();
            let mut sim = Simulator::new(
                built.topo,
                built.params,
                built.messages,
                built.collectives,
                seed,
            );
            sim.set_weight_table(built.weights);
            sim.add_outages(&built.outages);
            let rep = sim.run();
            report::write_packet_artifacts(dir, &cfg.to_toml(), &rep, &collectives)
                .map_err(|e| runtime_err(e.to_string()))?;
            if !rep.conservation_ok {
                return Err(runtime_err("byte conservation violated"));
            }
            if params.pfc_enabled && built.failure_free && rep.packets_dropped > 0 {
                return Err(runtime_err("drops in a lossless failure-free run"));
            }
            let ccts: Vec<f64> = rep.ccts.iter().map(|r| r.cct().as_ns() as f64).collect();
            let p99 = percentile(&ccts, 0.99).unwrap_or(0.0);
            let min_busbw = rep
                .ccts
                .iter()
                .filter_map(|r| {
                    collectives.iter().find(|c| c.id == r.collective).map(|c| {
                        planesim::workloads::bus_bandwidth(
                            c.kind,
                            c.ranks.len(),
                            c.total_bytes,
                            r.cct(),
                        ) * 8.0
                    })
                })
                .fold(f64::INFINITY, f64::min);
            let min_busbw = if min_busbw.is_finite() { min_busbw } else { 0.0 };
            Ok(format!(
                "{},{},{},{:.0},{:.3}",
                rep.messages_total,
                rep.messages_completed,
                rep.packets_dropped,
                p99,
                min_busbw
            ))
        }
        _ => {
            execute_run(&cfg, dir)?;
            Ok("0,0,0,0,0".to_string())
        }
    }
}

fn cartesian(axes: &[(String, Vec<String>)]) -> Vec<Vec<String>> {
    if axes.is_empty() {
        return Vec::new();
    }
    let mut points: Vec<Vec<String>> = vec![Vec::new()];
    for (_, vals) in axes {
        let mut next = Vec::with_capacity(points.len() * vals.len());
        for p in &points {
            for v in vals {
                let mut q = p.clone();
                q.push(v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Set a dotted key path inside a TOML document, inferring the value type.
fn set_path(doc: &mut toml::Value, path: &str, raw: &str) -> Result<(), String> {
    let val = if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    };
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| format!("{} is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), val);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

fn balls_csv(
    leaves: usize,
    spines: usize,
    parallel: usize,
    fractions: &[f64],
    trials: usize,
    buckets: usize,
    seed: u64,
) -> String {
    let spec = FatTreeSpec {
        planes: 1,
        leaves_per_plane: leaves,
        spines_per_plane: spines,
        hosts_per_leaf: 1,
        parallel_links: parallel,
        nic_plane_gbps: 100,
        fabric_gbps: 0,
        host_link_delay_ns: 500,
        fabric_link_delay_ns: 500,
        pods: 1,
    };
    let mut csv = String::from("fail_fraction,pct_bucket,avg_pair_count\n");
    for &f in fractions {
        let rows = balls_in_bins(
            &spec,
            f,
            trials,
            buckets,
            &mut RngFactory::new(seed).stream("balls"),
        );
        for r in rows {
            writeln!(csv, "{f},{:.4},{:.4}", r.bucket_low_frac, r.avg_pair_count).unwrap();
        }
    }
    csv
}

fn cmd_analyze(args: AnalyzeArgs) -> CmdResult {
    match args.what {
        AnalyzeCommand::BallsInBins {
            leaves,
            spines,
            parallel,
            fraction,
            trials,
            buckets,
            seed,
        } => {
            if !(0.0..1.0).contains(&fraction) {
                return Err(config_err("fraction: outside [0, 1)"));
            }
            print!(
                "{}",
                balls_csv(leaves, spines, parallel, &[fraction], trials, buckets, seed)
            );
            Ok(ExitCode::SUCCESS)
        }
        AnalyzeCommand::Weights { config } => {
            let topo = topology_from_config(&config)?;
            let table = compute_weights(&topo);
            let leaves = topo.spec.pods * topo.spec.leaves_per_plane;
            println!("plane,leaf,dest_leaf,link,weight");
            for plane in 0..topo.planes() {
                for leaf in 0..leaves {
                    for dest in 0..leaves {
                        if dest == leaf {
                            continue;
                        }
                        for &l in &topo.uplinks[plane][leaf] {
                            let w = table.weight_of(&topo, plane, leaf, dest, l);
                            println!("{plane},{leaf},{dest},{},{w:.4}", l.0);
                        }
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        AnalyzeCommand::Maxflow {
            config,
            plane,
            src_leaf,
            dst_leaf,
        } => {
            let topo = topology_from_config(&config)?;
            if plane >= topo.planes() {
                return Err(config_err("plane: does not exist"));
            }
            let leaves = topo.spec.pods * topo.spec.leaves_per_plane;
            if src_leaf >= leaves || dst_leaf >= leaves || src_leaf == dst_leaf {
                return Err(config_err("src_leaf/dst_leaf: invalid leaf pair"));
            }
            let f = max_flow(&topo, plane, src_leaf, dst_leaf);
            println!("plane,src_leaf,dst_leaf,max_flow_bps");
            println!("{plane},{src_leaf},{dst_leaf},{f}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Load a packet config and resolve its (possibly degraded) topology.
fn topology_from_config(path: &Path) -> Result<planesim::topology::Topology, (u8, String)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config: {e}")))?;
    let cfg = RunConfig::from_toml(&text).map_err(|e| config_err(e.to_string()))?;
    match cfg {
        RunConfig::Packet(c) => {
            let built = build_scenario(&c).map_err(|e| config_err(e.to_string()))?;
            Ok(built.topo)
        }
        _ => {
            // Study modes: fall back to the raw topology table if present.
            let doc: toml::Value = toml::from_str(&text).unwrap();
            let spec: FatTreeSpec = doc
                .get("topology")
                .cloned()
                .ok_or_else(|| config_err("config has no [topology] table"))?
                .try_into()
                .map_err(|e| config_err(format!("topology: {e}")))?;
            build_multiplane_fat_tree(&spec).map_err(|e| config_err(e.to_string()))
        }
    }
}
