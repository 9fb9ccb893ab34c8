//! `vecsim` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{mpsc, Arc, Mutex};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use vecsim::cache::{CachePolicyKind, CachePolicyRegistry};
use vecsim::engine::{RunReport, Simulation, Status};
use vecsim::event::{read_ndjson, write_ndjson};
use vecsim::http::ControlServer;
use vecsim::metrics::{anchor_ticks, recompute, MetricsFrame};
use vecsim::offload::OffloadRegistry;
use vecsim::scenario::{Scenario, ScenarioError};
use vecsim::synthgen::GB;

#[derive(Parser)]
#[command(name = "vecsim", version, about = "Vehicular edge computing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Table2,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print or write a scenario skeleton.
    Generate {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Check a scenario file and list every violation.
    Validate { scenario: PathBuf },
    /// Run one scenario and write logs and reports.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stepping: Option<u64>,
        /// Serve status and controls on this address, e.g. 127.0.0.1:8080.
        #[arg(long)]
        http: Option<String>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run every cache policy at every cache size and write a summary table.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stepping: Option<u64>,
        /// RSU cache sizes in GB.
        #[arg(long, value_delimiter = ',', default_values_t = [4u64, 8, 16])]
        sizes: Vec<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Re-derive metrics from a run directory's event log.
    Report {
        dir: PathBuf,
        /// Where to write the frames; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Runtime(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Generate { preset, seed, out, overwrite } => {
            let mut s = match preset {
                Preset::Desk => Scenario::desk(),
                Preset::Table2 => Scenario::table2(),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            match out {
                Some(path) => {
                    if path.exists() && !overwrite {
                        return Err(io(format!("{} exists; pass --overwrite", path.display())));
                    }
                    fs::write(&path, s.echo()).map_err(io)
                }
                None => {
                    print!("{}", s.echo());
                    Ok(())
                }
            }
        }
        Cmd::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            println!("ok: {} (seed {}, {} ticks)", s.name, s.seed, s.clock.horizon);
            Ok(())
        }
        Cmd::Run { scenario, out, seed, stepping, http, overwrite } => {
            let s = load_with(&scenario, seed, stepping)?;
            prepare_dir(&out, overwrite)?;
            let report = execute(&s, http.as_deref())?;
            write_run(&out, &report)?;
            let g = &report.final_frame().expect("a run always has a frame").global;
            println!(
                "{}: {} ticks, {} issued, {} finished, hit rate {:.2}%, log {}",
                report.name,
                report.ticks,
                g.issued,
                g.finished,
                g.hit_rate * 100.0,
                &report.log_hash()[..16]
            );
            Ok(())
        }
        Cmd::Sweep { scenario, out, seed, stepping, sizes, overwrite } => {
            let base = load_with(&scenario, seed, stepping)?;
            prepare_dir(&out, overwrite)?;
            let mut rows = Vec::new();
            for &gb in &sizes {
                for policy in CachePolicyKind::BASELINES {
                    let mut s = base.clone();
                    s.world.rsu_cache_bytes = gb * GB;
                    s.cache.policy = policy.clone();
                    let report = execute(&s, None)?;
                    let g = &report.final_frame().expect("a run always has a frame").global;
                    rows.push(SummaryRow::new(policy.label(), gb, g));
                    eprintln!("{} {gb} GB: hit rate {:.2}%", policy.label(), g.hit_rate * 100.0);
                }
            }
            write_summary(&out.join("summary.csv"), &rows)?;
            let meta = serde_json::json!({
                "scenario_hash": base.hash(),
                "seed": base.seed,
                "sizes_gb": sizes,
                "rows": rows,
            });
            fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&meta).map_err(io)? + "\n").map_err(io)?;
            fs::write(out.join("scenario.toml"), base.echo()).map_err(io)?;
            Ok(())
        }
        Cmd::Report { dir, out, overwrite } => {
            let echo = fs::read_to_string(dir.join("scenario.toml")).map_err(io)?;
            let s = Scenario::from_toml_str(&echo)?;
            let file = fs::File::open(dir.join("events.ndjson")).map_err(io)?;
            let events = read_ndjson(std::io::BufReader::new(file)).map_err(io)?;
            let anchors = anchor_ticks(s.clock.horizon, s.metrics.anchor_every);
            let frames = recompute(&events, &s.metrics, &anchors);
            let text = frames_ndjson(&frames)?;
            match out {
                Some(path) => {
                    if path.exists() && !overwrite {
                        return Err(io(format!("{} exists; pass --overwrite", path.display())));
                    }
                    fs::write(path, text).map_err(io)
                }
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn load_with(path: &Path, seed: Option<u64>, stepping: Option<u64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(d) = stepping {
        s.clock.stepping = d;
    }
    s.check(&CachePolicyRegistry::default(), &OffloadRegistry::default())?;
    Ok(s)
}

fn prepare_dir(out: &Path, overwrite: bool) -> Result<(), Failure> {
    if out.exists() {
        let empty = out.read_dir().map_err(io)?.next().is_none();
        if !empty && !overwrite {
            return Err(io(format!("{} exists; pass --overwrite", out.display())));
        }
    }
    fs::create_dir_all(out).map_err(io)
}

fn execute(s: &Scenario, http: Option<&str>) -> Result<RunReport, Failure> {
    let mut sim = Simulation::new(s).map_err(|e| match e {
        vecsim::engine::EngineError::Scenario(e) => Failure::from(e),
        other => Failure::Runtime(other.to_string()),
    })?;
    let Some(addr) = http else { return Ok(sim.run()) };
    let status = Arc::new(Mutex::new(Status::default()));
    let (tx, rx) = mpsc::channel();
    sim.attach_control(rx);
    sim.attach_status(Arc::clone(&status));
    let server = ControlServer::start(addr, status, tx).map_err(io)?;
    eprintln!("control endpoint on http://{}", server.addr());
    let report = sim.run();
    server.shutdown();
    Ok(report)
}

fn frames_ndjson(frames: &[MetricsFrame]) -> Result<String, Failure> {
    let mut text = String::new();
    for f in frames {
        text.push_str(&serde_json::to_string(f).map_err(io)?);
        text.push('\n');
    }
    Ok(text)
}

fn write_run(out: &Path, r: &RunReport) -> Result<(), Failure> {
    let mut events = fs::File::create(out.join("events.ndjson")).map_err(io)?;
    write_ndjson(&r.events, &mut events).map_err(io)?;
    events.flush().map_err(io)?;
    fs::write(out.join("frames.ndjson"), frames_ndjson(&r.frames)?).map_err(io)?;
    fs::write(out.join("scenario.toml"), &r.scenario_echo).map_err(io)?;
    let g = &r.final_frame().expect("a run always has a frame").global;
    let policy = Scenario::from_toml_str(&r.scenario_echo)?;
    let row = SummaryRow::new(policy.cache.policy.label(), policy.world.rsu_cache_bytes / GB, g);
    write_summary(&out.join("summary.csv"), &[row])?;
    let report = serde_json::json!({
        "name": r.name,
        "seed": r.seed,
        "scenario_hash": r.scenario_hash,
        "log_hash": r.log_hash(),
        "ticks": r.ticks,
        "final": r.final_frame(),
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).map_err(io)? + "\n").map_err(io)
}

#[derive(Serialize)]
struct SummaryRow {
    policy: String,
    cache_size_gb: u64,
    hit_rate_pct: f64,
    avg_response_time_s: Option<f64>,
    qos: Option<f64>,
    space_utilization_pct: f64,
}

impl SummaryRow {
    fn new(policy: &str, gb: u64, g: &vecsim::metrics::GlobalMetrics) -> Self {
        Self {
            policy: policy.to_string(),
            cache_size_gb: gb,
            hit_rate_pct: g.hit_rate * 100.0,
            avg_response_time_s: g.avg_response_time_s,
            qos: g.qos,
            space_utilization_pct: g.space_utilization_pct,
        }
    }
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), Failure> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut text = String::from("policy,cache_size_gb,hit_rate_pct,avg_response_time_s,qos,space_utilization_pct\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{:.4},{},{},{:.4}\n",
            r.policy,
            r.cache_size_gb,
            r.hit_rate_pct,
            opt(r.avg_response_time_s),
            opt(r.qos),
            r.space_utilization_pct
        ));
    }
    fs::write(path, text).map_err(io)
}
