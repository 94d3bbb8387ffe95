//! `ranlat`: simulate uplink traces, rebuild packet journeys, decompose their
//! delays and check them against delay-violation targets.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 a requirement failed.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ranlat_core::analytics::offset_sweep;
use ranlat_core::report::{
    analyze, decompose_trace, parse_offsets, parse_targets, read_trace, write_ccdf_csv,
    write_decompositions_csv, write_histograms_csv, write_json_lines, write_sweep_csv, write_truth,
    Analysis, Report, ReportError, RunManifest, Target, DEFAULT_ANOMALY_THRESHOLD,
};
use ranlat_core::simulator::{simulate, ExperimentConfig};
use ranlat_core::trace_model::{write_trace, NANOS_PER_MS};

const DEFAULT_TARGETS: &str = "5:1e-2,15:1e-4";

#[derive(Parser)]
#[command(
    name = "ranlat",
    version,
    about = "Uplink RAN end-to-end delay decomposition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and write its trace and ground truth.
    Simulate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild packet journeys from a trace.
    Journeys {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ANOMALY_THRESHOLD)]
        anomaly_threshold: f64,
    },
    /// Rebuild journeys and decompose their delays.
    Decompose {
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full analysis of a trace against delay targets.
    Analyze {
        trace: PathBuf,
        /// `tau_ms:epsilon` pairs, comma separated.
        #[arg(long, default_value = DEFAULT_TARGETS)]
        targets: String,
        /// Experiment the trace came from; only its TDD layout is used.
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ANOMALY_THRESHOLD)]
        anomaly_threshold: f64,
    },
    /// Sweep the traffic arrival offset and pick the one with least queuing.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Offsets in ms: `a,b,c` or `start:stop:step`.
        #[arg(long, default_value = "0:9:1")]
        offsets: String,
        #[arg(long, default_value = DEFAULT_TARGETS)]
        targets: String,
        /// Also analyze a run at the chosen offset.
        #[arg(long)]
        analyze: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["a", "b", "c"])]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grant_prbs: Option<u32>,
    #[arg(long)]
    arrival_offset_ms: Option<f64>,
    #[arg(long)]
    harq_fail_prob: Option<f64>,
    #[arg(long)]
    packet_count: Option<u64>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                ExperimentConfig::from_toml(&read_text(path)?).map_err(ReportError::from)?
            }
            (None, Some(p)) => ExperimentConfig::preset(p).map_err(ReportError::from)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(p) = self.grant_prbs {
            cfg.radio.grant_prbs = p;
        }
        if let Some(ms) = self.arrival_offset_ms {
            if ms.is_nan() || ms < 0.0 {
                return Err(CliError::Usage(
                    "--arrival-offset-ms must be non-negative".into(),
                ));
            }
            cfg.traffic.arrival_offset_ns = (ms * NANOS_PER_MS as f64).round() as u64;
        }
        if let Some(p) = self.harq_fail_prob {
            cfg.radio.harq_fail_prob = p;
        }
        if let Some(n) = self.packet_count {
            cfg.traffic.packet_count = n;
        }
        cfg.validate().map_err(ReportError::from)?;
        Ok(cfg)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }
}

enum CliError {
    Usage(String),
    Data(ReportError),
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Argument(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

enum Outcome {
    Ok,
    DataProblem,
    RequirementFailed,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| {
        CliError::Data(ReportError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(ReportError::from)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

struct Run {
    started: Instant,
    command: Vec<String>,
}

impl Run {
    fn manifest(
        &self,
        config: Option<&ExperimentConfig>,
        inputs: Vec<PathBuf>,
        outputs: &[&str],
    ) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            config: config.cloned(),
            seed: config.map(|c| c.rng_seed),
            inputs,
            outputs: outputs.iter().map(PathBuf::from).collect(),
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        }
    }
}

fn load_trace(path: &Path) -> Result<Vec<ranlat_core::TraceEvent>, CliError> {
    Ok(read_trace(&read_text(path)?)?)
}

fn print_analysis(a: &Analysis) {
    let s = &a.summary;
    let ms = |ns: f64| ns / NANOS_PER_MS as f64;
    println!(
        "packets {}  anomalies {} ({:.4}%)",
        s.packet_count,
        s.anomaly_count,
        100.0 * s.anomaly_rate
    );
    let m = &s.means_ns;
    println!(
        "mean e2e {:.3} ms = core {:.3} + queue {:.3} + tx {:.3} + seg {:.3} + retx {:.3}",
        ms(m.e2e),
        ms(m.core),
        ms(m.queue),
        ms(m.tx),
        ms(m.seg),
        ms(m.retx)
    );
    for v in &s.verdicts {
        println!(
            "target {} ms @ {:e}: dvp {:.6} {}",
            ms(v.tau_ns as f64),
            v.epsilon,
            v.dvp,
            if v.pass { "PASS" } else { "FAIL" }
        );
    }
}

fn run_analysis(
    run: &Run,
    events: Vec<ranlat_core::TraceEvent>,
    targets: &[Target],
    cfg: &ExperimentConfig,
    threshold: f64,
    inputs: Vec<PathBuf>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let analysis = analyze(events, targets, &cfg.tdd, threshold)?;
    write_decompositions_csv(
        create(out, "decompositions.csv")?,
        &analysis.decompositions,
        &analysis.journeys,
    )?;
    write_json_lines(
        create(out, "decompositions.jsonl")?,
        &analysis.decompositions,
    )?;
    write_ccdf_csv(create(out, "ccdf.csv")?, &analysis.ccdf)?;
    write_histograms_csv(create(out, "histograms.csv")?, &analysis.summary.histograms)?;
    let outputs = [
        "report.json",
        "decompositions.csv",
        "decompositions.jsonl",
        "ccdf.csv",
        "histograms.csv",
    ];
    let report = Report {
        manifest: run.manifest(Some(cfg), inputs, &outputs),
        body: &analysis.summary,
    };
    write_json(out, "report.json", &report)?;
    print_analysis(&analysis);
    Ok(if analysis.summary.anomaly_threshold_exceeded() {
        eprintln!("anomaly rate above threshold {}", threshold);
        Outcome::DataProblem
    } else if !analysis.summary.all_pass() {
        Outcome::RequirementFailed
    } else {
        Outcome::Ok
    })
}

fn execute(command: Command, run: &Run) -> Result<Outcome, CliError> {
    match command {
        Command::Simulate { exp, out } => {
            let cfg = exp.load()?;
            fs::create_dir_all(&out)?;
            let sim = simulate(&cfg).map_err(ReportError::from)?;
            let mut trace = create(&out, "trace.jsonl")?;
            write_trace(&mut trace, &sim.events)?;
            std::io::Write::flush(&mut trace)?;
            write_truth(create(&out, "truth.jsonl")?, &sim.truth)?;
            fs::write(out.join("config.toml"), cfg.to_toml())?;
            let outputs = ["trace.jsonl", "truth.jsonl", "config.toml", "manifest.json"];
            write_json(
                &out,
                "manifest.json",
                &run.manifest(Some(&cfg), exp.inputs(), &outputs),
            )?;
            println!(
                "{} packets, {} events -> {}",
                sim.truth.len(),
                sim.events.len(),
                out.display()
            );
            Ok(Outcome::Ok)
        }
        Command::Journeys {
            trace,
            out,
            anomaly_threshold,
        } => {
            let events = load_trace(&trace)?;
            fs::create_dir_all(&out)?;
            let built = ranlat_core::build_journeys(events).map_err(ReportError::from)?;
            write_json_lines(create(&out, "journeys.jsonl")?, &built.journeys)?;
            write_json_lines(create(&out, "anomalies.jsonl")?, &built.anomalies)?;
            let rate = built.anomaly_rate();
            println!(
                "{} journeys, {} anomalies",
                built.journeys.len(),
                built.anomalies.len()
            );
            Ok(if rate > anomaly_threshold {
                eprintln!("anomaly rate {rate:.4} above threshold {anomaly_threshold}");
                Outcome::DataProblem
            } else {
                Outcome::Ok
            })
        }
        Command::Decompose { trace, out } => {
            let events = load_trace(&trace)?;
            fs::create_dir_all(&out)?;
            let d = decompose_trace(events)?;
            write_decompositions_csv(
                create(&out, "decompositions.csv")?,
                &d.decompositions,
                &d.journeys,
            )?;
            write_json_lines(create(&out, "decompositions.jsonl")?, &d.decompositions)?;
            println!(
                "{} packets decomposed, {} anomalies",
                d.decompositions.len(),
                d.anomalies.len()
            );
            Ok(Outcome::Ok)
        }
        Command::Analyze {
            trace,
            targets,
            exp,
            out,
            anomaly_threshold,
        } => {
            let targets = parse_targets(&targets)?;
            let cfg = exp.load()?;
            let events = load_trace(&trace)?;
            fs::create_dir_all(&out)?;
            let mut inputs = vec![trace];
            inputs.extend(exp.inputs());
            run_analysis(run, events, &targets, &cfg, anomaly_threshold, inputs, &out)
        }
        Command::Sweep {
            exp,
            offsets,
            targets,
            analyze,
            out,
        } => {
            let offsets = parse_offsets(&offsets)?;
            let targets = parse_targets(&targets)?;
            let cfg = exp.load()?;
            fs::create_dir_all(&out)?;
            let taus: Vec<u64> = targets.iter().map(|t| t.tau_ns).collect();
            let sweep = offset_sweep(&cfg, &offsets, &taus).map_err(ReportError::from)?;
            write_sweep_csv(create(&out, "sweep.csv")?, &sweep)?;
            let report = Report {
                manifest: run.manifest(Some(&cfg), exp.inputs(), &["sweep.json", "sweep.csv"]),
                body: &sweep,
            };
            write_json(&out, "sweep.json", &report)?;
            let best = sweep.best();
            println!(
                "theta* = {} ms (mean queue {:.3} ms, mean e2e {:.3} ms)",
                sweep.theta_star as f64 / NANOS_PER_MS as f64,
                best.mean_queue_delay_ns / NANOS_PER_MS as f64,
                best.mean_e2e_ns / NANOS_PER_MS as f64
            );
            if !analyze {
                return Ok(Outcome::Ok);
            }
            let mut tuned = cfg.clone();
            tuned.traffic.arrival_offset_ns = sweep.theta_star;
            let sim = simulate(&tuned).map_err(ReportError::from)?;
            run_analysis(
                run,
                sim.events,
                &targets,
                &tuned,
                DEFAULT_ANOMALY_THRESHOLD,
                exp.inputs(),
                &out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let run = Run {
        started: Instant::now(),
        command: std::env::args().skip(1).collect(),
    };
    match execute(cli.command, &run) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::DataProblem) => ExitCode::from(2),
        Ok(Outcome::RequirementFailed) => ExitCode::from(3),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
