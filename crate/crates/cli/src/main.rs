mod analyze;
mod error;
mod report;

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgppg::events::{EventLabel, LagWindow, TimedEvent, TimedTrace};
use ecgppg::ingest::{write_manifest, ManifestEntry};
use ecgppg::monitor::{
    agreement_rate, build_interval_policy, compose, compose_truncating, composed_true_rate,
    run_parallel, write_verdict_csv, TimedAutomaton,
};
use ecgppg::stats::Deletion;
use ecgppg::synth::{gen_waveforms, GroundTruth, SynthSpec};

use crate::analyze::RunConfig;
use crate::error::CliError;
use crate::report::{Report, Thresholds};

#[derive(Parser)]
#[command(name = "ecgppg", version, about = "ECG/PPG event correlation analysis and runtime monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Delineate, pair, correlate and monitor every record of a manifest.
    Analyze(AnalyzeArgs),
    /// Run the ECG and PPG monitors over two event traces.
    Monitor(MonitorArgs),
    /// Write a synthetic record with ground truth.
    Synth(SynthArgs),
    /// Print the tables of a report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct PolicyArgs {
    /// Interval bound shared by the built-in policies (ms).
    #[arg(long, default_value_t = 210.0)]
    guard_ms: f64,
    /// ECG policy file; defaults to P-peak -> R-peak within the guard.
    #[arg(long)]
    ecg_policy: Option<PathBuf>,
    /// PPG policy file; defaults to onset -> systolic peak within the guard.
    #[arg(long)]
    ppg_policy: Option<PathBuf>,
}

impl PolicyArgs {
    fn load(&self) -> Result<(TimedAutomaton, TimedAutomaton), CliError> {
        let load = |path: &Option<PathBuf>, start, end| match path {
            Some(p) => TimedAutomaton::from_json_file(p)
                .map_err(|e| CliError::Load(format!("{}: {e}", p.display()))),
            None => Ok(build_interval_policy(start, end, self.guard_ms)?),
        };
        Ok((
            load(&self.ecg_policy, EventLabel::PPeak, EventLabel::RPeak)?,
            load(&self.ppg_policy, EventLabel::Onset, EventLabel::SystolicPeak)?,
        ))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Expected sampling rate; records declaring another rate are rejected.
    #[arg(long)]
    fs: Option<f64>,
    /// Accepted R-peak to systolic-peak lag, `lo,hi` in ms.
    #[arg(long, default_value = "200,1200", value_parser = parse_window)]
    lag_window: LagWindow,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Observation thresholds: a JSON file or an inline JSON object.
    #[arg(long)]
    thresholds: Option<String>,
    /// Use only cycles with every table interval present.
    #[arg(long)]
    listwise: bool,
    #[command(flatten)]
    policies: PolicyArgs,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    ecg_trace: PathBuf,
    #[arg(long)]
    ppg_trace: PathBuf,
    /// Verdict CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compose over the common prefix when the verdict counts differ.
    #[arg(long)]
    allow_truncate: bool,
    #[command(flatten)]
    policies: PolicyArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_cycles: Option<usize>,
    #[arg(long)]
    rr_mean_ms: Option<f64>,
    #[arg(long)]
    rr_jitter_ms: Option<f64>,
    #[arg(long)]
    pr_mean_ms: Option<f64>,
    #[arg(long)]
    pr_jitter_ms: Option<f64>,
    #[arg(long, visible_alias = "pat")]
    pat_ms: Option<f64>,
    #[arg(long)]
    pat_jitter_ms: Option<f64>,
    #[arg(long)]
    delta_t_ms: Option<f64>,
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long, conflicts_with = "no_noise")]
    noise_sigma: Option<f64>,
    #[arg(long)]
    no_noise: bool,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            n_cycles: self.n_cycles.unwrap_or(d.n_cycles),
            rr_mean_ms: self.rr_mean_ms.unwrap_or(d.rr_mean_ms),
            rr_jitter_ms: self.rr_jitter_ms.unwrap_or(d.rr_jitter_ms),
            pr_mean_ms: self.pr_mean_ms.unwrap_or(d.pr_mean_ms),
            pr_jitter_ms: self.pr_jitter_ms.unwrap_or(d.pr_jitter_ms),
            pat_ms: self.pat_ms.unwrap_or(d.pat_ms),
            pat_jitter_ms: self.pat_jitter_ms.unwrap_or(d.pat_jitter_ms),
            delta_t_ms: self.delta_t_ms.unwrap_or(d.delta_t_ms),
            fs: self.fs.unwrap_or(d.fs),
            noise_sigma: if self.no_noise {
                0.0
            } else {
                self.noise_sigma.unwrap_or(d.noise_sigma)
            },
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json or the directory holding it.
    path: PathBuf,
}

fn parse_window(s: &str) -> Result<LagWindow, String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number {hi:?}"))?;
    LagWindow::new(lo, hi).map_err(|e| e.to_string())
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn load_thresholds(arg: &Option<String>) -> Result<Thresholds, CliError> {
    let Some(arg) = arg else {
        return Ok(Thresholds::default());
    };
    let text = if arg.trim_start().starts_with('{') {
        arg.clone()
    } else {
        std::fs::read_to_string(arg).map_err(|e| CliError::Load(format!("{arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Load(format!("thresholds: {e}")))
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (ecg_policy, ppg_policy) = args.policies.load()?;
    let cfg = RunConfig {
        manifest: absolute(&args.manifest)?,
        fs: args.fs,
        guard_ms: args.policies.guard_ms,
        lag_window: args.lag_window,
        out: absolute(&args.out)?,
        thresholds: load_thresholds(&args.thresholds)?,
        ecg_policy,
        ppg_policy,
        deletion: if args.listwise {
            Deletion::Listwise
        } else {
            Deletion::Pairwise
        },
    };
    let (report, first_error) = analyze::run(&cfg)?;
    for rec in &report.records {
        let agreement = rec
            .monitor
            .as_ref()
            .and_then(|m| m.agreement_rate)
            .map(|a| format!(" agreement {a:.4}"))
            .unwrap_or_default();
        println!("{}: {}{agreement}", rec.record_id, rec.status);
    }
    println!("wrote {}", cfg.out.join("report.json").display());
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn read_trace(path: &Path) -> Result<TimedTrace, CliError> {
    let f = File::open(path).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))?;
    TimedTrace::read_csv(BufReader::new(f)).map_err(|e| CliError::Load(format!("{}: {e}", path.display())))
}

fn cmd_monitor(args: &MonitorArgs) -> Result<(), CliError> {
    let (ecg_policy, ppg_policy) = args.policies.load()?;
    let ecg = read_trace(&args.ecg_trace)?;
    let ppg = read_trace(&args.ppg_trace)?;
    let (ve, vp) = run_parallel(&ecg_policy, &ecg, &ppg_policy, &ppg)?;
    let composed = if args.allow_truncate {
        compose_truncating(&ve, &vp)
    } else {
        compose(&ve, &vp)?
    };
    let agreement = agreement_rate(&composed)?;
    let true_rate = composed_true_rate(&composed)?;

    let mut buf = Vec::new();
    write_verdict_csv(&mut buf, &composed).map_err(|e| CliError::Other(e.to_string()))?;
    let _ = writeln!(buf, "# agreement_rate={agreement}");
    let _ = writeln!(buf, "# composed_true_rate={true_rate}");
    if composed.dropped > 0 {
        let _ = writeln!(buf, "# dropped={}", composed.dropped);
    }
    match &args.out {
        Some(path) => std::fs::write(path, &buf).map_err(|e| CliError::io(path, e))?,
        None => io::stdout()
            .write_all(&buf)
            .map_err(|e| CliError::Other(e.to_string()))?,
    }
    Ok(())
}

fn truth_traces(truth: &GroundTruth) -> Result<(TimedTrace, TimedTrace), CliError> {
    let mut ecg = Vec::new();
    let mut ppg = Vec::new();
    for c in &truth.cycles {
        ecg.extend([
            TimedEvent::new(EventLabel::PPeak, c.p_ms),
            TimedEvent::new(EventLabel::QPeak, c.q_ms),
            TimedEvent::new(EventLabel::RPeak, c.r_ms),
            TimedEvent::new(EventLabel::TPeak, c.t_ms),
        ]);
        ppg.extend([
            TimedEvent::new(EventLabel::Onset, c.onset_ms),
            TimedEvent::new(EventLabel::SystolicPeak, c.systolic_ms),
            TimedEvent::new(EventLabel::DiastolicPeak, c.diastolic_ms),
        ]);
    }
    Ok((TimedTrace::from_unsorted(ecg)?, TimedTrace::from_unsorted(ppg)?))
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = args.spec();
    let (record, truth) = gen_waveforms(&spec)?;
    let dir = &args.out;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    };

    record.ecg.write_csv(dir.join("ecg.csv"))?;
    record.ppg.write_csv(dir.join("ppg.csv"))?;
    write_manifest(
        dir.join("manifest.json"),
        &ManifestEntry {
            record_id: record.record_id.clone(),
            ecg_path: "ecg.csv".into(),
            ppg_path: "ppg.csv".into(),
            fs_hz: spec.fs,
        },
    )?;
    write("ground_truth.json", truth.to_json() + "\n")?;
    write(
        "spec.json",
        serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n",
    )?;
    let (ecg, ppg) = truth_traces(&truth)?;
    for (name, trace) in [("ecg_trace.csv", &ecg), ("ppg_trace.csv", &ppg)] {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        write(name, String::from_utf8(buf).expect("trace csv is utf-8"))?;
    }
    println!("wrote {} ({} cycles)", dir.display(), truth.cycles.len());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let path = if args.path.is_dir() {
        args.path.join("report.json")
    } else {
        args.path.clone()
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Load(format!("{}: {e}", path.display())))?;
    let report: Report = serde_json::from_str(&text)
        .map_err(|e| CliError::Load(format!("{}: {e}", path.display())))?;
    print!("{}", report::render(&report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
