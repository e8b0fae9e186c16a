//! Manifest-driven analysis of synchronized ECG/PPG records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use ecgppg::delineate::{delineate_ecg, detect_ppg_events, detect_r_peaks};
use ecgppg::events::{
    aligned_traces, compute_intervals, pair_cycles, write_events_csv, write_interval_csv,
    CardiacCycle, CycleSeries, EventLabel, LagWindow,
};
use ecgppg::ingest::{read_manifest, IngestError, ManifestEntry};
use ecgppg::monitor::{
    agreement_rate, compose_truncating, composed_true_rate, run_parallel, write_verdict_csv,
    TimedAutomaton,
};
use ecgppg::stats::{
    correlation_table_with, describe, ols_lag, scatter_export, Deletion, EcgInterval, PpgInterval,
};

use crate::error::CliError;
use crate::report::{
    MonitorSummary, Observation, Observations, RecordReport, RegressionEntry, Regressions, Report,
    ReportConfig, Thresholds, SCHEMA_VERSION,
};

pub struct RunConfig {
    pub manifest: PathBuf,
    pub fs: Option<f64>,
    pub guard_ms: f64,
    pub lag_window: LagWindow,
    pub out: PathBuf,
    pub thresholds: Thresholds,
    pub ecg_policy: TimedAutomaton,
    pub ppg_policy: TimedAutomaton,
    pub deletion: Deletion,
}

/// Runs every manifest record (concurrently) and writes `report.json`.
/// Returns the report and the first per-record failure, if any.
pub fn run(cfg: &RunConfig) -> Result<(Report, Option<CliError>), CliError> {
    let entries = read_manifest(&cfg.manifest)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;

    let outcomes: Vec<Result<RecordReport, (String, CliError)>> = thread::scope(|s| {
        let handles: Vec<_> = entries
            .iter()
            .map(|entry| {
                s.spawn(move || {
                    analyze_record(entry, cfg).map_err(|e| (entry.record_id.clone(), e))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("record worker panicked"))
            .collect()
    });

    let mut first_error = None;
    let mut records = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err((id, e)) => {
                eprintln!("record {id}: {e}");
                records.push(RecordReport::failed(&id, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    let report = Report {
        schema_version: SCHEMA_VERSION,
        config: ReportConfig {
            manifest: cfg.manifest.display().to_string(),
            fs_hz: cfg.fs,
            guard_ms: cfg.guard_ms,
            lag_window_ms: [cfg.lag_window.lo_ms, cfg.lag_window.hi_ms],
            ecg_policy: cfg.ecg_policy.name().to_string(),
            ppg_policy: cfg.ppg_policy.name().to_string(),
            deletion: cfg.deletion,
        },
        thresholds: cfg.thresholds.clone(),
        records,
    };
    let path = cfg.out.join("report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((report, first_error))
}

fn file_stem(record_id: &str) -> String {
    record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Outputs<'a> {
    dir: &'a Path,
    stem: String,
    files: BTreeMap<String, String>,
}

impl Outputs<'_> {
    fn create(&mut self, key: &str, suffix: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(format!("{}_{suffix}", self.stem));
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(key.to_string(), path.display().to_string());
        Ok(BufWriter::new(f))
    }

    fn scatter(&mut self, key: &str, x: &[f64], y: &[f64]) -> Result<(), CliError> {
        let path = self.dir.join(format!("{}_scatter_{key}.csv", self.stem));
        scatter_export(x, y, &path).map_err(|e| CliError::Other(e.to_string()))?;
        self.files.insert(format!("scatter_{key}"), path.display().to_string());
        Ok(())
    }
}

type Accessor = fn(&CardiacCycle) -> Option<f64>;

fn regression(
    series: &CycleSeries,
    ecg: EventLabel,
    ppg: EventLabel,
) -> (RegressionEntry, Vec<f64>, Vec<f64>) {
    let (x, y) = series.paired_times(|c| c.time_of(ecg), |c| c.time_of(ppg));
    let fit = ols_lag(&x, &y);
    let entry = RegressionEntry {
        ecg_event: ecg.symbol().to_string(),
        ppg_event: ppg.symbol().to_string(),
        result: fit.as_ref().ok().copied(),
        error: fit.err().map(|e| e.to_string()),
    };
    (entry, x, y)
}

fn analyze_record(entry: &ManifestEntry, cfg: &RunConfig) -> Result<RecordReport, CliError> {
    if let Some(fs) = cfg.fs {
        if fs != entry.fs_hz {
            return Err(IngestError::SampleRateMismatch {
                ecg_hz: entry.fs_hz,
                ppg_hz: fs,
            }
            .into());
        }
    }
    let record = entry.load()?;
    let fs = record.fs();

    let r_peaks = detect_r_peaks(&record.ecg)?;
    let ecg = delineate_ecg(&record.ecg, &r_peaks);
    let rate_hint = mean_rate_bpm(&r_peaks, fs);
    let ppg = detect_ppg_events(&record.ppg, rate_hint)?;
    let series = compute_intervals(&pair_cycles(&ecg, &ppg, fs, cfg.lag_window)?);
    let table = correlation_table_with(&series, cfg.deletion);

    let mut out = Outputs {
        dir: &cfg.out,
        stem: file_stem(&entry.record_id),
        files: BTreeMap::new(),
    };
    write_events_csv(out.create("events", "events.csv")?, &ecg, &ppg, fs)?;
    write_interval_csv(out.create("intervals", "intervals.csv")?, &series)?;
    table
        .write_csv(out.create("correlation_table", "correlation_table.csv")?)
        .map_err(|e| CliError::Other(e.to_string()))?;

    let (p_onset, px, py) = regression(&series, EventLabel::PPeak, EventLabel::Onset);
    let (r_systolic, rx, ry) = regression(&series, EventLabel::RPeak, EventLabel::SystolicPeak);
    out.scatter("p_onset", &px, &py)?;
    out.scatter("r_systolic", &rx, &ry)?;
    let interval_pairs: [(&str, Accessor, Accessor); 3] = [
        ("rr_peak_to_peak", |c| c.ecg_intervals?.rr_ms, |c| c.ppg_intervals?.peak_to_peak_ms),
        ("pr_systole", |c| EcgInterval::PR.of(c), |c| PpgInterval::Systole.of(c)),
        ("rp_diastole", |c| EcgInterval::RP.of(c), |c| PpgInterval::Diastole.of(c)),
    ];
    for (key, fx, fy) in interval_pairs {
        let (x, y) = series.paired_times(fx, fy);
        out.scatter(key, &x, &y)?;
    }

    let monitor = run_monitors(&series, cfg, &mut out)?;
    let regressions = Regressions { p_onset, r_systolic };
    let observations = observe(&table, &regressions, &monitor, &cfg.thresholds);

    let mut descriptive = BTreeMap::new();
    let columns: [(&str, Accessor); 11] = [
        ("PR", |c| EcgInterval::PR.of(c)),
        ("QR", |c| EcgInterval::QR.of(c)),
        ("RP", |c| EcgInterval::RP.of(c)),
        ("RT", |c| EcgInterval::RT.of(c)),
        ("QT", |c| EcgInterval::QT.of(c)),
        ("RR", |c| c.ecg_intervals?.rr_ms),
        ("systole", |c| PpgInterval::Systole.of(c)),
        ("diastole", |c| PpgInterval::Diastole.of(c)),
        ("peak_to_peak", |c| c.ppg_intervals?.peak_to_peak_ms),
        ("delta_t", |c| c.ppg_intervals?.delta_t_ms),
        ("lag_r_systolic", |c| c.lag_ms()),
    ];
    for (name, f) in columns {
        let values: Vec<f64> = series.cycles.iter().filter_map(f).collect();
        descriptive.insert(name.to_string(), describe(&values).ok());
    }

    Ok(RecordReport {
        record_id: entry.record_id.clone(),
        status: "ok".to_string(),
        error: None,
        fs_hz: Some(fs),
        duration_ms: Some(record.ecg.duration_ms()),
        n_beats: Some(ecg.beats.len()),
        n_pulses: Some(ppg.pulses.len()),
        paired_cycles: Some(series.paired_count()),
        ambiguous_pairings: Some(series.ambiguous_pairings),
        rr_peak_to_peak: Some(table.rr_peak_to_peak.clone()),
        correlation_table: Some(table),
        regressions: Some(regressions),
        monitor: Some(monitor),
        observations: Some(observations),
        descriptive,
        files: out.files,
    })
}

fn mean_rate_bpm(r_peaks: &[usize], fs: f64) -> Option<f64> {
    if r_peaks.len() < 3 {
        return None;
    }
    let span = (r_peaks[r_peaks.len() - 1] - r_peaks[0]) as f64 * 1000.0 / fs;
    Some(60_000.0 * (r_peaks.len() - 1) as f64 / span)
}

/// Runs both monitors over the paired cycles that carry every event either
/// policy mentions, so verdict `k` of each monitor belongs to the same cycle.
fn run_monitors(
    series: &CycleSeries,
    cfg: &RunConfig,
    out: &mut Outputs,
) -> Result<MonitorSummary, CliError> {
    let required: Vec<EventLabel> = EventLabel::ALL
        .into_iter()
        .filter(|&l| cfg.ecg_policy.is_relevant(l) || cfg.ppg_policy.is_relevant(l))
        .collect();
    let (ecg_trace, ppg_trace, kept) = aligned_traces(series, &required)?;
    ecg_trace.write_csv(out.create("ecg_trace", "ecg_trace.csv")?)?;
    ppg_trace.write_csv(out.create("ppg_trace", "ppg_trace.csv")?)?;
    let (ve, vp) = run_parallel(&cfg.ecg_policy, &ecg_trace, &cfg.ppg_policy, &ppg_trace)?;
    let composed = compose_truncating(&ve, &vp);
    let agreement = agreement_rate(&composed).ok();
    let true_rate = composed_true_rate(&composed).ok();

    let mut w = out.create("verdicts", "verdicts.csv")?;
    write_verdict_csv(&mut w, &composed).map_err(|e| CliError::Other(e.to_string()))?;
    if let Some(a) = agreement {
        writeln!(w, "# agreement_rate={a}").map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Other(e.to_string()))?;

    Ok(MonitorSummary {
        ecg_policy: cfg.ecg_policy.name().to_string(),
        ppg_policy: cfg.ppg_policy.name().to_string(),
        cycles: kept.len(),
        agreement_rate: agreement,
        composed_true_rate: true_rate,
        dropped: composed.dropped,
        error: agreement.is_none().then(|| "no verdicts".to_string()),
    })
}

fn observe(
    table: &ecgppg::stats::CorrelationTable,
    reg: &Regressions,
    monitor: &MonitorSummary,
    t: &Thresholds,
) -> Observations {
    let lag_range = format!("[{}, {}] ms", t.lag_min_ms, t.lag_max_ms);
    let in_lag = |v: f64| (t.lag_min_ms..=t.lag_max_ms).contains(&v);
    let at_least = |min: f64| move |v: f64| v >= min;
    Observations {
        obs1_rr_peak_to_peak: Observation::new(
            "RR interval correlates with peak-to-peak interval",
            table.rr_peak_to_peak.r(),
            format!("r >= {}", t.obs1_min_r),
            at_least(t.obs1_min_r),
        ),
        obs2_p_onset_slope: Observation::new(
            "P-peak corresponds to PPG onset (regression slope near 1)",
            reg.p_onset.result.map(|r| r.slope_b1),
            format!("|b1 - 1| <= {}", t.obs2_max_slope_error),
            |v| (v - 1.0).abs() <= t.obs2_max_slope_error,
        ),
        obs3_pr_systole: Observation::new(
            "PR interval correlates with systole period",
            table.cell(EcgInterval::PR, PpgInterval::Systole).r(),
            format!("r >= {}", t.obs3_min_r),
            at_least(t.obs3_min_r),
        ),
        obs4_rp_diastole: Observation::new(
            "RP interval correlates with diastole period",
            table.cell(EcgInterval::RP, PpgInterval::Diastole).r(),
            format!("r >= {}", t.obs4_min_r),
            at_least(t.obs4_min_r),
        ),
        obs5_p_onset_lag: Observation::new(
            "PPG onset lags the P-peak",
            reg.p_onset.result.map(|r| r.lag_time_ms),
            lag_range.clone(),
            in_lag,
        ),
        obs6_r_systolic_lag: Observation::new(
            "Systolic peak lags the R-peak",
            reg.r_systolic.result.map(|r| r.lag_time_ms),
            lag_range,
            in_lag,
        ),
        monitor_agreement: Observation::new(
            "ECG and PPG monitors agree",
            monitor.agreement_rate,
            format!("> {}", t.agreement_min),
            |v| v > t.agreement_min,
        ),
    }
}
