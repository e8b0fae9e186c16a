//! `report.json` schema and its text rendering.
//!
//! Every key is always present; values that could not be computed are `null`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ecgppg::stats::{
    format_p, CorrelationCell, CorrelationTable, Deletion, Descriptive, RegressionResult,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Pass/fail thresholds for the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// RR vs peak-to-peak.
    pub obs1_min_r: f64,
    /// Largest `|b1 - 1|` of the P-peak to onset regression.
    pub obs2_max_slope_error: f64,
    /// PR vs systole.
    pub obs3_min_r: f64,
    /// RP vs diastole.
    pub obs4_min_r: f64,
    pub lag_min_ms: f64,
    pub lag_max_ms: f64,
    /// Agreement must exceed this value.
    pub agreement_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            obs1_min_r: 0.95,
            obs2_max_slope_error: 0.01,
            obs3_min_r: 0.90,
            obs4_min_r: 0.60,
            lag_min_ms: 600.0,
            lag_max_ms: 700.0,
            agreement_min: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub manifest: String,
    pub fs_hz: Option<f64>,
    pub guard_ms: f64,
    pub lag_window_ms: [f64; 2],
    pub ecg_policy: String,
    pub ppg_policy: String,
    pub deletion: Deletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: ReportConfig,
    pub thresholds: Thresholds,
    pub records: Vec<RecordReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub claim: String,
    pub value: Option<f64>,
    pub threshold: String,
    pub pass: Option<bool>,
}

impl Observation {
    pub fn new(claim: &str, value: Option<f64>, threshold: String, check: impl Fn(f64) -> bool) -> Self {
        Self {
            claim: claim.to_string(),
            value,
            threshold,
            pass: value.map(check),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub obs1_rr_peak_to_peak: Observation,
    pub obs2_p_onset_slope: Observation,
    pub obs3_pr_systole: Observation,
    pub obs4_rp_diastole: Observation,
    pub obs5_p_onset_lag: Observation,
    pub obs6_r_systolic_lag: Observation,
    pub monitor_agreement: Observation,
}

impl Observations {
    pub fn all(&self) -> [(&'static str, &Observation); 7] {
        [
            ("obs1", &self.obs1_rr_peak_to_peak),
            ("obs2", &self.obs2_p_onset_slope),
            ("obs3", &self.obs3_pr_systole),
            ("obs4", &self.obs4_rp_diastole),
            ("obs5", &self.obs5_p_onset_lag),
            ("obs6", &self.obs6_r_systolic_lag),
            ("agreement", &self.monitor_agreement),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEntry {
    pub ecg_event: String,
    pub ppg_event: String,
    pub result: Option<RegressionResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressions {
    pub p_onset: RegressionEntry,
    pub r_systolic: RegressionEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub ecg_policy: String,
    pub ppg_policy: String,
    pub cycles: usize,
    pub agreement_rate: Option<f64>,
    pub composed_true_rate: Option<f64>,
    pub dropped: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub record_id: String,
    /// `ok` or `error`.
    pub status: String,
    pub error: Option<String>,
    pub fs_hz: Option<f64>,
    pub duration_ms: Option<f64>,
    pub n_beats: Option<usize>,
    pub n_pulses: Option<usize>,
    pub paired_cycles: Option<usize>,
    pub ambiguous_pairings: Option<usize>,
    pub correlation_table: Option<CorrelationTable>,
    pub rr_peak_to_peak: Option<CorrelationCell>,
    pub regressions: Option<Regressions>,
    pub monitor: Option<MonitorSummary>,
    pub observations: Option<Observations>,
    pub descriptive: BTreeMap<String, Option<Descriptive>>,
    pub files: BTreeMap<String, String>,
}

impl RecordReport {
    pub fn failed(record_id: &str, error: String) -> Self {
        Self {
            record_id: record_id.to_string(),
            status: "error".to_string(),
            error: Some(error),
            fs_hz: None,
            duration_ms: None,
            n_beats: None,
            n_pulses: None,
            paired_cycles: None,
            ambiguous_pairings: None,
            correlation_table: None,
            rr_peak_to_peak: None,
            regressions: None,
            monitor: None,
            observations: None,
            descriptive: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "-".to_string())
}

fn fmt_pass(p: Option<bool>) -> &'static str {
    match p {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "n/a",
    }
}

fn cell_text(c: Option<&CorrelationCell>) -> String {
    match c {
        Some(CorrelationCell { result: Some(r), .. }) => {
            format!("r={:.4} p={} n={}", r.r, format_p(r.p_two_sided), r.n)
        }
        Some(c) => format!("n={} ({})", c.n, c.error.as_ref().map(|e| e.to_string()).unwrap_or_default()),
        None => "-".to_string(),
    }
}

/// Text summary: correlated events and timers, the interval correlation grid,
/// regressions, monitor agreement and observation verdicts.
pub fn render(report: &Report) -> String {
    let mut s = String::new();
    for rec in &report.records {
        let _ = writeln!(s, "== record {} [{}]", rec.record_id, rec.status);
        if let Some(e) = &rec.error {
            let _ = writeln!(s, "error: {e}");
            s.push('\n');
            continue;
        }
        let _ = writeln!(
            s,
            "beats {}  pulses {}  paired {}  ambiguous {}",
            rec.n_beats.unwrap_or(0),
            rec.n_pulses.unwrap_or(0),
            rec.paired_cycles.unwrap_or(0),
            rec.ambiguous_pairings.unwrap_or(0)
        );

        let _ = writeln!(s, "\nCorrelated ECG and PPG events and timers");
        let reg = rec.regressions.as_ref();
        let table = rec.correlation_table.as_ref();
        let reg_text = |e: Option<&RegressionEntry>| match e.and_then(|e| e.result) {
            Some(r) => format!("b1={:.4} lag={:.3} ms r2={:.4} n={}", r.slope_b1, r.lag_time_ms, r.r_squared, r.n),
            None => "-".to_string(),
        };
        let rows = [
            ("P-peak", "Onset", reg_text(reg.map(|r| &r.p_onset))),
            ("R-peak", "Systolic peak", reg_text(reg.map(|r| &r.r_systolic))),
            ("PR interval", "Systole period", cell_text(table.map(|t| t.cell(ecgppg::stats::EcgInterval::PR, ecgppg::stats::PpgInterval::Systole)))),
            ("RP interval", "Diastole period", cell_text(table.map(|t| t.cell(ecgppg::stats::EcgInterval::RP, ecgppg::stats::PpgInterval::Diastole)))),
            ("RR interval", "Peak-to-peak", cell_text(rec.rr_peak_to_peak.as_ref())),
        ];
        for (e, p, v) in rows {
            let _ = writeln!(s, "  {e:<12} {p:<16} {v}");
        }

        if let Some(t) = table {
            let _ = writeln!(s, "\nECG intervals vs PPG intervals ({:?} deletion)", t.deletion);
            s.push_str(&t.to_text());
        }
        if let Some(m) = &rec.monitor {
            let _ = writeln!(
                s,
                "\nmonitors {} / {}: cycles {} agreement {} composed T {} dropped {}",
                m.ecg_policy,
                m.ppg_policy,
                m.cycles,
                fmt_opt(m.agreement_rate, 4),
                fmt_opt(m.composed_true_rate, 4),
                m.dropped
            );
        }
        if let Some(obs) = &rec.observations {
            let _ = writeln!(s, "\nobservations");
            for (key, o) in obs.all() {
                let _ = writeln!(
                    s,
                    "  {key:<10} {:<5} value {:<12} want {:<16} {}",
                    fmt_pass(o.pass),
                    fmt_opt(o.value, 4),
                    o.threshold,
                    o.claim
                );
            }
        }
        s.push('\n');
    }
    s
}
