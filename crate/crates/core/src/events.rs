//! Timed traces, ECG/PPG cycle pairing and cardiac interval computation.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delineate::{EcgEvents, PpgEvents};

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("unknown event label {0:?}")]
    UnknownLabel(String),
    #[error("negative or non-finite event time {0}")]
    BadTime(f64),
    #[error("time regression at line {line}: {time_ms} ms after {previous_ms} ms")]
    TimeRegression {
        line: usize,
        time_ms: f64,
        previous_ms: f64,
    },
    #[error("malformed trace at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("lag window must satisfy lo < hi, got ({lo}, {hi})")]
    BadWindow { lo: f64, hi: f64 },
    #[error("sampling rate must be positive, got {0}")]
    BadSampleRate(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Event alphabet shared by both signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventLabel {
    #[serde(rename = "p")]
    PPeak,
    #[serde(rename = "q")]
    QPeak,
    #[serde(rename = "r")]
    RPeak,
    #[serde(rename = "t")]
    TPeak,
    #[serde(rename = "F")]
    Onset,
    #[serde(rename = "P")]
    SystolicPeak,
    #[serde(rename = "D")]
    DiastolicPeak,
}

impl EventLabel {
    pub const ALL: [EventLabel; 7] = [
        EventLabel::PPeak,
        EventLabel::QPeak,
        EventLabel::RPeak,
        EventLabel::TPeak,
        EventLabel::Onset,
        EventLabel::SystolicPeak,
        EventLabel::DiastolicPeak,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            EventLabel::PPeak => "p",
            EventLabel::QPeak => "q",
            EventLabel::RPeak => "r",
            EventLabel::TPeak => "t",
            EventLabel::Onset => "F",
            EventLabel::SystolicPeak => "P",
            EventLabel::DiastolicPeak => "D",
        }
    }

    pub fn is_ecg(self) -> bool {
        matches!(
            self,
            EventLabel::PPeak | EventLabel::QPeak | EventLabel::RPeak | EventLabel::TPeak
        )
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for EventLabel {
    type Err = EventsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventLabel::ALL
            .into_iter()
            .find(|l| l.symbol() == s)
            .ok_or_else(|| EventsError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub label: EventLabel,
    pub time_ms: f64,
}

impl TimedEvent {
    pub fn new(label: EventLabel, time_ms: f64) -> Self {
        Self { label, time_ms }
    }
}

/// Chronologically ordered events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedTrace {
    events: Vec<TimedEvent>,
}

impl TimedTrace {
    /// Accepts events only if times are finite, non-negative and non-decreasing.
    pub fn new(events: Vec<TimedEvent>) -> Result<Self, EventsError> {
        let mut previous = 0.0f64;
        for (i, e) in events.iter().enumerate() {
            if !(e.time_ms.is_finite() && e.time_ms >= 0.0) {
                return Err(EventsError::BadTime(e.time_ms));
            }
            if i > 0 && e.time_ms < previous {
                return Err(EventsError::TimeRegression {
                    line: i + 1,
                    time_ms: e.time_ms,
                    previous_ms: previous,
                });
            }
            previous = e.time_ms;
        }
        Ok(Self { events })
    }

    /// Sorts events by time, keeping the given order among equal times.
    pub fn from_unsorted(mut events: Vec<TimedEvent>) -> Result<Self, EventsError> {
        events.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
        Self::new(events)
    }

    pub fn events(&self) -> &[TimedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn shifted(&self, offset_ms: f64) -> Result<Self, EventsError> {
        Self::new(
            self.events
                .iter()
                .map(|e| TimedEvent::new(e.label, e.time_ms + offset_ms))
                .collect(),
        )
    }

    /// Writes the `label,time_ms` CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EventsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "time_ms"])?;
        for e in &self.events {
            w.write_record([e.label.symbol(), &e.time_ms.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `label,time_ms` CSV form. Line numbers in errors are 1-based
    /// and count the header.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, EventsError> {
        let mut events = Vec::new();
        let mut previous: Option<f64> = None;
        let mut saw_header = false;
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !saw_header {
                saw_header = true;
                let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if cols != ["label", "time_ms"] {
                    return Err(EventsError::Malformed {
                        line: line_no,
                        reason: format!("expected header `label,time_ms`, got `{trimmed}`"),
                    });
                }
                continue;
            }
            let (label, time) = trimmed.split_once(',').ok_or_else(|| EventsError::Malformed {
                line: line_no,
                reason: "expected two columns".into(),
            })?;
            let label: EventLabel = label.trim().parse()?;
            let time_ms: f64 = time.trim().parse().map_err(|_| EventsError::Malformed {
                line: line_no,
                reason: format!("bad time {:?}", time.trim()),
            })?;
            if !(time_ms.is_finite() && time_ms >= 0.0) {
                return Err(EventsError::BadTime(time_ms));
            }
            if let Some(prev) = previous {
                if time_ms < prev {
                    return Err(EventsError::TimeRegression {
                        line: line_no,
                        time_ms,
                        previous_ms: prev,
                    });
                }
            }
            previous = Some(time_ms);
            events.push(TimedEvent::new(label, time_ms));
        }
        Ok(Self { events })
    }
}

fn index_to_ms(index: usize, fs: f64) -> f64 {
    1000.0 * index as f64 / fs
}

/// Converts ECG event indices to a chronological trace.
pub fn ecg_trace(events: &EcgEvents, fs: f64) -> Result<TimedTrace, EventsError> {
    check_fs(fs)?;
    let mut out = Vec::with_capacity(events.beats.len() * 4);
    for b in &events.beats {
        let seq = [
            (EventLabel::PPeak, b.p),
            (EventLabel::QPeak, b.q),
            (EventLabel::RPeak, Some(b.r)),
            (EventLabel::TPeak, b.t),
        ];
        for (label, idx) in seq {
            if let Some(idx) = idx {
                out.push(TimedEvent::new(label, index_to_ms(idx, fs)));
            }
        }
    }
    TimedTrace::from_unsorted(out)
}

/// Converts PPG event indices to a chronological trace.
pub fn ppg_trace(events: &PpgEvents, fs: f64) -> Result<TimedTrace, EventsError> {
    check_fs(fs)?;
    let mut out = Vec::with_capacity(events.pulses.len() * 3);
    for p in &events.pulses {
        let seq = [
            (EventLabel::Onset, p.onset),
            (EventLabel::SystolicPeak, Some(p.systolic)),
            (EventLabel::DiastolicPeak, p.diastolic),
        ];
        for (label, idx) in seq {
            if let Some(idx) = idx {
                out.push(TimedEvent::new(label, index_to_ms(idx, fs)));
            }
        }
    }
    TimedTrace::from_unsorted(out)
}

fn check_fs(fs: f64) -> Result<(), EventsError> {
    if fs.is_finite() && fs > 0.0 {
        Ok(())
    } else {
        Err(EventsError::BadSampleRate(fs))
    }
}

/// Writes delineated events as `cycle_index,event_label,sample_index,time_ms`.
pub fn write_events_csv<W: Write>(
    out: W,
    ecg: &EcgEvents,
    ppg: &PpgEvents,
    fs: f64,
) -> Result<(), EventsError> {
    check_fs(fs)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cycle_index", "event_label", "sample_index", "time_ms"])?;
    let mut row = |cycle: usize, label: EventLabel, idx: usize| {
        w.write_record([
            cycle.to_string(),
            label.symbol().to_string(),
            idx.to_string(),
            index_to_ms(idx, fs).to_string(),
        ])
    };
    for (i, b) in ecg.beats.iter().enumerate() {
        for (label, idx) in [
            (EventLabel::PPeak, b.p),
            (EventLabel::QPeak, b.q),
            (EventLabel::RPeak, Some(b.r)),
            (EventLabel::TPeak, b.t),
        ] {
            if let Some(idx) = idx {
                row(i, label, idx)?;
            }
        }
    }
    for (i, p) in ppg.pulses.iter().enumerate() {
        for (label, idx) in [
            (EventLabel::Onset, p.onset),
            (EventLabel::SystolicPeak, Some(p.systolic)),
            (EventLabel::DiastolicPeak, p.diastolic),
        ] {
            if let Some(idx) = idx {
                row(i, label, idx)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EcgTimes {
    pub p_ms: Option<f64>,
    pub q_ms: Option<f64>,
    pub r_ms: f64,
    pub t_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpgTimes {
    pub onset_ms: Option<f64>,
    pub systolic_ms: Option<f64>,
    pub diastolic_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EcgIntervals {
    pub pr_ms: Option<f64>,
    pub qr_ms: Option<f64>,
    /// R to the next beat's P.
    pub rp_ms: Option<f64>,
    pub rt_ms: Option<f64>,
    pub qt_ms: Option<f64>,
    pub rr_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpgIntervals {
    /// Onset to systolic peak (crest time).
    pub systole_ms: Option<f64>,
    /// Systolic peak to the next onset.
    pub diastole_ms: Option<f64>,
    pub peak_to_peak_ms: Option<f64>,
    /// Onset to the next onset.
    pub pulse_interval_ms: Option<f64>,
    /// Systolic to diastolic peak.
    pub delta_t_ms: Option<f64>,
}

/// One cardiac cycle anchored at an ECG R-peak.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CardiacCycle {
    pub ecg: EcgTimes,
    pub ppg: PpgTimes,
    pub ecg_intervals: Option<EcgIntervals>,
    pub ppg_intervals: Option<PpgIntervals>,
}

impl CardiacCycle {
    pub fn is_paired(&self) -> bool {
        self.ppg.systolic_ms.is_some()
    }

    /// Time of `label` in this cycle, if present.
    pub fn time_of(&self, label: EventLabel) -> Option<f64> {
        match label {
            EventLabel::PPeak => self.ecg.p_ms,
            EventLabel::QPeak => self.ecg.q_ms,
            EventLabel::RPeak => Some(self.ecg.r_ms),
            EventLabel::TPeak => self.ecg.t_ms,
            EventLabel::Onset => self.ppg.onset_ms,
            EventLabel::SystolicPeak => self.ppg.systolic_ms,
            EventLabel::DiastolicPeak => self.ppg.diastolic_ms,
        }
    }

    /// R-to-systolic lag, when paired.
    pub fn lag_ms(&self) -> Option<f64> {
        self.ppg.systolic_ms.map(|s| s - self.ecg.r_ms)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleSeries {
    pub cycles: Vec<CardiacCycle>,
    /// Cycles whose lag window held more than one unused PPG peak.
    pub ambiguous_pairings: usize,
}

impl CycleSeries {
    pub fn paired_count(&self) -> usize {
        self.cycles.iter().filter(|c| c.is_paired()).count()
    }

    /// Paired (ECG, PPG) timestamps selected by the two accessors.
    pub fn paired_times(
        &self,
        ecg: impl Fn(&CardiacCycle) -> Option<f64>,
        ppg: impl Fn(&CardiacCycle) -> Option<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        self.cycles
            .iter()
            .filter_map(|c| Some((ecg(c)?, ppg(c)?)))
            .unzip()
    }
}

/// Acceptable R-to-systolic lag, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagWindow {
    pub lo_ms: f64,
    pub hi_ms: f64,
}

impl LagWindow {
    pub fn new(lo_ms: f64, hi_ms: f64) -> Result<Self, EventsError> {
        if lo_ms.is_finite() && hi_ms.is_finite() && lo_ms < hi_ms {
            Ok(Self { lo_ms, hi_ms })
        } else {
            Err(EventsError::BadWindow {
                lo: lo_ms,
                hi: hi_ms,
            })
        }
    }

    pub fn contains(&self, lag_ms: f64) -> bool {
        (self.lo_ms..=self.hi_ms).contains(&lag_ms)
    }
}

impl Default for LagWindow {
    fn default() -> Self {
        Self {
            lo_ms: 200.0,
            hi_ms: 1200.0,
        }
    }
}

/// Pairs each ECG beat with the PPG pulse whose systolic peak follows the
/// R-peak within `window`. When several unused pulses qualify the smallest
/// lag wins and `ambiguous_pairings` is incremented. A pulse is used at most
/// once.
pub fn pair_cycles(
    ecg: &EcgEvents,
    ppg: &PpgEvents,
    fs: f64,
    window: LagWindow,
) -> Result<CycleSeries, EventsError> {
    check_fs(fs)?;
    LagWindow::new(window.lo_ms, window.hi_ms)?;
    let ms = |i: usize| index_to_ms(i, fs);
    let mut used = vec![false; ppg.pulses.len()];
    let mut ambiguous = 0;
    let mut cycles = Vec::with_capacity(ecg.beats.len());
    let mut first_candidate = 0;

    for beat in &ecg.beats {
        let r_ms = ms(beat.r);
        while first_candidate < ppg.pulses.len()
            && ms(ppg.pulses[first_candidate].systolic) - r_ms < window.lo_ms
        {
            first_candidate += 1;
        }
        let candidates: Vec<usize> = (first_candidate..ppg.pulses.len())
            .take_while(|&j| ms(ppg.pulses[j].systolic) - r_ms <= window.hi_ms)
            .filter(|&j| !used[j])
            .collect();
        if candidates.len() > 1 {
            ambiguous += 1;
        }
        let chosen = candidates.first().copied();

        let mut cycle = CardiacCycle {
            ecg: EcgTimes {
                p_ms: beat.p.map(ms),
                q_ms: beat.q.map(ms),
                r_ms,
                t_ms: beat.t.map(ms),
            },
            ..CardiacCycle::default()
        };
        if let Some(j) = chosen {
            used[j] = true;
            let pulse = &ppg.pulses[j];
            cycle.ppg = PpgTimes {
                onset_ms: pulse.onset.map(ms),
                systolic_ms: Some(ms(pulse.systolic)),
                diastolic_ms: pulse.diastolic.map(ms),
            };
        }
        cycles.push(cycle);
    }
    Ok(CycleSeries {
        cycles,
        ambiguous_pairings: ambiguous,
    })
}

/// ECG and PPG traces restricted to paired cycles that carry every label in
/// `required`, so that cycle `k` of one trace matches cycle `k` of the other.
/// Also returns the indices of the kept cycles.
pub fn aligned_traces(
    series: &CycleSeries,
    required: &[EventLabel],
) -> Result<(TimedTrace, TimedTrace, Vec<usize>), EventsError> {
    let mut ecg = Vec::new();
    let mut ppg = Vec::new();
    let mut kept = Vec::new();
    for (i, c) in series.cycles.iter().enumerate() {
        if !c.is_paired() || required.iter().any(|&l| c.time_of(l).is_none()) {
            continue;
        }
        kept.push(i);
        for label in EventLabel::ALL {
            if let Some(t) = c.time_of(label) {
                let out = if label.is_ecg() { &mut ecg } else { &mut ppg };
                out.push(TimedEvent::new(label, t));
            }
        }
    }
    Ok((
        TimedTrace::from_unsorted(ecg)?,
        TimedTrace::from_unsorted(ppg)?,
        kept,
    ))
}

fn positive_diff(later: Option<f64>, earlier: Option<f64>) -> Option<f64> {
    let d = later? - earlier?;
    (d > 0.0).then_some(d)
}

/// Fills the ECG and PPG intervals of every cycle. Intervals that reach into
/// the next cycle are absent on the last one; non-positive values are
/// dropped.
pub fn compute_intervals(series: &CycleSeries) -> CycleSeries {
    let n = series.cycles.len();
    let cycles = (0..n)
        .map(|i| {
            let c = &series.cycles[i];
            let next = series.cycles.get(i + 1);
            let e = &c.ecg;
            let r = Some(e.r_ms);
            let ecg_intervals = EcgIntervals {
                pr_ms: positive_diff(r, e.p_ms),
                qr_ms: positive_diff(r, e.q_ms),
                rp_ms: positive_diff(next.and_then(|n| n.ecg.p_ms), r),
                rt_ms: positive_diff(e.t_ms, r),
                qt_ms: positive_diff(e.t_ms, e.q_ms),
                rr_ms: positive_diff(next.map(|n| n.ecg.r_ms), r),
            };
            let p = &c.ppg;
            let next_onset = next.and_then(|n| n.ppg.onset_ms);
            let ppg_intervals = c.is_paired().then(|| PpgIntervals {
                systole_ms: positive_diff(p.systolic_ms, p.onset_ms),
                diastole_ms: positive_diff(next_onset, p.systolic_ms),
                peak_to_peak_ms: positive_diff(next.and_then(|n| n.ppg.systolic_ms), p.systolic_ms),
                pulse_interval_ms: positive_diff(next_onset, p.onset_ms),
                delta_t_ms: positive_diff(p.diastolic_ms, p.systolic_ms),
            });
            CardiacCycle {
                ecg_intervals: Some(ecg_intervals),
                ppg_intervals,
                ..c.clone()
            }
        })
        .collect();
    CycleSeries {
        cycles,
        ambiguous_pairings: series.ambiguous_pairings,
    }
}

pub const INTERVAL_COLUMNS: [&str; 12] = [
    "pr_ms",
    "qr_ms",
    "rp_ms",
    "rt_ms",
    "qt_ms",
    "rr_ms",
    "systole_ms",
    "diastole_ms",
    "peak_to_peak_ms",
    "pulse_interval_ms",
    "delta_t_ms",
    "lag_ms",
];

/// One row per cycle, one column per interval; absent values are empty cells.
pub fn write_interval_csv<W: Write>(out: W, series: &CycleSeries) -> Result<(), EventsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cycle_index"];
    header.extend(INTERVAL_COLUMNS);
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, c) in series.cycles.iter().enumerate() {
        let e = c.ecg_intervals.unwrap_or_default();
        let p = c.ppg_intervals.unwrap_or_default();
        w.write_record([
            i.to_string(),
            cell(e.pr_ms),
            cell(e.qr_ms),
            cell(e.rp_ms),
            cell(e.rt_ms),
            cell(e.qt_ms),
            cell(e.rr_ms),
            cell(p.systole_ms),
            cell(p.diastole_ms),
            cell(p.peak_to_peak_ms),
            cell(p.pulse_interval_ms),
            cell(p.delta_t_ms),
            cell(c.lag_ms()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
