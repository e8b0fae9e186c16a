//! Timed-automaton runtime monitors over ECG and PPG traces.
//!
//! A policy is a deterministic timed automaton with real-valued clocks in
//! milliseconds. Each completed policy cycle yields one Boolean verdict:
//! entering an accepting location emits `T`, entering the violation sink emits
//! `F`. Events with no enabled transition send the monitor to the sink when
//! the policy mentions them and are ignored otherwise. A monitor in the sink
//! restarts from the initial location at the next cycle-start event.
//!
//! Two monitors (one per signal) run side by side and their per-cycle
//! verdicts are joined by conjunction.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventLabel, TimedEvent, TimedTrace};

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("bad policy: {0}")]
    BadPolicy(String),
    #[error("time regression at event {index}: {time_ms} ms after {previous_ms} ms")]
    TimeRegression {
        index: usize,
        time_ms: f64,
        previous_ms: f64,
    },
    #[error("verdict streams differ in length (ecg {ecg}, ppg {ppg}); {dropped} cycles dropped")]
    LengthMismatch {
        ecg: usize,
        ppg: usize,
        dropped: usize,
    },
    #[error("no verdicts to score")]
    EmptyVerdicts,
    #[error("monitor input closed")]
    Closed,
    #[error("policy json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type LocationId = usize;
pub type ClockId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CmpOp {
    fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            CmpOp::Lt => value < bound,
            CmpOp::Le => value <= bound,
            CmpOp::Eq => value == bound,
            CmpOp::Ge => value >= bound,
            CmpOp::Gt => value > bound,
        }
    }
}

/// `clock op bound_ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockConstraint {
    pub clock: ClockId,
    pub op: CmpOp,
    pub bound_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: LocationId,
    pub event: EventLabel,
    /// Conjunction of clock constraints; empty means always enabled.
    pub guard: Vec<ClockConstraint>,
    pub resets: Vec<ClockId>,
    pub target: LocationId,
}

impl Transition {
    fn enabled(&self, valuation: impl Fn(ClockId) -> f64) -> bool {
        self.guard
            .iter()
            .all(|c| c.op.holds(valuation(c.clock), c.bound_ms))
    }
}

/// Values of one clock admitted by a guard: an interval with open/closed ends.
#[derive(Debug, Clone, Copy)]
struct Span {
    lo: f64,
    lo_closed: bool,
    hi: f64,
    hi_closed: bool,
}

impl Span {
    const ALL: Span = Span {
        lo: 0.0,
        lo_closed: true,
        hi: f64::INFINITY,
        hi_closed: false,
    };

    fn restrict(self, op: CmpOp, k: f64) -> Span {
        let other = match op {
            CmpOp::Lt => Span { hi: k, hi_closed: false, ..Span::ALL },
            CmpOp::Le => Span { hi: k, hi_closed: true, ..Span::ALL },
            CmpOp::Eq => Span { lo: k, lo_closed: true, hi: k, hi_closed: true },
            CmpOp::Ge => Span { lo: k, lo_closed: true, ..Span::ALL },
            CmpOp::Gt => Span { lo: k, lo_closed: false, ..Span::ALL },
        };
        self.intersect(other)
    }

    fn intersect(self, o: Span) -> Span {
        let (lo, lo_closed) = if self.lo > o.lo {
            (self.lo, self.lo_closed)
        } else if o.lo > self.lo {
            (o.lo, o.lo_closed)
        } else {
            (self.lo, self.lo_closed && o.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < o.hi {
            (self.hi, self.hi_closed)
        } else if o.hi < self.hi {
            (o.hi, o.hi_closed)
        } else {
            (self.hi, self.hi_closed && o.hi_closed)
        };
        Span { lo, lo_closed, hi, hi_closed }
    }

    fn is_empty(self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }
}

fn guard_spans(guard: &[ClockConstraint], n_clocks: usize) -> Vec<Span> {
    let mut spans = vec![Span::ALL; n_clocks];
    for c in guard {
        spans[c.clock] = spans[c.clock].restrict(c.op, c.bound_ms);
    }
    spans
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedAutomaton {
    name: String,
    locations: Vec<String>,
    initial: LocationId,
    sink: LocationId,
    accepting: BTreeSet<LocationId>,
    clocks: Vec<String>,
    alphabet: BTreeSet<EventLabel>,
    transitions: Vec<Transition>,
    /// Symbols that occur on some transition.
    relevant: BTreeSet<EventLabel>,
    /// Symbols leaving the initial location; they restart a sunk monitor.
    cycle_start: BTreeSet<EventLabel>,
}

impl TimedAutomaton {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        locations: Vec<String>,
        initial: LocationId,
        sink: LocationId,
        accepting: BTreeSet<LocationId>,
        clocks: Vec<String>,
        alphabet: BTreeSet<EventLabel>,
        transitions: Vec<Transition>,
    ) -> Result<Self, MonitorError> {
        let bad = |msg: String| Err(MonitorError::BadPolicy(msg));
        let n_loc = locations.len();
        if initial >= n_loc || sink >= n_loc {
            return bad("initial or sink location out of range".into());
        }
        if initial == sink {
            return bad("initial location cannot be the sink".into());
        }
        if accepting.contains(&sink) {
            return bad("the sink cannot be accepting".into());
        }
        if accepting.iter().any(|&l| l >= n_loc) {
            return bad("accepting location out of range".into());
        }
        for t in &transitions {
            if t.source >= n_loc || t.target >= n_loc {
                return bad("transition location out of range".into());
            }
            if t.source == sink {
                return bad("the sink has no outgoing transitions".into());
            }
            if !alphabet.contains(&t.event) {
                return bad(format!("event {} is not in the alphabet", t.event));
            }
            for c in &t.guard {
                if c.clock >= clocks.len() {
                    return bad("guard clock out of range".into());
                }
                if !(c.bound_ms.is_finite() && c.bound_ms >= 0.0) {
                    return bad(format!("guard constant {} must be finite and >= 0", c.bound_ms));
                }
            }
            if t.resets.iter().any(|&c| c >= clocks.len()) {
                return bad("reset clock out of range".into());
            }
        }
        for (i, a) in transitions.iter().enumerate() {
            for b in &transitions[i + 1..] {
                if a.source != b.source || a.event != b.event {
                    continue;
                }
                let sa = guard_spans(&a.guard, clocks.len());
                let sb = guard_spans(&b.guard, clocks.len());
                let overlap = sa.iter().zip(&sb).all(|(x, y)| !x.intersect(*y).is_empty());
                if overlap {
                    return bad(format!(
                        "nondeterministic: two transitions from {} on {} can be enabled together",
                        locations[a.source], a.event
                    ));
                }
            }
        }
        let relevant = transitions.iter().map(|t| t.event).collect();
        let cycle_start = transitions
            .iter()
            .filter(|t| t.source == initial)
            .map(|t| t.event)
            .collect();
        Ok(Self {
            name: name.into(),
            locations,
            initial,
            sink,
            accepting,
            clocks,
            alphabet,
            transitions,
            relevant,
            cycle_start,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn initial(&self) -> LocationId {
        self.initial
    }

    pub fn sink(&self) -> LocationId {
        self.sink
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn is_relevant(&self, label: EventLabel) -> bool {
        self.relevant.contains(&label)
    }

    pub fn initial_state(&self) -> MonitorState {
        MonitorState {
            location: self.initial,
            reset_at: vec![0.0; self.clocks.len()],
            last_time_ms: 0.0,
        }
    }

    /// Processes one event.
    pub fn step(
        &self,
        state: &MonitorState,
        event: &TimedEvent,
    ) -> Result<(MonitorState, Option<Verdict>), MonitorError> {
        let now = event.time_ms;
        if now < state.last_time_ms {
            return Err(MonitorError::TimeRegression {
                index: 0,
                time_ms: now,
                previous_ms: state.last_time_ms,
            });
        }
        let mut next = state.clone();
        next.last_time_ms = now;

        if next.location == self.sink {
            if !self.cycle_start.contains(&event.label) {
                return Ok((next, None));
            }
            next.location = self.initial;
            next.reset_at.iter_mut().for_each(|r| *r = now);
        }

        let fired = self.transitions.iter().find(|t| {
            t.source == next.location
                && t.event == event.label
                && t.enabled(|c| now - next.reset_at[c])
        });
        match fired {
            Some(t) => {
                for &c in &t.resets {
                    next.reset_at[c] = now;
                }
                next.location = t.target;
                Ok((next, self.verdict_on_entry(t.target)))
            }
            None if self.relevant.contains(&event.label) => {
                next.location = self.sink;
                Ok((next, Some(Verdict::Violated)))
            }
            None => Ok((next, None)),
        }
    }

    fn verdict_on_entry(&self, target: LocationId) -> Option<Verdict> {
        if target == self.sink {
            Some(Verdict::Violated)
        } else if self.accepting.contains(&target) {
            Some(Verdict::Satisfied)
        } else {
            None
        }
    }

    /// Loads a policy file: either the interval template
    /// `{name, start_event, end_event, bound_ms}` or a full automaton.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, MonitorError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, MonitorError> {
        match serde_json::from_str::<PolicyFile>(text)? {
            PolicyFile::Interval(p) => {
                let mut a = build_interval_policy(p.start_event, p.end_event, p.bound_ms)?;
                if let Some(name) = p.name {
                    a.name = name;
                }
                Ok(a)
            }
            PolicyFile::Automaton(def) => Self::try_from(def),
        }
    }

    pub fn to_json(&self) -> Result<String, MonitorError> {
        Ok(serde_json::to_string_pretty(&AutomatonDef::from(self))?)
    }
}

/// Interval template of a policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPolicy {
    #[serde(default)]
    pub name: Option<String>,
    pub start_event: EventLabel,
    pub end_event: EventLabel,
    pub bound_ms: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    Interval(IntervalPolicy),
    Automaton(AutomatonDef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDef {
    pub clock: String,
    pub op: CmpOp,
    pub bound_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDef {
    pub from: String,
    pub event: EventLabel,
    #[serde(default)]
    pub guard: Vec<ConstraintDef>,
    #[serde(default)]
    pub resets: Vec<String>,
    pub to: String,
}

/// Named (JSON) form of a timed automaton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutomatonDef {
    pub name: String,
    pub locations: Vec<String>,
    pub initial: String,
    pub sink: String,
    pub accepting: Vec<String>,
    pub clocks: Vec<String>,
    #[serde(default)]
    pub alphabet: Option<Vec<EventLabel>>,
    pub transitions: Vec<TransitionDef>,
}

impl TryFrom<AutomatonDef> for TimedAutomaton {
    type Error = MonitorError;

    fn try_from(def: AutomatonDef) -> Result<Self, Self::Error> {
        let loc = |name: &str| {
            def.locations
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| MonitorError::BadPolicy(format!("unknown location {name:?}")))
        };
        let clock = |name: &str| {
            def.clocks
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| MonitorError::BadPolicy(format!("unknown clock {name:?}")))
        };
        let mut transitions = Vec::with_capacity(def.transitions.len());
        for t in &def.transitions {
            transitions.push(Transition {
                source: loc(&t.from)?,
                event: t.event,
                guard: t
                    .guard
                    .iter()
                    .map(|g| {
                        Ok(ClockConstraint {
                            clock: clock(&g.clock)?,
                            op: g.op,
                            bound_ms: g.bound_ms,
                        })
                    })
                    .collect::<Result<_, MonitorError>>()?,
                resets: t.resets.iter().map(|c| clock(c)).collect::<Result<_, _>>()?,
                target: loc(&t.to)?,
            });
        }
        let accepting = def
            .accepting
            .iter()
            .map(|a| loc(a))
            .collect::<Result<_, _>>()?;
        let alphabet = match &def.alphabet {
            Some(a) => a.iter().copied().collect(),
            None => EventLabel::ALL.into_iter().collect(),
        };
        TimedAutomaton::new(
            def.name.clone(),
            def.locations.clone(),
            loc(&def.initial)?,
            loc(&def.sink)?,
            accepting,
            def.clocks.clone(),
            alphabet,
            transitions,
        )
    }
}

impl From<&TimedAutomaton> for AutomatonDef {
    fn from(a: &TimedAutomaton) -> Self {
        let loc = |id: LocationId| a.locations[id].clone();
        let clock = |id: ClockId| a.clocks[id].clone();
        AutomatonDef {
            name: a.name.clone(),
            locations: a.locations.clone(),
            initial: loc(a.initial),
            sink: loc(a.sink),
            accepting: a.accepting.iter().map(|&l| loc(l)).collect(),
            clocks: a.clocks.clone(),
            alphabet: Some(a.alphabet.iter().copied().collect()),
            transitions: a
                .transitions
                .iter()
                .map(|t| TransitionDef {
                    from: loc(t.source),
                    event: t.event,
                    guard: t
                        .guard
                        .iter()
                        .map(|g| ConstraintDef {
                            clock: clock(g.clock),
                            op: g.op,
                            bound_ms: g.bound_ms,
                        })
                        .collect(),
                    resets: t.resets.iter().map(|&c| clock(c)).collect(),
                    to: loc(t.target),
                })
                .collect(),
        }
    }
}

/// Policy "`end` follows `start` within `bound_ms` in every cycle".
///
/// ```text
/// initial --start / x:=0--> armed --end [x <= bound]--> accepting
///                           armed --end [x >  bound]--> sink
/// accepting --start / x:=0--> armed
/// ```
pub fn build_interval_policy(
    start: EventLabel,
    end: EventLabel,
    bound_ms: f64,
) -> Result<TimedAutomaton, MonitorError> {
    if start == end {
        return Err(MonitorError::BadPolicy(format!(
            "start and end events are both {start}"
        )));
    }
    if !(bound_ms.is_finite() && bound_ms > 0.0) {
        return Err(MonitorError::BadPolicy(format!(
            "bound must be positive, got {bound_ms}"
        )));
    }
    const INITIAL: LocationId = 0;
    const ARMED: LocationId = 1;
    const ACCEPTING: LocationId = 2;
    const SINK: LocationId = 3;
    const X: ClockId = 0;
    let within = |op| {
        vec![ClockConstraint {
            clock: X,
            op,
            bound_ms,
        }]
    };
    let transitions = vec![
        Transition { source: INITIAL, event: start, guard: vec![], resets: vec![X], target: ARMED },
        Transition { source: ARMED, event: end, guard: within(CmpOp::Le), resets: vec![], target: ACCEPTING },
        Transition { source: ARMED, event: end, guard: within(CmpOp::Gt), resets: vec![], target: SINK },
        Transition { source: ACCEPTING, event: start, guard: vec![], resets: vec![X], target: ARMED },
    ];
    TimedAutomaton::new(
        format!("{start}{end}<={bound_ms}"),
        ["initial", "armed", "accepting", "sink"].map(String::from).to_vec(),
        INITIAL,
        SINK,
        BTreeSet::from([ACCEPTING]),
        vec!["x".to_string()],
        EventLabel::ALL.into_iter().collect(),
        transitions,
    )
}

/// Online execution state. Clocks are kept as reset timestamps, so a clock's
/// value is always an exact difference of two event times.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub location: LocationId,
    reset_at: Vec<f64>,
    pub last_time_ms: f64,
}

impl MonitorState {
    /// Elapsed milliseconds on every clock at the last event.
    pub fn valuation(&self) -> Vec<f64> {
        self.reset_at.iter().map(|r| self.last_time_ms - r).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "T")]
    Satisfied,
    #[serde(rename = "F")]
    Violated,
}

impl Verdict {
    pub fn is_satisfied(self) -> bool {
        self == Verdict::Satisfied
    }

    pub fn and(self, other: Verdict) -> Verdict {
        if self.is_satisfied() && other.is_satisfied() {
            Verdict::Satisfied
        } else {
            Verdict::Violated
        }
    }
}

impl From<bool> for Verdict {
    fn from(b: bool) -> Self {
        if b {
            Verdict::Satisfied
        } else {
            Verdict::Violated
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_satisfied() { "T" } else { "F" })
    }
}

/// A single stateful monitor instance.
#[derive(Debug, Clone)]
pub struct Monitor<'a> {
    automaton: &'a TimedAutomaton,
    state: MonitorState,
    steps: usize,
}

impl<'a> Monitor<'a> {
    pub fn new(automaton: &'a TimedAutomaton) -> Self {
        Self {
            automaton,
            state: automaton.initial_state(),
            steps: 0,
        }
    }

    pub fn state(&self) -> &MonitorState {
        &self.state
    }

    pub fn step(&mut self, event: &TimedEvent) -> Result<Option<Verdict>, MonitorError> {
        let (state, verdict) = self
            .automaton
            .step(&self.state, event)
            .map_err(|e| match e {
                MonitorError::TimeRegression {
                    time_ms,
                    previous_ms,
                    ..
                } => MonitorError::TimeRegression {
                    index: self.steps,
                    time_ms,
                    previous_ms,
                },
                other => other,
            })?;
        self.state = state;
        self.steps += 1;
        Ok(verdict)
    }
}

/// Verdicts of every completed cycle of `trace`, in order.
pub fn run_monitor(
    automaton: &TimedAutomaton,
    trace: &TimedTrace,
) -> Result<Vec<Verdict>, MonitorError> {
    run_events(automaton, trace.events())
}

fn run_events(automaton: &TimedAutomaton, events: &[TimedEvent]) -> Result<Vec<Verdict>, MonitorError> {
    let mut monitor = Monitor::new(automaton);
    let mut out = Vec::new();
    for e in events {
        if let Some(v) = monitor.step(e)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// Runs the ECG and PPG monitors on separate threads.
pub fn run_parallel(
    ecg_policy: &TimedAutomaton,
    ecg_trace: &TimedTrace,
    ppg_policy: &TimedAutomaton,
    ppg_trace: &TimedTrace,
) -> Result<(Vec<Verdict>, Vec<Verdict>), MonitorError> {
    thread::scope(|s| {
        let ecg = s.spawn(|| run_monitor(ecg_policy, ecg_trace));
        let ppg = s.spawn(|| run_monitor(ppg_policy, ppg_trace));
        let ecg = ecg.join().expect("ecg monitor thread panicked")?;
        let ppg = ppg.join().expect("ppg monitor thread panicked")?;
        Ok((ecg, ppg))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleVerdict {
    pub ecg: Verdict,
    pub ppg: Verdict,
    pub composed: Verdict,
}

impl CycleVerdict {
    pub fn new(ecg: Verdict, ppg: Verdict) -> Self {
        Self {
            ecg,
            ppg,
            composed: ecg.and(ppg),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComposedVerdicts {
    pub cycles: Vec<CycleVerdict>,
    /// Trailing verdicts of the longer stream with no partner.
    pub dropped: usize,
}

/// Cycle-aligned conjunction; the streams must have equal length.
pub fn compose(ecg: &[Verdict], ppg: &[Verdict]) -> Result<ComposedVerdicts, MonitorError> {
    let composed = compose_truncating(ecg, ppg);
    if composed.dropped > 0 {
        return Err(MonitorError::LengthMismatch {
            ecg: ecg.len(),
            ppg: ppg.len(),
            dropped: composed.dropped,
        });
    }
    Ok(composed)
}

/// Conjunction over the common prefix, counting unmatched cycles.
pub fn compose_truncating(ecg: &[Verdict], ppg: &[Verdict]) -> ComposedVerdicts {
    ComposedVerdicts {
        cycles: ecg
            .iter()
            .zip(ppg)
            .map(|(&e, &p)| CycleVerdict::new(e, p))
            .collect(),
        dropped: ecg.len().abs_diff(ppg.len()),
    }
}

/// Fraction of cycles on which the two monitors gave the same verdict.
pub fn agreement_rate(c: &ComposedVerdicts) -> Result<f64, MonitorError> {
    if c.cycles.is_empty() {
        return Err(MonitorError::EmptyVerdicts);
    }
    let agree = c.cycles.iter().filter(|v| v.ecg == v.ppg).count();
    Ok(agree as f64 / c.cycles.len() as f64)
}

/// Fraction of cycles whose composed verdict is `T`.
pub fn composed_true_rate(c: &ComposedVerdicts) -> Result<f64, MonitorError> {
    if c.cycles.is_empty() {
        return Err(MonitorError::EmptyVerdicts);
    }
    let ok = c.cycles.iter().filter(|v| v.composed.is_satisfied()).count();
    Ok(ok as f64 / c.cycles.len() as f64)
}

/// Writes `cycle_index,ecg_verdict,ppg_verdict,composed` rows.
pub fn write_verdict_csv<W: Write>(mut out: W, c: &ComposedVerdicts) -> std::io::Result<()> {
    writeln!(out, "cycle_index,ecg_verdict,ppg_verdict,composed")?;
    for (i, v) in c.cycles.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", v.ecg, v.ppg, v.composed)?;
    }
    Ok(())
}

enum Side {
    Ecg(Verdict),
    Ppg(Verdict),
}

/// Two monitors fed incrementally through bounded queues, with a joining
/// thread that emits composed verdicts as soon as both sides have decided a
/// cycle.
pub struct OnlineMonitors {
    ecg_tx: Option<SyncSender<TimedEvent>>,
    ppg_tx: Option<SyncSender<TimedEvent>>,
    composed_rx: Receiver<CycleVerdict>,
    workers: Vec<JoinHandle<Result<(), MonitorError>>>,
    joiner: Option<JoinHandle<usize>>,
}

impl OnlineMonitors {
    pub fn spawn(ecg_policy: TimedAutomaton, ppg_policy: TimedAutomaton, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let (ecg_tx, ecg_rx) = mpsc::sync_channel::<TimedEvent>(capacity);
        let (ppg_tx, ppg_rx) = mpsc::sync_channel::<TimedEvent>(capacity);
        let (side_tx, side_rx) = mpsc::sync_channel::<Side>(capacity);
        let (composed_tx, composed_rx) = mpsc::channel();

        let worker = |policy: TimedAutomaton,
                      rx: Receiver<TimedEvent>,
                      tx: SyncSender<Side>,
                      wrap: fn(Verdict) -> Side| {
            thread::spawn(move || {
                let mut monitor = Monitor::new(&policy);
                for e in rx {
                    if let Some(v) = monitor.step(&e)? {
                        if tx.send(wrap(v)).is_err() {
                            break;
                        }
                    }
                }
                Ok(())
            })
        };
        let workers = vec![
            worker(ecg_policy, ecg_rx, side_tx.clone(), Side::Ecg),
            worker(ppg_policy, ppg_rx, side_tx, Side::Ppg),
        ];
        let joiner = thread::spawn(move || {
            let mut ecg = VecDeque::new();
            let mut ppg = VecDeque::new();
            for side in side_rx {
                match side {
                    Side::Ecg(v) => ecg.push_back(v),
                    Side::Ppg(v) => ppg.push_back(v),
                }
                while let (Some(_), Some(_)) = (ecg.front(), ppg.front()) {
                    let row = CycleVerdict::new(ecg.pop_front().unwrap(), ppg.pop_front().unwrap());
                    let _ = composed_tx.send(row);
                }
            }
            ecg.len() + ppg.len()
        });
        Self {
            ecg_tx: Some(ecg_tx),
            ppg_tx: Some(ppg_tx),
            composed_rx,
            workers,
            joiner: Some(joiner),
        }
    }

    pub fn feed_ecg(&self, e: TimedEvent) -> Result<(), MonitorError> {
        self.ecg_tx
            .as_ref()
            .ok_or(MonitorError::Closed)?
            .send(e)
            .map_err(|_| MonitorError::Closed)
    }

    pub fn feed_ppg(&self, e: TimedEvent) -> Result<(), MonitorError> {
        self.ppg_tx
            .as_ref()
            .ok_or(MonitorError::Closed)?
            .send(e)
            .map_err(|_| MonitorError::Closed)
    }

    /// Composed verdicts available so far, without blocking.
    pub fn poll(&self) -> Vec<CycleVerdict> {
        self.composed_rx.try_iter().collect()
    }

    /// Closes both inputs and returns every composed verdict not yet polled.
    pub fn finish(mut self) -> Result<ComposedVerdicts, MonitorError> {
        self.ecg_tx.take();
        self.ppg_tx.take();
        let mut first_err = None;
        for w in self.workers.drain(..) {
            if let Err(e) = w.join().expect("monitor thread panicked") {
                first_err.get_or_insert(e);
            }
        }
        let dropped = self
            .joiner
            .take()
            .map(|j| j.join().expect("join thread panicked"))
            .unwrap_or(0);
        if let Some(e) = first_err {
            return Err(e);
        }
        Ok(ComposedVerdicts {
            cycles: self.composed_rx.try_iter().collect(),
            dropped,
        })
    }
}
