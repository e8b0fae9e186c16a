//! Synthetic ECG/PPG records with known event times.
//!
//! Beats are drawn from a single seeded PRNG stream. Event streams use the
//! drawn times directly; waveforms snap every event to the sample grid and
//! render Gaussian bumps (ECG) and a two-bump pulse (PPG) around them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventLabel, EventsError, TimedEvent, TimedTrace};
use crate::ingest::{IngestError, SyncedRecord, Waveform};

/// Time of the first R-peak; leaves room for the first P-wave and onset.
pub const LEAD_IN_MS: f64 = 600.0;
/// Flat tail after the last pulse.
const TAIL_MS: f64 = 200.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad synth spec: {field} {reason}")]
    BadSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Events(#[from] EventsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_cycles: usize,
    pub rr_mean_ms: f64,
    pub rr_jitter_ms: f64,
    pub pr_mean_ms: f64,
    pub pr_jitter_ms: f64,
    /// R-peak to systolic peak (pulse arrival time).
    pub pat_ms: f64,
    /// Standard deviation added independently to each onset and systolic time.
    pub pat_jitter_ms: f64,
    /// Systolic to diastolic peak.
    pub delta_t_ms: f64,
    pub fs: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cycles: 60,
            rr_mean_ms: 800.0,
            rr_jitter_ms: 40.0,
            pr_mean_ms: 160.0,
            pr_jitter_ms: 15.0,
            pat_ms: 650.0,
            pat_jitter_ms: 0.0,
            delta_t_ms: 250.0,
            fs: 125.0,
            noise_sigma: 0.02,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |field: &'static str, reason: &str| {
            Err(SynthError::BadSpec {
                field,
                reason: reason.to_string(),
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.n_cycles == 0 {
            return fail("n_cycles", "must be at least 1");
        }
        for (field, v) in [
            ("rr_mean_ms", self.rr_mean_ms),
            ("pr_mean_ms", self.pr_mean_ms),
            ("pat_ms", self.pat_ms),
            ("delta_t_ms", self.delta_t_ms),
            ("fs", self.fs),
        ] {
            if !positive(v) {
                return fail(field, "must be positive");
            }
        }
        for (field, v) in [
            ("rr_jitter_ms", self.rr_jitter_ms),
            ("pr_jitter_ms", self.pr_jitter_ms),
            ("pat_jitter_ms", self.pat_jitter_ms),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(field, "must be non-negative");
            }
        }
        if self.pr_mean_ms >= self.rr_mean_ms {
            return fail("pr_mean_ms", "must be below rr_mean_ms");
        }
        if self.pat_ms >= self.rr_mean_ms {
            return fail("pat_ms", "must lie in (0, rr_mean_ms)");
        }
        if self.delta_t_ms >= self.rr_mean_ms - self.pr_mean_ms {
            return fail("delta_t_ms", "must be below rr_mean_ms - pr_mean_ms");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthCycle {
    pub p_ms: f64,
    pub q_ms: f64,
    pub r_ms: f64,
    pub t_ms: f64,
    pub onset_ms: f64,
    pub systolic_ms: f64,
    pub diastolic_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cycles: Vec<TruthCycle>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}

fn gauss(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + sd * z
}

/// Beat times before any sample snapping. The pulse onset is tied to the
/// P-peak and the systolic peak to the R-peak, both shifted by `pat_ms`.
fn draw_cycles(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<TruthCycle> {
    let mut cycles = Vec::with_capacity(spec.n_cycles);
    let mut r = LEAD_IN_MS;
    for k in 0..spec.n_cycles {
        if k > 0 {
            let rr = gauss(rng, spec.rr_mean_ms, spec.rr_jitter_ms);
            r += rr.clamp(0.5 * spec.rr_mean_ms, 1.5 * spec.rr_mean_ms);
        }
        let qr = gauss(rng, 30.0, 2.0).clamp(10.0, 60.0);
        let pr = gauss(rng, spec.pr_mean_ms, spec.pr_jitter_ms)
            .clamp(0.5 * spec.pr_mean_ms, 1.5 * spec.pr_mean_ms)
            .max(qr + 20.0);
        let rt = gauss(rng, 260.0, 10.0).clamp(200.0, 320.0);
        let onset_jitter = gauss(rng, 0.0, spec.pat_jitter_ms);
        let systolic_jitter = gauss(rng, 0.0, spec.pat_jitter_ms);

        let p = r - pr;
        let systolic = r + spec.pat_ms + systolic_jitter;
        let onset = (p + spec.pat_ms + onset_jitter).min(systolic - 20.0);
        cycles.push(TruthCycle {
            p_ms: p,
            q_ms: r - qr,
            r_ms: r,
            t_ms: r + rt,
            onset_ms: onset,
            systolic_ms: systolic,
            diastolic_ms: systolic + spec.delta_t_ms,
        });
    }
    // Keep each diastolic peak ahead of the following onset.
    for k in 1..cycles.len() {
        let next_onset = cycles[k].onset_ms;
        let prev = &mut cycles[k - 1];
        if prev.diastolic_ms >= next_onset {
            prev.diastolic_ms = 0.5 * (prev.systolic_ms + next_onset);
        }
    }
    cycles
}

/// ECG (`p,q,r,t`) and PPG (`F,P,D`) event streams with their ground truth.
pub fn gen_event_streams(
    spec: &SynthSpec,
) -> Result<(TimedTrace, TimedTrace, GroundTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cycles = draw_cycles(spec, &mut rng);
    let mut ecg = Vec::with_capacity(4 * cycles.len());
    let mut ppg = Vec::with_capacity(3 * cycles.len());
    for c in &cycles {
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
    Ok((
        TimedTrace::from_unsorted(ecg)?,
        TimedTrace::from_unsorted(ppg)?,
        GroundTruth { cycles },
    ))
}

fn bump(t: f64, center: f64, sigma: f64) -> f64 {
    (-0.5 * ((t - center) / sigma).powi(2)).exp()
}

struct Grid {
    fs: f64,
}

impl Grid {
    fn snap(&self, ms: f64) -> f64 {
        self.time((ms * self.fs / 1000.0).round() as usize)
    }

    /// Whole samples in a duration.
    fn steps(&self, ms: f64) -> i64 {
        (ms * self.fs / 1000.0).round() as i64
    }

    fn index(&self, ms: f64) -> usize {
        (ms * self.fs / 1000.0).round() as usize
    }

    fn time(&self, i: usize) -> f64 {
        i as f64 * 1000.0 / self.fs
    }
}

// ECG morphology: (amplitude, sigma in ms).
const P_WAVE: (f64, f64) = (0.2, 20.0);
const Q_WAVE: (f64, f64) = (-0.15, 8.0);
const R_WAVE: (f64, f64) = (1.0, 10.0);
const S_WAVE: (f64, f64) = (-0.25, 10.0);
const S_DELAY_MS: f64 = 30.0;
const T_WAVE: (f64, f64) = (0.35, 40.0);
const DIASTOLIC: (f64, f64) = (0.4, 40.0);
/// Decay width of the falling limb as a fraction of systolic-to-next-onset.
const FALL_WIDTH: f64 = 0.3;

fn render_ecg(cycles: &[TruthCycle], n: usize, grid: &Grid) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = grid.time(i);
            cycles
                .iter()
                .filter(|c| (t - c.r_ms).abs() < 1500.0)
                .map(|c| {
                    P_WAVE.0 * bump(t, c.p_ms, P_WAVE.1)
                        + Q_WAVE.0 * bump(t, c.q_ms, Q_WAVE.1)
                        + R_WAVE.0 * bump(t, c.r_ms, R_WAVE.1)
                        + S_WAVE.0 * bump(t, c.r_ms + S_DELAY_MS, S_WAVE.1)
                        + T_WAVE.0 * bump(t, c.t_ms, T_WAVE.1)
                })
                .sum()
        })
        .collect()
}

/// Rise `sin` from onset to systolic peak, Gaussian decay towards the next onset,
/// and a diastolic bump faded in and out over the falling limb.
fn render_ppg(cycles: &[TruthCycle], next_onsets: &[f64], n: usize, grid: &Grid) -> Vec<f64> {
    let first_onset = cycles[0].onset_ms;
    let half_pi = std::f64::consts::FRAC_PI_2;
    (0..n)
        .map(|i| {
            let t = grid.time(i);
            if t < first_onset {
                return 0.3 * (1.0 - t / first_onset);
            }
            let k = cycles.partition_point(|c| c.onset_ms <= t) - 1;
            let (c, o_next) = (&cycles[k], next_onsets[k]);
            if t >= o_next {
                return 0.0;
            }
            if t <= c.systolic_ms {
                (half_pi * (t - c.onset_ms) / (c.systolic_ms - c.onset_ms)).sin()
            } else {
                let phase = (t - c.systolic_ms) / (o_next - c.systolic_ms);
                (-(phase / FALL_WIDTH).powi(2)).exp()
                    + DIASTOLIC.0
                        * bump(t, c.diastolic_ms, DIASTOLIC.1)
                        * (std::f64::consts::PI * phase).sin()
            }
        })
        .collect()
}

/// Index of the extreme of `x` within `radius` samples of `center`.
fn refine(x: &[f64], center: usize, radius: usize, maximum: bool) -> usize {
    let lo = center.saturating_sub(radius);
    let hi = (center + radius + 1).min(x.len());
    let mut best = center.min(x.len() - 1);
    for i in lo..hi {
        let better = if maximum { x[i] > x[best] } else { x[i] < x[best] };
        if better {
            best = i;
        }
    }
    best
}

/// Synchronized ECG/PPG waveforms. Ground truth is the sample-aligned time
/// of each extremum of the noise-free signals.
pub fn gen_waveforms(spec: &SynthSpec) -> Result<(SyncedRecord, GroundTruth), SynthError> {
    spec.validate()?;
    if spec.fs < 100.0 {
        return Err(SynthError::BadSpec {
            field: "fs",
            reason: format!("must be at least 100 Hz for waveforms, got {}", spec.fs),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = Grid { fs: spec.fs };
    let mut cycles: Vec<TruthCycle> = draw_cycles(spec, &mut rng)
        .into_iter()
        .map(|c| {
            // Offsets are rounded relative to their anchors so that constant
            // gaps stay constant on the grid.
            let r = grid.index(c.r_ms) as i64;
            let p = r - grid.steps(c.r_ms - c.p_ms);
            let systolic = r + grid.steps(c.systolic_ms - c.r_ms);
            let onset = (p + grid.steps(c.onset_ms - c.p_ms)).min(systolic - 1);
            let at = |i: i64| grid.time(i as usize);
            TruthCycle {
                p_ms: at(p),
                q_ms: at(r - grid.steps(c.r_ms - c.q_ms)),
                r_ms: at(r),
                t_ms: at(r + grid.steps(c.t_ms - c.r_ms)),
                onset_ms: at(onset),
                systolic_ms: at(systolic),
                diastolic_ms: at(systolic + grid.steps(c.diastolic_ms - c.systolic_ms)),
            }
        })
        .collect();

    let mut next_onsets: Vec<f64> = cycles.iter().skip(1).map(|c| c.onset_ms).collect();
    let last = cycles.last().expect("n_cycles >= 1");
    next_onsets.push(grid.snap(last.onset_ms + spec.rr_mean_ms));
    let end_ms = next_onsets.last().unwrap() + TAIL_MS;
    let n = grid.index(end_ms) + 1;

    let ecg_clean = render_ecg(&cycles, n, &grid);
    let ppg_clean = render_ppg(&cycles, &next_onsets, n, &grid);

    for c in &mut cycles {
        let radius = |sigma_ms: f64| grid.index(2.0 * sigma_ms).max(1);
        c.p_ms = grid.time(refine(&ecg_clean, grid.index(c.p_ms), radius(P_WAVE.1), true));
        c.q_ms = grid.time(refine(&ecg_clean, grid.index(c.q_ms), radius(Q_WAVE.1), false));
        c.t_ms = grid.time(refine(&ecg_clean, grid.index(c.t_ms), radius(T_WAVE.1), true));
        c.diastolic_ms =
            grid.time(refine(&ppg_clean, grid.index(c.diastolic_ms), radius(DIASTOLIC.1), true));
    }

    let mut noisy = |clean: Vec<f64>| -> Vec<f64> {
        clean
            .into_iter()
            .map(|v| gauss(&mut rng, v, spec.noise_sigma))
            .collect()
    };
    let ecg = noisy(ecg_clean);
    let ppg = noisy(ppg_clean);
    let record = SyncedRecord::new(
        format!("synth-{}", spec.seed),
        Waveform::new(ecg, spec.fs, "ecg")?,
        Waveform::new(ppg, spec.fs, "ppg")?,
    )?;
    Ok((record, GroundTruth { cycles }))
}
