//! PPG pulse delineation.
//!
//! Pulses are located with two moving averages over the clipped, squared
//! 0.5-8 Hz band-passed signal: a short window (one systolic wave) and a long
//! window (one beat). Stretches where the short average exceeds the long one
//! are blocks of interest; each block holds one systolic peak. Peak, onset and
//! diastolic peak are then placed on a low-passed copy of the raw signal. The
//! onset is anchored at the minimum before the peak and placed where the
//! steepest upstroke tangent crosses that minimum's level.

use super::{argmax, argmin, bandpass, filter, lowpass, DelineateError, PpgEvents, PpgPulse};
use super::MIN_DURATION_MS;
use crate::ingest::Waveform;

#[derive(Debug, Clone, PartialEq)]
pub struct PpgConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub smoothing_hz: f64,
    pub peak_window_ms: f64,
    pub beat_window_ms: f64,
    /// Offset added to the beat average, as a fraction of the mean energy.
    pub offset_fraction: f64,
    /// Minimum spacing between systolic peaks when no rate hint is given.
    pub min_spacing_ms: f64,
}

impl Default for PpgConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 0.5,
            band_hi_hz: 8.0,
            smoothing_hz: 10.0,
            peak_window_ms: 111.0,
            beat_window_ms: 667.0,
            offset_fraction: 0.02,
            min_spacing_ms: 300.0,
        }
    }
}

/// Detects onset, systolic and diastolic peak of every pulse.
///
/// `expected_rate_hint` (beats/min) sets the minimum spacing between systolic
/// peaks to half the expected beat period.
pub fn detect_ppg_events(
    ppg: &Waveform,
    expected_rate_hint: Option<f64>,
) -> Result<PpgEvents, DelineateError> {
    detect_ppg_events_with(ppg, expected_rate_hint, &PpgConfig::default())
}

pub fn detect_ppg_events_with(
    ppg: &Waveform,
    expected_rate_hint: Option<f64>,
    cfg: &PpgConfig,
) -> Result<PpgEvents, DelineateError> {
    if ppg.duration_ms() < MIN_DURATION_MS {
        return Err(DelineateError::SignalTooShort {
            duration_ms: ppg.duration_ms(),
        });
    }
    let n = ppg.len();
    let band = bandpass(ppg, cfg.band_lo_hz, cfg.band_hi_hz.min(0.45 * ppg.fs()))?;
    let smooth = lowpass(ppg, cfg.smoothing_hz.min(0.45 * ppg.fs()))?;
    let smooth = smooth.samples();

    let energy: Vec<f64> = band.samples().iter().map(|v| v.max(0.0).powi(2)).collect();
    let peak_w = super::odd_width(ppg, cfg.peak_window_ms);
    let beat_w = super::odd_width(ppg, cfg.beat_window_ms);
    let ma_peak = filter::moving_average(&energy, peak_w);
    let ma_beat = filter::moving_average(&energy, beat_w);
    let offset = cfg.offset_fraction * energy.iter().sum::<f64>() / n as f64;

    let mut blocks = Vec::new();
    let mut start = None;
    for i in 0..=n {
        let inside = i < n && ma_peak[i] > ma_beat[i] + offset;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= peak_w {
                    blocks.push((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }

    let spacing_ms = match expected_rate_hint {
        Some(bpm) if bpm > 0.0 => 0.5 * 60_000.0 / bpm,
        _ => cfg.min_spacing_ms,
    };
    let spacing = ppg.ms_to_samples(spacing_ms).max(1);
    let margin = peak_w / 2;

    let mut systolic: Vec<usize> = Vec::with_capacity(blocks.len());
    for (lo, hi) in blocks {
        let lo = lo.saturating_sub(margin);
        let hi = (hi + margin).min(n);
        let idx = lo + argmax(&smooth[lo..hi]);
        if !is_local_max(smooth, idx) {
            continue;
        }
        match systolic.last_mut() {
            Some(last) if idx - *last < spacing => {
                if smooth[idx] > smooth[*last] {
                    *last = idx;
                }
            }
            _ => systolic.push(idx),
        }
    }

    let onsets: Vec<Option<usize>> = systolic
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let lo = if k == 0 { 0 } else { systolic[k - 1] };
            if s <= lo + 1 {
                return None;
            }
            let foot = lo + argmin(&smooth[lo..s]);
            // A minimum on the window edge is not a pulse foot.
            if foot == lo || !is_local_min(smooth, foot) {
                return None;
            }
            Some(tangent_onset(smooth, foot, s))
        })
        .collect();

    let pulses = systolic
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = match systolic.get(k + 1) {
                Some(&next) => onsets[k + 1].unwrap_or(next),
                None => n,
            };
            let diastolic = (s + 1..end.min(n.saturating_sub(1)))
                .filter(|&i| is_local_max(smooth, i))
                .max_by(|&a, &b| smooth[a].total_cmp(&smooth[b]));
            PpgPulse {
                onset: onsets[k],
                systolic: s,
                diastolic,
            }
        })
        .collect();
    Ok(PpgEvents { pulses })
}

/// Intersection of the tangent at the steepest upstroke sample in
/// `(foot, peak)` with the horizontal line through the minimum at `foot`.
fn tangent_onset(x: &[f64], foot: usize, peak: usize) -> usize {
    let mut steepest = foot;
    let mut slope = 0.0;
    for i in foot + 1..peak {
        let d = 0.5 * (x[i + 1] - x[i - 1]);
        if d > slope {
            slope = d;
            steepest = i;
        }
    }
    if slope <= 0.0 {
        return foot;
    }
    let t = steepest as f64 - (x[steepest] - x[foot]) / slope;
    (t.round().max(foot as f64) as usize).min(peak - 1)
}

fn is_local_max(x: &[f64], i: usize) -> bool {
    i > 0 && i + 1 < x.len() && x[i] > x[i - 1] && x[i] >= x[i + 1]
}

fn is_local_min(x: &[f64], i: usize) -> bool {
    i > 0 && i + 1 < x.len() && x[i] < x[i - 1] && x[i] <= x[i + 1]
}
