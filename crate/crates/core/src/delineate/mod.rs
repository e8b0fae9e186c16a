//! ECG and PPG event delineation on sample indices.

pub mod filter;
mod ppg;
mod qrs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Waveform;

pub use ppg::{detect_ppg_events, detect_ppg_events_with, PpgConfig};
pub use qrs::{detect_r_peaks, detect_r_peaks_with, qrs_stages, QrsConfig, QrsStages};

use qrs::{argmax, argmin};

/// Shortest signal the detectors accept.
pub const MIN_DURATION_MS: f64 = 2000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelineateError {
    #[error("band {lo} - {hi} Hz is invalid for fs = {fs} Hz")]
    BadBand { lo: f64, hi: f64, fs: f64 },
    #[error("signal too short: {duration_ms} ms (need at least {MIN_DURATION_MS} ms)")]
    SignalTooShort { duration_ms: f64 },
}

/// Zero-phase 4th-order Butterworth band-pass; length is preserved.
pub fn bandpass(w: &Waveform, lo: f64, hi: f64) -> Result<Waveform, DelineateError> {
    let fs = w.fs();
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(DelineateError::BadBand { lo, hi, fs });
    }
    let f = filter::SosFilter::bandpass(lo, hi, fs, 2);
    Ok(w.with_samples(f.filtfilt(w.samples())))
}

/// Zero-phase 4th-order Butterworth low-pass.
pub fn lowpass(w: &Waveform, cutoff: f64) -> Result<Waveform, DelineateError> {
    let fs = w.fs();
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(DelineateError::BadBand {
            lo: 0.0,
            hi: cutoff,
            fs,
        });
    }
    let f = filter::SosFilter::lowpass(cutoff, fs, 2);
    Ok(w.with_samples(f.filtfilt(w.samples())))
}

/// One ECG beat, anchored at its R-peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcgBeat {
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub r: usize,
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcgEvents {
    pub beats: Vec<EcgBeat>,
}

impl EcgEvents {
    pub fn r_peaks(&self) -> Vec<usize> {
        self.beats.iter().map(|b| b.r).collect()
    }

    /// Checks ascending R-peaks and `p < q < r < t` within each beat.
    pub fn is_well_ordered(&self) -> bool {
        let ascending = self.beats.windows(2).all(|w| w[0].r < w[1].r);
        ascending
            && self.beats.iter().all(|b| {
                let seq = [b.p, b.q, Some(b.r), b.t];
                let present: Vec<usize> = seq.iter().flatten().copied().collect();
                present.windows(2).all(|w| w[0] < w[1])
            })
    }
}

/// One PPG pulse, anchored at its systolic peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpgPulse {
    pub onset: Option<usize>,
    pub systolic: usize,
    pub diastolic: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpgEvents {
    pub pulses: Vec<PpgPulse>,
}

impl PpgEvents {
    pub fn systolic_peaks(&self) -> Vec<usize> {
        self.pulses.iter().map(|p| p.systolic).collect()
    }

    /// Checks ascending pulses and `onset < systolic <= diastolic`.
    pub fn is_well_ordered(&self) -> bool {
        let ascending = self.pulses.windows(2).all(|w| w[0].systolic < w[1].systolic);
        ascending
            && self.pulses.iter().all(|p| {
                p.onset.is_none_or(|o| o < p.systolic) && p.diastolic.is_none_or(|d| p.systolic <= d)
            })
    }
}

/// Search windows relative to the R-peak, in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgWindows {
    /// Q is searched in `[R - q_ms, R)`.
    pub q_ms: f64,
    /// P is searched in `[R - p_ms, R - q_ms)`.
    pub p_ms: f64,
    /// T is searched in `(R + t_start_ms, R + t_end_ms]`.
    pub t_start_ms: f64,
    pub t_end_ms: f64,
    /// Width of the smoothing applied before locating the P and T maxima.
    pub smoothing_ms: f64,
}

impl Default for EcgWindows {
    fn default() -> Self {
        Self {
            q_ms: 80.0,
            p_ms: 300.0,
            t_start_ms: 80.0,
            t_end_ms: 400.0,
            smoothing_ms: 40.0,
        }
    }
}

/// Locates P, Q and T around each R-peak. Windows that leave the record
/// yield absent events.
pub fn delineate_ecg(ecg: &Waveform, r_peaks: &[usize]) -> EcgEvents {
    delineate_ecg_with(ecg, r_peaks, &EcgWindows::default())
}

pub fn delineate_ecg_with(ecg: &Waveform, r_peaks: &[usize], win: &EcgWindows) -> EcgEvents {
    let raw = ecg.samples();
    let n = raw.len();
    let smooth = filter::moving_average(raw, odd_width(ecg, win.smoothing_ms));
    let q_len = ecg.ms_to_samples(win.q_ms);
    let p_len = ecg.ms_to_samples(win.p_ms);
    let t_lo = ecg.ms_to_samples(win.t_start_ms);
    let t_hi = ecg.ms_to_samples(win.t_end_ms);

    let mut rs: Vec<usize> = r_peaks.iter().copied().filter(|&r| r < n).collect();
    rs.sort_unstable();
    rs.dedup();

    let beats = rs
        .into_iter()
        .map(|r| {
            let q = (r >= q_len && q_len > 0).then(|| {
                let lo = r - q_len;
                lo + argmin(&raw[lo..r])
            });
            let p = (r >= p_len && p_len > q_len).then(|| {
                let (lo, hi) = (r - p_len, r - q_len);
                lo + argmax(&smooth[lo..hi])
            });
            let t = (r + t_hi < n && t_hi > t_lo).then(|| {
                let (lo, hi) = (r + t_lo + 1, r + t_hi + 1);
                lo + argmax(&smooth[lo..hi])
            });
            EcgBeat { p, q, r, t }
        })
        .collect();
    EcgEvents { beats }
}

pub(crate) fn odd_width(w: &Waveform, ms: f64) -> usize {
    let width = w.ms_to_samples(ms).max(1);
    if width.is_multiple_of(2) {
        width + 1
    } else {
        width
    }
}
