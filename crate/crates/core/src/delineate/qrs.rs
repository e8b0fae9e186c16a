//! Pan-Tompkins QRS detection.
//!
//! Band-pass (5-15 Hz) -> 4-sample derivative -> squaring -> 150 ms moving
//! window integration -> adaptive dual thresholds with a 200 ms refractory
//! period, T-wave slope discrimination and search-back for missed beats.
//! Every stage is centered so that the integrated peak lines up with the
//! QRS complex; the R-peak is then located on the raw signal.

use super::{bandpass, DelineateError, MIN_DURATION_MS};
use crate::ingest::Waveform;

#[derive(Debug, Clone, PartialEq)]
pub struct QrsConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub integration_ms: f64,
    pub refractory_ms: f64,
    /// Peaks closer than this to the previous beat are checked for T-waves.
    pub t_wave_ms: f64,
    /// Search back when an RR gap exceeds this multiple of the running mean.
    pub search_back_factor: f64,
    pub learning_ms: f64,
}

impl Default for QrsConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 5.0,
            band_hi_hz: 15.0,
            integration_ms: 150.0,
            refractory_ms: 200.0,
            t_wave_ms: 360.0,
            search_back_factor: 1.66,
            learning_ms: 2000.0,
        }
    }
}

/// Intermediate signals of the detector, exposed for inspection.
#[derive(Debug, Clone)]
pub struct QrsStages {
    pub filtered: Vec<f64>,
    pub derivative: Vec<f64>,
    pub integrated: Vec<f64>,
}

pub fn qrs_stages(ecg: &Waveform, cfg: &QrsConfig) -> Result<QrsStages, DelineateError> {
    let filtered = bandpass(ecg, cfg.band_lo_hz, cfg.band_hi_hz)?.samples().to_vec();
    let n = filtered.len();
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= n {
            0.0
        } else {
            filtered[i as usize]
        }
    };
    let derivative: Vec<f64> = (0..n as isize)
        .map(|i| (2.0 * at(i + 2) + at(i + 1) - at(i - 1) - 2.0 * at(i - 2)) / 8.0)
        .collect();
    let squared: Vec<f64> = derivative.iter().map(|d| d * d).collect();
    let width = ecg.ms_to_samples(cfg.integration_ms).max(1);
    let integrated = super::filter::moving_average(&squared, width);
    Ok(QrsStages {
        filtered,
        derivative,
        integrated,
    })
}

#[derive(Debug, Clone, Copy)]
struct Mark {
    index: usize,
    height: f64,
    slope: f64,
}

struct Levels {
    signal: f64,
    noise: f64,
}

impl Levels {
    fn threshold(&self) -> f64 {
        self.noise + 0.25 * (self.signal - self.noise)
    }
}

/// R-peak sample indices of `ecg`, strictly ascending.
pub fn detect_r_peaks(ecg: &Waveform) -> Result<Vec<usize>, DelineateError> {
    detect_r_peaks_with(ecg, &QrsConfig::default())
}

pub fn detect_r_peaks_with(ecg: &Waveform, cfg: &QrsConfig) -> Result<Vec<usize>, DelineateError> {
    if ecg.duration_ms() < MIN_DURATION_MS {
        return Err(DelineateError::SignalTooShort {
            duration_ms: ecg.duration_ms(),
        });
    }
    let stages = qrs_stages(ecg, cfg)?;
    let mwi = &stages.integrated;
    let n = mwi.len();
    let refractory = ecg.ms_to_samples(cfg.refractory_ms);
    let t_window = ecg.ms_to_samples(cfg.t_wave_ms);
    let half_window = ecg.ms_to_samples(cfg.integration_ms / 2.0);

    let marks: Vec<Mark> = (1..n.saturating_sub(1))
        .filter(|&i| mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1])
        .map(|i| {
            let lo = i.saturating_sub(half_window);
            let hi = (i + half_window + 1).min(n);
            let slope = stages.derivative[lo..hi]
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()));
            Mark {
                index: i,
                height: mwi[i],
                slope,
            }
        })
        .collect();
    if marks.is_empty() {
        return Ok(Vec::new());
    }

    let learn = ecg.ms_to_samples(cfg.learning_ms).clamp(1, n);
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut levels = Levels {
        signal: 0.25 * learn_max,
        noise: 0.5 * learn_mean,
    };

    let mut beats: Vec<Mark> = Vec::new();
    let mut noise_marks: Vec<Mark> = Vec::new();

    for mark in marks {
        let threshold = levels.threshold();
        if mark.height <= threshold {
            levels.noise = 0.125 * mark.height + 0.875 * levels.noise;
            noise_marks.push(mark);
            continue;
        }
        if let Some(last) = beats.last().copied() {
            let gap = mark.index - last.index;
            if gap < refractory {
                if mark.height > last.height {
                    *beats.last_mut().unwrap() = mark;
                }
                continue;
            }
            if gap < t_window && mark.slope < 0.5 * last.slope {
                levels.noise = 0.125 * mark.height + 0.875 * levels.noise;
                noise_marks.push(mark);
                continue;
            }
            if let Some(missed) =
                search_back(&beats, &noise_marks, mark.index, refractory, threshold, cfg)
            {
                levels.signal = 0.25 * missed.height + 0.75 * levels.signal;
                beats.push(missed);
            }
        }
        levels.signal = 0.125 * mark.height + 0.875 * levels.signal;
        beats.push(mark);
    }

    // Locate the R-peak on the raw signal around each integrated peak.
    let raw = ecg.samples();
    let mut peaks: Vec<(usize, f64)> = beats
        .iter()
        .map(|b| {
            let lo = b.index.saturating_sub(half_window);
            let hi = (b.index + half_window + 1).min(n);
            let idx = argmax(&raw[lo..hi]) + lo;
            (idx, raw[idx])
        })
        .collect();

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(peaks.len());
    peaks.sort_by_key(|p| p.0);
    for (idx, amp) in peaks {
        match out.last_mut() {
            Some(last) if idx - last.0 < refractory.max(1) => {
                if amp > last.1 {
                    *last = (idx, amp);
                }
            }
            _ => out.push((idx, amp)),
        }
    }
    Ok(out.into_iter().map(|(i, _)| i).collect())
}

fn search_back(
    beats: &[Mark],
    noise_marks: &[Mark],
    current: usize,
    refractory: usize,
    threshold: f64,
    cfg: &QrsConfig,
) -> Option<Mark> {
    if beats.len() < 2 {
        return None;
    }
    let recent = &beats[beats.len().saturating_sub(9)..];
    let mean_rr = (recent.last()?.index - recent[0].index) as f64 / (recent.len() - 1) as f64;
    let last = beats.last()?.index;
    if ((current - last) as f64) <= cfg.search_back_factor * mean_rr {
        return None;
    }
    noise_marks
        .iter()
        .filter(|m| {
            m.index > last + refractory
                && m.index + refractory < current
                && m.height > 0.5 * threshold
        })
        .copied()
        .max_by(|a, b| a.height.total_cmp(&b.height))
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v < x[best] {
            best = i;
        }
    }
    best
}
