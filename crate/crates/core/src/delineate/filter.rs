//! Zero-phase Butterworth filtering.
//!
//! Filters are designed from the analog Butterworth prototype, moved to the
//! digital domain with a pre-warped bilinear transform and realised as a
//! cascade of second-order sections. [`SosFilter::filtfilt`] runs the cascade
//! forward and backward over an odd-reflected extension of the input.

use std::f64::consts::PI;

use num_complex::Complex64;

/// One second-order section, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Response at normalised angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II, starting from state `z`.
    fn run(&self, input: &[f64], mut z: [f64; 2]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        input
            .iter()
            .map(|&x| {
                let y = b0 * x + z[0];
                z[0] = b1 * x - a1 * y + z[1];
                z[1] = b2 * x - a2 * y;
                y
            })
            .collect()
    }

    /// State that makes the section output its DC response to a constant `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        [y - self.b[0] * x, self.b[2] * x - self.a[1] * y]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    sections: Vec<Biquad>,
    pad: usize,
}

fn butterworth_prototype(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = Complex64::new(2.0 * fs, 0.0);
    (k + s) / (k - s)
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f_hz / fs).tan()
}

/// Groups digital poles into conjugate-pair sections with the given zeros.
fn sections_from_poles(poles: &[Complex64], zeros: [f64; 2]) -> Vec<Biquad> {
    // Numerator (1 - z0 q)(1 - z1 q) with q = z^-1.
    let b = [1.0, -(zeros[0] + zeros[1]), zeros[0] * zeros[1]];
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|p| p.im >= 0.0).collect();
    let mut real: Vec<f64> = Vec::new();
    upper.retain(|p| {
        if p.im.abs() < 1e-12 {
            real.push(p.re);
            false
        } else {
            true
        }
    });
    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b,
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (p0, p1) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(Biquad {
            b,
            a: [-(p0 + p1), p0 * p1],
        });
    }
    sections
}

impl SosFilter {
    /// Band-pass of `2 * order` poles between `lo` and `hi` Hz.
    pub fn bandpass(lo: f64, hi: f64, fs: f64, order: usize) -> Self {
        let w1 = prewarp(lo, fs);
        let w2 = prewarp(hi, fs);
        let bw = w2 - w1;
        let w0_sq = w1 * w2;
        let mut poles = Vec::with_capacity(2 * order);
        for p in butterworth_prototype(order) {
            // Roots of s^2 - p*bw*s + w0^2 = 0.
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            poles.push(bilinear((pb + disc) / 2.0, fs));
            poles.push(bilinear((pb - disc) / 2.0, fs));
        }
        // Each section carries one zero at DC and one at Nyquist.
        let mut sections = sections_from_poles(&poles, [1.0, -1.0]);
        let center = 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan();
        normalise(&mut sections, center);
        Self {
            sections,
            pad: pad_len(lo, fs),
        }
    }

    /// Low-pass of `order` poles with cutoff `fc` Hz. `order` must be even.
    pub fn lowpass(fc: f64, fs: f64, order: usize) -> Self {
        assert!(order.is_multiple_of(2), "lowpass order must be even");
        let wc = prewarp(fc, fs);
        let poles: Vec<Complex64> = butterworth_prototype(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        let mut sections = sections_from_poles(&poles, [-1.0, -1.0]);
        normalise(&mut sections, 0.0);
        Self {
            sections,
            pad: pad_len(fc, fs),
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Magnitude response of one pass at `f_hz`.
    pub fn magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        let omega = 2.0 * PI * f_hz / fs;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .product::<Complex64>()
            .norm()
    }

    fn run(&self, input: &[f64]) -> Vec<f64> {
        let x0 = input.first().copied().unwrap_or(0.0);
        let mut level = x0;
        let mut signal = input.to_vec();
        for section in &self.sections {
            let zi = section.steady_state(level);
            signal = section.run(&signal, zi);
            level *= section.dc_gain();
        }
        signal
    }

    /// Forward-backward filtering; output has zero phase and the input length.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

fn normalise(sections: &mut [Biquad], omega: f64) {
    let gain: Complex64 = sections.iter().map(|s| s.response(omega)).product();
    if let Some(first) = sections.first_mut() {
        let g = gain.norm();
        for b in &mut first.b {
            *b /= g;
        }
    }
}

// Three periods of the lowest passband frequency, enough for the edge
// transient of the extension to die out.
fn pad_len(f_low: f64, fs: f64) -> usize {
    (3.0 * fs / f_low).ceil() as usize
}

/// Centered moving average over `width` samples (shrunk at the edges).
pub fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || width <= 1 {
        return x.to_vec();
    }
    let half = width / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Zero-phase filtering through the ideal |H|^2 response, evaluated with a
    /// plain O(n^2) DFT.
    fn dft_filter(x: &[f64], fs: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = x.len();
        let spectrum: Vec<Complex64> = (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect();
        (0..n)
            .map(|t| {
                let s: Complex64 = spectrum
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let kk = if k <= n / 2 { k } else { n - k };
                        let f = kk as f64 * fs / n as f64;
                        c * gain(f) * Complex64::from_polar(1.0, 2.0 * PI * (k * t) as f64 / n as f64)
                    })
                    .sum();
                s.re / n as f64
            })
            .collect()
    }

    #[test]
    fn bandpass_has_unit_gain_at_center_and_rejects_dc() {
        let f = SosFilter::bandpass(5.0, 15.0, 125.0, 2);
        assert!((f.magnitude(75f64.sqrt(), 125.0) - 1.0).abs() < 0.02);
        assert!(f.magnitude(1e-9, 125.0) < 1e-6);
        assert!(f.magnitude(62.499, 125.0) < 1e-3);
        // Half power at the (pre-warped) band edges.
        assert!((f.magnitude(5.0, 125.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((f.magnitude(15.0, 125.0) - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn lowpass_half_power_at_cutoff() {
        let f = SosFilter::lowpass(8.0, 125.0, 2);
        assert!((f.magnitude(0.0, 125.0) - 1.0).abs() < 1e-12);
        assert!((f.magnitude(8.0, 125.0) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_input_is_rejected_everywhere() {
        let f = SosFilter::bandpass(5.0, 15.0, 125.0, 2);
        let y = f.filtfilt(&vec![3.7; 1000]);
        assert!(y.iter().all(|v| v.abs() < 1e-6), "{:?}", &y[..5]);
    }

    #[test]
    fn lowpass_passes_constant() {
        let f = SosFilter::lowpass(8.0, 125.0, 2);
        let y = f.filtfilt(&vec![-2.5; 500]);
        assert!(y.iter().all(|v| (v + 2.5).abs() < 1e-9));
    }

    #[test]
    fn sinusoid_matches_dft_oracle_mid_signal() {
        let fs = 125.0;
        let n = 500;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let f = SosFilter::bandpass(5.0, 15.0, fs, 2);
        let y = f.filtfilt(&x);
        let ideal = dft_filter(&x, fs, |hz| if (5.0..=15.0).contains(&hz) { 1.0 } else { 0.0 });
        let mid = n / 4..3 * n / 4;
        let amp = |v: &[f64]| v[mid.clone()].iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let ratio = amp(&y) / amp(&ideal);
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
        for i in mid {
            assert!((y[i] - ideal[i]).abs() < 0.05, "sample {i}: {} vs {}", y[i], ideal[i]);
        }
    }

    #[test]
    fn moving_average_of_ramp_is_ramp_in_interior() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = moving_average(&x, 5);
        for i in 2..18 {
            assert!((y[i] - x[i]).abs() < 1e-12);
        }
    }
}
