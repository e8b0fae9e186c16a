//! Pearson correlation with Student-t significance, interval correlation
//! tables, OLS lag regression and scatter export.

use std::fmt::{self, Write as _};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{CardiacCycle, CycleSeries};

/// Smallest p-value reported.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum StatsError {
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("io: {0}")]
    Io(String),
    #[error("malformed scatter file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

impl From<std::io::Error> for StatsError {
    fn from(e: std::io::Error) -> Self {
        StatsError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub t_stat: f64,
    pub p_two_sided: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope_b1: f64,
    pub lag_time_ms: f64,
    pub r_squared: f64,
    pub n: usize,
}

struct Moments {
    mx: f64,
    my: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Moments { mx, my, sxx, syy, sxy }
}

fn check_lengths(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < min {
        return Err(StatsError::TooFewSamples { n: x.len(), min });
    }
    Ok(())
}

/// Sample Pearson correlation with a two-sided Student-t test on `n - 2`
/// degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    check_lengths(x, y, 3)?;
    let m = moments(x, y);
    if m.sxx == 0.0 || m.syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let r = (m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0);
    let n = x.len();
    let df = (n - 2) as f64;
    let t_stat = if r.abs() == 1.0 {
        r * f64::INFINITY
    } else {
        r * df.sqrt() / (1.0 - r * r).sqrt()
    };
    Ok(CorrelationResult {
        r,
        t_stat,
        p_two_sided: t_two_sided_p(t_stat, df),
        n,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let p = if t.is_infinite() {
        0.0
    } else {
        reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
    };
    p.clamp(P_FLOOR, 1.0)
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Human-readable p-value; anything below 1e-4 prints as `< 0.0001`.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        "< 0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Closed-form least squares fit `t_ppg = slope_b1 * t_ecg + lag_time_ms`.
pub fn ols_lag(t_ecg: &[f64], t_ppg: &[f64]) -> Result<RegressionResult, StatsError> {
    check_lengths(t_ecg, t_ppg, 2)?;
    let m = moments(t_ecg, t_ppg);
    if m.sxx == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let slope_b1 = m.sxy / m.sxx;
    let lag_time_ms = m.my - slope_b1 * m.mx;
    let r_squared = if m.syy == 0.0 {
        1.0
    } else {
        (m.sxy * m.sxy / (m.sxx * m.syy)).clamp(0.0, 1.0)
    };
    Ok(RegressionResult {
        slope_b1,
        lag_time_ms,
        r_squared,
        n: t_ecg.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EcgInterval {
    PR,
    QR,
    RP,
    RT,
    QT,
}

impl EcgInterval {
    pub const ALL: [EcgInterval; 5] = [
        EcgInterval::PR,
        EcgInterval::QR,
        EcgInterval::RP,
        EcgInterval::RT,
        EcgInterval::QT,
    ];

    pub fn of(self, c: &CardiacCycle) -> Option<f64> {
        let i = c.ecg_intervals?;
        match self {
            EcgInterval::PR => i.pr_ms,
            EcgInterval::QR => i.qr_ms,
            EcgInterval::RP => i.rp_ms,
            EcgInterval::RT => i.rt_ms,
            EcgInterval::QT => i.qt_ms,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EcgInterval::PR => "PR",
            EcgInterval::QR => "QR",
            EcgInterval::RP => "RP",
            EcgInterval::RT => "RT",
            EcgInterval::QT => "QT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PpgInterval {
    Systole,
    Diastole,
}

impl PpgInterval {
    pub const ALL: [PpgInterval; 2] = [PpgInterval::Systole, PpgInterval::Diastole];

    pub fn of(self, c: &CardiacCycle) -> Option<f64> {
        let i = c.ppg_intervals?;
        match self {
            PpgInterval::Systole => i.systole_ms,
            PpgInterval::Diastole => i.diastole_ms,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PpgInterval::Systole => "systole",
            PpgInterval::Diastole => "diastole",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deletion {
    /// Each cell uses every cycle where both of its intervals are present.
    #[default]
    Pairwise,
    /// Only cycles with every table interval present are used.
    Listwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub x: String,
    pub y: String,
    pub n: usize,
    pub result: Option<CorrelationResult>,
    pub error: Option<StatsError>,
}

impl CorrelationCell {
    fn compute(x_name: &str, y_name: &str, pairs: (Vec<f64>, Vec<f64>)) -> Self {
        let n = pairs.0.len();
        let outcome = pearson(&pairs.0, &pairs.1);
        Self {
            x: x_name.to_string(),
            y: y_name.to_string(),
            n,
            result: outcome.as_ref().ok().copied(),
            error: outcome.err(),
        }
    }

    pub fn r(&self) -> Option<f64> {
        self.result.map(|r| r.r)
    }
}

impl fmt::Display for CorrelationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.result, &self.error) {
            (Some(r), _) => write!(f, "r={:.4} p={} n={}", r.r, format_p(r.p_two_sided), r.n),
            (None, Some(e)) => write!(f, "n={} ({e})", self.n),
            (None, None) => write!(f, "n={}", self.n),
        }
    }
}

/// ECG intervals (rows) against PPG intervals (columns), plus the RR versus
/// peak-to-peak cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub deletion: Deletion,
    /// Row-major: `EcgInterval::ALL` x `PpgInterval::ALL`.
    pub cells: Vec<CorrelationCell>,
    pub rr_peak_to_peak: CorrelationCell,
}

impl CorrelationTable {
    pub fn cell(&self, row: EcgInterval, col: PpgInterval) -> &CorrelationCell {
        let i = EcgInterval::ALL.iter().position(|&r| r == row).unwrap();
        let j = PpgInterval::ALL.iter().position(|&c| c == col).unwrap();
        &self.cells[i * PpgInterval::ALL.len() + j]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,n,r,t_stat,p_two_sided,error")?;
        for c in self.cells.iter().chain(std::iter::once(&self.rr_peak_to_peak)) {
            match (&c.result, &c.error) {
                (Some(r), _) => writeln!(out, "{},{},{},{},{},{:e},", c.x, c.y, c.n, r.r, r.t_stat, r.p_two_sided)?,
                (None, e) => writeln!(
                    out,
                    "{},{},{},,,,{}",
                    c.x,
                    c.y,
                    c.n,
                    e.as_ref().map(|e| e.to_string()).unwrap_or_default()
                )?,
            }
        }
        Ok(())
    }

    /// Fixed-width text table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<6}", "");
        for col in PpgInterval::ALL {
            let _ = write!(s, "| {:<36}", col.name());
        }
        s.push('\n');
        for row in EcgInterval::ALL {
            let _ = write!(s, "{:<6}", row.name());
            for col in PpgInterval::ALL {
                let _ = write!(s, "| {:<36}", self.cell(row, col).to_string());
            }
            s.push('\n');
        }
        let _ = writeln!(s, "RR vs peak-to-peak: {}", self.rr_peak_to_peak);
        s
    }
}

fn complete_for_table(c: &CardiacCycle) -> bool {
    EcgInterval::ALL.iter().all(|i| i.of(c).is_some())
        && PpgInterval::ALL.iter().all(|i| i.of(c).is_some())
}

pub fn correlation_table(series: &CycleSeries) -> CorrelationTable {
    correlation_table_with(series, Deletion::Pairwise)
}

pub fn correlation_table_with(series: &CycleSeries, deletion: Deletion) -> CorrelationTable {
    let keep = |c: &CardiacCycle| deletion == Deletion::Pairwise || complete_for_table(c);
    let pairs = |fx: &dyn Fn(&CardiacCycle) -> Option<f64>, fy: &dyn Fn(&CardiacCycle) -> Option<f64>| {
        series
            .cycles
            .iter()
            .filter(|c| keep(c))
            .filter_map(|c| Some((fx(c)?, fy(c)?)))
            .unzip::<f64, f64, Vec<f64>, Vec<f64>>()
    };
    let mut cells = Vec::with_capacity(EcgInterval::ALL.len() * PpgInterval::ALL.len());
    for row in EcgInterval::ALL {
        for col in PpgInterval::ALL {
            cells.push(CorrelationCell::compute(
                row.name(),
                col.name(),
                pairs(&|c| row.of(c), &|c| col.of(c)),
            ));
        }
    }
    let rr = CorrelationCell::compute(
        "RR",
        "peak_to_peak",
        pairs(
            &|c| c.ecg_intervals?.rr_ms,
            &|c| c.ppg_intervals?.peak_to_peak_ms,
        ),
    );
    CorrelationTable {
        deletion,
        cells,
        rr_peak_to_peak: rr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Mean, sample standard deviation and moment-based shape statistics.
pub fn describe(x: &[f64]) -> Result<Descriptive, StatsError> {
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples { n: x.len(), min: 2 });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let sd = (m2 / (n - 1.0)).sqrt();
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(Descriptive {
        n: x.len(),
        mean,
        sd,
        skewness,
        excess_kurtosis,
    })
}

pub const SCATTER_HEADER: &str = "x_ms,y_ms";

/// Two-column CSV of paired values, in input order.
pub fn scatter_export(x: &[f64], y: &[f64], path: impl AsRef<Path>) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{SCATTER_HEADER}")?;
    for (a, b) in x.iter().zip(y) {
        writeln!(out, "{a},{b}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn scatter_import(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |reason: &str| StatsError::Malformed {
            line: i + 1,
            reason: reason.to_string(),
        };
        if i == 0 {
            if line.trim() != SCATTER_HEADER {
                return Err(bad("expected header x_ms,y_ms"));
            }
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
        x.push(a.trim().parse().map_err(|_| bad("bad x value"))?);
        y.push(b.trim().parse().map_err(|_| bad("bad y value"))?);
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EcgIntervals, PpgIntervals};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Correlation as the mean product of z-scores.
    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let sd = |v: &[f64], m: f64| (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let (mx, my) = (mean(x), mean(y));
        let (sx, sy) = (sd(x, mx), sd(y, my));
        x.iter().zip(y).map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy)).sum::<f64>() / (n - 1.0)
    }

    /// Student-t CDF by adaptive Simpson integration. Substituting
    /// `t = sqrt(df) tan(theta)` turns the density into `cos(theta)^(df - 1)`
    /// on `(-pi/2, pi/2)`; the normalization is integrated too.
    fn t_cdf_oracle(t: f64, df: f64) -> f64 {
        let g = |th: f64| th.cos().max(0.0).powf(df - 1.0);
        let half = std::f64::consts::FRAC_PI_2;
        let total = simpson(&g, -half, half, 1e-13, 50);
        let upper = (t / df.sqrt()).atan();
        simpson(&g, -half, upper, 1e-13, 50) / total
    }

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64, depth: u32) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        step(f, a, b, fa, fm, fb, whole, eps, depth)
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn self_and_anti_correlation() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let same = pearson(&x, &x).unwrap();
        assert_eq!(same.r, 1.0);
        assert_eq!(same.p_two_sided, P_FLOOR);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap().r, -1.0);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch { .. })));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples { .. })));
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::ZeroVariance)));
    }

    #[test]
    fn random_pair_matches_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = normals(&mut rng, 50);
        let y: Vec<f64> = x.iter().zip(normals(&mut rng, 50)).map(|(a, e)| 0.3 * a + e).collect();
        let c = pearson(&x, &y).unwrap();
        assert!((c.r - pearson_oracle(&x, &y)).abs() < 1e-12);
        let p = 2.0 * (1.0 - t_cdf_oracle(c.t_stat.abs(), 48.0));
        assert!((c.p_two_sided - p).abs() < 1e-6, "{} vs {p}", c.p_two_sided);
    }

    #[test]
    fn t_cdf_matches_numeric_integration() {
        for df in [1.0, 5.0, 30.0, 100.0] {
            for k in 0..=40 {
                let t = -10.0 + 0.5 * k as f64;
                let got = student_t_cdf(t, df);
                let want = t_cdf_oracle(t, df);
                assert!((got - want).abs() < 1e-8, "df {df} t {t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn t_cdf_closed_forms() {
        // df = 1 is Cauchy; df = 2 has F(t) = 1/2 + t / (2 sqrt(2 + t^2)).
        for t in [-3.0, -0.5, 0.0, 1.0, 7.0] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - cauchy).abs() < 1e-13);
            let two = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - two).abs() < 1e-13);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ols_examples() {
        let x: Vec<f64> = (0..50).map(|i| 1000.0 + 800.0 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 607.065).collect();
        let fit = ols_lag(&x, &y).unwrap();
        assert!((fit.slope_b1 - 1.0).abs() < 1e-9);
        assert!((fit.lag_time_ms - 607.065).abs() < 1e-6);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let two = ols_lag(&[1.0, 3.0], &[2.0, 8.0]).unwrap();
        assert!((two.slope_b1 - 3.0).abs() < 1e-15);
        assert!((two.lag_time_ms + 1.0).abs() < 1e-15);
        assert!(matches!(ols_lag(&[2.0, 2.0], &[1.0, 3.0]), Err(StatsError::ZeroVariance)));
        assert!(matches!(ols_lag(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch { .. })));
    }

    #[test]
    fn p_display() {
        assert_eq!(format_p(1e-7), "< 0.0001");
        assert_eq!(format_p(0.0123), "0.0123");
    }

    fn cycle(pr: f64, systole: Option<f64>, rt: Option<f64>) -> CardiacCycle {
        CardiacCycle {
            ecg_intervals: Some(EcgIntervals {
                pr_ms: Some(pr),
                qr_ms: Some(30.0 + pr / 10.0),
                rp_ms: Some(600.0 - pr),
                rt_ms: rt,
                qt_ms: rt.map(|v| v + 30.0),
                rr_ms: Some(800.0 + pr),
            }),
            ppg_intervals: Some(PpgIntervals {
                systole_ms: systole,
                diastole_ms: Some(500.0 + pr * pr / 100.0),
                peak_to_peak_ms: Some(800.0 + pr),
                ..PpgIntervals::default()
            }),
            ..CardiacCycle::default()
        }
    }

    #[test]
    fn table_coupled_and_missing_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cycles: Vec<CardiacCycle> = (0..200)
            .map(|_| {
                let pr = 160.0 + 20.0 * rng.sample::<f64, _>(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                cycle(pr, Some(pr + 2.0 * e), None)
            })
            .collect();
        let series = CycleSeries { cycles, ambiguous_pairings: 0 };
        let table = correlation_table(&series);
        assert_eq!(table.cells.len(), 10);
        let pr_sys = table.cell(EcgInterval::PR, PpgInterval::Systole);
        assert!(pr_sys.r().unwrap() > 0.97);
        let (x, y) = series.paired_times(|c| EcgInterval::PR.of(c), |c| PpgInterval::Systole.of(c));
        assert!((pr_sys.r().unwrap() - pearson_oracle(&x, &y)).abs() < 1e-12);
        for col in PpgInterval::ALL {
            let rt = table.cell(EcgInterval::RT, col);
            assert_eq!(rt.error, Some(StatsError::TooFewSamples { n: 0, min: 3 }));
        }
        assert!(table.rr_peak_to_peak.r().unwrap() > 0.999);

        let listwise = correlation_table_with(&series, Deletion::Listwise);
        assert!(listwise.cells.iter().all(|c| c.result.is_none()));
        let text = table.to_text();
        assert!(text.contains("< 0.0001"));
    }

    #[test]
    fn scatter_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let x = [1.5, 2.25, 1e-3];
        let y = [3.0, -4.125, 0.1 + 0.2];
        scatter_export(&x, &y, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(scatter_import(&path).unwrap(), (x.to_vec(), y.to_vec()));

        scatter_export(&[], &[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "x_ms,y_ms\n");
    }

    #[test]
    fn describe_known_values() {
        let d = describe(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(d.mean, 5.0);
        assert!((d.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let sym = describe(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(sym.skewness.abs() < 1e-12);
        assert!((sym.excess_kurtosis + 1.3).abs() < 1e-12);
    }

    fn series(min: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, min..60)
    }

    proptest! {
        #[test]
        fn pearson_is_symmetric(x in series(3), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = normals(&mut rng, x.len());
            if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
                prop_assert_eq!(a.r, b.r);
                prop_assert!(a.r.abs() <= 1.0);
                prop_assert!((0.0..=1.0).contains(&a.p_two_sided));
                prop_assert!(a.r * a.t_stat >= 0.0);
            }
        }

        #[test]
        fn pearson_affine_invariance(x in series(3), a in 0.01f64..100.0, b in -1e3f64..1e3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = normals(&mut rng, x.len());
            let Ok(base) = pearson(&x, &y) else { return Ok(()); };
            let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&up, &y).unwrap().r - base.r).abs() < 1e-9);
            prop_assert!((pearson(&down, &y).unwrap().r + base.r).abs() < 1e-9);
        }

        #[test]
        fn p_is_monotone_in_abs_r(n in 3usize..500, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            let df = (n - 2) as f64;
            let t = |r: f64| r * df.sqrt() / (1.0 - r * r).sqrt();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(t_two_sided_p(t(hi), df) <= t_two_sided_p(t(lo), df));
        }

        #[test]
        fn ols_recovers_affine_maps(
            start in 0.0f64..1e5,
            steps in prop::collection::vec(1.0f64..1e3, 1..100),
            slope in 0.5f64..2.0,
            lag in -1e3f64..1e3,
        ) {
            let x: Vec<f64> = std::iter::once(start)
                .chain(steps.iter().scan(start, |t, d| { *t += d; Some(*t) }))
                .collect();
            let y: Vec<f64> = x.iter().map(|v| slope * v + lag).collect();
            match ols_lag(&x, &y) {
                Ok(fit) => {
                    let scale = x.last().unwrap() * slope + lag.abs();
                    prop_assert!((fit.slope_b1 - slope).abs() < 1e-9);
                    prop_assert!((fit.lag_time_ms - lag).abs() < 1e-9 * scale);
                    let resid: f64 = x.iter().zip(&y).map(|(a, b)| b - fit.slope_b1 * a - fit.lag_time_ms).sum::<f64>() / x.len() as f64;
                    prop_assert!(resid.abs() < 1e-9 * scale);
                    prop_assert!((0.0..=1.0).contains(&fit.r_squared));
                }
                Err(e) => prop_assert_eq!(e, StatsError::ZeroVariance),
            }
        }
    }
}
