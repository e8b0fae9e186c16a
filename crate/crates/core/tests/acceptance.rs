//! Acceptance checks. Run with
//! `cargo test -p ecgppg --test acceptance -- --nocapture` to see one line per
//! criterion.

use std::time::{Duration, Instant};

use ecgppg::delineate::{delineate_ecg, detect_ppg_events, detect_r_peaks};
use ecgppg::events::{
    aligned_traces, compute_intervals, pair_cycles, CardiacCycle, CycleSeries, EcgTimes,
    EventLabel, LagWindow, PpgTimes, TimedEvent, TimedTrace,
};
use ecgppg::ingest::{read_manifest, SyncedRecord};
use ecgppg::monitor::{
    agreement_rate, build_interval_policy, compose, compose_truncating, run_monitor, run_parallel,
    Verdict,
};
use ecgppg::stats::{correlation_table, ols_lag, pearson, EcgInterval, PpgInterval};
use ecgppg::synth::{gen_event_streams, gen_waveforms, GroundTruth, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use EventLabel::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn trace(events: &[(EventLabel, f64)]) -> TimedTrace {
    TimedTrace::new(events.iter().map(|&(l, t)| TimedEvent::new(l, t)).collect()).unwrap()
}

fn ac1_example_replay() -> Outcome {
    let start = Instant::now();
    let ecg_policy = build_interval_policy(PPeak, RPeak, 210.0).map_err(|e| e.to_string())?;
    let ppg_policy = build_interval_policy(Onset, SystolicPeak, 210.0).map_err(|e| e.to_string())?;
    let ecg = trace(&[(PPeak, 728.0), (RPeak, 888.0)]);
    let run = |systolic: f64| -> Result<(Verdict, Verdict, Verdict), String> {
        let ppg = trace(&[(Onset, 1416.0), (SystolicPeak, systolic)]);
        let (ve, vp) = run_parallel(&ecg_policy, &ecg, &ppg_policy, &ppg).map_err(|e| e.to_string())?;
        let c = compose(&ve, &vp).map_err(|e| e.to_string())?;
        if c.cycles.len() != 1 {
            return Err(format!("{} composed verdicts", c.cycles.len()));
        }
        let v = c.cycles[0];
        Ok((v.ecg, v.ppg, v.composed))
    };
    let on_time = run(1568.0)?;
    let late = run(1650.0)?;
    let again = run(1568.0)?;
    let elapsed = start.elapsed();
    let (t, f) = (Verdict::Satisfied, Verdict::Violated);
    check(
        on_time == (t, t, t) && late == (t, f, f) && again == on_time && within(elapsed, 1.0),
        format!(
            "1568 -> ({},{},{}), 1650 -> ({},{},{}), {:.1} ms",
            on_time.0,
            on_time.1,
            on_time.2,
            late.0,
            late.1,
            late.2,
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

/// Verdicts of a start/end interval property, by direct case analysis over
/// the raw event list.
fn scan_oracle(events: &[TimedEvent], start: EventLabel, end: EventLabel, bound: f64) -> Vec<Verdict> {
    let mut armed_at: Option<f64> = None;
    let mut sunk = false;
    let mut out = Vec::new();
    for e in events {
        if e.label == start {
            if armed_at.is_some() {
                out.push(Verdict::Violated);
                armed_at = None;
                sunk = true;
            } else {
                armed_at = Some(e.time_ms);
                sunk = false;
            }
        } else if e.label == end && !sunk {
            match armed_at.take() {
                Some(t0) if e.time_ms - t0 <= bound => out.push(Verdict::Satisfied),
                _ => {
                    out.push(Verdict::Violated);
                    sunk = true;
                }
            }
        }
    }
    out
}

fn random_trace(rng: &mut ChaCha8Rng, start: EventLabel, end: EventLabel) -> Vec<TimedEvent> {
    let cycles = rng.random_range(0..=5);
    let mut t = rng.random_range(0.0..500.0f64).round();
    let mut events = Vec::new();
    for _ in 0..cycles {
        let mut cycle = Vec::new();
        if rng.random_bool(0.9) {
            cycle.push(start);
        }
        for _ in 0..rng.random_range(0..4) {
            cycle.push(EventLabel::ALL[rng.random_range(0..EventLabel::ALL.len())]);
        }
        if rng.random_bool(0.9) {
            cycle.push(end);
        }
        for label in cycle {
            if events.len() == 50 {
                break;
            }
            t += rng.random_range(0.0..160.0f64).round();
            events.push(TimedEvent::new(label, t));
        }
        t += rng.random_range(100.0..900.0f64).round();
    }
    events
}

fn ac2_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut verdicts = 0;
    for _ in 0..1000 {
        let s = EventLabel::ALL[rng.random_range(0..EventLabel::ALL.len())];
        let e = loop {
            let e = EventLabel::ALL[rng.random_range(0..EventLabel::ALL.len())];
            if e != s {
                break e;
            }
        };
        let bound = rng.random_range(1.0..400.0f64).round();
        let events = random_trace(&mut rng, s, e);
        let policy = build_interval_policy(s, e, bound).map_err(|e| e.to_string())?;
        let got = run_monitor(&policy, &TimedTrace::new(events.clone()).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let want = scan_oracle(&events, s, e, bound);
        verdicts += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && within(elapsed, 10.0),
        format!(
            "{mismatches} of 1000 traces differ ({verdicts} verdicts), {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let sd = |v: &[f64], m: f64| (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (mx, my) = (mean(x), mean(y));
    let (sx, sy) = (sd(x, mx), sd(y, my));
    x.iter().zip(y).map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy)).sum::<f64>() / (n - 1.0)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (flm, frm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    step(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), eps, 50)
}

/// Two-sided Student-t tail by integrating `cos(theta)^(df - 1)`, the density
/// after substituting `t = sqrt(df) tan(theta)`.
fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
    let g = |th: f64| th.cos().max(0.0).powf(df - 1.0);
    let half = std::f64::consts::FRAC_PI_2;
    let upper = (t.abs() / df.sqrt()).atan();
    let total = simpson(&g, 0.0, half, 1e-14);
    let tail = simpson(&g, upper, half, 1e-14);
    tail / total
}

fn ac3_pearson() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_r = 0.0f64;
    let mut worst_p = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..=1000);
        let coupling: f64 = rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 10.0 + 50.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| coupling * v + rng.sample::<f64, _>(StandardNormal) * 10.0)
            .collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        worst_r = worst_r.max((got.r - pearson_oracle(&x, &y)).abs());
        let want_p = t_two_sided_oracle(got.t_stat, (n - 2) as f64).max(1e-300);
        worst_p = worst_p.max((got.p_two_sided - want_p).abs());
    }
    let line: Vec<f64> = (0..20).map(|i| i as f64 * 3.0 + 1.0).collect();
    let up: Vec<f64> = line.iter().map(|v| 2.0 * v + 5.0).collect();
    let down: Vec<f64> = line.iter().map(|v| -0.5 * v + 5.0).collect();
    let r_up = pearson(&line, &up).map_err(|e| e.to_string())?.r;
    let r_down = pearson(&line, &down).map_err(|e| e.to_string())?.r;
    let elapsed = start.elapsed();
    check(
        worst_r <= 1e-12 && worst_p <= 1e-6 && r_up == 1.0 && r_down == -1.0 && within(elapsed, 10.0),
        format!(
            "max |dr| {worst_r:.2e}, max |dp| {worst_p:.2e}, r = {r_up} / {r_down}, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn r_systolic_pairs(truth: &GroundTruth) -> (Vec<f64>, Vec<f64>) {
    truth.cycles.iter().map(|c| (c.r_ms, c.systolic_ms)).unzip()
}

fn ols_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    // Normal equations on raw sums, shifted by the first sample for conditioning.
    let n = x.len() as f64;
    let (x0, y0) = (x[0], y[0]);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (a, b) = (a - x0, b - y0);
        sx += a;
        sy += b;
        sxx += a * a;
        sxy += a * b;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    (slope, y0 + intercept - slope * x0)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn ac4_lag_recovery() -> Outcome {
    let pat = 607.065;
    let clean = SynthSpec {
        n_cycles: 200,
        pat_ms: pat,
        pat_jitter_ms: 0.0,
        seed: 4,
        ..SynthSpec::default()
    };
    let (_, _, truth) = gen_event_streams(&clean).map_err(|e| e.to_string())?;
    let (x, y) = r_systolic_pairs(&truth);
    let fit = ols_lag(&x, &y).map_err(|e| e.to_string())?;
    let clean_ok = (fit.slope_b1 - 1.0).abs() <= 1e-9 && (fit.lag_time_ms - pat).abs() <= 1e-6;

    let jittered = SynthSpec {
        n_cycles: 500,
        pat_ms: pat,
        pat_jitter_ms: 5.0,
        seed: 44,
        ..SynthSpec::default()
    };
    let (_, _, truth) = gen_event_streams(&jittered).map_err(|e| e.to_string())?;
    let (x, y) = r_systolic_pairs(&truth);
    let noisy = ols_lag(&x, &y).map_err(|e| e.to_string())?;
    let (slope_lo, slope_hi) = (0.999 - 0.01, 0.999 + 0.01);
    let (lag_lo, lag_hi) = (pat - 3.0, pat + 3.0);

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let n = x.len();
    let mut slopes = Vec::with_capacity(1000);
    let mut lags = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let (s, l) = ols_oracle(&bx, &by);
        slopes.push(s);
        lags.push(l);
    }
    slopes.sort_by(f64::total_cmp);
    lags.sort_by(f64::total_cmp);
    let slope_ci = (percentile(&slopes, 0.025), percentile(&slopes, 0.975));
    let lag_ci = (percentile(&lags, 0.025), percentile(&lags, 0.975));
    let (oracle_slope, oracle_lag) = ols_oracle(&x, &y);

    let noisy_ok = (slope_lo..=slope_hi).contains(&noisy.slope_b1)
        && (lag_lo..=lag_hi).contains(&noisy.lag_time_ms)
        && slope_lo <= slope_ci.0
        && slope_ci.1 <= slope_hi
        && lag_lo <= lag_ci.0
        && lag_ci.1 <= lag_hi
        && (noisy.slope_b1 - oracle_slope).abs() < 1e-9
        && (noisy.lag_time_ms - oracle_lag).abs() < 1e-6;
    check(
        clean_ok && noisy_ok,
        format!(
            "clean b1-1 {:.1e} lag {:.6}; jittered b1 {:.5} lag {:.3}, bootstrap 95% b1 [{:.5}, {:.5}] lag [{:.3}, {:.3}]",
            fit.slope_b1 - 1.0,
            fit.lag_time_ms,
            noisy.slope_b1,
            noisy.lag_time_ms,
            slope_ci.0,
            slope_ci.1,
            lag_ci.0,
            lag_ci.1
        ),
    )
}

/// Cycles with independent PR, QR, RT and RR draws; systole tracks PR and
/// peak-to-peak tracks RR, each up to N(0, 2 ms).
fn coupled_series(n: usize, seed: u64) -> CycleSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mean: f64, sd: f64| Normal::new(mean, sd).unwrap().sample(&mut rng);
    let mut r = 1000.0;
    // Systolic offsets with sd 2/sqrt(2) make peak-to-peak - RR ~ N(0, 2).
    let offset_sd = 2.0 / 2f64.sqrt();
    let mut cycles = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            r += draw(800.0, 40.0);
        }
        let pr = draw(160.0, 15.0);
        let qr = draw(30.0, 3.0);
        let rt = draw(260.0, 10.0);
        let systolic = r + 650.0 + draw(0.0, offset_sd);
        let systole = pr + draw(0.0, 2.0);
        cycles.push(CardiacCycle {
            ecg: EcgTimes {
                p_ms: Some(r - pr),
                q_ms: Some(r - qr),
                r_ms: r,
                t_ms: Some(r + rt),
            },
            ppg: PpgTimes {
                onset_ms: Some(systolic - systole),
                systolic_ms: Some(systolic),
                diastolic_ms: Some(systolic + 250.0),
            },
            ..CardiacCycle::default()
        });
    }
    compute_intervals(&CycleSeries {
        cycles,
        ambiguous_pairings: 0,
    })
}

fn ac5_correlation_structure() -> Outcome {
    let start = Instant::now();
    let table = correlation_table(&coupled_series(201, 5));
    let cell_r = |row, col| table.cell(row, col).r().unwrap_or(f64::NAN);
    let pr_systole = cell_r(EcgInterval::PR, PpgInterval::Systole);
    let rr_p2p = table.rr_peak_to_peak.r().unwrap_or(f64::NAN);
    let n_pr = table.cell(EcgInterval::PR, PpgInterval::Systole).n;
    let n_rr = table.rr_peak_to_peak.n;
    let independent = [
        (EcgInterval::QR, PpgInterval::Systole),
        (EcgInterval::RT, PpgInterval::Systole),
        (EcgInterval::QR, PpgInterval::Diastole),
        (EcgInterval::RT, PpgInterval::Diastole),
    ];
    let worst_indep = independent
        .iter()
        .map(|&(a, b)| cell_r(a, b).abs())
        .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
    let elapsed = start.elapsed();
    check(
        pr_systole > 0.97 && rr_p2p > 0.97 && worst_indep < 0.3 && n_pr >= 200 && n_rr >= 200 && within(elapsed, 5.0),
        format!(
            "PR/systole r {pr_systole:.4} (n {n_pr}), RR/peak-to-peak r {rr_p2p:.4} (n {n_rr}), max independent |r| {worst_indep:.3}, {:.1} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

struct Pipeline {
    r_peaks_ms: Vec<f64>,
    series: CycleSeries,
}

fn run_pipeline(record: &SyncedRecord) -> Result<Pipeline, String> {
    let fs = record.fs();
    let r_peaks = detect_r_peaks(&record.ecg).map_err(|e| e.to_string())?;
    let ecg = delineate_ecg(&record.ecg, &r_peaks);
    let hint = (r_peaks.len() >= 3).then(|| {
        let span = (r_peaks[r_peaks.len() - 1] - r_peaks[0]) as f64 * 1000.0 / fs;
        60_000.0 * (r_peaks.len() - 1) as f64 / span
    });
    let ppg = detect_ppg_events(&record.ppg, hint).map_err(|e| e.to_string())?;
    let series = pair_cycles(&ecg, &ppg, fs, LagWindow::default()).map_err(|e| e.to_string())?;
    Ok(Pipeline {
        r_peaks_ms: r_peaks.iter().map(|&i| i as f64 * 1000.0 / fs).collect(),
        series: compute_intervals(&series),
    })
}

fn delineation_spec() -> SynthSpec {
    SynthSpec {
        n_cycles: 100,
        fs: 125.0,
        noise_sigma: 0.05,
        seed: 6,
        ..SynthSpec::default()
    }
}

fn ac6_delineation_recall() -> Outcome {
    let spec = delineation_spec();
    let (record, truth) = gen_waveforms(&spec).map_err(|e| e.to_string())?;
    let run = run_pipeline(&record)?;
    let tol = 2000.0 / spec.fs;
    let hits = truth
        .cycles
        .iter()
        .filter(|c| run.r_peaks_ms.iter().any(|&r| (r - c.r_ms).abs() <= tol))
        .count();
    let recall = hits as f64 / truth.cycles.len() as f64;
    let (x, y) = run
        .series
        .paired_times(|c| Some(c.ecg.r_ms), |c| c.ppg.systolic_ms);
    let fit = ols_lag(&x, &y).map_err(|e| e.to_string())?;
    let pat_tol = tol + spec.pat_jitter_ms;
    check(
        recall >= 0.99 && (fit.lag_time_ms - spec.pat_ms).abs() <= pat_tol,
        format!(
            "R recall {hits}/{} within {tol} ms, PAT {:.3} ms vs {} (tolerance {pat_tol}, n {})",
            truth.cycles.len(),
            fit.lag_time_ms,
            spec.pat_ms,
            fit.n
        ),
    )
}

fn ac7_agreement() -> Outcome {
    let (record, _) = gen_waveforms(&delineation_spec()).map_err(|e| e.to_string())?;
    let run = run_pipeline(&record)?;
    let ecg_policy = build_interval_policy(PPeak, RPeak, 210.0).map_err(|e| e.to_string())?;
    let ppg_policy = build_interval_policy(Onset, SystolicPeak, 210.0).map_err(|e| e.to_string())?;
    let (ecg, ppg, kept) =
        aligned_traces(&run.series, &[PPeak, RPeak, Onset, SystolicPeak]).map_err(|e| e.to_string())?;
    let (ve, vp) = run_parallel(&ecg_policy, &ecg, &ppg_policy, &ppg).map_err(|e| e.to_string())?;
    let composed = compose_truncating(&ve, &vp);
    let rate = agreement_rate(&composed).map_err(|e| e.to_string())?;
    check(
        rate > 0.90,
        format!(
            "agreement {rate:.4} over {} cycles ({} aligned, {} dropped)",
            composed.cycles.len(),
            kept.len(),
            composed.dropped
        ),
    )
}

/// `None` when no recorded dataset is configured.
fn ac8_recorded_dataset() -> Option<Outcome> {
    let manifest = std::env::var("ECGPPG_BIDMC_MANIFEST").ok()?;
    let result = (|| -> Outcome {
        let entries = read_manifest(&manifest).map_err(|e| e.to_string())?;
        let mut lines = Vec::new();
        let mut all_ok = !entries.is_empty();
        for entry in &entries {
            let record = entry.load().map_err(|e| e.to_string())?;
            let run = run_pipeline(&record)?;
            let table = correlation_table(&run.series);
            let rr = table.rr_peak_to_peak.r().unwrap_or(f64::NAN);
            let pr = table.cell(EcgInterval::PR, PpgInterval::Systole).r().unwrap_or(f64::NAN);
            let rp = table.cell(EcgInterval::RP, PpgInterval::Diastole).r().unwrap_or(f64::NAN);
            let lags: Vec<f64> = run.series.cycles.iter().filter_map(|c| c.lag_ms()).collect();
            let lag = lags.iter().sum::<f64>() / lags.len() as f64;
            let ok = rr >= 0.95 && pr >= 0.90 && rp >= 0.60 && (600.0..=700.0).contains(&lag);
            all_ok &= ok;
            lines.push(format!(
                "{}: RR/p2p {rr:.4} PR/systole {pr:.4} RP/diastole {rp:.4} lag {lag:.1}",
                entry.record_id
            ));
        }
        check(all_ok, lines.join("; "))
    })();
    Some(result)
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, &str, Option<Outcome>)> = vec![
        ("AC1", "example replay", Some(ac1_example_replay())),
        ("AC2", "monitor matches scan oracle", Some(ac2_oracle_equivalence())),
        ("AC3", "pearson r and p", Some(ac3_pearson())),
        ("AC4", "lag recovery", Some(ac4_lag_recovery())),
        ("AC5", "correlation structure", Some(ac5_correlation_structure())),
        ("AC6", "delineation recall and PAT", Some(ac6_delineation_recall())),
        ("AC7", "monitor agreement", Some(ac7_agreement())),
        ("AC8", "recorded dataset", ac8_recorded_dataset()),
    ];
    let mut failed = Vec::new();
    for (id, name, outcome) in &criteria {
        match outcome {
            Some(Ok(detail)) => println!("[PASS] {id} {name}: {detail}"),
            Some(Err(detail)) => {
                println!("[FAIL] {id} {name}: {detail}");
                failed.push(*id);
            }
            None => println!("[SKIP] {id} {name}: set ECGPPG_BIDMC_MANIFEST to a manifest to run"),
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
