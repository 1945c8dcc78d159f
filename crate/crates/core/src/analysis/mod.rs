//! Post-processing: sliding single-cycle phasor extraction, symmetrical
//! components, RMS envelopes, CSV export and run comparison.
//!
//! Phasor convention: `fundamental_phasor` returns the *peak*-scaled complex
//! phasor referenced to absolute time zero, i.e. a waveform
//! `A*cos(2*pi*f0*t + phi)` yields `A∠phi` at every window position. Divide
//! by sqrt(2) (or pass `rms = true` where offered) for RMS magnitude.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("window [{lo:.6}, {hi:.6}] outside waveform span [{span_lo:.6}, {span_hi:.6}]")]
    WindowOutOfRange {
        lo: f64,
        hi: f64,
        span_lo: f64,
        span_hi: f64,
    },
    #[error("waveform '{0}' is empty")]
    EmptyWaveform(String),
    #[error("waveforms do not share a time grid ('{0}' differs)")]
    GridMismatch(String),
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Non-uniformly sampled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub label: String,
    pub time: Vec<f64>,
    pub values: Vec<f64>,
}

impl Waveform {
    pub fn new(label: impl Into<String>) -> Self {
        Waveform {
            label: label.into(),
            time: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_samples(
        label: impl Into<String>,
        time: Vec<f64>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(time.len(), values.len());
        debug_assert!(time.windows(2).all(|w| w[0] < w[1]), "time must increase");
        Waveform {
            label: label.into(),
            time,
            values,
        }
    }

    /// Samples an analytic function on a uniform grid.
    pub fn tabulate(
        label: impl Into<String>,
        t0: f64,
        t1: f64,
        n: usize,
        f: impl Fn(f64) -> f64,
    ) -> Self {
        let time: Vec<f64> = (0..n)
            .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
            .collect();
        let values = time.iter().map(|&t| f(t)).collect();
        Waveform::from_samples(label, time, values)
    }

    pub fn push(&mut self, t: f64, v: f64) {
        debug_assert!(self.time.last().map_or(true, |&last| t > last));
        self.time.push(t);
        self.values.push(v);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        match (self.time.first(), self.time.last()) {
            (Some(&a), Some(&b)) => Some((a, b)),
            _ => None,
        }
    }

    /// Linear interpolation at `t`; clamps outside the span.
    pub fn sample(&self, t: f64) -> f64 {
        match self.time.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => self.values[i],
            Err(0) => *self.values.first().unwrap_or(&0.0),
            Err(i) if i >= self.time.len() => *self.values.last().unwrap_or(&0.0),
            Err(i) => {
                let (t0, t1) = (self.time[i - 1], self.time[i]);
                let (v0, v1) = (self.values[i - 1], self.values[i]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Restricts the waveform to `[t0, t1]` (samples inside, inclusive).
    pub fn slice(&self, t0: f64, t1: f64) -> Waveform {
        let mut out = Waveform::new(self.label.clone());
        for (&t, &v) in self.time.iter().zip(&self.values) {
            if t >= t0 && t <= t1 {
                out.push(t, v);
            }
        }
        out
    }
}

/// Samples per single-cycle analysis window.
const WINDOW_SAMPLES: usize = 128;

/// Single-bin DFT over the one-cycle window `[t - 1/f0, t]`.
///
/// The waveform is resampled onto a uniform midpoint grid by linear
/// interpolation; the rectangle-rule bin sum is then exact for tones at
/// integer harmonics of `f0`, which is what rejects harmonics.
pub fn fundamental_phasor(w: &Waveform, f0: f64, t: f64) -> Result<Complex64, AnalysisError> {
    let period = 1.0 / f0;
    let (span_lo, span_hi) = w
        .span()
        .ok_or_else(|| AnalysisError::EmptyWaveform(w.label.clone()))?;
    let lo = t - period;
    if lo < span_lo - 1e-12 || t > span_hi + 1e-12 {
        return Err(AnalysisError::WindowOutOfRange {
            lo,
            hi: t,
            span_lo,
            span_hi,
        });
    }
    let m = WINDOW_SAMPLES;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..m {
        let tk = lo + (k as f64 + 0.5) * period / m as f64;
        let phase = -2.0 * PI * f0 * tk;
        acc += w.sample(tk) * Complex64::new(phase.cos(), phase.sin());
    }
    Ok(acc * 2.0 / m as f64)
}

/// Sliding RMS over the one-cycle window ending at `t`.
pub fn rms_envelope_at(w: &Waveform, f0: f64, t: f64) -> Result<f64, AnalysisError> {
    let period = 1.0 / f0;
    let (span_lo, span_hi) = w
        .span()
        .ok_or_else(|| AnalysisError::EmptyWaveform(w.label.clone()))?;
    let lo = t - period;
    if lo < span_lo - 1e-12 || t > span_hi + 1e-12 {
        return Err(AnalysisError::WindowOutOfRange {
            lo,
            hi: t,
            span_lo,
            span_hi,
        });
    }
    let m = WINDOW_SAMPLES;
    let mut acc = 0.0;
    for k in 0..m {
        let tk = lo + (k as f64 + 0.5) * period / m as f64;
        let v = w.sample(tk);
        acc += v * v;
    }
    Ok((acc / m as f64).sqrt())
}

/// Complex phasor sampled once per fundamental cycle.
#[derive(Debug, Clone)]
pub struct PhasorSeries {
    pub label: String,
    pub time: Vec<f64>,
    pub phasors: Vec<Complex64>,
}

impl PhasorSeries {
    pub fn magnitudes(&self) -> Waveform {
        Waveform::from_samples(
            format!("{}.mag", self.label),
            self.time.clone(),
            self.phasors.iter().map(|p| p.norm()).collect(),
        )
    }

    pub fn magnitude_near(&self, t: f64) -> Option<f64> {
        if self.time.is_empty() {
            return None;
        }
        let i = match self.time.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => i.min(self.time.len() - 1),
        };
        Some(self.phasors[i].norm())
    }
}

/// Extracts one phasor per `stride_cycles` fundamental cycles across the
/// waveform span.
pub fn phasor_series(
    w: &Waveform,
    f0: f64,
    stride_cycles: f64,
) -> Result<PhasorSeries, AnalysisError> {
    let (span_lo, span_hi) = w
        .span()
        .ok_or_else(|| AnalysisError::EmptyWaveform(w.label.clone()))?;
    let period = 1.0 / f0;
    let stride = stride_cycles * period;
    let mut time = Vec::new();
    let mut phasors = Vec::new();
    let mut t = span_lo + period;
    while t <= span_hi + 1e-12 {
        let t_eval = t.min(span_hi);
        time.push(t_eval);
        phasors.push(fundamental_phasor(w, f0, t_eval)?);
        t += stride;
    }
    Ok(PhasorSeries {
        label: w.label.clone(),
        time,
        phasors,
    })
}

/// Positive-sequence component of three same-timestamp phasors:
/// V1 = (va + a*vb + a^2*vc) / 3 with a = exp(j*2*pi/3).
pub fn positive_sequence(va: Complex64, vb: Complex64, vc: Complex64) -> Complex64 {
    let a = Complex64::from_polar(1.0, 2.0 * PI / 3.0);
    (va + a * vb + a * a * vc) / 3.0
}

/// Positive-sequence magnitude series from three phase waveforms.
pub fn positive_sequence_series(
    phases: [&Waveform; 3],
    f0: f64,
    stride_cycles: f64,
    label: impl Into<String>,
) -> Result<PhasorSeries, AnalysisError> {
    let sa = phasor_series(phases[0], f0, stride_cycles)?;
    let sb = phasor_series(phases[1], f0, stride_cycles)?;
    let sc = phasor_series(phases[2], f0, stride_cycles)?;
    let n = sa.time.len().min(sb.time.len()).min(sc.time.len());
    let mut phasors = Vec::with_capacity(n);
    for i in 0..n {
        phasors.push(positive_sequence(sa.phasors[i], sb.phasors[i], sc.phasors[i]));
    }
    Ok(PhasorSeries {
        label: label.into(),
        time: sa.time[..n].to_vec(),
        phasors,
    })
}

/// Writes waveforms sharing one time grid as `time,<labels...>` CSV with
/// shortest round-trip float formatting.
pub fn export_csv<W: Write>(waveforms: &[&Waveform], out: &mut W) -> Result<(), AnalysisError> {
    let first = waveforms
        .first()
        .ok_or_else(|| AnalysisError::EmptyWaveform("<none>".into()))?;
    for w in waveforms {
        if w.time != first.time {
            return Err(AnalysisError::GridMismatch(w.label.clone()));
        }
    }
    write!(out, "time")?;
    for w in waveforms {
        write!(out, ",{}", w.label)?;
    }
    writeln!(out)?;
    for (i, &t) in first.time.iter().enumerate() {
        write!(out, "{t}")?;
        for w in waveforms {
            write!(out, ",{}", w.values[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses a CSV produced by [`export_csv`].
pub fn parse_csv<R: BufRead>(input: R) -> Result<Vec<Waveform>, AnalysisError> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or(AnalysisError::CsvParse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header = header?;
    let labels: Vec<&str> = header.split(',').collect();
    if labels.first() != Some(&"time") {
        return Err(AnalysisError::CsvParse {
            line: 1,
            msg: "header must start with 'time'".into(),
        });
    }
    let mut wfs: Vec<Waveform> = labels[1..].iter().map(|l| Waveform::new(*l)).collect();
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: f64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| AnalysisError::CsvParse {
                line: idx + 1,
                msg: format!("bad time: {e}"),
            })?;
        for w in wfs.iter_mut() {
            let v: f64 = fields
                .next()
                .ok_or(AnalysisError::CsvParse {
                    line: idx + 1,
                    msg: "missing field".into(),
                })?
                .parse()
                .map_err(|e| AnalysisError::CsvParse {
                    line: idx + 1,
                    msg: format!("bad value: {e}"),
                })?;
            w.push(t, v);
        }
    }
    Ok(wfs)
}

/// Per-signal deviation between two runs resampled onto the union grid of
/// their overlapping span.
#[derive(Debug, Clone)]
pub struct SignalDeviation {
    pub label: String,
    pub max_abs: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ComparisonReport {
    pub signals: Vec<SignalDeviation>,
}

impl ComparisonReport {
    pub fn max_abs(&self) -> f64 {
        self.signals.iter().map(|s| s.max_abs).fold(0.0, f64::max)
    }

    /// Plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = String::from("signal                         max_abs          rms\n");
        for d in &self.signals {
            s.push_str(&format!(
                "{:<28} {:>12.6e} {:>12.6e}\n",
                d.label, d.max_abs, d.rms
            ));
        }
        s
    }

    /// Machine-readable CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("signal,max_abs,rms\n");
        for d in &self.signals {
            s.push_str(&format!("{},{},{}\n", d.label, d.max_abs, d.rms));
        }
        s
    }
}

/// Compares runs signal-by-signal (matched by label). Both waveforms are
/// linearly resampled onto the union of their time grids restricted to the
/// overlapping span.
pub fn compare_runs(run_a: &[Waveform], run_b: &[Waveform]) -> ComparisonReport {
    let mut report = ComparisonReport::default();
    for a in run_a {
        let Some(b) = run_b.iter().find(|w| w.label == a.label) else {
            continue;
        };
        let (Some((a0, a1)), Some((b0, b1))) = (a.span(), b.span()) else {
            continue;
        };
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if hi <= lo {
            continue;
        }
        let mut grid: Vec<f64> = a
            .time
            .iter()
            .chain(b.time.iter())
            .copied()
            .filter(|&t| t >= lo && t <= hi)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut max_abs = 0.0f64;
        let mut sum_sq = 0.0f64;
        for &t in &grid {
            let d = a.sample(t) - b.sample(t);
            max_abs = max_abs.max(d.abs());
            sum_sq += d * d;
        }
        report.signals.push(SignalDeviation {
            label: a.label.clone(),
            max_abs,
            rms: (sum_sq / grid.len() as f64).sqrt(),
        });
    }
    report
}

/// Runs a closure over waveforms, in parallel when the `parallel` feature is
/// enabled. Output order matches input order either way.
pub fn map_waveforms<T: Send>(
    waveforms: &[Waveform],
    f: impl Fn(&Waveform) -> T + Sync + Send,
) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        waveforms.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        waveforms.iter().map(f).collect()
    }
}
