//! Spectral and temporal signal primitives.
//!
//! Everything here operates on [`PulseSignal`] values: band-pass filtering,
//! band-limited power spectra on a fixed BPM grid, heart-rate extraction,
//! SNR diagnostics and PPG denoising. All functions are pure; none keep
//! state between calls.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A sampled pulse signal (arbitrary units) with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSignal {
    samples: Vec<f64>,
    fs: f64,
}

impl PulseSignal {
    /// Build a signal, validating length, rate and finiteness.
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::SignalTooShort {
                len: samples.len(),
                min: 2,
                context: "PulseSignal",
            });
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("signal contains non-finite samples".into()));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Sub-signal `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<PulseSignal> {
        if start + len > self.samples.len() {
            return Err(Error::Shape(format!(
                "window [{start}, {}) out of range for signal of length {}",
                start + len,
                self.samples.len()
            )));
        }
        PulseSignal::new(self.samples[start..start + len].to_vec(), self.fs)
    }

    /// Write as CSV with header `t_sec,value`, LF line endings.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.samples.len() * 24);
        out.extend_from_slice(b"t_sec,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 / self.fs, v).expect("write to vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Read a `t_sec,value` CSV; the rate is recovered from the time column.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t: f64 = rec
                .get(0)
                .ok_or_else(|| Error::Ingestion {
                    path: path.into(),
                    reason: "missing time column".into(),
                })?
                .parse()
                .map_err(|e| Error::Ingestion {
                    path: path.into(),
                    reason: format!("bad time value: {e}"),
                })?;
            let v: f64 = rec
                .get(1)
                .ok_or_else(|| Error::Ingestion {
                    path: path.into(),
                    reason: "missing value column".into(),
                })?
                .parse()
                .map_err(|e| Error::Ingestion {
                    path: path.into(),
                    reason: format!("bad sample value: {e}"),
                })?;
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(Error::Ingestion {
                path: path.into(),
                reason: "need at least two rows".into(),
            });
        }
        let span = times[times.len() - 1] - times[0];
        if span <= 0.0 {
            return Err(Error::Ingestion {
                path: path.into(),
                reason: "time column is not increasing".into(),
            });
        }
        let fs = (times.len() - 1) as f64 / span;
        PulseSignal::new(values, fs)
    }
}

/// A power spectrum sampled on a strictly increasing Hz grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

/// Heart rate in beats per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HRValue {
    pub bpm: f64,
}

impl HRValue {
    pub fn new(bpm: f64) -> Result<Self> {
        if !(bpm > 0.0) || !bpm.is_finite() {
            return Err(Error::Config(format!("heart rate must be positive, got {bpm}")));
        }
        Ok(Self { bpm })
    }

    pub fn hz(&self) -> f64 {
        self.bpm / 60.0
    }
}

/// Band and resolution for all spectral estimation.
///
/// Bins are the multiples of `bin_bpm` contained in `[lo_hz, hi_hz]`; the
/// defaults (0.66 Hz, 3 Hz, 1 BPM) give the 141 integer bins 40..=180 BPM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub bin_bpm: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            lo_hz: 0.66,
            hi_hz: 3.0,
            bin_bpm: 1.0,
        }
    }
}

impl FrequencyGrid {
    pub fn new(lo_hz: f64, hi_hz: f64, bin_bpm: f64) -> Result<Self> {
        let grid = Self { lo_hz, hi_hz, bin_bpm };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo_hz < self.hi_hz) {
            return Err(Error::Config(format!(
                "grid lo {} must be below hi {}",
                self.lo_hz, self.hi_hz
            )));
        }
        if !(self.bin_bpm > 0.0) {
            return Err(Error::Config("grid bin_bpm must be positive".into()));
        }
        if self.bins_bpm().is_empty() {
            return Err(Error::Config("grid contains no bins".into()));
        }
        Ok(())
    }

    /// Grid bins in BPM: multiples of `bin_bpm` within the band.
    pub fn bins_bpm(&self) -> Vec<f64> {
        let lo_bpm = self.lo_hz * 60.0;
        let hi_bpm = self.hi_hz * 60.0;
        let mut k = (lo_bpm / self.bin_bpm - 1e-9).ceil() as i64;
        if (k as f64) * self.bin_bpm < 0.0 {
            k = 0;
        }
        let mut bins = Vec::new();
        loop {
            let bpm = k as f64 * self.bin_bpm;
            if bpm > hi_bpm + 1e-9 {
                break;
            }
            bins.push(bpm);
            k += 1;
        }
        bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins_bpm().len()
    }

    /// Index of the bin nearest to `bpm` (ties toward the lower bin).
    pub fn nearest_bin(&self, bpm: f64) -> Result<usize> {
        if bpm < self.lo_hz * 60.0 - 1e-9 || bpm > self.hi_hz * 60.0 + 1e-9 {
            return Err(Error::Config(format!(
                "{bpm} BPM is outside the grid band [{}, {}] BPM",
                self.lo_hz * 60.0,
                self.hi_hz * 60.0
            )));
        }
        let bins = self.bins_bpm();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, b) in bins.iter().enumerate() {
            let d = (b - bpm).abs();
            if d + 1e-12 < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }
}

/// Band-pass `sig` to the grid band.
///
/// Zero-phase FFT filtering on an even (reflected) extension of the signal,
/// with raised-cosine edges placed inside the band so that out-of-band gain
/// is exactly zero.
pub fn bandpass(sig: &PulseSignal, grid: &FrequencyGrid) -> Result<PulseSignal> {
    grid.validate()?;
    let t = sig.len();
    if t < 30 {
        return Err(Error::SignalTooShort {
            len: t,
            min: 30,
            context: "bandpass",
        });
    }
    if !(sig.fs() > 2.0 * grid.hi_hz) {
        return Err(Error::Config(format!(
            "sampling rate {} too low for band up to {} Hz",
            sig.fs(),
            grid.hi_hz
        )));
    }
    let n = 2 * t;
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(n);
    buf.extend(sig.samples().iter().map(|&v| Complex::new(v, 0.0)));
    buf.extend(sig.samples().iter().rev().map(|&v| Complex::new(v, 0.0)));

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);

    let tw = (0.1f64).min((grid.hi_hz - grid.lo_hz) / 4.0);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = (k.min(n - k)) as f64 * sig.fs() / n as f64;
        *c *= band_gain(f, grid.lo_hz, grid.hi_hz, tw);
    }
    planner.plan_fft_inverse(n).process(&mut buf);

    let scale = 1.0 / n as f64;
    let out: Vec<f64> = buf[..t].iter().map(|c| c.re * scale).collect();
    PulseSignal::new(out, sig.fs())
}

/// Raised-cosine gain: zero outside `[lo, hi]`, unity in the flat middle.
fn band_gain(f: f64, lo: f64, hi: f64, tw: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f < lo + tw {
        0.5 - 0.5 * (std::f64::consts::PI * (f - lo) / tw).cos()
    } else if f > hi - tw {
        0.5 - 0.5 * (std::f64::consts::PI * (hi - f) / tw).cos()
    } else {
        1.0
    }
}

fn hann(t: usize) -> Vec<f64> {
    if t == 1 {
        return vec![1.0];
    }
    let nm1 = (t - 1) as f64;
    (0..t)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nm1).cos())
        .collect()
}

/// Hann-windowed DFT power evaluated exactly on the grid bins.
///
/// This is the spectral estimator used both for HR extraction and inside
/// the frequency loss; [`PsdTape::vjp`] backpropagates through it.
pub fn power_spectrum(sig: &PulseSignal, grid: &FrequencyGrid) -> Result<Spectrum> {
    Ok(power_spectrum_tape(sig, grid)?.0)
}

/// Like [`power_spectrum`], additionally returning the tape needed for the
/// vector-Jacobian product of power with respect to the samples.
pub fn power_spectrum_tape(sig: &PulseSignal, grid: &FrequencyGrid) -> Result<(Spectrum, PsdTape)> {
    grid.validate()?;
    let t = sig.len();
    if t < 60 {
        return Err(Error::SignalTooShort {
            len: t,
            min: 60,
            context: "power_spectrum",
        });
    }
    let bins = grid.bins_bpm();
    let w = hann(t);
    let wsum: f64 = w.iter().sum();
    let norm = 1.0 / (wsum * wsum);
    let mut cos_sum = vec![0.0; bins.len()];
    let mut sin_sum = vec![0.0; bins.len()];
    let mut power = vec![0.0; bins.len()];
    let mut freqs = vec![0.0; bins.len()];
    for (bi, bpm) in bins.iter().enumerate() {
        let f = bpm / 60.0;
        freqs[bi] = f;
        let omega = 2.0 * std::f64::consts::PI * f / sig.fs();
        let mut c = 0.0;
        let mut s = 0.0;
        for (i, &x) in sig.samples().iter().enumerate() {
            let ang = omega * i as f64;
            let wx = w[i] * x;
            c += wx * ang.cos();
            s += wx * ang.sin();
        }
        cos_sum[bi] = c;
        sin_sum[bi] = s;
        power[bi] = (c * c + s * s) * norm;
    }
    let tape = PsdTape {
        cos_sum,
        sin_sum,
        freqs: freqs.clone(),
        fs: sig.fs(),
        t,
        norm,
    };
    Ok((Spectrum { freqs, power }, tape))
}

/// Saved intermediates of [`power_spectrum_tape`].
#[derive(Debug, Clone)]
pub struct PsdTape {
    cos_sum: Vec<f64>,
    sin_sum: Vec<f64>,
    freqs: Vec<f64>,
    fs: f64,
    t: usize,
    norm: f64,
}

impl PsdTape {
    /// d(loss)/d(samples) given d(loss)/d(power) per bin.
    pub fn vjp(&self, dpower: &[f64]) -> Vec<f64> {
        assert_eq!(dpower.len(), self.freqs.len(), "gradient length mismatch");
        let w = hann(self.t);
        let mut dx = vec![0.0; self.t];
        for (bi, &g) in dpower.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let omega = 2.0 * std::f64::consts::PI * self.freqs[bi] / self.fs;
            let gc = 2.0 * g * self.norm * self.cos_sum[bi];
            let gs = 2.0 * g * self.norm * self.sin_sum[bi];
            for i in 0..self.t {
                let ang = omega * i as f64;
                dx[i] += w[i] * (gc * ang.cos() + gs * ang.sin());
            }
        }
        dx
    }
}

/// Heart rate as 60 times the frequency of the band-limited power maximum.
/// Ties break toward the lower frequency.
pub fn estimate_hr(sig: &PulseSignal, grid: &FrequencyGrid) -> Result<HRValue> {
    let spectrum = power_spectrum(sig, grid)?;
    estimate_hr_from_spectrum(&spectrum)
}

/// Argmax over an already-computed spectrum.
pub fn estimate_hr_from_spectrum(spectrum: &Spectrum) -> Result<HRValue> {
    let mut best = None::<(usize, f64)>;
    for (i, &p) in spectrum.power.iter().enumerate() {
        match best {
            Some((_, bp)) if p <= bp => {}
            _ if p > 0.0 => best = Some((i, p)),
            _ => {}
        }
    }
    match best {
        Some((i, _)) => HRValue::new(spectrum.freqs[i] * 60.0),
        None => Err(Error::NoDominantFrequency),
    }
}

/// Result of [`snr_db`]; `out_power_zero` flags the +inf sentinel case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrResult {
    pub db: f64,
    pub out_power_zero: bool,
}

/// Spectral SNR around a known heart rate.
///
/// Signal power is taken within ±0.1 Hz of the fundamental and of the first
/// harmonic (clipped to the band); everything else in band counts as noise.
pub fn snr_db(sig: &PulseSignal, hr_gt: HRValue, grid: &FrequencyGrid) -> Result<SnrResult> {
    let f0 = hr_gt.hz();
    if f0 < grid.lo_hz - 1e-9 || f0 > grid.hi_hz + 1e-9 {
        return Err(Error::Config(format!(
            "reference HR {} BPM is outside the band",
            hr_gt.bpm
        )));
    }
    let spectrum = power_spectrum(sig, grid)?;
    let mut p_in = 0.0;
    let mut p_out = 0.0;
    for (f, p) in spectrum.freqs.iter().zip(&spectrum.power) {
        let near_fund = (f - f0).abs() <= 0.1 + 1e-12;
        let near_harm = (f - 2.0 * f0).abs() <= 0.1 + 1e-12;
        if near_fund || near_harm {
            p_in += p;
        } else {
            p_out += p;
        }
    }
    if p_out == 0.0 {
        return Ok(SnrResult {
            db: f64::INFINITY,
            out_power_zero: true,
        });
    }
    Ok(SnrResult {
        db: 10.0 * (p_in / p_out).log10(),
        out_power_zero: false,
    })
}

/// Output of [`denoise_ppg`]; `zero_variance` marks degenerate input.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub signal: PulseSignal,
    pub zero_variance: bool,
}

/// Clean a raw PPG trace: moving-average detrend (2 s window), band-pass to
/// the default band, then z-score. Degenerate input yields all zeros with
/// the `zero_variance` flag set.
pub fn denoise_ppg(raw: &PulseSignal) -> Result<Denoised> {
    let t = raw.len();
    if t < 60 {
        return Err(Error::SignalTooShort {
            len: t,
            min: 60,
            context: "denoise_ppg",
        });
    }
    let grid = FrequencyGrid::default();
    let half = ((2.0 * raw.fs()).round() as usize / 2).max(1);
    let x = raw.samples();
    let mut detrended = vec![0.0; t];
    for i in 0..t {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(t);
        let mean: f64 = x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        detrended[i] = x[i] - mean;
    }
    let filtered = bandpass(&PulseSignal::new(detrended, raw.fs())?, &grid)?;
    let mean: f64 = filtered.samples().iter().sum::<f64>() / t as f64;
    let var: f64 = filtered
        .samples()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / t as f64;
    if var < 1e-24 {
        return Ok(Denoised {
            signal: PulseSignal::new(vec![0.0; t], raw.fs())?,
            zero_variance: true,
        });
    }
    let std = var.sqrt();
    let out: Vec<f64> = filtered.samples().iter().map(|v| (v - mean) / std).collect();
    Ok(Denoised {
        signal: PulseSignal::new(out, raw.fs())?,
        zero_variance: false,
    })
}

/// Z-score a signal. A zero-variance input comes back as all zeros.
pub fn normalize(sig: &PulseSignal) -> PulseSignal {
    let t = sig.len();
    let mean: f64 = sig.samples().iter().sum::<f64>() / t as f64;
    let var: f64 = sig
        .samples()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / t as f64;
    if var < 1e-24 {
        return PulseSignal {
            samples: vec![0.0; t],
            fs: sig.fs,
        };
    }
    let std = var.sqrt();
    PulseSignal {
        samples: sig.samples.iter().map(|v| (v - mean) / std).collect(),
        fs: sig.fs,
    }
}

/// Temporal shift under the valid-region convention: the samples of
/// `sig[t - k]` for which the index exists. `|k|` samples are dropped, from
/// the tail for `k > 0` and from the head for `k < 0`.
pub fn shift(sig: &PulseSignal, k: i64) -> Result<PulseSignal> {
    let t = sig.len() as i64;
    if k.abs() >= t {
        return Err(Error::Shape(format!(
            "shift {k} out of range for signal of length {t}"
        )));
    }
    let s = sig.samples();
    let out = if k >= 0 {
        s[..(t - k) as usize].to_vec()
    } else {
        s[(-k) as usize..].to_vec()
    };
    PulseSignal::new(out, sig.fs())
}

/// Mean squared error between two equal-length signals.
pub fn mse(a: &PulseSignal, b: &PulseSignal) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "mse length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// MSE between `pred` and `gt` shifted by `k`, over the valid overlap
/// region only. For `k >= 0` this compares `pred[k..]` with `gt[..T-k]`.
pub fn valid_region_mse(pred: &PulseSignal, gt: &PulseSignal, k: i64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "length mismatch: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    let t = pred.len() as i64;
    if k.abs() >= t {
        return Err(Error::Shape(format!("shift {k} out of range for length {t}")));
    }
    let p = pred.samples();
    let g = gt.samples();
    let n = (t - k.abs()) as usize;
    let (p_off, g_off) = if k >= 0 { (k as usize, 0) } else { (0, (-k) as usize) };
    let mut sum = 0.0;
    for i in 0..n {
        let d = p[p_off + i] - g[g_off + i];
        sum += d * d;
    }
    Ok(sum / n as f64)
}

/// Pearson product-moment correlation; `None` when either input has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson requires equal lengths");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
