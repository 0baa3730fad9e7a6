//! Signal-processing building blocks: Welch segmentation, Butterworth
//! band-pass design, zero-phase filtering and analytic-signal envelopes.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn fft_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WelchParams {
    pub seg_seconds: f64,
    pub overlap: f64,
}

impl Default for WelchParams {
    /// 4 s Hann segments with 50 % overlap (0.25 Hz resolution, so every
    /// default band edge is a bin and a Hann main lobe stays inside a
    /// 2 Hz band).
    fn default() -> Self {
        Self {
            seg_seconds: 4.0,
            overlap: 0.5,
        }
    }
}

/// Segment layout and window for one sampling rate.
#[derive(Debug, Clone)]
pub struct WelchPlan {
    pub fs: f64,
    pub nperseg: usize,
    pub step: usize,
    window: Vec<f64>,
    /// `1 / (fs · Σ w²)`.
    density_scale: f64,
}

impl WelchPlan {
    pub fn new(fs: f64, params: WelchParams, series_len: usize) -> Result<Self> {
        if !(params.seg_seconds > 0.0) || !(0.0..1.0).contains(&params.overlap) {
            return Err(Error::Parameter(format!(
                "Welch needs seg_seconds > 0 and overlap in [0, 1), got {} / {}",
                params.seg_seconds, params.overlap
            )));
        }
        let nperseg = (params.seg_seconds * fs).round() as usize;
        if nperseg < 8 {
            return Err(Error::Parameter(format!(
                "segment of {nperseg} samples is shorter than the 8-sample minimum"
            )));
        }
        if nperseg > series_len {
            return Err(Error::Parameter(format!(
                "segment of {nperseg} samples is longer than the {series_len}-sample epoch"
            )));
        }
        let noverlap = (params.overlap * nperseg as f64).floor() as usize;
        let step = (nperseg - noverlap).max(1);
        let window = hann(nperseg);
        let wss: f64 = window.iter().map(|w| w * w).sum();
        Ok(Self {
            fs,
            nperseg,
            step,
            window,
            density_scale: 1.0 / (fs * wss),
        })
    }

    pub fn n_bins(&self) -> usize {
        self.nperseg / 2 + 1
    }

    pub fn df(&self) -> f64 {
        self.fs / self.nperseg as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|k| k as f64 * self.df()).collect()
    }

    pub fn segments_per(&self, len: usize) -> usize {
        if len < self.nperseg {
            0
        } else {
            (len - self.nperseg) / self.step + 1
        }
    }

    /// One-sided spectra of every mean-removed, windowed segment of `x`.
    pub fn segment_spectra(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let fft = fft_forward(self.nperseg);
        let mut out = Vec::with_capacity(self.segments_per(x.len()));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nperseg];
        for s in 0..self.segments_per(x.len()) {
            let seg = &x[s * self.step..s * self.step + self.nperseg];
            let m = seg.iter().sum::<f64>() / self.nperseg as f64;
            for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new((v - m) * w, 0.0);
            }
            fft.process(&mut buf);
            out.push(buf[..self.n_bins()].to_vec());
        }
        out
    }

    /// One-sided density scaling for bin `k`: doubled except DC and (even
    /// length) Nyquist.
    pub fn bin_scale(&self, k: usize) -> f64 {
        let nyquist = self.nperseg.is_multiple_of(2) && k == self.nperseg / 2;
        if k == 0 || nyquist {
            self.density_scale
        } else {
            2.0 * self.density_scale
        }
    }

    /// Averages `|X|²` over the given segment spectra into a density.
    pub fn auto_density<'a>(
        &self,
        spectra: impl IntoIterator<Item = &'a Vec<Complex64>>,
    ) -> (Vec<f64>, usize) {
        let mut acc = vec![0.0; self.n_bins()];
        let mut count = 0;
        for spec in spectra {
            for (a, x) in acc.iter_mut().zip(spec) {
                *a += x.norm_sqr();
            }
            count += 1;
        }
        for (k, a) in acc.iter_mut().enumerate() {
            *a *= self.bin_scale(k) / count.max(1) as f64;
        }
        (acc, count)
    }
}

/// Integral of a one-sided density over the half-open trapezoid cells
/// `[f_i, f_{i+1})` with `keep(f_i)` true. Cells partition the frequency
/// axis, so disjoint selections never share area.
pub fn cell_integral(power: &[f64], df: f64, keep: impl Fn(usize, f64) -> bool) -> f64 {
    let mut total = 0.0;
    for i in 0..power.len().saturating_sub(1) {
        let f = i as f64 * df;
        if keep(i, f) {
            total += 0.5 * (power[i] + power[i + 1]) * df;
        }
    }
    total
}

/// Second-order section, `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Digital Butterworth band-pass (bilinear transform with pre-warping).
    /// `order` is the low-pass prototype order, giving `order` sections.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        let nyq = fs / 2.0;
        if order == 0 || !(lo > 0.0 && lo < hi && hi < nyq) {
            return Err(Error::Parameter(format!(
                "band-pass {lo}-{hi} Hz invalid at fs = {fs} Hz"
            )));
        }
        let k = 2.0 * fs;
        let w1 = k * (PI * lo / fs).tan();
        let w2 = k * (PI * hi / fs).tan();
        let w0 = (w1 * w2).sqrt();
        let bw = w2 - w1;

        let mut zpoles = Vec::with_capacity(2 * order);
        for i in 0..order {
            let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                zpoles.push((k + s) / (k - s));
            }
        }

        // Conjugate pairs first (upper half plane), real poles paired up.
        let mut sections = Vec::with_capacity(order);
        let mut reals = Vec::new();
        for p in &zpoles {
            if p.im > 1e-12 {
                sections.push(Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * p.re, p.norm_sqr()],
                });
            } else if p.im.abs() <= 1e-12 {
                reals.push(p.re);
            }
        }
        for pair in reals.chunks(2) {
            let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(r1 + r2), r1 * r2],
            });
        }
        if sections.len() != order {
            return Err(Error::Numeric(format!(
                "band-pass design produced {} sections for order {order}",
                sections.len()
            )));
        }

        let mut sos = Sos { sections };
        let wc = 2.0 * (w0 / k).atan();
        let gain = sos.response(wc).norm();
        for c in &mut sos.sections[0].b {
            *c /= gain;
        }
        Ok(sos)
    }

    /// Complex response at digital angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| {
                let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
                let den = 1.0 + z1 * s.a[0] + z2 * s.a[1];
                acc * num / den
            })
    }

    /// Steady-state section states for a unit step (transposed direct form II).
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut input = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let gain = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
                let y = gain * input;
                let z2 = s.b[2] * input - s.a[1] * y;
                let z1 = s.b[1] * input - s.a[0] * y + z2;
                input = y;
                [z1, z2]
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], init: &[[f64; 2]], scale: f64) {
        for (s, z0) in self.sections.iter().zip(init) {
            let (mut z1, mut z2) = (z0[0] * scale, z0[1] * scale);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding of
    /// `padlen` samples and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        let first = ext[0];
        self.run(&mut ext, &zi, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Band-pass `x` with the zero-phase Butterworth used throughout feature
/// extraction (4th-order prototype). Padding spans three periods of the
/// lower band edge.
pub fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let sos = Sos::butter_bandpass(4, lo, hi, fs)?;
    let padlen = ((3.0 * fs / lo).ceil() as usize).max(3 * (2 * sos.sections.len() + 1));
    Ok(sos.filtfilt(x, padlen))
}

/// Magnitude of the analytic signal (FFT Hilbert transform).
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *b *= h;
    }
    fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}
