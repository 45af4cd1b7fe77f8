//! Shared spectral machinery: Hann windows, a cached real FFT and the mel filterbank.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::SAMPLE_RATE;

pub const MEL_BANDS: usize = 64;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Power spectrum helper for one fixed transform size.
pub struct PowerSpectrum {
    size: usize,
    window: Vec<f64>,
    /// 1 / (sum of window)^2, so a full-scale bin-centred sine peaks at 0.25.
    norm: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl PowerSpectrum {
    pub fn new(size: usize) -> Self {
        let window = hann(size);
        let sum: f64 = window.iter().sum();
        let fft = FftPlanner::new().plan_fft_forward(size);
        Self {
            size,
            window,
            norm: 1.0 / (sum * sum),
            fft,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * SAMPLE_RATE as f64 / self.size as f64
    }

    /// Windowed power spectrum of `frame` (length `size`) into `out` (length `bins`).
    pub fn compute(&self, frame: &[f64], scratch: &mut Vec<Complex<f64>>, out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.size);
        scratch.clear();
        scratch.extend(
            frame
                .iter()
                .zip(&self.window)
                .map(|(&x, &w)| Complex::new(x * w, 0.0)),
        );
        self.fft.process(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.norm_sqr() * self.norm;
        }
    }
}

/// Triangular HTK-mel filterbank over `[0, SAMPLE_RATE / 2]`.
pub struct MelFilterbank {
    /// Per band: first bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(fft_size: usize, bands: usize) -> Self {
        let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let points: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
            .collect();
        let bins = fft_size / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / fft_size as f64;
        let filters = (0..bands)
            .map(|b| {
                let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
                let weights: Vec<(usize, f64)> = (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let start = weights.first().map_or(0, |&(k, _)| k);
                (start, weights.into_iter().map(|(_, w)| w).collect())
            })
            .collect();
        Self {
            filters,
            centers_hz: points[1..=bands].to_vec(),
        }
    }

    pub fn bands(&self) -> usize {
        self.filters.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, weights)) in out.iter_mut().zip(&self.filters) {
            *o = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Median of a slice (upper median for even lengths).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// The process-wide 2048-point analysis transform and its 64-band filterbank.
pub(crate) fn analysis_bank() -> &'static (PowerSpectrum, MelFilterbank) {
    static BANK: OnceLock<(PowerSpectrum, MelFilterbank)> = OnceLock::new();
    BANK.get_or_init(|| (PowerSpectrum::new(2048), MelFilterbank::new(2048, MEL_BANDS)))
}
