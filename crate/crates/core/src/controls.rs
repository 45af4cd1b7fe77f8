//! Musical descriptors, their control-token binning and user-target priors.
//!
//! Descriptors are extracted from audio (tempo, brightness, onset density,
//! key), binned into the four control tokens the decoder predicts before the
//! acoustic tokens, and steered at sampling time by adding a Gaussian bump of
//! logit offsets around a target bin.

use std::sync::OnceLock;

use crate::audio::{StereoAudio, SAMPLE_RATE};
use crate::codec::analyze;
use crate::dsp::{analysis_bank, median, PowerSpectrum, MEL_BANDS};
use crate::error::{Error, Result};
use crate::model::CONTROL_SLOTS;
use crate::tokens::{unify, Token, CONTROL_BINS};

pub const SLOT_BPM: usize = 0;
pub const SLOT_BRIGHTNESS: usize = 1;
pub const SLOT_DENSITY: usize = 2;
pub const SLOT_KEY: usize = 3;

pub const BPM_RANGE: (f64, f64) = (40.0, 240.0);
/// Spectral-centroid range covered by the brightness bins, in Hz.
pub const BRIGHTNESS_RANGE: (f64, f64) = (50.0, 20_000.0);
/// Onsets per second covered by the density bins.
pub const DENSITY_RANGE: (f64, f64) = (0.0, 8.0);

/// Onset envelope frame rate.
pub const ONSET_RATE_HZ: usize = 100;
const ONSET_WINDOW: usize = 1024;
const ONSET_HOP: usize = SAMPLE_RATE as usize / ONSET_RATE_HZ;
/// Local-maximum half width for onset peaks (30 ms).
const PEAK_RADIUS: usize = 3;
/// Half width of the moving-median threshold window (0.5 s).
const MEDIAN_RADIUS: usize = 50;
const PEAK_DELTA: f64 = 0.05;
const FLUX_FLOOR: f64 = 1e-6;
const TEMPO_PRIOR_BPM: f64 = 120.0;
const CHROMA_WINDOW: usize = 8192;
const CHROMA_RANGE_HZ: (f64, f64) = (27.5, 5000.0);

/// Descriptors of a stretch of audio.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlState {
    /// `None` when no periodicity is found (e.g. silence).
    pub bpm: Option<f64>,
    pub centroid_hz: f64,
    pub bandwidth_hz: f64,
    /// Onsets per second.
    pub density: f64,
    /// Pitch class of the chroma maximum, A = 9.
    pub key: u8,
    /// Non-negative, sums to 1.
    pub chroma: [f64; 12],
}

/// A partial set of descriptor targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ControlTargets {
    pub bpm: Option<f64>,
    /// Spectral centroid in Hz.
    pub brightness: Option<f64>,
    pub density: Option<f64>,
    pub key: Option<u8>,
}

impl ControlTargets {
    pub fn is_empty(&self) -> bool {
        self.bpm.is_none() && self.brightness.is_none() && self.density.is_none() && self.key.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("bpm", self.bpm), ("brightness", self.brightness), ("density", self.density)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Value(format!("{name} target must be finite and non-negative, got {v}")));
                }
            }
        }
        if let Some(k) = self.key {
            if k >= 12 {
                return Err(Error::range("key", k as usize, 12));
            }
        }
        Ok(())
    }
}

fn log_bin(value: f64, (lo, hi): (f64, f64), bins: usize) -> u16 {
    let x = (value.max(lo) / lo).ln() / (hi / lo).ln();
    ((x * bins as f64).floor() as i64).clamp(0, bins as i64 - 1) as u16
}

fn log_edge((lo, hi): (f64, f64), bins: usize, i: usize) -> f64 {
    lo * (hi / lo).powf(i as f64 / bins as f64)
}

fn linear_bin(value: f64, (lo, hi): (f64, f64), bins: usize) -> u16 {
    let x = (value - lo) / (hi - lo);
    ((x * bins as f64).floor() as i64).clamp(0, bins as i64 - 1) as u16
}

pub fn bpm_bin(bpm: f64) -> u16 {
    log_bin(bpm, BPM_RANGE, CONTROL_BINS[SLOT_BPM])
}

pub fn brightness_bin(centroid_hz: f64) -> u16 {
    log_bin(centroid_hz, BRIGHTNESS_RANGE, CONTROL_BINS[SLOT_BRIGHTNESS])
}

pub fn density_bin(density: f64) -> u16 {
    linear_bin(density, DENSITY_RANGE, CONTROL_BINS[SLOT_DENSITY])
}

/// `[lower, upper)` edges of a bpm bin.
pub fn bpm_bin_edges(bin: u16) -> (f64, f64) {
    let n = CONTROL_BINS[SLOT_BPM];
    (log_edge(BPM_RANGE, n, bin as usize), log_edge(BPM_RANGE, n, bin as usize + 1))
}

/// One bin per control in the fixed order bpm, brightness, density, key.
/// Out-of-range values clamp to the edge bins; an unknown bpm maps to bin 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ControlTokens {
    pub bins: [u16; CONTROL_SLOTS],
}

impl ControlTokens {
    pub fn from_bins(bins: [u16; CONTROL_SLOTS]) -> Result<Self> {
        for (slot, &b) in bins.iter().enumerate() {
            if b as usize >= CONTROL_BINS[slot] {
                return Err(Error::range("control bin", b as usize, CONTROL_BINS[slot]));
            }
        }
        Ok(Self { bins })
    }

    pub fn encode(state: &ControlState) -> Self {
        Self {
            bins: [
                state.bpm.map_or(0, bpm_bin),
                brightness_bin(state.centroid_hz),
                density_bin(state.density),
                state.key as u16,
            ],
        }
    }

    /// Bin centres: arithmetic midpoints of the bin edges.
    pub fn decode(&self) -> ControlTargets {
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let b = |slot: usize| self.bins[slot] as usize;
        let n = |slot: usize| CONTROL_BINS[slot];
        let width = (DENSITY_RANGE.1 - DENSITY_RANGE.0) / n(SLOT_DENSITY) as f64;
        ControlTargets {
            bpm: Some(mid((
                log_edge(BPM_RANGE, n(SLOT_BPM), b(SLOT_BPM)),
                log_edge(BPM_RANGE, n(SLOT_BPM), b(SLOT_BPM) + 1),
            ))),
            brightness: Some(mid((
                log_edge(BRIGHTNESS_RANGE, n(SLOT_BRIGHTNESS), b(SLOT_BRIGHTNESS)),
                log_edge(BRIGHTNESS_RANGE, n(SLOT_BRIGHTNESS), b(SLOT_BRIGHTNESS) + 1),
            ))),
            density: Some(DENSITY_RANGE.0 + (b(SLOT_DENSITY) as f64 + 0.5) * width),
            key: Some(self.bins[SLOT_KEY] as u8),
        }
    }

    /// Ids in the unified control block, in slot order.
    pub fn unified(&self) -> [u16; CONTROL_SLOTS] {
        std::array::from_fn(|slot| {
            unify(Token::Control {
                slot: slot as u8,
                bin: self.bins[slot],
            })
            .expect("bins validated")
        })
    }
}

/// Logit offsets added to the control-token logits before sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPrior {
    offsets: [Vec<f64>; CONTROL_SLOTS],
}

impl Default for ControlPrior {
    fn default() -> Self {
        Self {
            offsets: std::array::from_fn(|slot| vec![0.0; CONTROL_BINS[slot]]),
        }
    }
}

impl ControlPrior {
    pub fn offsets(&self, slot: usize) -> &[f64] {
        &self.offsets[slot]
    }

    pub fn is_zero(&self) -> bool {
        self.offsets.iter().flatten().all(|&o| o == 0.0)
    }
}

/// Gaussian bump of height `strength` and a one-bin standard deviation
/// centred on `center`. Key distances wrap around the octave.
fn bump(bins: usize, center: u16, strength: f64, circular: bool) -> Vec<f64> {
    (0..bins)
        .map(|j| {
            let mut d = (j as f64 - center as f64).abs();
            if circular {
                d = d.min(bins as f64 - d);
            }
            strength * (-0.5 * d * d).exp()
        })
        .collect()
}

/// Builds a prior with a bump at each targeted control's bin; untargeted
/// controls get zero offsets.
pub fn prior_from_targets(targets: &ControlTargets, strength: f64) -> Result<ControlPrior> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::Value(format!("prior strength must be finite and non-negative, got {strength}")));
    }
    targets.validate()?;
    let mut prior = ControlPrior::default();
    let centers = [
        targets.bpm.map(bpm_bin),
        targets.brightness.map(brightness_bin),
        targets.density.map(density_bin),
        targets.key.map(u16::from),
    ];
    for (slot, center) in centers.into_iter().enumerate() {
        if let Some(c) = center {
            prior.offsets[slot] = bump(CONTROL_BINS[slot], c, strength, slot == SLOT_KEY);
        }
    }
    Ok(prior)
}

/// Half-wave-rectified log-magnitude spectral flux at [`ONSET_RATE_HZ`].
pub fn onset_envelope(mono: &[f32]) -> Vec<f64> {
    static SPECTRUM: OnceLock<PowerSpectrum> = OnceLock::new();
    let spectrum = SPECTRUM.get_or_init(|| PowerSpectrum::new(ONSET_WINDOW));
    let frames = mono.len().div_ceil(ONSET_HOP);
    let mut scratch = Vec::with_capacity(ONSET_WINDOW);
    let mut window = vec![0.0; ONSET_WINDOW];
    let mut power = vec![0.0; spectrum.bins()];
    let mut previous = vec![0.0; spectrum.bins()];
    let mut envelope = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * ONSET_HOP;
        for (i, w) in window.iter_mut().enumerate() {
            *w = mono.get(start + i).map_or(0.0, |&x| x as f64);
        }
        spectrum.compute(&window, &mut scratch, &mut power);
        let mut flux = 0.0;
        for (p, prev) in power.iter().zip(previous.iter_mut()) {
            let mag = (1.0 + 1000.0 * p.sqrt()).ln();
            flux += (mag - *prev).max(0.0);
            *prev = mag;
        }
        envelope.push(flux);
    }
    envelope
}

/// Envelope frames that are local maxima above a moving-median threshold.
pub fn pick_onsets(envelope: &[f64]) -> Vec<usize> {
    let peak = envelope.iter().copied().fold(0.0, f64::max);
    if peak <= FLUX_FLOOR {
        return Vec::new();
    }
    let n = envelope.len();
    (0..n)
        .filter(|&t| {
            let v = envelope[t];
            let lo = t.saturating_sub(MEDIAN_RADIUS);
            let hi = (t + MEDIAN_RADIUS + 1).min(n);
            if v <= median(&envelope[lo..hi]) + PEAK_DELTA * peak {
                return false;
            }
            let before = &envelope[t.saturating_sub(PEAK_RADIUS)..t];
            let after = &envelope[t + 1..(t + PEAK_RADIUS + 1).min(n)];
            before.iter().all(|&x| x < v) && after.iter().all(|&x| x <= v)
        })
        .collect()
}

/// Tempo from the onset-envelope autocorrelation peak over lags spanning
/// 40..240 bpm (weighted towards 120 bpm), refined by a parabola through the peak and folded by
/// octaves into that range.
pub fn estimate_bpm(envelope: &[f64]) -> Option<f64> {
    let rate = ONSET_RATE_HZ as f64;
    let min_lag = (60.0 * rate / BPM_RANGE.1).ceil() as usize;
    let max_lag = (60.0 * rate / BPM_RANGE.0).floor() as usize;
    if envelope.len() <= max_lag + 1 {
        return None;
    }
    // A [1, 2, 1] smoothing absorbs one-frame jitter of onsets whose period
    // is not a whole number of frames.
    let smooth: Vec<f64> = (0..envelope.len())
        .map(|t| {
            let at = |i: i64| envelope.get(i as usize).copied().filter(|_| i >= 0).unwrap_or(0.0);
            0.25 * at(t as i64 - 1) + 0.5 * at(t as i64) + 0.25 * at(t as i64 + 1)
        })
        .collect();
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let centered: Vec<f64> = smooth.iter().map(|e| e - mean).collect();
    // Log-Gaussian preference around 120 bpm (one octave deviation) breaks
    // ties between a period and its multiples.
    let acf = |lag: usize| -> f64 {
        let raw: f64 = centered.iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
        let octaves = (60.0 * rate / lag as f64 / TEMPO_PRIOR_BPM).log2();
        raw * (-0.5 * octaves * octaves).exp()
    };
    let values: Vec<f64> = (min_lag - 1..=max_lag + 1).map(acf).collect();
    let mut best = 1;
    for i in 1..values.len() - 1 {
        if values[i] > values[best] {
            best = i;
        }
    }
    if values[best] <= 0.0 {
        return None;
    }
    let (a, b, c) = (values[best - 1], values[best], values[best + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let lag = (min_lag - 1 + best) as f64 + shift;
    let mut bpm = 60.0 * rate / lag;
    while bpm < BPM_RANGE.0 {
        bpm *= 2.0;
    }
    while bpm > BPM_RANGE.1 {
        bpm /= 2.0;
    }
    Some(bpm)
}

/// Pitch class of a frequency with A440 as class 9.
pub fn pitch_class(hz: f64) -> usize {
    let semis = (12.0 * (hz / 440.0).log2()).round() as i64;
    (9 + semis).rem_euclid(12) as usize
}

/// Linear-frequency energy folded into 12 pitch classes, normalised to unit
/// sum; uniform for silence.
pub fn chroma(mono: &[f32]) -> [f64; 12] {
    static SPECTRUM: OnceLock<PowerSpectrum> = OnceLock::new();
    let spectrum = SPECTRUM.get_or_init(|| PowerSpectrum::new(CHROMA_WINDOW));
    let classes: Vec<Option<usize>> = (0..spectrum.bins())
        .map(|k| {
            let hz = spectrum.bin_hz(k);
            (hz >= CHROMA_RANGE_HZ.0 && hz <= CHROMA_RANGE_HZ.1).then(|| pitch_class(hz))
        })
        .collect();
    let hop = CHROMA_WINDOW / 2;
    let mut scratch = Vec::with_capacity(CHROMA_WINDOW);
    let mut window = vec![0.0; CHROMA_WINDOW];
    let mut power = vec![0.0; spectrum.bins()];
    let mut energy = [0.0; 12];
    let mut start = 0;
    while start < mono.len() {
        for (i, w) in window.iter_mut().enumerate() {
            *w = mono.get(start + i).map_or(0.0, |&x| x as f64);
        }
        spectrum.compute(&window, &mut scratch, &mut power);
        for (p, class) in power.iter().zip(&classes) {
            if let Some(c) = class {
                energy[*c] += p;
            }
        }
        start += hop;
    }
    let total: f64 = energy.iter().sum();
    if total <= 0.0 {
        return [1.0 / 12.0; 12];
    }
    energy.map(|e| e / total)
}

/// Centroid and bandwidth of the mean log-mel spectrum, in Hz.
pub fn brightness(audio: &StereoAudio) -> (f64, f64) {
    let frames = analyze(audio);
    if frames.is_empty() {
        return (0.0, 0.0);
    }
    let mut mean = [0.0; MEL_BANDS];
    for frame in &frames {
        for channel in [frame.left(), frame.right()] {
            for (m, v) in mean.iter_mut().zip(channel) {
                *m += v;
            }
        }
    }
    let centers = analysis_bank().1.centers_hz();
    let total: f64 = mean.iter().sum();
    if total <= 0.0 {
        return (0.0, 0.0);
    }
    let centroid = mean.iter().zip(centers).map(|(w, c)| w * c).sum::<f64>() / total;
    let spread = mean
        .iter()
        .zip(centers)
        .map(|(w, c)| w * (c - centroid) * (c - centroid))
        .sum::<f64>()
        / total;
    (centroid, spread.sqrt())
}

pub fn extract_descriptors(audio: &StereoAudio) -> Result<ControlState> {
    if audio.is_empty() {
        return Err(Error::Value("cannot describe empty audio".into()));
    }
    let mono = audio.to_mono();
    let envelope = onset_envelope(&mono);
    let onsets = pick_onsets(&envelope);
    let (centroid_hz, bandwidth_hz) = brightness(audio);
    let chroma = chroma(&mono);
    let key = crate::sampling::argmax(&chroma) as u8;
    Ok(ControlState {
        bpm: if onsets.is_empty() { None } else { estimate_bpm(&envelope) },
        centroid_hz,
        bandwidth_hz,
        density: onsets.len() as f64 / audio.seconds(),
        key,
        chroma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clicks(seconds: f64, times: &[f64]) -> StereoAudio {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let mut samples = vec![0.0f32; n];
        for &t in times {
            let start = (t * SAMPLE_RATE as f64) as usize;
            for (i, s) in samples[start..(start + 48).min(n)].iter_mut().enumerate() {
                *s = 0.9 * (1.0 - i as f32 / 48.0);
            }
        }
        StereoAudio::mono(samples)
    }

    fn sine(hz: f64, seconds: f64) -> StereoAudio {
        let n = (seconds * SAMPLE_RATE as f64) as usize;
        let w = 2.0 * std::f64::consts::PI * hz / SAMPLE_RATE as f64;
        StereoAudio::mono((0..n).map(|i| (0.5 * (w * i as f64).sin()) as f32).collect())
    }

    #[test]
    fn ten_clicks_in_five_seconds() {
        let times: Vec<f64> = (0..10).map(|k| 0.25 + 0.5 * k as f64).collect();
        let state = extract_descriptors(&clicks(5.0, &times)).unwrap();
        assert!((state.density - 2.0).abs() <= 0.1, "density {}", state.density);
    }

    #[test]
    fn irregular_clicks_are_all_found() {
        let times = [0.1, 0.37, 0.52, 1.9, 2.05, 3.3, 4.71];
        let onsets = pick_onsets(&onset_envelope(&clicks(5.0, &times).to_mono()));
        assert_eq!(onsets.len(), times.len());
        for (frame, t) in onsets.iter().zip(times) {
            let seconds = *frame as f64 / ONSET_RATE_HZ as f64;
            assert!((seconds - t).abs() < 0.03, "{seconds} vs {t}");
        }
    }

    #[test]
    fn click_track_tempo() {
        for bpm in [120.0, 90.0, 150.0] {
            let period = 60.0 / bpm;
            let times: Vec<f64> = (0..).map(|k| 0.05 + k as f64 * period).take_while(|&t| t < 9.9).collect();
            let state = extract_descriptors(&clicks(10.0, &times)).unwrap();
            let got = state.bpm.unwrap();
            assert!((got - bpm).abs() <= 2.0, "{bpm}: got {got}");
        }
    }

    #[test]
    fn a440_is_pitch_class_nine() {
        let state = extract_descriptors(&sine(440.0, 2.0)).unwrap();
        assert_eq!(state.key, 9);
        assert!(state.chroma[9] > 0.9, "{:?}", state.chroma);
        assert!((state.chroma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chroma_matches_direct_fold() {
        // Independent fold: nearest equal-tempered note by table lookup.
        let names: Vec<f64> = (-48..=40).map(|s| 440.0 * 2f64.powf(s as f64 / 12.0)).collect();
        for hz in [261.63, 329.63, 392.0, 493.88] {
            let nearest = names
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
                .unwrap()
                .0 as i64;
            let expected = (nearest - 48 + 9).rem_euclid(12) as u8;
            assert_eq!(extract_descriptors(&sine(hz, 2.0)).unwrap().key, expected, "{hz}");
        }
    }

    #[test]
    fn silence_descriptors() {
        let state = extract_descriptors(&StereoAudio::silence(96_000)).unwrap();
        assert_eq!(state.bpm, None);
        assert_eq!(state.density, 0.0);
        assert_eq!(state.chroma, [1.0 / 12.0; 12]);
        assert!(extract_descriptors(&StereoAudio::silence(0)).is_err());
    }

    #[test]
    fn brighter_audio_has_higher_centroid() {
        let (low, _) = brightness(&sine(200.0, 2.0));
        let (high, _) = brightness(&sine(6000.0, 2.0));
        assert!(high > low, "{low} {high}");
    }

    #[test]
    fn extraction_is_deterministic() {
        let audio = sine(330.0, 2.0);
        assert_eq!(extract_descriptors(&audio).unwrap(), extract_descriptors(&audio).unwrap());
    }

    #[test]
    fn bpm_binning() {
        assert_eq!(bpm_bin(40.0), 0);
        assert_eq!(bpm_bin(240.0), 63);
        assert_eq!(bpm_bin(10.0), 0);
        assert_eq!(bpm_bin(1000.0), 63);
        let b = bpm_bin(120.0);
        let (lo, hi) = bpm_bin_edges(b);
        assert!(lo <= 120.0 && 120.0 < hi);
        // Independent edge: 40 * 6^(b/64).
        assert!((lo - 40.0 * 6f64.powf(b as f64 / 64.0)).abs() < 1e-9);
    }

    #[test]
    fn key_token_is_identity() {
        let state = ControlState {
            bpm: Some(120.0),
            centroid_hz: 1000.0,
            bandwidth_hz: 10.0,
            density: 2.0,
            key: 9,
            chroma: [1.0 / 12.0; 12],
        };
        let tokens = ControlTokens::encode(&state);
        assert_eq!(tokens.bins[SLOT_KEY], 9);
        assert_eq!(tokens.unified()[0], 2050 + tokens.bins[0]);
        assert_eq!(tokens.unified()[3], 2050 + 64 + 32 + 32 + 9);
        assert!(ControlTokens::from_bins([64, 0, 0, 0]).is_err());
    }

    #[test]
    fn prior_construction() {
        let zero = prior_from_targets(
            &ControlTargets { bpm: Some(120.0), key: Some(2), ..Default::default() },
            0.0,
        )
        .unwrap();
        assert!(zero.is_zero());

        let prior = prior_from_targets(
            &ControlTargets { bpm: Some(120.0), key: Some(0), ..Default::default() },
            5.0,
        )
        .unwrap();
        let b = bpm_bin(120.0) as usize;
        assert_eq!(prior.offsets(SLOT_BPM)[b], 5.0);
        assert!((prior.offsets(SLOT_BPM)[b + 1] - 5.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!(prior.offsets(SLOT_BRIGHTNESS).iter().all(|&o| o == 0.0));
        assert!(prior.offsets(SLOT_DENSITY).iter().all(|&o| o == 0.0));
        assert_eq!(prior.offsets(SLOT_KEY)[1], prior.offsets(SLOT_KEY)[11]);
        assert!(prior_from_targets(&ControlTargets::default(), -1.0).is_err());
        assert!(prior_from_targets(&ControlTargets { key: Some(12), ..Default::default() }, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bpm_round_trip_within_half_bin(bpm in 40.0f64..240.0) {
            let tokens = ControlTokens { bins: [bpm_bin(bpm), 0, 0, 0] };
            let centre = tokens.decode().bpm.unwrap();
            let (lo, hi) = bpm_bin_edges(tokens.bins[0]);
            prop_assert!((centre - bpm).abs() <= 0.5 * (hi - lo) + 1e-9);
        }

        #[test]
        fn density_round_trip_within_half_bin(d in 0.0f64..8.0) {
            let tokens = ControlTokens { bins: [0, 0, density_bin(d), 0] };
            prop_assert!((tokens.decode().density.unwrap() - d).abs() <= 0.125 + 1e-12);
        }

        #[test]
        fn bins_stay_in_range(v in -1e6f64..1e6) {
            prop_assert!((bpm_bin(v) as usize) < 64);
            prop_assert!((brightness_bin(v) as usize) < 32);
            prop_assert!((density_bin(v) as usize) < 32);
        }
    }
}
