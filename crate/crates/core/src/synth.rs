//! Deterministic synthetic countermeasure corpus.
//!
//! Bonafide utterances are voiced, multi-harmonic tones with a drifting
//! fundamental, a syllable-rate amplitude envelope and low-level white
//! noise. Every spoof class renders a fresh bonafide-style source and then
//! applies one fixed channel transform, listed per class below. The
//! transforms stand in for real replay / TTS / VC artefacts; they only need
//! to make the discrimination task learnable.
//!
//! | PA id | LA id | transform |
//! |-------|-------|-----------|
//! | AA | SS_1 | low-pass, two cascaded biquads (PA 1.5 kHz, LA 2.5 kHz) |
//! | AB |       | high-pass, two cascaded biquads at 2 kHz |
//! | AC | US_1 | soft clipping `tanh(g x) / tanh(g)` (PA g = 4, LA g = 3) |
//! | BA | SS_2 | feedback comb reverberation (PA 2.5 ms / 0.9, LA 2 ms / 0.85) |
//! | BB | SS_4 | spectral tilt, pre-emphasis `x[n] - 0.97 x[n-1]` applied twice |
//! | BC | VC_1 | additive white noise (PA 5 dB SNR, LA 10 dB SNR) |
//! | CA |       | requantization to 3 bits |
//! | CB |       | 25 Hz amplitude modulation, depth 1 |
//! | CC | VC_4 | band-pass (PA 300 to 3400 Hz, LA 500 to 4000 Hz) |
//!
//! All randomness comes from one ChaCha8 generator seeded with
//! [`SynthConfig::seed`]; utterance `i` draws from stream `i` so clips can
//! be rendered independently and in any order.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{AudioClip, Key, Mode, Protocol, TrialEntry, BONAFIDE_SYSTEM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mode: Mode,
    pub n_bonafide: usize,
    pub spoof_per_class: usize,
    /// Uniform duration range in seconds.
    pub duration_range: (f64, f64),
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults with a 9:1 spoof to bonafide ratio.
    pub fn new(mode: Mode, seed: u64) -> Self {
        let spoof_per_class = match mode {
            Mode::Pa => 60,
            Mode::La => 90,
        };
        Self {
            mode,
            n_bonafide: 60,
            spoof_per_class,
            duration_range: (1.0, 4.0),
            sample_rate: 16_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bonafide == 0 || self.spoof_per_class == 0 {
            return Err(Error::InvalidConfig(
                "utterance counts must be positive".into(),
            ));
        }
        if self.sample_rate < 8000 {
            return Err(Error::InvalidConfig(
                "sample rate must be at least 8 kHz".into(),
            ));
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bad duration range ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// A planned corpus: protocol entries plus the recipe to render each clip.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    cfg: SynthConfig,
    entries: Protocol,
    classes: Vec<Option<usize>>,
}

impl SynthCorpus {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let spoof_ids = cfg.mode.spoof_ids();
        let total = cfg.n_bonafide + spoof_ids.len() * cfg.spoof_per_class;
        let mut entries = Vec::with_capacity(total);
        let mut classes = Vec::with_capacity(total);
        let prefix = cfg.mode.as_str();
        for i in 0..total {
            let class = if i < cfg.n_bonafide {
                None
            } else {
                Some((i - cfg.n_bonafide) / cfg.spoof_per_class)
            };
            let (system_id, key) = match class {
                None => (BONAFIDE_SYSTEM, Key::Bonafide),
                Some(k) => (spoof_ids[k], Key::Spoof),
            };
            entries.push(TrialEntry {
                speaker_id: format!("{prefix}_S{:02}", i % 20),
                utt_id: format!("{prefix}_{i:05}"),
                system_id: system_id.into(),
                key,
            });
            classes.push(class);
        }
        Ok(Self {
            cfg,
            entries,
            classes,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn protocol(&self) -> &Protocol {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Renders utterance `index`; identical for identical configuration.
    pub fn render(&self, index: usize) -> Result<AudioClip> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64);
        let fs = self.cfg.sample_rate as f64;
        let (lo, hi) = self.cfg.duration_range;
        let dur = if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        };
        let n = ((dur * fs) as usize).max(1);
        let mut x = voiced_source(&mut rng, n, fs);
        if let Some(class) = self.classes[index] {
            apply_transform(self.cfg.mode, class, &mut x, fs, &mut rng);
        }
        let gain: f64 = rng.random_range(0.2..0.6);
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        let samples = x.iter().map(|v| (v / peak * gain) as f32).collect();
        AudioClip::new(samples, self.cfg.sample_rate)
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn voiced_source(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let f0: f64 = rng.random_range(90.0..300.0);
    let drift_rate: f64 = rng.random_range(0.5..2.0);
    let drift_depth: f64 = rng.random_range(0.03..0.12);
    let env_rate: f64 = rng.random_range(2.5..5.0);
    let env_phase: f64 = rng.random_range(0.0..2.0 * PI);
    let decay: f64 = rng.random_range(0.7..1.3);
    let noise_level: f64 = rng.random_range(0.003..0.01);
    let max_harm = ((0.45 * fs) / (f0 * (1.0 + drift_depth))) as usize;
    // (a cos p, a sin p) per harmonic
    let amps: Vec<(f64, f64)> = (1..=max_harm.max(1))
        .map(|h| {
            let jitter: f64 = rng.random_range(0.7..1.3);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let a = jitter / libm::pow(h as f64, decay);
            (a * libm::cos(phase), a * libm::sin(phase))
        })
        .collect();
    let mut phase0 = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / fs;
        let f = f0 * (1.0 + drift_depth * libm::sin(2.0 * PI * drift_rate * t));
        phase0 += 2.0 * PI * f / fs;
        if phase0 >= 2.0 * PI {
            phase0 -= 2.0 * PI;
        }
        // sin(h phi + p) summed by rotating e^{i h phi}
        let (s1, c1) = libm::sincos(phase0);
        let (mut sh, mut ch) = (s1, c1);
        let mut v = 0.0;
        for &(ac, as_) in &amps {
            v += sh * ac + ch * as_;
            (sh, ch) = (sh * c1 + ch * s1, ch * c1 - sh * s1);
        }
        let env = 0.55 + 0.45 * libm::sin(2.0 * PI * env_rate * t + env_phase);
        out.push(v * env + noise_level * gaussian(rng));
    }
    out
}

#[derive(Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(fc: f64, fs: f64) -> Self {
        let (w0, alpha) = Self::omega(fc, fs);
        let c = libm::cos(w0);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, fs: f64) -> Self {
        let (w0, alpha) = Self::omega(fc, fs);
        let c = libm::cos(w0);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn omega(fc: f64, fs: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * fc / fs;
        (w0, libm::sin(w0) / (2.0 * core::f64::consts::FRAC_1_SQRT_2))
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y =
                self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

fn lowpass(x: &mut [f64], fc: f64, fs: f64) {
    let f = Biquad::lowpass(fc, fs);
    f.run(x);
    f.run(x);
}

fn highpass(x: &mut [f64], fc: f64, fs: f64) {
    let f = Biquad::highpass(fc, fs);
    f.run(x);
    f.run(x);
}

fn soft_clip(x: &mut [f64], gain: f64) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let norm = libm::tanh(gain);
    for v in x.iter_mut() {
        *v = libm::tanh(gain * *v / peak) / norm;
    }
}

fn comb(x: &mut [f64], delay_s: f64, feedback: f64, fs: f64) {
    let d = ((delay_s * fs) as usize).max(1);
    for i in d..x.len() {
        x[i] += feedback * x[i - d];
    }
}

fn pre_emphasis(x: &mut [f64]) {
    for i in (1..x.len()).rev() {
        x[i] -= 0.97 * x[i - 1];
    }
}

fn add_noise(x: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let sigma = libm::sqrt(power / libm::pow(10.0, snr_db / 10.0));
    for v in x.iter_mut() {
        *v += sigma * gaussian(rng);
    }
}

fn requantize(x: &mut [f64], bits: u32) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let levels = (1u32 << (bits - 1)) as f64;
    for v in x.iter_mut() {
        *v = libm::round(*v / peak * levels) / levels;
    }
}

fn amplitude_modulate(x: &mut [f64], rate: f64, depth: f64, fs: f64) {
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v *= 1.0 - depth * 0.5 * (1.0 + libm::sin(2.0 * PI * rate * t));
    }
}

fn apply_transform(mode: Mode, class: usize, x: &mut [f64], fs: f64, rng: &mut ChaCha8Rng) {
    match (mode, class) {
        (Mode::Pa, 0) => lowpass(x, 1500.0, fs),
        (Mode::Pa, 1) => highpass(x, 2000.0, fs),
        (Mode::Pa, 2) => soft_clip(x, 4.0),
        (Mode::Pa, 3) => comb(x, 0.0025, 0.9, fs),
        (Mode::Pa, 4) => {
            pre_emphasis(x);
            pre_emphasis(x);
        }
        (Mode::Pa, 5) => add_noise(x, 5.0, rng),
        (Mode::Pa, 6) => requantize(x, 3),
        (Mode::Pa, 7) => amplitude_modulate(x, 25.0, 1.0, fs),
        (Mode::Pa, _) => {
            highpass(x, 300.0, fs);
            lowpass(x, 3400.0, fs);
        }
        (Mode::La, 0) => lowpass(x, 2500.0, fs),
        (Mode::La, 1) => comb(x, 0.002, 0.85, fs),
        (Mode::La, 2) => {
            pre_emphasis(x);
            pre_emphasis(x);
        }
        (Mode::La, 3) => soft_clip(x, 3.0),
        (Mode::La, 4) => add_noise(x, 10.0, rng),
        (Mode::La, _) => {
            highpass(x, 500.0, fs);
            lowpass(x, 4000.0, fs);
        }
    }
}
