//! Acoustic front end: log power spectra and constant-Q cepstra.
//!
//! Neither feature applies voice activity detection or any mean/variance
//! normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::audio::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Logspec,
    Cqcc,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Logspec => "logspec",
            FeatureKind::Cqcc => "cqcc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logspec" => Some(FeatureKind::Logspec),
            "cqcc" => Some(FeatureKind::Cqcc),
            _ => None,
        }
    }
}

/// Frames x coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    frames: usize,
    dim: usize,
    kind: FeatureKind,
    frame_hop: f64,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f32>,
        frames: usize,
        dim: usize,
        kind: FeatureKind,
        frame_hop: f64,
    ) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Empty("feature matrix".into()));
        }
        if data.len() != frames * dim {
            return Err(Error::Shape(format!(
                "feature data has {} values, expected {frames} x {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            data,
            frames,
            dim,
            kind,
            frame_hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Frame hop in seconds.
    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f32 {
        self.data[t * self.dim + d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hamming,
    Hann,
}

impl Window {
    /// Symmetric window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let denom = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let c = libm::cos(2.0 * PI * i as f64 / denom);
                match self {
                    Window::Hamming => 0.54 - 0.46 * c,
                    Window::Hann => 0.5 - 0.5 * c,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub window: Window,
    pub floor_eps: f64,
}

impl Default for StftConfig {
    /// 512-point FFT (257 bins), 25 ms Hamming window, 10 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            win_length: 400,
            hop_length: 160,
            window: Window::Hamming,
            floor_eps: 1e-12,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || !(16..=4096).contains(&self.fft_size) {
            return Err(Error::InvalidConfig(format!(
                "fft_size must be a power of two in 16..=4096, got {}",
                self.fft_size
            )));
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return Err(Error::InvalidConfig(
                "need 0 < win_length <= fft_size".into(),
            ));
        }
        if self.hop_length == 0 || self.hop_length > self.win_length {
            return Err(Error::InvalidConfig(
                "need 0 < hop_length <= win_length".into(),
            ));
        }
        if !(self.floor_eps > 0.0) {
            return Err(Error::InvalidConfig("floor_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for `len` samples (no edge padding).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            (len - self.win_length) / self.hop_length + 1
        }
    }
}

macro_rules! rfft_dispatch {
    ($buf:expr, $out:expr, $($n:literal => $f:ident),*) => {
        match $buf.len() {
            $($n => {
                let arr: &mut [f32; $n] = $buf.as_mut_slice().try_into().unwrap();
                let spec = microfft::real::$f(arr);
                // Nyquist is packed into the imaginary part of the DC bin.
                $out[0] = { let v = f64::from(spec[0].re); v * v };
                $out[$n / 2] = { let v = f64::from(spec[0].im); v * v };
                for k in 1..$n / 2 {
                    $out[k] = f64::from(spec[k].norm_sqr());
                }
            })*
            n => unreachable!("unsupported FFT size {n}"),
        }
    };
}

/// Power spectrum `|FFT(frame)|^2` of a zero-padded frame, `fft_size/2 + 1` bins.
fn power_spectrum(buf: &mut Vec<f32>, out: &mut [f64]) {
    rfft_dispatch!(buf, out,
        16 => rfft_16, 32 => rfft_32, 64 => rfft_64, 128 => rfft_128,
        256 => rfft_256, 512 => rfft_512, 1024 => rfft_1024,
        2048 => rfft_2048, 4096 => rfft_4096);
}

/// Log power magnitude spectrogram: `log(|STFT|^2 + floor_eps)`.
pub fn logspec(clip: &AudioClip, cfg: &StftConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let x = clip.samples();
    let frames = cfg.frame_count(x.len());
    if frames == 0 {
        return Err(Error::ClipTooShort {
            len: x.len(),
            need: cfg.win_length,
        });
    }
    let win = cfg.window.coefficients(cfg.win_length);
    let bins = cfg.bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![0.0f32; cfg.fft_size];
    let mut power = vec![0.0f64; bins];
    for t in 0..frames {
        let start = t * cfg.hop_length;
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (i, w) in win.iter().enumerate() {
            buf[i] = (f64::from(x[start + i]) * w) as f32;
        }
        power_spectrum(&mut buf, &mut power);
        data.extend(power.iter().map(|p| libm::log(p + cfg.floor_eps) as f32));
    }
    FeatureMatrix::new(
        data,
        frames,
        bins,
        crate::dsp::FeatureKind::Logspec,
        cfg.hop_length as f64 / clip.sample_rate() as f64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqccConfig {
    pub bins_per_octave: usize,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
    pub n_ceps: usize,
    pub include_c0: bool,
    /// Uniform resampling density, points per octave.
    pub resample_points: usize,
    pub hop_length: usize,
    pub floor_eps: f64,
}

impl Default for CqccConfig {
    /// 96 bins per octave over nine octaves below Nyquist, 30 coefficients
    /// including c0, 10 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            bins_per_octave: 96,
            f_min: 8000.0 / 512.0,
            f_max: None,
            n_ceps: 30,
            include_c0: true,
            resample_points: 96,
            hop_length: 160,
            floor_eps: 1e-12,
        }
    }
}

impl CqccConfig {
    /// Defaults for `sample_rate`: `f_max = fs/2`, `f_min = f_max / 2^9`.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let nyq = sample_rate as f64 / 2.0;
        Self {
            f_min: nyq / 512.0,
            f_max: Some(nyq),
            ..Self::default()
        }
    }

    fn resolved_f_max(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(sample_rate as f64 / 2.0)
    }

    fn octaves(&self, sample_rate: u32) -> f64 {
        libm::log2(self.resolved_f_max(sample_rate) / self.f_min)
    }

    /// Number of constant-Q bins.
    pub fn n_bins(&self, sample_rate: u32) -> usize {
        libm::round(self.bins_per_octave as f64 * self.octaves(sample_rate)) as usize
    }

    /// Number of uniformly spaced points the log spectrum is resampled to.
    pub fn n_uniform(&self, sample_rate: u32) -> usize {
        libm::round(self.resample_points as f64 * self.octaves(sample_rate)) as usize
    }

    /// Quality factor `1 / (2^(1/B) - 1)`.
    pub fn q_factor(&self) -> f64 {
        1.0 / (libm::pow(2.0, 1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn center_frequency(&self, k: usize) -> f64 {
        self.f_min * libm::pow(2.0, k as f64 / self.bins_per_octave as f64)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let f_max = self.resolved_f_max(sample_rate);
        if self.bins_per_octave == 0 || self.resample_points == 0 || self.hop_length == 0 {
            return Err(Error::InvalidConfig(
                "bins, resample points and hop must be positive".into(),
            ));
        }
        if !(self.f_min > 0.0 && self.f_min < f_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < f_min < f_max, got {} / {f_max}",
                self.f_min
            )));
        }
        if f_max > sample_rate as f64 / 2.0 + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "f_max {f_max} Hz above Nyquist"
            )));
        }
        let usable = self.n_uniform(sample_rate);
        let wanted = self.n_ceps + usize::from(!self.include_c0);
        if self.n_ceps == 0 || wanted > usable {
            return Err(Error::InvalidConfig(format!(
                "{} cepstra requested from {usable} uniform samples",
                self.n_ceps
            )));
        }
        if !(self.floor_eps > 0.0) {
            return Err(Error::InvalidConfig("floor_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Constant-Q spectrogram, frames x bins, computed directly in the time
/// domain. Frame `t` is centred on sample `t * hop_length`; atom `k` is a
/// Hann-windowed complex exponential of `ceil(Q fs / f_k)` samples scaled
/// by its length. Samples outside the clip count as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantQ {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl ConstantQ {
    pub fn get(&self, t: usize, k: usize) -> Complex64 {
        self.data[t * self.bins + k]
    }
}

pub fn cqt(clip: &AudioClip, cfg: &CqccConfig) -> Result<ConstantQ> {
    let fs = clip.sample_rate();
    cfg.validate(fs)?;
    let fs_f = fs as f64;
    let x = clip.samples();
    let len = x.len();
    let frames = (len - 1) / cfg.hop_length + 1;
    let bins = cfg.n_bins(fs);
    let q = cfg.q_factor();
    let mut data = vec![Complex64::new(0.0, 0.0); frames * bins];
    let last_center = (frames - 1) * cfg.hop_length;
    let mut re = Vec::new();
    let mut im = Vec::new();
    for k in 0..bins {
        let fk = cfg.center_frequency(k);
        let n_k = libm::ceil(q * fs_f / fk) as usize;
        let half = n_k / 2;
        // Atom taps n map to sample c_t - half + n; keep only taps that can
        // land inside the clip for some frame.
        let lo = half.saturating_sub(last_center);
        let hi = (half + len).min(n_k);
        re.clear();
        im.clear();
        let denom = if n_k > 1 { (n_k - 1) as f64 } else { 1.0 };
        let scale = 1.0 / n_k as f64;
        for n in lo..hi {
            let w = if n_k > 1 {
                0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / denom)
            } else {
                1.0
            };
            let phase = -2.0 * PI * fk * (n as f64 - half as f64) / fs_f;
            re.push((w * scale * libm::cos(phase)) as f32);
            im.push((w * scale * libm::sin(phase)) as f32);
        }
        for t in 0..frames {
            let c = t * cfg.hop_length;
            // sample index s = c - half + n must satisfy 0 <= s < len
            let n_start = (half.saturating_sub(c)).max(lo);
            let n_end = (half + len - c).min(hi);
            if n_start >= n_end {
                continue;
            }
            let s_start = c + n_start - half;
            let xs = &x[s_start..s_start + (n_end - n_start)];
            let (ar, ai) = (&re[n_start - lo..n_end - lo], &im[n_start - lo..n_end - lo]);
            let (sr, si) = dot2(xs, ar, ai);
            data[t * bins + k] = Complex64::new(sr, si);
        }
    }
    Ok(ConstantQ { frames, bins, data })
}

/// Two dot products sharing the left operand, 8-lane f32 accumulation.
fn dot2(x: &[f32], a: &[f32], b: &[f32]) -> (f64, f64) {
    let mut acc_a = [0.0f32; 8];
    let mut acc_b = [0.0f32; 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let o = c * 8;
        for l in 0..8 {
            acc_a[l] += x[o + l] * a[o + l];
            acc_b[l] += x[o + l] * b[o + l];
        }
    }
    let mut sa: f64 = acc_a.iter().map(|&v| f64::from(v)).sum();
    let mut sb: f64 = acc_b.iter().map(|&v| f64::from(v)).sum();
    for i in chunks * 8..x.len() {
        sa += f64::from(x[i] * a[i]);
        sb += f64::from(x[i] * b[i]);
    }
    (sa, sb)
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients.
pub fn dct_ii(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n_out.min(n))
        .map(|k| {
            let s = if k == 0 {
                libm::sqrt(1.0 / nf)
            } else {
                libm::sqrt(2.0 / nf)
            };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * libm::cos(PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)))
                .sum();
            s * sum
        })
        .collect()
}

/// Linear interpolation of a log spectrum sampled at geometric bin centres
/// onto `n_uniform` linearly spaced frequencies spanning `[f_min, f_max]`.
pub struct UniformResampler {
    taps: Vec<(usize, usize, f64)>,
}

impl UniformResampler {
    pub fn new(cfg: &CqccConfig, sample_rate: u32) -> Self {
        let bins = cfg.n_bins(sample_rate);
        let n_u = cfg.n_uniform(sample_rate);
        let f_max = cfg.resolved_f_max(sample_rate);
        let b = cfg.bins_per_octave as f64;
        let taps = (0..n_u)
            .map(|j| {
                let f = if n_u > 1 {
                    cfg.f_min + (f_max - cfg.f_min) * j as f64 / (n_u - 1) as f64
                } else {
                    cfg.f_min
                };
                let pos = (b * libm::log2(f / cfg.f_min)).clamp(0.0, (bins - 1) as f64);
                let i0 = libm::floor(pos) as usize;
                let i1 = (i0 + 1).min(bins - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect();
        Self { taps }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn apply(&self, log_spec: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.taps
                .iter()
                .map(|&(i0, i1, a)| log_spec[i0] * (1.0 - a) + log_spec[i1] * a),
        );
    }
}

/// Constant-Q cepstral coefficients: `|CQT|^2`, log, uniform resampling,
/// orthonormal DCT-II, first `n_ceps` coefficients (from c0 when
/// `include_c0`, otherwise from c1).
pub fn cqcc(clip: &AudioClip, cfg: &CqccConfig) -> Result<FeatureMatrix> {
    let spec = cqt(clip, cfg)?;
    let resampler = UniformResampler::new(cfg, clip.sample_rate());
    let skip = usize::from(!cfg.include_c0);
    let mut data = Vec::with_capacity(spec.frames * cfg.n_ceps);
    let mut log_spec = vec![0.0f64; spec.bins];
    let mut uniform = Vec::with_capacity(resampler.len());
    for t in 0..spec.frames {
        for (k, v) in log_spec.iter_mut().enumerate() {
            *v = libm::log(spec.get(t, k).norm_sqr() + cfg.floor_eps);
        }
        resampler.apply(&log_spec, &mut uniform);
        let ceps = dct_ii(&uniform, cfg.n_ceps + skip);
        data.extend(ceps[skip..].iter().map(|&c| c as f32));
    }
    FeatureMatrix::new(
        data,
        spec.frames,
        cfg.n_ceps,
        FeatureKind::Cqcc,
        cfg.hop_length as f64 / clip.sample_rate() as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, fs: u32, amp: f64) -> AudioClip {
        let n = (secs * fs as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * libm::sin(2.0 * PI * freq * i as f64 / fs as f64)) as f32)
            .collect();
        AudioClip::new(s, fs).unwrap()
    }

    #[test]
    fn logspec_dimension_and_frame_count() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        let f = logspec(&clip, &StftConfig::default()).unwrap();
        assert_eq!(f.dim(), 257);
        assert_eq!(f.frames(), 98);
        assert_eq!(f.kind(), FeatureKind::Logspec);
        assert!((f.frame_hop() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_clip_hits_the_floor() {
        let clip = AudioClip::new(vec![0.0; 800], 16000).unwrap();
        let f = logspec(&clip, &StftConfig::default()).unwrap();
        let floor = libm::log(1e-12) as f32;
        assert!(f.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(
            logspec(&clip, &StftConfig::default()),
            Err(Error::ClipTooShort {
                len: 399,
                need: 400
            })
        ));
    }

    #[test]
    fn power_spectrum_matches_direct_dft() {
        let cfg = StftConfig {
            fft_size: 64,
            win_length: 64,
            hop_length: 64,
            ..StftConfig::default()
        };
        let samples: Vec<f32> = (0..64)
            .map(|i| libm::sin(i as f64 * 0.37) as f32 * 0.5 + 0.1)
            .collect();
        let clip = AudioClip::new(samples.clone(), 8000).unwrap();
        let f = logspec(&clip, &cfg).unwrap();
        let w = Window::Hamming.coefficients(64);
        for k in 0..33 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, s) in samples.iter().enumerate() {
                let xw = (f64::from(*s) * w[n]) as f32 as f64;
                acc += Complex64::from_polar(xw, -2.0 * PI * (k * n) as f64 / 64.0);
            }
            let expect = libm::log(acc.norm_sqr() + 1e-12);
            assert!((f64::from(f.get(0, k)) - expect).abs() < 1e-3, "bin {k}");
        }
    }

    #[test]
    fn scaling_shifts_logspec_by_two_log_alpha() {
        let base: Vec<f32> = (0..4000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                (0.2 * libm::sin(2.0 * PI * 220.0 * t)
                    + 0.05 * libm::sin(2.0 * PI * 1330.0 * t + 0.3)
                    + 0.01 * libm::sin(i as f64 * 1.7)) as f32
            })
            .collect();
        let cfg = StftConfig::default();
        let a = logspec(&AudioClip::new(base.clone(), 16000).unwrap(), &cfg).unwrap();
        let alpha = 3.0f32;
        let scaled: Vec<f32> = base.iter().map(|v| v * alpha).collect();
        let b = logspec(&AudioClip::new(scaled, 16000).unwrap(), &cfg).unwrap();
        let shift = 2.0 * libm::log(f64::from(alpha));
        for (x, y) in a.data().iter().zip(b.data()) {
            if *x > -10.0 {
                assert!((f64::from(y - x) - shift).abs() < 1e-3, "{x} -> {y}");
            }
        }
    }

    #[test]
    fn cqt_bin_count_default() {
        let cfg = CqccConfig::for_sample_rate(16000);
        assert_eq!(cfg.n_bins(16000), 864);
        assert_eq!(cfg.n_uniform(16000), 864);
    }

    #[test]
    fn cqt_rejects_f_max_above_nyquist() {
        let cfg = CqccConfig {
            f_max: Some(9000.0),
            ..CqccConfig::for_sample_rate(16000)
        };
        let clip = AudioClip::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(cqt(&clip, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cqt_zero_clip_is_zero() {
        let cfg = CqccConfig {
            f_min: 500.0,
            bins_per_octave: 12,
            ..CqccConfig::for_sample_rate(8000)
        };
        let clip = AudioClip::new(vec![0.0; 2000], 8000).unwrap();
        let c = cqt(&clip, &cfg).unwrap();
        assert!(c.data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn cqt_tone_peaks_at_its_bin() {
        let cfg = CqccConfig {
            f_min: 125.0,
            bins_per_octave: 24,
            resample_points: 24,
            hop_length: 200,
            ..CqccConfig::for_sample_rate(8000)
        };
        let k0 = 60;
        let clip = tone(cfg.center_frequency(k0), 1.0, 8000, 0.5);
        let c = cqt(&clip, &cfg).unwrap();
        for t in 0..c.frames {
            let best = (0..c.bins)
                .max_by(|&a, &b| c.get(t, a).norm().partial_cmp(&c.get(t, b).norm()).unwrap())
                .unwrap();
            assert_eq!(best, k0, "frame {t}");
        }
    }

    #[test]
    fn dct_of_constant_is_c0_only() {
        let c = 1.7;
        let y = dct_ii(&[c; 16], 16);
        assert!((y[0] - c * 4.0).abs() < 1e-12);
        assert!(y[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_matches_brute_force_eight_points() {
        let x = [0.5, -1.0, 2.0, 0.25, 3.0, -0.75, 1.5, 0.0];
        let n = 8.0f64;
        let y = dct_ii(&x, 5);
        assert_eq!(y.len(), 5);
        for (k, yk) in y.iter().enumerate() {
            let mut s = 0.0;
            for (i, xi) in x.iter().enumerate() {
                s += xi * (core::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos();
            }
            let norm = if k == 0 {
                (1.0 / n).sqrt()
            } else {
                (2.0 / n).sqrt()
            };
            assert!((yk - s * norm).abs() < 1e-12);
        }
    }

    #[test]
    fn cqcc_has_requested_dimension() {
        let cfg = CqccConfig {
            f_min: 62.5,
            bins_per_octave: 24,
            resample_points: 24,
            ..CqccConfig::for_sample_rate(8000)
        };
        let clip = tone(440.0, 0.3, 8000, 0.3);
        let f = cqcc(&clip, &cfg).unwrap();
        assert_eq!(f.dim(), 30);
        assert_eq!(f.kind(), FeatureKind::Cqcc);
        let no_c0 = cqcc(
            &clip,
            &CqccConfig {
                include_c0: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(no_c0.dim(), 30);
        assert_eq!(no_c0.get(0, 0), f.get(0, 1));
    }

    #[test]
    fn cqcc_of_silence_is_constant_spectrum() {
        let cfg = CqccConfig {
            f_min: 62.5,
            bins_per_octave: 12,
            resample_points: 12,
            ..CqccConfig::for_sample_rate(8000)
        };
        let clip = AudioClip::new(vec![0.0; 1000], 8000).unwrap();
        let f = cqcc(&clip, &cfg).unwrap();
        let n_u = cfg.n_uniform(8000) as f64;
        let c0 = libm::log(1e-12) * n_u.sqrt();
        for t in 0..f.frames() {
            assert!((f64::from(f.get(t, 0)) - c0).abs() < 1e-3);
            assert!(f.row(t)[1..].iter().all(|v| v.abs() < 1e-3));
        }
    }
}
