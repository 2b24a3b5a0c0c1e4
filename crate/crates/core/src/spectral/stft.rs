use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{MultichannelSpectrogram, Waveform};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic (DFT-even) Hann window.
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 1024,
            hop: 256,
            window: WindowKind::Hann,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            window_len,
            hop,
            window: WindowKind::Hann,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window_len.is_power_of_two() || self.window_len < 2 {
            return Err(Error::Config(format!(
                "window length {} is not a power of two",
                self.window_len
            )));
        }
        if self.hop == 0 || self.window_len % self.hop != 0 {
            return Err(Error::Config(format!(
                "hop {} does not divide window length {}",
                self.hop, self.window_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// One-sided bin count `F = N/2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Frame count for a signal of `len` samples. Frame `t` is centered on sample `t * hop`.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.window_len as f64
    }

    pub fn window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => (0..self.window_len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.window_len as f64).cos())
                .collect(),
        }
    }
}

/// Precomputed FFT plans and window for one [`StftConfig`].
#[derive(Clone)]
pub struct StftPlan {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("cfg", &self.cfg).finish()
    }
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.window_len),
            inverse: planner.plan_fft_inverse(cfg.window_len),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn stft(&self, w: &Waveform) -> Result<MultichannelSpectrogram> {
        if w.is_empty() {
            return Err(Error::Empty("waveform"));
        }
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::SampleRate {
                expected: self.cfg.sample_rate,
                actual: w.sample_rate,
            });
        }
        let n = self.cfg.window_len;
        let half = n / 2;
        let hop = self.cfg.hop;
        let bins = self.cfg.num_bins();
        let frames = self.cfg.num_frames(w.len());
        let mut out = MultichannelSpectrogram::zeros(w.num_channels(), bins, frames);
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for (m, x) in w.channels().iter().enumerate() {
            for t in 0..frames {
                for (k, slot) in buf.iter_mut().enumerate() {
                    // position in the unpadded signal
                    let i = (t * hop + k) as isize - half as isize;
                    let v = if i >= 0 && (i as usize) < x.len() {
                        x[i as usize]
                    } else {
                        0.0
                    };
                    *slot = C64::new(v * self.window[k], 0.0);
                }
                self.forward.process(&mut buf);
                for (f, v) in buf.iter().take(bins).enumerate() {
                    out.set(m, f, t, *v);
                }
            }
        }
        Ok(out)
    }

    /// Weighted overlap-add synthesis normalized by the squared-window envelope.
    pub fn istft(&self, spec: &MultichannelSpectrogram, out_len: usize) -> Result<Waveform> {
        let n = self.cfg.window_len;
        if spec.num_bins() != self.cfg.num_bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, config expects {}",
                spec.num_bins(),
                self.cfg.num_bins()
            )));
        }
        let frames = spec.num_frames();
        let mut channels = Vec::with_capacity(spec.num_channels());
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for m in 0..spec.num_channels() {
            let mut frame_signals = Vec::with_capacity(frames);
            for t in 0..frames {
                fill_hermitian(&mut buf, |f| spec.get(m, f, t));
                self.inverse.process(&mut buf);
                frame_signals.push(buf.iter().map(|v| v.re / n as f64).collect::<Vec<_>>());
            }
            channels.push(self.overlap_add(&frame_signals, out_len));
        }
        Waveform::new(self.cfg.sample_rate, channels)
    }

    /// Windowed overlap-add of time-domain frames, envelope-normalized and
    /// cropped to the unpadded signal.
    pub(crate) fn overlap_add(&self, frames: &[Vec<f64>], out_len: usize) -> Vec<f64> {
        let n = self.cfg.window_len;
        let half = n / 2;
        let hop = self.cfg.hop;
        let mut acc = vec![0.0; out_len];
        let mut env = vec![0.0; out_len];
        for (t, frame) in frames.iter().enumerate() {
            for k in 0..n {
                let i = (t * hop + k) as isize - half as isize;
                if i < 0 || i as usize >= out_len {
                    continue;
                }
                let i = i as usize;
                acc[i] += frame[k] * self.window[k];
                env[i] += self.window[k] * self.window[k];
            }
        }
        acc.iter()
            .zip(&env)
            .map(|(a, e)| if *e > 1e-10 { a / e } else { 0.0 })
            .collect()
    }

    /// Squared-window envelope over the unpadded output, as used by [`Self::overlap_add`].
    pub(crate) fn envelope(&self, frames: usize, out_len: usize) -> Vec<f64> {
        let n = self.cfg.window_len;
        let half = n / 2;
        let mut env = vec![0.0; out_len];
        for t in 0..frames {
            for k in 0..n {
                let i = (t * self.cfg.hop + k) as isize - half as isize;
                if i >= 0 && (i as usize) < out_len {
                    env[i as usize] += self.window[k] * self.window[k];
                }
            }
        }
        env
    }

    pub(crate) fn forward_fft(&self) -> &Arc<dyn Fft<f64>> {
        &self.forward
    }

    pub(crate) fn inverse_fft(&self) -> &Arc<dyn Fft<f64>> {
        &self.inverse
    }
}

/// Expands a one-sided spectrum into a full Hermitian buffer. The imaginary
/// parts of the DC and Nyquist bins are discarded, matching a real inverse FFT.
pub(crate) fn fill_hermitian(buf: &mut [C64], bin: impl Fn(usize) -> C64) {
    let n = buf.len();
    let half = n / 2;
    buf[0] = C64::new(bin(0).re, 0.0);
    buf[half] = C64::new(bin(half).re, 0.0);
    for f in 1..half {
        let v = bin(f);
        buf[f] = v;
        buf[n - f] = v.conj();
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<MultichannelSpectrogram> {
    StftPlan::new(*cfg)?.stft(w)
}

pub fn istft(spec: &MultichannelSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<Waveform> {
    StftPlan::new(*cfg)?.istft(spec, out_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_dft(x: &[f64]) -> Vec<C64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                        C64::new(v * ph.cos(), v * ph.sin())
                    })
                    .sum()
            })
            .collect()
    }

    fn random_wave(seed: u64, len: usize, channels: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Waveform::new(16_000, ch).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(1000, 250, 16_000).is_err());
        assert!(StftConfig::new(1024, 300, 16_000).is_err());
        assert!(StftConfig::new(1024, 256, 0).is_err());
        let cfg = StftConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_bins(), 513);
        assert_eq!(cfg.num_frames(96_000), 376);
    }

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let w = Waveform::zeros(16_000, 1, 96_000);
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert!(s.data().iter().all(|v| v.norm() == 0.0));
        let back = istft(&s, &StftConfig::default(), 96_000).unwrap();
        assert!(back.channel(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let cfg = StftConfig::default();
        let x: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&Waveform::mono(16_000, x.clone()).unwrap(), &cfg).unwrap();
        // interior frames are fully inside the signal
        for t in 4..s.num_frames() - 4 {
            let peak = (0..s.num_bins())
                .max_by(|&a, &b| s.get(0, a, t).norm().total_cmp(&s.get(0, b, t).norm()))
                .unwrap();
            assert_eq!(peak, 64);
        }
        // direct DFT oracle on one frame
        let t = 10;
        let w = cfg.window();
        let frame: Vec<f64> = (0..1024).map(|k| x[t * 256 + k - 512] * w[k]).collect();
        let oracle = direct_dft(&frame);
        for (f, o) in oracle.iter().enumerate() {
            assert!((s.get(0, f, t) - o).norm() < 1e-8);
        }
    }

    #[test]
    fn impulse_frame_zero_matches_dft() {
        let cfg = StftConfig::new(16, 4, 16_000).unwrap();
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let s = stft(&Waveform::mono(16_000, x).unwrap(), &cfg).unwrap();
        let w = cfg.window();
        // the impulse sits at the center of frame 0
        let mut frame = vec![0.0; 16];
        frame[8] = w[8];
        let oracle = direct_dft(&frame);
        for f in 0..cfg.num_bins() {
            assert!((s.get(0, f, 0) - oracle[f]).norm() < 1e-12);
            let ramp = C64::from_polar(w[8], -PI * f as f64);
            assert!((s.get(0, f, 0) - ramp).norm() < 1e-12);
        }
    }

    #[test]
    fn perfect_reconstruction_stereo() {
        let cfg = StftConfig::default();
        let w = random_wave(3, 4 * 1024 + 77, 2);
        let plan = StftPlan::new(cfg).unwrap();
        let back = plan.istft(&plan.stft(&w).unwrap(), w.len()).unwrap();
        for m in 0..2 {
            assert!(rel_err(back.channel(m), w.channel(m)) < 1e-10);
        }
    }

    #[test]
    fn istft_scales_linearly_and_pads() {
        let cfg = StftConfig::new(64, 16, 16_000).unwrap();
        let w = random_wave(5, 500, 1);
        let s = stft(&w, &cfg).unwrap();
        let back = istft(&s.scaled(2.0), &cfg, 520).unwrap();
        let expect: Vec<f64> = w.channel(0).iter().map(|v| 2.0 * v).collect();
        assert!(rel_err(&back.channel(0)[..500], &expect) < 1e-10);
        assert!(back.channel(0)[500..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn frame_parseval() {
        let cfg = StftConfig::new(256, 64, 16_000).unwrap();
        let w = random_wave(9, 2048, 1);
        let s = stft(&w, &cfg).unwrap();
        let win = cfg.window();
        let x = w.channel(0);
        for t in 2..s.num_frames() - 2 {
            let time: f64 = (0..256)
                .map(|k| (x[t * 64 + k - 128] * win[k]).powi(2))
                .sum();
            let mut freq = 0.0;
            for f in 0..cfg.num_bins() {
                let e = s.get(0, f, t).norm_sqr();
                freq += if f == 0 || f == 128 { e } else { 2.0 * e };
            }
            freq /= 256.0;
            assert!((time - freq).abs() / time < 1e-10);
        }
    }

    #[test]
    fn errors() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&Waveform::zeros(16_000, 1, 0), &cfg),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            stft(&Waveform::zeros(8_000, 1, 100), &cfg),
            Err(Error::SampleRate { .. })
        ));
        let bad = MultichannelSpectrogram::zeros(1, 10, 4);
        assert!(matches!(istft(&bad, &cfg, 100), Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn reconstruction(seed in any::<u64>(), extra in 0usize..300) {
                let cfg = StftConfig::new(128, 32, 16_000).unwrap();
                let w = random_wave(seed, 4 * 128 + extra, 1);
                let back = istft(&stft(&w, &cfg).unwrap(), &cfg, w.len()).unwrap();
                prop_assert!(rel_err(back.channel(0), w.channel(0)) < 1e-10);
            }

            #[test]
            fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let cfg = StftConfig::new(64, 16, 16_000).unwrap();
                let u = random_wave(seed, 300, 1);
                let v = random_wave(seed ^ 0xabcdef, 300, 1);
                let mix = u.scaled(a).add(&v.scaled(b)).unwrap();
                let su = stft(&u, &cfg).unwrap();
                let sv = stft(&v, &cfg).unwrap();
                let sm = stft(&mix, &cfg).unwrap();
                for ((x, y), z) in su.data().iter().zip(sv.data()).zip(sm.data()) {
                    prop_assert!((x * a + y * b - z).norm() < 1e-10);
                }
            }
        }
    }
}
