//! Short-time Fourier analysis/synthesis and waveform containers.

mod stft;
mod wav;

pub use stft::{istft, stft, StftConfig, StftPlan, WindowKind};
pub(crate) use stft::fill_hermitian;
pub use wav::{read_wav, write_wav, write_wav_pcm16};

use crate::{Error, Result, C64};

/// Multichannel real signal. All channels share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl Waveform {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(first) = channels.first() {
            let len = first.len();
            if channels.iter().any(|c| c.len() != len) {
                return Err(Error::Shape("channels differ in length".into()));
            }
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("waveform contains non-finite samples".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Self {
        Self {
            sample_rate,
            channels: vec![vec![0.0; len]; channels],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0 || self.channels.is_empty()
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Single-channel view of channel `m`.
    pub fn select(&self, m: usize) -> Waveform {
        Waveform {
            sample_rate: self.sample_rate,
            channels: vec![self.channels[m].clone()],
        }
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * gain).collect())
                .collect(),
        }
    }

    /// Elementwise sum. Shapes must agree.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if self.num_channels() != other.num_channels() || self.len() != other.len() {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{} waveforms",
                self.num_channels(),
                self.len(),
                other.num_channels(),
                other.len()
            )));
        }
        Ok(Waveform {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .zip(&other.channels)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        })
    }

    /// Mean power of channel `m`.
    pub fn power(&self, m: usize) -> f64 {
        let c = &self.channels[m];
        if c.is_empty() {
            return 0.0;
        }
        c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64
    }
}

/// Complex STFT coefficients of `M` channels over `F x T` bins.
///
/// Storage is bin-major: the `M` channel values of bin `(f, t)` are contiguous,
/// which is what per-bin beamforming wants.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    channels: usize,
    bins: usize,
    frames: usize,
    data: Vec<C64>,
}

impl MultichannelSpectrogram {
    pub fn zeros(channels: usize, bins: usize, frames: usize) -> Self {
        Self {
            channels,
            bins,
            frames,
            data: vec![C64::new(0.0, 0.0); channels * bins * frames],
        }
    }

    pub fn from_data(channels: usize, bins: usize, frames: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != channels * bins * frames {
            return Err(Error::Shape(format!(
                "expected {} values for {channels}x{bins}x{frames}, got {}",
                channels * bins * frames,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            bins,
            frames,
            data,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    #[inline]
    fn offset(&self, f: usize, t: usize) -> usize {
        (f * self.frames + t) * self.channels
    }

    /// Observation vector `x_{f,t}` across channels.
    #[inline]
    pub fn bin(&self, f: usize, t: usize) -> &[C64] {
        let o = self.offset(f, t);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn bin_mut(&mut self, f: usize, t: usize) -> &mut [C64] {
        let o = self.offset(f, t);
        let m = self.channels;
        &mut self.data[o..o + m]
    }

    #[inline]
    pub fn get(&self, m: usize, f: usize, t: usize) -> C64 {
        self.data[self.offset(f, t) + m]
    }

    #[inline]
    pub fn set(&mut self, m: usize, f: usize, t: usize, v: C64) {
        let o = self.offset(f, t) + m;
        self.data[o] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Channel `m` as a single-channel spectrogram.
    pub fn select(&self, m: usize) -> MultichannelSpectrogram {
        let mut out = MultichannelSpectrogram::zeros(1, self.bins, self.frames);
        for f in 0..self.bins {
            for t in 0..self.frames {
                out.set(0, f, t, self.get(m, f, t));
            }
        }
        out
    }

    pub fn scaled(&self, gain: f64) -> MultichannelSpectrogram {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= gain);
        out
    }

    pub fn same_shape(&self, other: &MultichannelSpectrogram) -> bool {
        self.channels == other.channels && self.bins == other.bins && self.frames == other.frames
    }
}
