use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::linalg::cholesky_psd;
use crate::spectral::Waveform;
use crate::{C64, SPEED_OF_SOUND};

/// Spherically isotropic coherence `sin(x)/x`, `x = 2 pi f d / c`.
pub fn sinc_coherence(freq: f64, distance: f64) -> f64 {
    let x = 2.0 * PI * freq * distance / SPEED_OF_SOUND;
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Multichannel diffuse noise for a uniform linear array.
///
/// Independent white Gaussian channels are mixed per DFT bin by the Cholesky
/// factor of the target coherence matrix; each channel keeps unit variance.
pub fn render_diffuse_noise<R: Rng + ?Sized>(
    m: usize,
    spacing: f64,
    length: usize,
    fs: u32,
    rng: &mut R,
) -> Waveform {
    let m = m.max(1);
    let mut spectra: Vec<Vec<C64>> = (0..m)
        .map(|_| {
            (0..length)
                .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), 0.0))
                .collect()
        })
        .collect();
    if m == 1 || length == 0 {
        return Waveform::new(fs, spectra.into_iter().map(|c| c.iter().map(|v| v.re).collect()).collect())
            .expect("finite noise");
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(length);
    let inv = planner.plan_fft_inverse(length);
    for s in spectra.iter_mut() {
        fwd.process(s);
    }
    let mut gamma = vec![0.0; m * m];
    let mut mixed = vec![C64::new(0.0, 0.0); m];
    for k in 0..=length / 2 {
        let freq = k as f64 * fs as f64 / length as f64;
        for p in 0..m {
            for q in 0..m {
                gamma[p * m + q] = sinc_coherence(freq, (p as f64 - q as f64).abs() * spacing);
            }
        }
        let chol = cholesky_psd(&gamma, m);
        // same real factor on the mirrored bin keeps the output real
        let mirror = (length - k) % length;
        for bin in [k, mirror] {
            for (p, slot) in mixed.iter_mut().enumerate() {
                *slot = (0..=p).map(|q| spectra[q][bin] * chol[p * m + q]).sum();
            }
            for p in 0..m {
                spectra[p][bin] = mixed[p];
            }
            if mirror == k {
                break;
            }
        }
    }
    let channels = spectra
        .into_iter()
        .map(|mut s| {
            inv.process(&mut s);
            s.iter().map(|v| v.re / length as f64).collect()
        })
        .collect();
    Waveform::new(fs, channels).expect("finite noise")
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Welch magnitude-squared coherence between two signals, Hann segments of
    /// `nfft` with 50% overlap. Returns one value per one-sided bin.
    pub(crate) fn welch_msc(x: &[f64], y: &[f64], nfft: usize) -> Vec<f64> {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let win: Vec<f64> = (0..nfft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / nfft as f64).cos())
            .collect();
        let bins = nfft / 2 + 1;
        let (mut sxx, mut syy) = (vec![0.0; bins], vec![0.0; bins]);
        let mut sxy = vec![C64::new(0.0, 0.0); bins];
        let mut start = 0;
        while start + nfft <= x.len() {
            let mut a: Vec<C64> = (0..nfft).map(|i| C64::new(x[start + i] * win[i], 0.0)).collect();
            let mut b: Vec<C64> = (0..nfft).map(|i| C64::new(y[start + i] * win[i], 0.0)).collect();
            fft.process(&mut a);
            fft.process(&mut b);
            for k in 0..bins {
                sxx[k] += a[k].norm_sqr();
                syy[k] += b[k].norm_sqr();
                sxy[k] += a[k] * b[k].conj();
            }
            start += nfft / 2;
        }
        (0..bins).map(|k| sxy[k].norm_sqr() / (sxx[k] * syy[k])).collect()
    }

    #[test]
    fn single_channel_unit_variance() {
        let w = render_diffuse_noise(1, 0.02, 160_000, 16_000, &mut ChaCha8Rng::seed_from_u64(1));
        let var = w.power(0);
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn coherence_at_one_khz() {
        let fs = 16_000;
        let w = render_diffuse_noise(2, 0.02, 60 * fs as usize, fs, &mut ChaCha8Rng::seed_from_u64(2));
        let nfft = 512;
        let msc = welch_msc(w.channel(0), w.channel(1), nfft);
        let k = 1000 * nfft / fs as usize;
        let target = sinc_coherence(1000.0, 0.02).powi(2);
        assert!((msc[k] - target).abs() < 0.05, "{} vs {target}", msc[k]);
        for m in 0..2 {
            assert!((w.power(m) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn seeds_are_independent() {
        let a = render_diffuse_noise(2, 0.02, 32_000, 16_000, &mut ChaCha8Rng::seed_from_u64(3));
        let b = render_diffuse_noise(2, 0.02, 32_000, 16_000, &mut ChaCha8Rng::seed_from_u64(4));
        let (x, y) = (a.channel(0), b.channel(0));
        let xy: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let corr = xy / (x.iter().map(|v| v * v).sum::<f64>() * y.iter().map(|v| v * v).sum::<f64>()).sqrt();
        assert!(corr.abs() < 0.05);
    }
}
