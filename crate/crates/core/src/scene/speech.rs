use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::spectral::Waveform;
use crate::C64;

/// Corner of the global spectral tilt; the response falls at 6 dB/octave above it.
const TILT_CORNER_HZ: f64 = 250.0;
const HIGHPASS_HZ: f64 = 80.0;
const VOICED_PROB: f64 = 0.9;
/// Relative level of the noise mixed into voiced excitation.
const ASPIRATION: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
struct Syllable {
    start: usize,
    len: usize,
    level: f64,
    formants: [f64; 2],
    /// Fundamental frequency at the start and end; `None` for unvoiced syllables.
    pitch: Option<(f64, f64)>,
}

/// Speech-like stand-in source: talk spurts of syllables separated by pauses.
///
/// Each syllable is a glottal pulse train with a gliding pitch (or Gaussian
/// noise for unvoiced syllables) colored by two random formant resonators
/// (second-order autoregressive sections) and shaped by a smooth amplitude
/// envelope; the whole signal then gets a 6 dB/octave spectral tilt. The output
/// has unit RMS over the talk spurts and exact zeros in the pauses.
pub fn synth_speechlike<R: Rng + ?Sized>(rng: &mut R, duration_s: f64, sample_rate: u32) -> Waveform {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round().max(1.0) as usize;
    let secs = |s: f64| (s * fs).round() as usize;

    let mut syllables = Vec::new();
    let mut pos = secs(rng.random_range(0.0..0.25));
    while pos < len {
        let spurt_end = (pos + secs(rng.random_range(0.4..1.5))).min(len);
        let base_pitch = rng.random_range(90.0..220.0);
        while pos < spurt_end {
            let dur = secs(rng.random_range(0.12..0.3)).min(spurt_end - pos);
            let level = 10f64.powf(rng.random_range(-12.0..0.0) / 20.0);
            let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2500.0)];
            let pitch = rng.random_bool(VOICED_PROB).then(|| {
                let f0 = base_pitch * rng.random_range(0.85..1.15);
                (f0, f0 * rng.random_range(0.9..1.1))
            });
            syllables.push(Syllable {
                start: pos,
                len: dur,
                level,
                formants,
                pitch,
            });
            pos += dur;
        }
        pos += secs(rng.random_range(0.1..0.5));
    }

    let mut x = vec![0.0; len];
    let mut voiced = vec![false; len];
    for syl in &syllables {
        let mut source: Vec<f64> = (0..syl.len).map(|_| rng.sample(StandardNormal)).collect();
        if let Some((f_start, f_end)) = syl.pitch {
            let pulses = pulse_train(syl.len, f_start, f_end, fs);
            for (s, p) in source.iter_mut().zip(&pulses) {
                *s = p + ASPIRATION * *s;
            }
        }
        let mut colored = source.clone();
        for &fc in &syl.formants {
            let band = resonate(&source, fc, 150.0, fs);
            colored.iter_mut().zip(&band).for_each(|(c, b)| *c += 1.5 * b);
        }
        for (i, v) in colored.iter().enumerate() {
            let u = (i as f64 + 0.5) / syl.len as f64;
            let env = (PI * u).sin().sqrt();
            x[syl.start + i] = syl.level * env * v;
            voiced[syl.start + i] = true;
        }
    }

    tilt(&mut x, fs);
    // the tilt filter smears a little energy into pauses; keep them silent
    for (v, on) in x.iter_mut().zip(&voiced) {
        if !on {
            *v = 0.0;
        }
    }
    let (sum, n) = x
        .iter()
        .zip(&voiced)
        .filter(|(_, on)| **on)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    if n > 0 && sum > 0.0 {
        let g = (n as f64 / sum).sqrt();
        x.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::mono(sample_rate, x).expect("finite synthesis")
}

/// Unit-power impulse train whose rate glides linearly from `f_start` to `f_end`.
fn pulse_train(len: usize, f_start: f64, f_end: f64, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut phase = 0.0;
    for (n, v) in out.iter_mut().enumerate() {
        let f0 = f_start + (f_end - f_start) * n as f64 / len as f64;
        phase += f0 / fs;
        if phase >= 1.0 {
            phase -= 1.0;
            *v = (fs / f0).sqrt();
        }
    }
    out
}

/// Two-pole resonator normalized to unit peak gain.
fn resonate(x: &[f64], fc: f64, bandwidth: f64, fs: f64) -> Vec<f64> {
    let r = (-PI * bandwidth / fs).exp();
    let theta = 2.0 * PI * fc / fs;
    let a1 = 2.0 * r * theta.cos();
    let a2 = -r * r;
    let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = gain * x[n] + a1 * y1 + a2 * y2;
    }
    y
}

fn tilt(x: &mut [f64], fs: f64) {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = k.min(n - k);
        let f = kk as f64 * fs / n as f64;
        let lowpass = 1.0 / (1.0 + (f / TILT_CORNER_HZ).powi(2)).sqrt();
        let r = f / HIGHPASS_HZ;
        let highpass = r * r / (1.0 + r.powi(4)).sqrt();
        *v *= lowpass * highpass;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (o, v) in x.iter_mut().zip(&buf) {
        *o = v.re / n as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn welch_psd(x: &[f64], nfft: usize) -> Vec<f64> {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let win: Vec<f64> = (0..nfft)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / nfft as f64).cos())
            .collect();
        let mut psd = vec![0.0; nfft / 2 + 1];
        let mut start = 0;
        while start + nfft <= x.len() {
            let mut a: Vec<C64> = (0..nfft).map(|i| C64::new(x[start + i] * win[i], 0.0)).collect();
            fft.process(&mut a);
            for (p, v) in psd.iter_mut().zip(&a) {
                *p += v.norm_sqr();
            }
            start += nfft / 2;
        }
        psd
    }

    #[test]
    fn exact_length() {
        let w = synth_speechlike(&mut ChaCha8Rng::seed_from_u64(0), 6.0, 16_000);
        assert_eq!(w.len(), 96_000);
    }

    #[test]
    fn spectral_tilt_above_500_hz() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..10)
            .flat_map(|_| synth_speechlike(&mut rng, 6.0, 16_000).into_channels().remove(0))
            .collect();
        let nfft = 1024;
        let psd = welch_psd(&x, nfft);
        // least-squares slope of dB against log2 frequency, 500 Hz to 7 kHz
        let pts: Vec<(f64, f64)> = (0..psd.len())
            .map(|k| (k as f64 * 16_000.0 / nfft as f64, psd[k]))
            .filter(|(f, _)| (500.0..=7000.0).contains(f))
            .map(|(f, p)| (f.log2(), 10.0 * p.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 6.0).abs() <= 3.0, "slope {slope} dB/oct");
    }

    #[test]
    fn activity_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let w = synth_speechlike(&mut rng, 6.0, 16_000);
            let x = w.channel(0);
            let thr = 10f64.powf(-30.0 / 20.0);
            let frames: Vec<f64> = x
                .chunks(320)
                .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
                .collect();
            let active = frames.iter().filter(|r| **r > thr).count() as f64 / frames.len() as f64;
            assert!((0.5..=0.9).contains(&active), "activity {active}");
        }
    }

    #[test]
    fn non_stationary_and_unit_voiced_rms() {
        let w = synth_speechlike(&mut ChaCha8Rng::seed_from_u64(3), 6.0, 16_000);
        let x = w.channel(0);
        let voiced: Vec<f64> = x.iter().copied().filter(|v| *v != 0.0).collect();
        let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / voiced.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        let e: Vec<f64> = x.chunks(1600).map(|c| c.iter().map(|v| v * v).sum()).collect();
        let max = e.iter().cloned().fold(0.0, f64::max);
        let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max > 100.0 * min.max(1e-12));
    }
}
