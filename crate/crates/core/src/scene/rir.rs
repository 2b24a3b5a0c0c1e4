use std::f64::consts::PI;

use rustfft::FftPlanner;

use super::SceneSpec;
use crate::{Error, Result, C64, SPEED_OF_SOUND};

/// Room impulse response for one (source, microphone) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirOptions {
    pub sample_rate: u32,
    /// Highest total reflection count kept; `Some(0)` is the free-field response.
    pub max_order: Option<usize>,
    /// Length in taps; defaults to `1.2 * t60 * fs`.
    pub length: Option<usize>,
    /// Wall reflection coefficient; defaults to [`calibrated_reflection`].
    pub reflection: Option<f64>,
    /// Removes the DC build-up of the all-positive image sum with a 100 Hz high-pass.
    pub highpass: bool,
}

impl Default for RirOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            max_order: None,
            length: None,
            reflection: None,
            highpass: true,
        }
    }
}

const SINC_HALF_WIDTH: isize = 4;

/// Uniform wall reflection coefficient from Eyring's formula,
/// `beta^2 = exp(-24 ln10 V / (c S T60))`.
pub fn eyring_reflection(room: &[f64; 3], t60: f64) -> f64 {
    let [lx, ly, lz] = *room;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + ly * lz + lx * lz);
    let k = 24.0 * std::f64::consts::LN_10 * volume / (SPEED_OF_SOUND * surface * t60);
    (-0.5 * k).exp()
}

fn default_length(t60: f64, fs: f64) -> usize {
    ((1.2 * t60 * fs).ceil() as usize).max(1)
}

/// Reflection coefficient whose image-model response, from the target to the
/// first microphone, has a Schroeder decay time equal to the scene's `t60`.
///
/// Statistical formulas overestimate the absorption of a shoebox image model
/// with uniform walls, whose late decay is carried by sparsely reflected axial
/// paths. The decay is matched on the image energy histogram by bisection.
pub fn calibrated_reflection(spec: &SceneSpec, sample_rate: u32) -> f64 {
    let fs = sample_rate as f64;
    let len = default_length(spec.t60, fs);
    let mic = spec.mic_positions()[0];
    let max_dist = len as f64 * SPEED_OF_SOUND / fs;
    let imgs = images(&spec.room_dims, spec.target_position(), mic, max_dist, None);
    let decay = |beta: f64| {
        let mut energy = vec![0.0; len];
        for &(dist, order) in &imgs {
            let idx = (dist / SPEED_OF_SOUND * fs).round() as usize;
            if idx < len {
                energy[idx] += beta.powi(2 * order as i32) / (4.0 * PI * dist).powi(2);
            }
        }
        let amp: Vec<f64> = energy.iter().map(|e| e.sqrt()).collect();
        schroeder_t60(&amp, fs).unwrap_or(0.0)
    };
    let (mut lo, mut hi) = (0.05, 0.9995);
    if decay(hi) <= spec.t60 {
        return hi;
    }
    if decay(lo) >= spec.t60 {
        return lo;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if decay(mid) < spec.t60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Image sources within `max_dist` of `mic`: (distance, reflection count).
fn images(room: &[f64; 3], source: [f64; 3], mic: [f64; 3], max_dist: f64, max_order: Option<usize>) -> Vec<(f64, usize)> {
    // per-axis candidate offsets: (displacement, reflection count)
    let axis_terms = |axis: usize| -> Vec<(f64, usize)> {
        let l = room[axis];
        let bound = (max_dist / (2.0 * l)).ceil() as i64 + 1;
        let mut v = Vec::new();
        for parity in 0..2i64 {
            for n in -bound..=bound {
                let img = (1 - 2 * parity) as f64 * source[axis] + 2.0 * n as f64 * l;
                let refl = ((n - parity).abs() + n.abs()) as usize;
                v.push((img - mic[axis], refl));
            }
        }
        v
    };
    let (xs, ys, zs) = (axis_terms(0), axis_terms(1), axis_terms(2));
    let mut out = Vec::new();
    for &(dx, rx) in &xs {
        if dx.abs() > max_dist {
            continue;
        }
        for &(dy, ry) in &ys {
            let dxy2 = dx * dx + dy * dy;
            if dxy2 > max_dist * max_dist {
                continue;
            }
            for &(dz, rz) in &zs {
                let order = rx + ry + rz;
                if max_order.is_some_and(|m| order > m) {
                    continue;
                }
                let dist = (dxy2 + dz * dz).sqrt();
                if dist <= max_dist {
                    out.push((dist, order));
                }
            }
        }
    }
    out
}

pub fn simulate_rir(spec: &SceneSpec, source: [f64; 3], mic: [f64; 3]) -> Result<Rir> {
    simulate_rir_with(spec, source, mic, &RirOptions::default())
}

/// Image-method shoebox RIR with 8-tap windowed-sinc fractional delays.
pub fn simulate_rir_with(
    spec: &SceneSpec,
    source: [f64; 3],
    mic: [f64; 3],
    opts: &RirOptions,
) -> Result<Rir> {
    for (name, p) in [("source", &source), ("microphone", &mic)] {
        if !spec.contains(p) {
            return Err(Error::Geometry(format!("{name} at {p:?} not inside {:?}", spec.room_dims)));
        }
    }
    let fs = opts.sample_rate as f64;
    let len = opts.length.unwrap_or_else(|| default_length(spec.t60, fs)).max(1);
    let beta = opts
        .reflection
        .unwrap_or_else(|| calibrated_reflection(spec, opts.sample_rate));
    let mut taps = vec![0.0; len];
    let max_dist = (len as f64 + SINC_HALF_WIDTH as f64) * SPEED_OF_SOUND / fs;
    for (dist, order) in images(&spec.room_dims, source, mic, max_dist, opts.max_order) {
        let gain = beta.powi(order as i32) / (4.0 * PI * dist);
        add_fractional_impulse(&mut taps, dist / SPEED_OF_SOUND * fs, gain);
    }
    if opts.highpass {
        highpass_100hz(&mut taps, fs);
    }
    Ok(Rir {
        taps,
        sample_rate: opts.sample_rate,
    })
}

/// Allen and Berkley's second-order 100 Hz high-pass, in place.
fn highpass_100hz(x: &mut [f64], fs: f64) {
    let w = 2.0 * PI * 100.0 / fs;
    let r1 = (-w).exp();
    let (b1, b2, a1) = (2.0 * r1 * w.cos(), -r1 * r1, -(1.0 + r1));
    let mut y = [0.0; 3];
    for v in x.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
}

fn add_fractional_impulse(taps: &mut [f64], delay: f64, gain: f64) {
    let base = delay.floor() as isize;
    for k in (1 - SINC_HALF_WIDTH)..=SINC_HALF_WIDTH {
        let idx = base + k;
        if idx < 0 || idx as usize >= taps.len() {
            continue;
        }
        let x = idx as f64 - delay;
        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let window = 0.5 * (1.0 + (PI * x / SINC_HALF_WIDTH as f64).cos());
        taps[idx as usize] += gain * sinc * window;
    }
}

/// Linear convolution via FFT, truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    a.resize(n, C64::new(0.0, 0.0));
    let mut b: Vec<C64> = h.iter().map(|&v| C64::new(v, 0.0)).collect();
    b.resize(n, C64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    let mut out: Vec<f64> = a.iter().take(out_len).map(|v| v.re / n as f64).collect();
    out.resize(out_len, 0.0);
    out
}

/// Reverberation time from Schroeder backward integration, extrapolated from
/// the -5 to -25 dB span of the decay curve.
pub fn schroeder_t60(taps: &[f64], fs: f64) -> Option<f64> {
    let mut edc: Vec<f64> = taps.iter().map(|v| v * v).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, d)| **d <= -5.0 && **d >= -25.0)
        .map(|(i, d)| (i as f64 / fs, *d))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, SourcePlacement};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> SceneSpec {
        sample_scene(&mut ChaCha8Rng::seed_from_u64(4), 2).unwrap()
    }

    #[test]
    fn free_field_single_pulse() {
        let mut spec = scene();
        spec.room_dims = [8.0, 6.0, 3.0];
        let fs = 16_000.0;
        // distance chosen so the delay is exactly 100 samples
        let d = 100.0 * SPEED_OF_SOUND / fs;
        let mic = [2.0, 3.0, 1.5];
        let src = [2.0 + d, 3.0, 1.5];
        let opts = RirOptions {
            max_order: Some(0),
            length: Some(400),
            highpass: false,
            ..Default::default()
        };
        let rir = simulate_rir_with(&spec, src, mic, &opts).unwrap();
        let nonzero: Vec<usize> = (0..rir.taps.len()).filter(|&i| rir.taps[i].abs() > 1e-15).collect();
        assert_eq!(nonzero, vec![100]);
        assert!((rir.taps[100] - 1.0 / (4.0 * PI * d)).abs() < 1e-12);
    }

    #[test]
    fn schroeder_decay_tracks_t60() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..6 {
            let spec = sample_scene(&mut rng, 2).unwrap();
            let rir = simulate_rir(&spec, spec.target_position(), spec.mic_positions()[0]).unwrap();
            assert!(rir.taps.len() >= (spec.t60 * 16_000.0) as usize);
            let measured = schroeder_t60(&rir.taps, 16_000.0).unwrap();
            let rel = (measured - spec.t60).abs() / spec.t60;
            assert!(rel <= 0.2, "t60 {} measured {measured}", spec.t60);
        }
    }

    #[test]
    fn mirrored_positions_give_equal_rirs() {
        let mut spec = scene();
        spec.room_dims = [8.0, 6.0, 3.0];
        let opts = RirOptions {
            length: Some(2000),
            ..Default::default()
        };
        let a = simulate_rir_with(&spec, [2.0, 2.5, 1.5], [3.0, 3.0, 1.2], &opts).unwrap();
        // reflect both positions through the x = L/2 plane
        let b = simulate_rir_with(&spec, [6.0, 2.5, 1.5], [5.0, 3.0, 1.2], &opts).unwrap();
        let err = a.taps.iter().zip(&b.taps).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn outside_room_is_rejected() {
        let spec = scene();
        let bad = SourcePlacement {
            doa_deg: 90.0,
            distance: 50.0,
            height: 1.5,
        };
        let pos = spec.source_position(&bad);
        assert!(matches!(
            simulate_rir(&spec, pos, spec.mic_positions()[0]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn convolution_matches_direct() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let h = [0.5, -0.25, 0.125, 1.0];
        let y = fft_convolve(&x, &h, 50);
        for n in 0..50 {
            let direct: f64 = (0..h.len()).filter(|&k| k <= n).map(|k| h[k] * x[n - k]).sum();
            assert!((y[n] - direct).abs() < 1e-12);
        }
    }
}
