//! Steering vectors, RTF estimation, fixed null beamformers, masked spatial
//! covariances and the distortionless minimum-power update.

mod container;

pub use container::{read_beamformers, read_rtf, write_beamformers, write_rtf};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::linalg::{condition_number_2x2, dominant_eigenvector, inner, solve};
use crate::spectral::{MultichannelSpectrogram, StftConfig};
use crate::{Error, Result, C64, SPEED_OF_SOUND};

/// Relative diagonal loading applied before inverting a covariance.
pub const LOADING: f64 = 1e-6;
/// Absolute loading floor so all-zero covariances stay invertible.
pub const LOADING_FLOOR: f64 = 1e-12;
/// Constraint matrices worse conditioned than this fall back to the
/// minimum-norm distortionless solution.
pub const MAX_CONDITION: f64 = 1e8;

/// Null directions used at test time with two candidate beamformers.
pub const NULLS_TWO: [f64; 2] = [32.5, 147.5];
/// Null directions used at test time with four candidate beamformers.
pub const NULLS_FOUR: [f64; 4] = [16.25, 48.75, 131.25, 163.75];

/// Fixed null DOAs for a scene with `n_interferers` interferers.
pub fn default_null_doas(n_interferers: usize) -> Vec<f64> {
    if n_interferers <= 2 {
        NULLS_TWO.to_vec()
    } else {
        NULLS_FOUR.to_vec()
    }
}

/// Sub-ranges that random training-time null DOAs are drawn from.
pub fn training_null_ranges(beams: usize) -> Vec<(f64, f64)> {
    match beams {
        2 => vec![(10.0, 55.0), (125.0, 170.0)],
        4 => vec![(10.0, 30.0), (35.0, 55.0), (125.0, 145.0), (150.0, 170.0)],
        j => {
            // split both interferer ranges evenly for other beam counts
            let lo = j.div_ceil(2);
            let hi = j - lo;
            let split = |a: f64, b: f64, k: usize| -> Vec<(f64, f64)> {
                let w = (b - a) / k as f64;
                (0..k).map(|i| (a + i as f64 * w, a + (i + 1) as f64 * w)).collect()
            };
            let mut v = split(10.0, 55.0, lo);
            v.extend(split(125.0, 170.0, hi));
            v
        }
    }
}

/// Free-field far-field steering vector: element `k` is
/// `exp(-j 2 pi f k d cos(theta) / c)`.
pub fn steering_vector(theta_deg: f64, freq: f64, spacing: f64, m: usize) -> Vec<C64> {
    let tau = spacing * theta_deg.to_radians().cos() / SPEED_OF_SOUND;
    (0..m)
        .map(|k| C64::from_polar(1.0, -2.0 * PI * freq * k as f64 * tau))
        .collect()
}

/// Relative transfer function of the target, normalized to the reference mic.
#[derive(Debug, Clone, PartialEq)]
pub struct Rtf {
    channels: usize,
    bins: usize,
    a: Vec<C64>,
    pub reference: usize,
    /// Bins where the estimate fell back to the free-field steering vector.
    pub flagged: Vec<usize>,
}

impl Rtf {
    pub fn from_vectors(channels: usize, reference: usize, per_bin: Vec<Vec<C64>>) -> Result<Self> {
        if per_bin.iter().any(|v| v.len() != channels) || reference >= channels {
            return Err(Error::Shape("rtf vectors do not match channel count".into()));
        }
        let bins = per_bin.len();
        let a: Vec<C64> = per_bin.into_iter().flatten().collect();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("rtf contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            bins,
            a,
            reference,
            flagged: Vec::new(),
        })
    }

    /// Free-field RTF toward `doa_deg`.
    pub fn steering(doa_deg: f64, spacing: f64, channels: usize, cfg: &StftConfig) -> Self {
        let per_bin = (0..cfg.num_bins())
            .map(|f| steering_vector(doa_deg, cfg.bin_frequency(f), spacing, channels))
            .collect();
        Self::from_vectors(channels, 0, per_bin).expect("steering vectors are well formed")
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn at(&self, f: usize) -> &[C64] {
        &self.a[f * self.channels..(f + 1) * self.channels]
    }

    pub(crate) fn raw(&self) -> &[C64] {
        &self.a
    }
}

/// Free-field geometry used where the target image carries no energy.
#[derive(Debug, Clone, Copy)]
pub struct SteeringFallback {
    pub doa_deg: f64,
    pub spacing: f64,
    pub stft: StftConfig,
}

/// Principal-eigenvector RTF estimate from the target image.
pub fn estimate_rtf(
    target_image: &MultichannelSpectrogram,
    reference: usize,
    fallback: Option<&SteeringFallback>,
) -> Result<Rtf> {
    let m = target_image.num_channels();
    let frames = target_image.num_frames();
    if frames < 10 {
        return Err(Error::Shape(format!("rtf estimation needs at least 10 frames, got {frames}")));
    }
    if reference >= m {
        return Err(Error::Shape(format!("reference {reference} out of {m} channels")));
    }
    let bins = target_image.num_bins();
    let covs: Vec<Vec<C64>> = (0..bins)
        .map(|f| masked_covariance_bin(target_image, f, None))
        .collect();
    let energy: Vec<f64> = covs
        .iter()
        .map(|c| (0..m).map(|i| c[i * m + i].re).sum())
        .collect();
    let avg = energy.iter().sum::<f64>() / bins as f64;
    let mut flagged = Vec::new();
    let mut per_bin = Vec::with_capacity(bins);
    for f in 0..bins {
        let est = if energy[f] >= 1e-12 * avg && avg > 0.0 {
            let (_, v) = dominant_eigenvector(&covs[f], m);
            let r = v[reference];
            (r.norm() > 1e-300).then(|| v.iter().map(|x| x / r).collect::<Vec<_>>())
        } else {
            None
        };
        match est {
            Some(a) if a.iter().all(|x| x.is_finite()) => per_bin.push(a),
            _ => {
                flagged.push(f);
                per_bin.push(match fallback {
                    Some(fb) => {
                        let s = steering_vector(fb.doa_deg, fb.stft.bin_frequency(f), fb.spacing, m);
                        let r = s[reference];
                        s.iter().map(|x| x / r).collect()
                    }
                    None => vec![C64::new(1.0, 0.0); m],
                });
            }
        }
    }
    let mut rtf = Rtf::from_vectors(m, reference, per_bin)?;
    rtf.flagged = flagged;
    Ok(rtf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerKind {
    InitialNull,
    Mpdr,
    Mvdr,
    Selector,
}

impl BeamformerKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            BeamformerKind::InitialNull => 0,
            BeamformerKind::Mpdr => 1,
            BeamformerKind::Mvdr => 2,
            BeamformerKind::Selector => 3,
        }
    }

    pub(crate) fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => BeamformerKind::InitialNull,
            1 => BeamformerKind::Mpdr,
            2 => BeamformerKind::Mvdr,
            3 => BeamformerKind::Selector,
            _ => return None,
        })
    }
}

/// Frequency-dependent spatial filter `w_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer {
    channels: usize,
    bins: usize,
    w: Vec<C64>,
    pub null_doa: Option<f64>,
    pub kind: BeamformerKind,
    /// Bins where the null constraint was dropped.
    pub flagged: Vec<usize>,
}

impl Beamformer {
    pub fn from_weights(channels: usize, bins: usize, w: Vec<C64>, kind: BeamformerKind) -> Result<Self> {
        if w.len() != channels * bins {
            return Err(Error::Shape("beamformer weight count".into()));
        }
        Ok(Self {
            channels,
            bins,
            w,
            null_doa: None,
            kind,
            flagged: Vec::new(),
        })
    }

    /// Passes channel `reference` through unchanged.
    pub fn selector(channels: usize, bins: usize, reference: usize) -> Self {
        let mut w = vec![C64::new(0.0, 0.0); channels * bins];
        for f in 0..bins {
            w[f * channels + reference] = C64::new(1.0, 0.0);
        }
        Self {
            channels,
            bins,
            w,
            null_doa: None,
            kind: BeamformerKind::Selector,
            flagged: Vec::new(),
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn at(&self, f: usize) -> &[C64] {
        &self.w[f * self.channels..(f + 1) * self.channels]
    }

    pub(crate) fn raw(&self) -> &[C64] {
        &self.w
    }

    /// `max_f |w_f^H a_f - 1|`.
    pub fn distortion_error(&self, a: &Rtf) -> f64 {
        (0..self.bins)
            .map(|f| (inner(self.at(f), a.at(f)) - 1.0).norm())
            .fold(0.0, f64::max)
    }

    /// `y_{f,t} = w_f^H x_{f,t}` as a single-channel spectrogram.
    pub fn apply(&self, x: &MultichannelSpectrogram) -> Result<MultichannelSpectrogram> {
        apply_beamformer(self, x)
    }
}

pub fn apply_beamformer(w: &Beamformer, x: &MultichannelSpectrogram) -> Result<MultichannelSpectrogram> {
    if w.channels != x.num_channels() || w.bins != x.num_bins() {
        return Err(Error::Shape(format!(
            "beamformer {}x{} vs spectrogram {}x{}",
            w.channels,
            w.bins,
            x.num_channels(),
            x.num_bins()
        )));
    }
    let frames = x.num_frames();
    let mut out = MultichannelSpectrogram::zeros(1, x.num_bins(), frames);
    for f in 0..x.num_bins() {
        let wf = w.at(f);
        for t in 0..frames {
            out.set(0, f, t, inner(wf, x.bin(f, t)));
        }
    }
    Ok(out)
}

/// Ordered collection of candidate beamformers sharing one target RTF.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub beams: Vec<Beamformer>,
}

impl BeamformerSet {
    pub fn new(beams: Vec<Beamformer>) -> Self {
        Self { beams }
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    pub fn max_distortion_error(&self, a: &Rtf) -> f64 {
        self.beams.iter().map(|b| b.distortion_error(a)).fold(0.0, f64::max)
    }

    /// Initial null beamformers, one per DOA.
    pub fn nulls(a: &Rtf, doas: &[f64], spacing: f64, cfg: &StftConfig) -> Result<Self> {
        doas.iter()
            .map(|&d| null_beamformer(a, d, spacing, cfg))
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }
}

/// Two-constraint beamformer: unit response along `a_f`, zero response
/// toward `null_deg`. Solves `[a_f, v_f]^H w = [1, 0]^T` per bin.
pub fn null_beamformer(a: &Rtf, null_deg: f64, spacing: f64, cfg: &StftConfig) -> Result<Beamformer> {
    if a.channels != 2 {
        return Err(Error::Config(format!(
            "null beamformer needs 2 microphones, got {}",
            a.channels
        )));
    }
    if a.bins != cfg.num_bins() {
        return Err(Error::Shape("rtf bin count differs from stft config".into()));
    }
    let mut w = Vec::with_capacity(2 * a.bins);
    let mut flagged = Vec::new();
    for f in 0..a.bins {
        let af = a.at(f);
        let v = steering_vector(null_deg, cfg.bin_frequency(f), spacing, 2);
        // rows of C^H: conj(a)^T and conj(v)^T
        let ch = [af[0].conj(), af[1].conj(), v[0].conj(), v[1].conj()];
        let sol = if condition_number_2x2(&ch) <= MAX_CONDITION {
            solve(&ch, 2, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
        } else {
            None
        };
        match sol {
            Some(s) => w.extend(s),
            None => {
                flagged.push(f);
                let n = af.iter().map(|x| x.norm_sqr()).sum::<f64>();
                w.extend(af.iter().map(|x| x / n));
            }
        }
    }
    Ok(Beamformer {
        channels: 2,
        bins: a.bins,
        w,
        null_doa: Some(null_deg),
        kind: BeamformerKind::InitialNull,
        flagged,
    })
}

/// Per-frequency `M x M` spatial covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    channels: usize,
    bins: usize,
    phi: Vec<C64>,
}

impl CovarianceField {
    pub fn from_matrices(channels: usize, mats: Vec<Vec<C64>>) -> Result<Self> {
        if mats.iter().any(|m| m.len() != channels * channels) {
            return Err(Error::Shape("covariance matrix size".into()));
        }
        Ok(Self {
            channels,
            bins: mats.len(),
            phi: mats.into_iter().flatten().collect(),
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    /// Row-major matrix at bin `f`.
    #[inline]
    pub fn at(&self, f: usize) -> &[C64] {
        let s = self.channels * self.channels;
        &self.phi[f * s..(f + 1) * s]
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.phi.iter_mut().for_each(|v| *v *= c);
        out
    }
}

/// `(1/T) sum_t alpha_t^2 x x^H` at bin `f`; `None` means all ones.
fn masked_covariance_bin(x: &MultichannelSpectrogram, f: usize, alpha: Option<&[f64]>) -> Vec<C64> {
    let m = x.num_channels();
    let frames = x.num_frames();
    let mut acc = vec![C64::new(0.0, 0.0); m * m];
    for t in 0..frames {
        let v = x.bin(f, t);
        let g = alpha.map_or(1.0, |a| a[t] * a[t]);
        if g == 0.0 {
            continue;
        }
        for i in 0..m {
            let vi = v[i] * g;
            for j in i..m {
                acc[i * m + j] += vi * v[j].conj();
            }
        }
    }
    let scale = 1.0 / frames as f64;
    for i in 0..m {
        for j in i..m {
            let val = acc[i * m + j] * scale;
            acc[i * m + j] = val;
            acc[j * m + i] = val.conj();
        }
        acc[i * m + i].im = 0.0;
    }
    acc
}

/// Masked covariance `Phi_f = (1/T) sum_t alpha_{f,t}^2 x_{f,t} x_{f,t}^H`.
///
/// `alpha` holds one weight per bin in `f * T + t` order; `None` gives the
/// plain sample covariance. No normalization by the mask energy is applied.
pub fn masked_covariance(x: &MultichannelSpectrogram, alpha: Option<&[f64]>) -> Result<CovarianceField> {
    let (bins, frames) = (x.num_bins(), x.num_frames());
    if let Some(a) = alpha {
        if a.len() != bins * frames {
            return Err(Error::Shape(format!(
                "mask has {} values, spectrogram has {} bins",
                a.len(),
                bins * frames
            )));
        }
    }
    let mats = (0..bins)
        .map(|f| masked_covariance_bin(x, f, alpha.map(|a| &a[f * frames..(f + 1) * frames])))
        .collect();
    CovarianceField::from_matrices(x.num_channels(), mats)
}

/// `w_f = Phi_f^{-1} a_f / (a_f^H Phi_f^{-1} a_f)` with trace-relative diagonal loading.
///
/// The same update yields MPDR or MVDR depending on whether `phi` was
/// estimated from the full mixture or from noise only; `kind` records which.
pub fn mpdr_update(phi: &CovarianceField, a: &Rtf, kind: BeamformerKind) -> Result<Beamformer> {
    if phi.channels != a.channels || phi.bins != a.bins {
        return Err(Error::Shape("covariance and rtf dimensions differ".into()));
    }
    let m = a.channels;
    let mut w = Vec::with_capacity(m * a.bins);
    let mut loaded = vec![C64::new(0.0, 0.0); m * m];
    for f in 0..a.bins {
        let p = phi.at(f);
        let trace: f64 = (0..m).map(|i| p[i * m + i].re).sum();
        let load = LOADING * (trace / m as f64 + LOADING_FLOOR);
        loaded.copy_from_slice(p);
        for i in 0..m {
            loaded[i * m + i] += load;
        }
        let af = a.at(f);
        let u = solve(&loaded, m, af).ok_or_else(|| Error::Config("singular loaded covariance".into()))?;
        let s = inner(af, &u);
        w.extend(u.iter().map(|x| x / s));
    }
    Ok(Beamformer {
        channels: m,
        bins: a.bins,
        w,
        null_doa: None,
        kind,
        flagged: Vec::new(),
    })
}
