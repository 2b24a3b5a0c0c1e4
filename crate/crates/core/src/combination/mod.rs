//! Per-bin combination of candidate beamformer outputs.
//!
//! Both rules pick convex weights that minimize the output power of every
//! time-frequency bin on its own: TFS restricts them to a vertex of the
//! simplex (hard switching), TFLC searches the whole simplex.

mod export;
mod refine;
mod tflc;

pub use export::{read_weights, write_weights, WEIGHTS_MAGIC};
pub use refine::{iterative_refine, mvdr_single, CovarianceMode, RefineResult};
pub use tflc::{tflc_bin, tflc_weights, MAX_TFLC_BEAMS};

use serde::{Deserialize, Serialize};

use crate::beamforming::BeamformerSet;
use crate::spectral::MultichannelSpectrogram;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Tfs,
    Tflc,
}

/// Combination weights `alpha_{f,t}^{(j)}`; the `J` weights of a bin are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    beams: usize,
    bins: usize,
    frames: usize,
    alpha: Vec<f64>,
}

impl WeightField {
    pub fn from_data(beams: usize, bins: usize, frames: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != beams * bins * frames {
            return Err(Error::Shape("weight field size".into()));
        }
        Ok(Self {
            beams,
            bins,
            frames,
            alpha,
        })
    }

    pub fn uniform(beams: usize, bins: usize, frames: usize) -> Self {
        Self {
            beams,
            bins,
            frames,
            alpha: vec![1.0 / beams as f64; beams * bins * frames],
        }
    }

    pub fn num_beams(&self) -> usize {
        self.beams
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bin(&self, f: usize, t: usize) -> &[f64] {
        let o = (f * self.frames + t) * self.beams;
        &self.alpha[o..o + self.beams]
    }

    #[inline]
    pub fn bin_mut(&mut self, f: usize, t: usize) -> &mut [f64] {
        let o = (f * self.frames + t) * self.beams;
        &mut self.alpha[o..o + self.beams]
    }

    #[inline]
    pub fn get(&self, j: usize, f: usize, t: usize) -> f64 {
        self.bin(f, t)[j]
    }

    pub fn data(&self) -> &[f64] {
        &self.alpha
    }

    /// Weights of beam `j` in `f * T + t` order, the mask layout of
    /// [`crate::beamforming::masked_covariance`].
    pub fn mask(&self, j: usize) -> Vec<f64> {
        self.alpha.iter().skip(j).step_by(self.beams).copied().collect()
    }

    /// Largest violation of `0 <= alpha <= 1` and `sum_j alpha = 1`.
    pub fn simplex_violation(&self) -> f64 {
        self.alpha
            .chunks(self.beams)
            .map(|b| {
                let range = b.iter().map(|&a| (-a).max(a - 1.0).max(0.0)).fold(0.0, f64::max);
                range.max((b.iter().sum::<f64>() - 1.0).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_one_hot(&self) -> bool {
        self.alpha.chunks(self.beams).all(|b| {
            b.iter().filter(|&&a| a == 1.0).count() == 1 && b.iter().all(|&a| a == 0.0 || a == 1.0)
        })
    }

    /// Mean over bins of the normalized weight entropy `-(1/J) sum_j a ln(max(a, eps))`.
    pub fn mean_entropy(&self, eps: f64) -> f64 {
        let total: f64 = self.alpha.iter().map(|&a| entropy_term(a, eps)).sum();
        total / self.alpha.len() as f64
    }
}

/// `-a ln(max(a, eps))`, zero for `a <= 0`.
pub(crate) fn entropy_term(a: f64, eps: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        -a * a.max(eps).ln()
    }
}

/// Candidate beamformer outputs `y_{j,f,t} = w_f^{(j)H} x_{f,t}`, bin-major like [`WeightField`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutputs {
    beams: usize,
    bins: usize,
    frames: usize,
    y: Vec<C64>,
}

impl BeamOutputs {
    pub fn from_data(beams: usize, bins: usize, frames: usize, y: Vec<C64>) -> Result<Self> {
        if y.len() != beams * bins * frames {
            return Err(Error::Shape("beam output size".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("beam outputs contain non-finite values".into()));
        }
        Ok(Self {
            beams,
            bins,
            frames,
            y,
        })
    }

    /// Applies every beamformer of `set` to `x`.
    pub fn compute(set: &BeamformerSet, x: &MultichannelSpectrogram) -> Result<Self> {
        let beams = set.len();
        if beams == 0 {
            return Err(Error::Empty("beamformer set"));
        }
        let (bins, frames) = (x.num_bins(), x.num_frames());
        let mut y = vec![C64::new(0.0, 0.0); beams * bins * frames];
        for (j, b) in set.beams.iter().enumerate() {
            let out = b.apply(x)?;
            for f in 0..bins {
                for t in 0..frames {
                    y[(f * frames + t) * beams + j] = out.get(0, f, t);
                }
            }
        }
        Ok(Self {
            beams,
            bins,
            frames,
            y,
        })
    }

    pub fn num_beams(&self) -> usize {
        self.beams
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bin(&self, f: usize, t: usize) -> &[C64] {
        let o = (f * self.frames + t) * self.beams;
        &self.y[o..o + self.beams]
    }

    /// Output of beam `j` as a single-channel spectrogram.
    pub fn beam(&self, j: usize) -> MultichannelSpectrogram {
        let data = self.y.iter().skip(j).step_by(self.beams).copied().collect();
        MultichannelSpectrogram::from_data(1, self.bins, self.frames, data).expect("sizes agree")
    }

    pub fn data(&self) -> &[C64] {
        &self.y
    }
}

/// `sum_j alpha_j y_j`, summed in beam order.
#[inline]
pub(crate) fn mix(alpha: &[f64], y: &[C64]) -> C64 {
    alpha.iter().zip(y).fold(C64::new(0.0, 0.0), |acc, (a, v)| acc + v * *a)
}

/// Hard selection of the lowest-power beam per bin; ties go to the lowest index.
pub fn tfs_select(y: &BeamOutputs) -> WeightField {
    let mut w = WeightField::from_data(y.beams, y.bins, y.frames, vec![0.0; y.y.len()]).expect("sizes agree");
    for f in 0..y.bins {
        for t in 0..y.frames {
            let b = y.bin(f, t);
            let mut best = 0;
            for j in 1..b.len() {
                if b[j].norm_sqr() < b[best].norm_sqr() {
                    best = j;
                }
            }
            w.bin_mut(f, t)[best] = 1.0;
        }
    }
    w
}

/// Weight field for `mode`.
pub fn select(mode: SelectionMode, y: &BeamOutputs) -> Result<WeightField> {
    match mode {
        SelectionMode::Tfs => Ok(tfs_select(y)),
        SelectionMode::Tflc => tflc_weights(y),
    }
}

/// `S_hat_{f,t} = sum_j alpha_{f,t}^{(j)} y_{j,f,t}`.
pub fn combine(alpha: &WeightField, y: &BeamOutputs) -> Result<MultichannelSpectrogram> {
    if alpha.beams != y.beams || alpha.bins != y.bins || alpha.frames != y.frames {
        return Err(Error::Shape(format!(
            "weights {}x{}x{} vs beams {}x{}x{}",
            alpha.beams, alpha.bins, alpha.frames, y.beams, y.bins, y.frames
        )));
    }
    let mut out = MultichannelSpectrogram::zeros(1, y.bins, y.frames);
    for f in 0..y.bins {
        for t in 0..y.frames {
            out.set(0, f, t, mix(alpha.bin(f, t), y.bin(f, t)));
        }
    }
    Ok(out)
}
