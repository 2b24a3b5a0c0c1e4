use serde::{Deserialize, Serialize};

use super::{combine, select, BeamOutputs, SelectionMode, WeightField};
use crate::beamforming::{masked_covariance, mpdr_update, BeamformerKind, BeamformerSet, Rtf};
use crate::spectral::MultichannelSpectrogram;
use crate::{Beamformer, Error, Result};

/// Which observation feeds selection and covariance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// The mixture itself.
    Mpdr,
    /// A target-free (oracle) noise-plus-interference observation.
    Mvdr,
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// Single-channel target estimate.
    pub estimate: MultichannelSpectrogram,
    pub weights: WeightField,
    pub beams: BeamformerSet,
    /// Per-beam outputs on the mixture for the final beams.
    pub outputs: BeamOutputs,
}

/// Alternates per-bin selection with masked power-minimizing updates of every beam.
///
/// Each of the `iters` rounds selects weights from the current beam outputs and
/// replaces beam `j` by the distortionless beam of the covariance masked with
/// `alpha^(j)`. The estimate combines the final beams with a last selection.
pub fn iterative_refine(
    x: &MultichannelSpectrogram,
    noise_only: Option<&MultichannelSpectrogram>,
    a: &Rtf,
    init: &BeamformerSet,
    mode: SelectionMode,
    cov: CovarianceMode,
    iters: usize,
) -> Result<RefineResult> {
    let (obs, kind) = match cov {
        CovarianceMode::Mpdr => (x, BeamformerKind::Mpdr),
        CovarianceMode::Mvdr => {
            let n = noise_only.ok_or_else(|| Error::Config("MVDR refinement needs a noise-only observation".into()))?;
            if !n.same_shape(x) {
                return Err(Error::Shape("noise-only observation differs from the mixture".into()));
            }
            (n, BeamformerKind::Mvdr)
        }
    };
    let mut beams = init.clone();
    for _ in 0..iters {
        let y = BeamOutputs::compute(&beams, obs)?;
        let alpha = select(mode, &y)?;
        let updated = (0..beams.len())
            .map(|j| {
                let mask = alpha.mask(j);
                let phi = masked_covariance(obs, Some(&mask))?;
                let mut b = mpdr_update(&phi, a, kind)?;
                b.null_doa = beams.beams[j].null_doa;
                Ok(b)
            })
            .collect::<Result<Vec<Beamformer>>>()?;
        beams = BeamformerSet::new(updated);
    }
    let y_obs = BeamOutputs::compute(&beams, obs)?;
    let weights = select(mode, &y_obs)?;
    let outputs = match cov {
        CovarianceMode::Mpdr => y_obs,
        CovarianceMode::Mvdr => BeamOutputs::compute(&beams, x)?,
    };
    let estimate = combine(&weights, &outputs)?;
    Ok(RefineResult {
        estimate,
        weights,
        beams,
        outputs,
    })
}

/// Single distortionless beam from the covariance of a noise-only observation.
pub fn mvdr_single(x: &MultichannelSpectrogram, noise_only: &MultichannelSpectrogram, a: &Rtf) -> Result<(Beamformer, MultichannelSpectrogram)> {
    if !noise_only.same_shape(x) {
        return Err(Error::Shape("noise-only observation differs from the mixture".into()));
    }
    let phi = masked_covariance(noise_only, None)?;
    let w = mpdr_update(&phi, a, BeamformerKind::Mvdr)?;
    let y = w.apply(x)?;
    Ok((w, y))
}
