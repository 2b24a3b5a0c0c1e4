//! Per-mixture processing shared by the command-line tool and the tests.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beamforming::{default_null_doas, estimate_rtf, BeamformerSet, Rtf, SteeringFallback};
use crate::combination::{iterative_refine, mvdr_single, CovarianceMode, SelectionMode, WeightField};
use crate::neural::CombinationNet;
use crate::scene::{ManifestEntry, SceneSpec};
use crate::spectral::{read_wav, StftPlan};
use crate::{Error, MultichannelSpectrogram, Result, StftConfig, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Unprocessed,
    Mvdr,
    TfsMvdr,
    TflcMvdr,
    TfsMpdr,
    TflcMpdr,
    NnTflcMpdr,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Unprocessed,
        Method::Mvdr,
        Method::TfsMvdr,
        Method::TflcMvdr,
        Method::TfsMpdr,
        Method::TflcMpdr,
        Method::NnTflcMpdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Unprocessed => "unprocessed",
            Method::Mvdr => "mvdr",
            Method::TfsMvdr => "tfs-mvdr",
            Method::TflcMvdr => "tflc-mvdr",
            Method::TfsMpdr => "tfs-mpdr",
            Method::TflcMpdr => "tflc-mpdr",
            Method::NnTflcMpdr => "nn-tflc-mpdr",
        }
    }

    /// Whether the method reads the oracle interferer images.
    pub fn needs_interference(self) -> bool {
        matches!(self, Method::Mvdr | Method::TfsMvdr | Method::TflcMvdr)
    }

    fn iterative(self) -> Option<(SelectionMode, CovarianceMode)> {
        match self {
            Method::TfsMvdr => Some((SelectionMode::Tfs, CovarianceMode::Mvdr)),
            Method::TflcMvdr => Some((SelectionMode::Tflc, CovarianceMode::Mvdr)),
            Method::TfsMpdr => Some((SelectionMode::Tfs, CovarianceMode::Mpdr)),
            Method::TflcMpdr => Some((SelectionMode::Tflc, CovarianceMode::Mpdr)),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Where the target RTF comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RtfSource {
    /// Principal eigenvector of the target image covariance.
    #[default]
    Oracle,
    /// Free-field steering vector toward the annotated target DOA.
    Steering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessConfig {
    pub stft: StftConfig,
    pub iters: usize,
    /// Null DOAs of the initial beams; defaults depend on the interferer count.
    pub null_doas: Option<Vec<f64>>,
    pub rtf: RtfSource,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            iters: 5,
            null_doas: None,
            rtf: RtfSource::Oracle,
        }
    }
}

/// Signals available for one mixture.
#[derive(Debug, Clone)]
pub struct MixtureInputs {
    pub id: String,
    pub scene: SceneSpec,
    pub mixture: Waveform,
    pub target_image: Waveform,
    /// Sum of the reverberant interferer images, the oracle prior of the MVDR methods.
    pub interference: Waveform,
}

impl MixtureInputs {
    pub fn load(root: &Path, entry: &ManifestEntry) -> Result<Self> {
        let mixture = read_wav(root.join(&entry.mixture))?;
        let target_image = read_wav(root.join(&entry.target))?;
        let mut interference = Waveform::zeros(mixture.sample_rate, mixture.num_channels(), mixture.len());
        for p in &entry.interferers {
            interference = interference.add(&read_wav(root.join(p))?)?;
        }
        Ok(Self {
            id: entry.id.clone(),
            scene: entry.scene.clone(),
            mixture,
            target_image,
            interference,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub estimate: Waveform,
    pub spectrogram: MultichannelSpectrogram,
    pub weights: Option<WeightField>,
    pub beams: Option<BeamformerSet>,
    pub rtf: Option<Rtf>,
}

/// Target RTF for `inputs` according to `source`.
pub fn target_rtf(inputs: &MixtureInputs, plan: &StftPlan, source: RtfSource) -> Result<Rtf> {
    let cfg = *plan.config();
    let scene = &inputs.scene;
    match source {
        RtfSource::Steering => Ok(Rtf::steering(scene.target.doa_deg, scene.mic_spacing, scene.num_mics, &cfg)),
        RtfSource::Oracle => {
            let fallback = SteeringFallback {
                doa_deg: scene.target.doa_deg,
                spacing: scene.mic_spacing,
                stft: cfg,
            };
            estimate_rtf(&plan.stft(&inputs.target_image)?, 0, Some(&fallback))
        }
    }
}

/// Runs `method` on one mixture.
pub fn process(inputs: &MixtureInputs, method: Method, cfg: &ProcessConfig, net: Option<&CombinationNet>) -> Result<MethodOutput> {
    let plan = StftPlan::new(cfg.stft)?;
    if inputs.mixture.sample_rate != cfg.stft.sample_rate {
        return Err(Error::SampleRate {
            expected: cfg.stft.sample_rate,
            actual: inputs.mixture.sample_rate,
        });
    }
    let len = inputs.mixture.len();
    let x = plan.stft(&inputs.mixture)?;
    if method == Method::Unprocessed {
        return Ok(MethodOutput {
            estimate: inputs.mixture.select(0),
            spectrogram: x.select(0),
            weights: None,
            beams: None,
            rtf: None,
        });
    }
    let a = target_rtf(inputs, &plan, cfg.rtf)?;
    let scene = &inputs.scene;
    let doas = cfg
        .null_doas
        .clone()
        .unwrap_or_else(|| default_null_doas(scene.n_interferers()));
    let noise_only = if method.needs_interference() {
        Some(plan.stft(&inputs.interference)?)
    } else {
        None
    };

    let (spec, weights, beams) = match method {
        Method::Unprocessed => unreachable!(),
        Method::Mvdr => {
            let (w, y) = mvdr_single(&x, noise_only.as_ref().expect("loaded above"), &a)?;
            (y, None, Some(BeamformerSet::new(vec![w])))
        }
        Method::NnTflcMpdr => {
            let net = net.ok_or_else(|| Error::Config("nn-tflc-mpdr needs a trained checkpoint".into()))?;
            let init = BeamformerSet::nulls(&a, &doas, scene.mic_spacing, &cfg.stft)?;
            let out = net.infer(&x, &a, &init)?;
            (out.estimate, Some(out.weights), Some(out.beams))
        }
        m => {
            let (mode, cov) = m.iterative().expect("iterative method");
            let init = BeamformerSet::nulls(&a, &doas, scene.mic_spacing, &cfg.stft)?;
            let r = iterative_refine(&x, noise_only.as_ref(), &a, &init, mode, cov, cfg.iters)?;
            (r.estimate, Some(r.weights), Some(r.beams))
        }
    };
    let estimate = plan.istft(&spec, len)?;
    Ok(MethodOutput {
        estimate,
        spectrogram: spec,
        weights,
        beams,
        rtf: Some(a),
    })
}
