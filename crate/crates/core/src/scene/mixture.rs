use rand::Rng;
use rand_distr::StandardNormal;

use super::{calibrated_reflection, fft_convolve, render_diffuse_noise, simulate_rir_with, RirOptions, SceneSpec};
use crate::spectral::Waveform;
use crate::{Error, Result};

/// A rendered mixture together with its oracle components.
///
/// `mixture == target_image + sum(interferer_images) + noise` holds sample by
/// sample, summed in that order.
#[derive(Debug, Clone)]
pub struct MixtureBundle {
    pub mixture: Waveform,
    pub target_image: Waveform,
    pub interferer_images: Vec<Waveform>,
    pub noise: Waveform,
    pub scene: SceneSpec,
}

impl MixtureBundle {
    /// Interference plus noise, the prior used by the MVDR baselines.
    pub fn noise_only(&self) -> Waveform {
        let mut acc = self.noise.clone();
        for i in &self.interferer_images {
            acc = acc.add(i).expect("component shapes agree");
        }
        acc
    }
}

fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn image(dry: &[f64], spec: &SceneSpec, source: [f64; 3], opts: &RirOptions) -> Result<Waveform> {
    let channels = spec
        .mic_positions()
        .into_iter()
        .map(|mic| simulate_rir_with(spec, source, mic, opts).map(|rir| fft_convolve(dry, &rir.taps, dry.len())))
        .collect::<Result<Vec<_>>>()?;
    Waveform::new(opts.sample_rate, channels)
}

/// Convolves dry sources with simulated RIRs and calibrates every component.
///
/// Each interferer image is scaled individually to the scene SIR against the
/// target image; the diffuse and white noise parts are mixed at the scene's
/// diffuse-to-white ratio and then scaled to the scene SNR. All ratios are
/// measured at the reference microphone (channel 0).
pub fn synthesize_mixture<R: Rng + ?Sized>(
    spec: &SceneSpec,
    target_dry: &Waveform,
    interferer_dry: &[Waveform],
    rng: &mut R,
) -> Result<MixtureBundle> {
    if interferer_dry.len() != spec.n_interferers() {
        return Err(Error::Config(format!(
            "scene has {} interferers, {} dry signals given",
            spec.n_interferers(),
            interferer_dry.len()
        )));
    }
    let fs = target_dry.sample_rate;
    let len = target_dry.len();
    for w in std::iter::once(target_dry).chain(interferer_dry) {
        if w.num_channels() != 1 {
            return Err(Error::Shape("dry sources must be mono".into()));
        }
        if w.sample_rate != fs {
            return Err(Error::SampleRate {
                expected: fs,
                actual: w.sample_rate,
            });
        }
        if w.len() != len {
            return Err(Error::Shape("dry sources differ in length".into()));
        }
    }
    if target_dry.power(0) == 0.0 {
        return Err(Error::Silent("target source"));
    }
    if interferer_dry.iter().any(|w| w.power(0) == 0.0) {
        return Err(Error::Silent("interferer source"));
    }

    let opts = RirOptions {
        sample_rate: fs,
        reflection: Some(calibrated_reflection(spec, fs)),
        ..Default::default()
    };
    let target_image = image(target_dry.channel(0), spec, spec.target_position(), &opts)?;
    let p_target = target_image.power(0);
    if p_target == 0.0 {
        return Err(Error::Silent("target image"));
    }

    let mut interferer_images = Vec::with_capacity(interferer_dry.len());
    for ((dry, pos), intf) in interferer_dry
        .iter()
        .zip(spec.interferer_positions())
        .zip(&spec.interferers)
    {
        let img = image(dry.channel(0), spec, pos, &opts)?;
        let p = img.power(0);
        if p == 0.0 {
            return Err(Error::Silent("interferer image"));
        }
        let gain = (p_target / (p * db_to_power(intf.sir_db))).sqrt();
        interferer_images.push(img.scaled(gain));
    }

    let m = spec.num_mics;
    let diffuse = render_diffuse_noise(m, spec.mic_spacing, len, fs, rng);
    let white_ch: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let white = Waveform::new(fs, white_ch)?;
    let white_gain = (diffuse.power(0) / (white.power(0) * db_to_power(spec.diffuse_to_white_db))).sqrt();
    let raw_noise = diffuse.add(&white.scaled(white_gain))?;
    let noise_gain = (p_target / (raw_noise.power(0) * db_to_power(spec.snr_db))).sqrt();
    let noise = raw_noise.scaled(noise_gain);

    let mut mixture = target_image.clone();
    for img in &interferer_images {
        mixture = mixture.add(img)?;
    }
    mixture = mixture.add(&noise)?;

    Ok(MixtureBundle {
        mixture,
        target_image,
        interferer_images,
        noise,
        scene: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sample_scene, synth_speechlike};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle(seed: u64, n: usize, secs: f64) -> MixtureBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = sample_scene(&mut rng, n).unwrap();
        let t = synth_speechlike(&mut rng, secs, 16_000);
        let i: Vec<Waveform> = (0..n).map(|_| synth_speechlike(&mut rng, secs, 16_000)).collect();
        synthesize_mixture(&spec, &t, &i, &mut rng).unwrap()
    }

    fn db(x: f64) -> f64 {
        10.0 * x.log10()
    }

    #[test]
    fn calibrated_sir_and_snr() {
        let b = bundle(1, 3, 2.0);
        let pt = b.target_image.power(0);
        for (img, spec) in b.interferer_images.iter().zip(&b.scene.interferers) {
            assert!((db(pt / img.power(0)) - spec.sir_db).abs() < 0.01);
        }
        assert!((db(pt / b.noise.power(0)) - b.scene.snr_db).abs() < 0.01);
    }

    #[test]
    fn decomposition_is_exact() {
        let b = bundle(2, 2, 1.0);
        for m in 0..2 {
            for i in 0..b.mixture.len() {
                let mut s = b.target_image.channel(m)[i];
                for img in &b.interferer_images {
                    s += img.channel(m)[i];
                }
                s += b.noise.channel(m)[i];
                assert_eq!(b.mixture.channel(m)[i] - s, 0.0);
            }
        }
    }

    #[test]
    fn silent_target_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = sample_scene(&mut rng, 2).unwrap();
        let silent = Waveform::zeros(16_000, 1, 16_000);
        let i: Vec<Waveform> = (0..2).map(|_| synth_speechlike(&mut rng, 1.0, 16_000)).collect();
        assert!(matches!(
            synthesize_mixture(&spec, &silent, &i, &mut rng),
            Err(Error::Silent(_))
        ));
    }
}
