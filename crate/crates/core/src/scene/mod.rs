//! Acoustic scene sampling and rendering: shoebox rooms, image-method RIRs,
//! diffuse plus white background noise, and mixture synthesis with oracle
//! component images.

mod corpus;
mod diffuse;
mod mixture;
mod rir;
mod speech;

pub use corpus::{
    generate_corpus, CorpusConfig, Manifest, ManifestEntry, SplitRatio, MANIFEST_FILE,
};
pub use diffuse::{render_diffuse_noise, sinc_coherence};
pub use mixture::{synthesize_mixture, MixtureBundle};
pub use rir::{
    calibrated_reflection, eyring_reflection, fft_convolve, schroeder_t60, simulate_rir, simulate_rir_with, Rir,
    RirOptions,
};
pub use speech::synth_speechlike;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform sampling ranges for scene parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    pub array_height: f64,
    pub min_wall_distance: f64,
    pub mic_spacing: f64,
    pub src_distance: (f64, f64),
    pub src_height: (f64, f64),
    pub target_doa: (f64, f64),
    pub interferer_doa_ranges: [(f64, f64); 2],
    pub max_interferers_per_range: usize,
    pub sir_db: (f64, f64),
    pub snr_db: (f64, f64),
    pub diffuse_to_white_db: (f64, f64),
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            length: (6.0, 10.0),
            width: (5.0, 8.0),
            height: (2.5, 3.5),
            t60: (0.2, 0.5),
            array_height: 1.5,
            min_wall_distance: 2.5,
            mic_spacing: 0.02,
            src_distance: (1.5, 2.0),
            src_height: (1.4, 1.6),
            target_doa: (80.0, 100.0),
            interferer_doa_ranges: [(0.0, 65.0), (115.0, 180.0)],
            max_interferers_per_range: 2,
            sir_db: (0.0, 5.0),
            snr_db: (10.0, 25.0),
            diffuse_to_white_db: (15.0, 25.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlacement {
    /// Direction of arrival in degrees relative to the array axis.
    pub doa_deg: f64,
    pub distance: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererPlacement {
    #[serde(flatten)]
    pub placement: SourcePlacement,
    /// Input SIR of this interferer against the target at the reference mic.
    pub sir_db: f64,
}

/// One sampled acoustic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room_dims: [f64; 3],
    pub t60: f64,
    pub array_center: [f64; 3],
    /// Orientation of the array axis in the horizontal plane, degrees.
    pub array_azimuth_deg: f64,
    pub mic_spacing: f64,
    pub num_mics: usize,
    pub target: SourcePlacement,
    pub interferers: Vec<InterfererPlacement>,
    pub snr_db: f64,
    pub diffuse_to_white_db: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_interferers(&self) -> usize {
        self.interferers.len()
    }

    fn axis(&self) -> ([f64; 2], [f64; 2]) {
        let phi = self.array_azimuth_deg.to_radians();
        ([phi.cos(), phi.sin()], [-phi.sin(), phi.cos()])
    }

    /// Microphone positions. Mic `k` sits `k * spacing` behind mic 0 along the
    /// array axis, so a source at DOA 0 reaches mic 0 first and later mics are
    /// delayed by `k d cos(theta) / c`.
    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        let (u, _) = self.axis();
        let mid = (self.num_mics as f64 - 1.0) / 2.0;
        (0..self.num_mics)
            .map(|k| {
                let o = -(k as f64 - mid) * self.mic_spacing;
                [
                    self.array_center[0] + o * u[0],
                    self.array_center[1] + o * u[1],
                    self.array_center[2],
                ]
            })
            .collect()
    }

    pub fn source_position(&self, p: &SourcePlacement) -> [f64; 3] {
        let (u, v) = self.axis();
        let th = p.doa_deg.to_radians();
        let (c, s) = (th.cos(), th.sin());
        [
            self.array_center[0] + p.distance * (c * u[0] + s * v[0]),
            self.array_center[1] + p.distance * (c * u[1] + s * v[1]),
            p.height,
        ]
    }

    pub fn target_position(&self) -> [f64; 3] {
        self.source_position(&self.target)
    }

    pub fn interferer_positions(&self) -> Vec<[f64; 3]> {
        self.interferers
            .iter()
            .map(|i| self.source_position(&i.placement))
            .collect()
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(&self.room_dims).all(|(x, l)| *x > 0.0 && x < l)
    }

    /// Checks geometric and range invariants against `ranges`.
    pub fn validate(&self, ranges: &SceneRanges) -> Result<()> {
        let within = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        let mut bad = Vec::new();
        if !within(self.room_dims[0], ranges.length)
            || !within(self.room_dims[1], ranges.width)
            || !within(self.room_dims[2], ranges.height)
        {
            bad.push("room dimensions");
        }
        if !within(self.t60, ranges.t60) {
            bad.push("t60");
        }
        if !within(self.target.doa_deg, ranges.target_doa) {
            bad.push("target doa");
        }
        let mut per_range = [0usize; 2];
        for i in &self.interferers {
            match ranges
                .interferer_doa_ranges
                .iter()
                .position(|r| within(i.placement.doa_deg, *r))
            {
                Some(k) => per_range[k] += 1,
                None => bad.push("interferer doa"),
            }
            if !within(i.sir_db, ranges.sir_db) {
                bad.push("sir");
            }
        }
        if per_range.iter().any(|&n| n > ranges.max_interferers_per_range) {
            bad.push("interferers per range");
        }
        if !within(self.snr_db, ranges.snr_db)
            || !within(self.diffuse_to_white_db, ranges.diffuse_to_white_db)
        {
            bad.push("noise levels");
        }
        for w in 0..2 {
            let c = self.array_center[w];
            if c < ranges.min_wall_distance - 1e-9
                || self.room_dims[w] - c < ranges.min_wall_distance - 1e-9
            {
                bad.push("array wall distance");
            }
        }
        let sources = std::iter::once(self.target_position()).chain(self.interferer_positions());
        if sources.chain(self.mic_positions()).any(|p| !self.contains(&p)) {
            bad.push("position outside room");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("scene violates: {}", bad.join(", "))))
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

/// Samples a scene with the default ranges.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, n_interferers: usize) -> Result<SceneSpec> {
    sample_scene_with(rng, n_interferers, &SceneRanges::default())
}

/// Samples every parameter uniformly over its range; geometric constraints are
/// met by rejection.
pub fn sample_scene_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_interferers: usize,
    ranges: &SceneRanges,
) -> Result<SceneSpec> {
    if !(2..=4).contains(&n_interferers) {
        return Err(Error::Config(format!(
            "interferer count must be 2, 3 or 4, got {n_interferers}"
        )));
    }
    if n_interferers > 2 * ranges.max_interferers_per_range {
        return Err(Error::Config("too many interferers for the DOA ranges".into()));
    }
    for _ in 0..10_000 {
        let room = [
            uniform(rng, ranges.length),
            uniform(rng, ranges.width),
            uniform(rng, ranges.height),
        ];
        let t60 = uniform(rng, ranges.t60);
        let center = [
            uniform(rng, (ranges.min_wall_distance, room[0] - ranges.min_wall_distance)),
            uniform(rng, (ranges.min_wall_distance, room[1] - ranges.min_wall_distance)),
            ranges.array_height,
        ];
        let azimuth = uniform(rng, (0.0, 360.0));
        let place = |rng: &mut R, doa: f64| SourcePlacement {
            doa_deg: doa,
            distance: uniform(rng, ranges.src_distance),
            height: uniform(rng, ranges.src_height),
        };
        let target_doa = uniform(rng, ranges.target_doa);
        let target = place(rng, target_doa);
        // pick a range per interferer, rejecting over-full assignments
        let which: Vec<usize> = loop {
            let w: Vec<usize> = (0..n_interferers).map(|_| rng.random_range(0..2)).collect();
            if (0..2).all(|k| w.iter().filter(|&&x| x == k).count() <= ranges.max_interferers_per_range) {
                break w;
            }
        };
        let interferers = which
            .iter()
            .map(|&k| {
                let doa = uniform(rng, ranges.interferer_doa_ranges[k]);
                let placement = place(rng, doa);
                InterfererPlacement {
                    placement,
                    sir_db: uniform(rng, ranges.sir_db),
                }
            })
            .collect();
        let spec = SceneSpec {
            room_dims: room,
            t60,
            array_center: center,
            array_azimuth_deg: azimuth,
            mic_spacing: ranges.mic_spacing,
            num_mics: 2,
            target,
            interferers,
            snr_db: uniform(rng, ranges.snr_db),
            diffuse_to_white_db: uniform(rng, ranges.diffuse_to_white_db),
            seed: rng.random(),
        };
        if spec.validate(ranges).is_ok() {
            return Ok(spec);
        }
    }
    Err(Error::Config("scene ranges admit no valid geometry".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_interferers_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = sample_scene(&mut rng, 2).unwrap();
            assert_eq!(s.n_interferers(), 2);
            s.validate(&SceneRanges::default()).unwrap();
        }
        for n in [3, 4] {
            let s = sample_scene(&mut rng, n).unwrap();
            let low = s.interferers.iter().filter(|i| i.placement.doa_deg <= 65.0).count();
            assert!(low <= 2 && n - low <= 2);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = sample_scene(&mut ChaCha8Rng::seed_from_u64(5), 3).unwrap();
        let b = sample_scene(&mut ChaCha8Rng::seed_from_u64(5), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_interferer_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_scene(&mut rng, 5).is_err());
        assert!(sample_scene(&mut rng, 1).is_err());
    }

    #[test]
    fn t60_mean_is_central() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| sample_scene(&mut rng, 2).unwrap().t60)
            .sum::<f64>()
            / n as f64;
        assert!((0.33..=0.37).contains(&mean), "{mean}");
    }

    #[test]
    fn doa_geometry() {
        let mut s = sample_scene(&mut ChaCha8Rng::seed_from_u64(1), 2).unwrap();
        s.target.doa_deg = 0.0;
        let mics = s.mic_positions();
        let src = s.target_position();
        let d = |p: &[f64; 3]| {
            ((p[0] - src[0]).powi(2) + (p[1] - src[1]).powi(2) + (p[2] - src[2]).powi(2)).sqrt()
        };
        // endfire source: mic 1 is one spacing further away than mic 0
        assert!(d(&mics[1]) > d(&mics[0]));
        let mic_dist = ((mics[0][0] - mics[1][0]).powi(2) + (mics[0][1] - mics[1][1]).powi(2)).sqrt();
        assert!((mic_dist - 0.02).abs() < 1e-12);
    }
}
