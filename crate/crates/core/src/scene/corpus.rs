use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_scene_with, synth_speechlike, synthesize_mixture, SceneRanges, SceneSpec};
use crate::spectral::{read_wav, write_wav, Waveform};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Relative weights of the 2/3/4-interferer subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub two: u32,
    pub three: u32,
    pub four: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            two: 15,
            three: 5,
            four: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub count: usize,
    /// Fixed interferer count; when unset, `splits` apportions the corpus.
    pub interferers: Option<usize>,
    pub splits: SplitRatio,
    pub seed: u64,
    /// Directory of clean mono WAV utterances; synthetic sources when unset.
    pub source_pool: Option<PathBuf>,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub ranges: SceneRanges,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 100,
            interferers: None,
            splits: SplitRatio::default(),
            seed: 0,
            source_pool: None,
            duration_s: 6.0,
            sample_rate: 16_000,
            ranges: SceneRanges::default(),
        }
    }
}

impl CorpusConfig {
    /// Interferer count of every entry, in manifest order.
    pub fn interferer_plan(&self) -> Result<Vec<usize>> {
        if let Some(n) = self.interferers {
            if !(2..=4).contains(&n) {
                return Err(Error::Config(format!("interferer count must be 2, 3 or 4, got {n}")));
            }
            return Ok(vec![n; self.count]);
        }
        let w = [self.splits.two, self.splits.three, self.splits.four];
        let total: u32 = w.iter().sum();
        if total == 0 {
            return Err(Error::Config("split ratios sum to zero".into()));
        }
        let mut counts: Vec<usize> = w
            .iter()
            .map(|&r| self.count * r as usize / total as usize)
            .collect();
        let mut rest = self.count - counts.iter().sum::<usize>();
        for (c, &r) in counts.iter_mut().zip(&w) {
            if rest == 0 {
                break;
            }
            if r > 0 {
                *c += 1;
                rest -= 1;
            }
        }
        Ok(counts
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k + 2, c))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// "2I", "3I" or "4I".
    pub split: String,
    pub scene: SceneSpec,
    /// Source utterances, target first (`synthetic:<seed>` for generated ones).
    pub sources: Vec<String>,
    pub mixture: String,
    pub target: String,
    pub interferers: Vec<String>,
    pub noise: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub synthetic_sources: bool,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let path = root.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

impl ManifestEntry {
    pub fn n_interferers(&self) -> usize {
        self.interferers.len()
    }
}

fn list_pool(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for ent in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = ent.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn load_utterance<R: Rng + ?Sized>(path: &Path, len: usize, fs: u32, rng: &mut R) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate != fs {
        return Err(Error::SampleRate {
            expected: fs,
            actual: w.sample_rate,
        });
    }
    let x = w.channel(0);
    let mut out = vec![0.0; len];
    if x.len() > len {
        let off = rng.random_range(0..=x.len() - len);
        out.copy_from_slice(&x[off..off + len]);
    } else {
        out[..x.len()].copy_from_slice(x);
    }
    Waveform::mono(fs, out)
}

/// Renders a corpus to `root` and writes its manifest.
///
/// Every scene draws from its own child RNG seeded from the master seed, so the
/// output does not depend on how scenes are scheduled across threads.
pub fn generate_corpus(cfg: &CorpusConfig, root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let plan = cfg.interferer_plan()?;
    let pool = match &cfg.source_pool {
        Some(dir) => {
            let files = list_pool(dir)?;
            let needed = plan.iter().max().map_or(0, |n| n + 1);
            if files.len() < needed {
                return Err(Error::InsufficientSources {
                    needed,
                    available: files.len(),
                });
            }
            Some(files)
        }
        None => None,
    };
    for sub in ["mix", "ref"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = plan.iter().map(|_| master.next_u64()).collect();
    let len = (cfg.duration_s * cfg.sample_rate as f64).round() as usize;

    let entries = plan
        .par_iter()
        .zip(seeds.par_iter())
        .enumerate()
        .map(|(i, (&n, &seed))| -> Result<ManifestEntry> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scene = sample_scene_with(&mut rng, n, &cfg.ranges)?;
            let (dry, sources): (Vec<Waveform>, Vec<String>) = match &pool {
                Some(files) => {
                    let picks = sample(&mut rng, files.len(), n + 1);
                    let mut dry = Vec::with_capacity(n + 1);
                    let mut names = Vec::with_capacity(n + 1);
                    for k in picks.iter() {
                        dry.push(load_utterance(&files[k], len, cfg.sample_rate, &mut rng)?);
                        names.push(files[k].display().to_string());
                    }
                    (dry, names)
                }
                None => (0..=n)
                    .map(|_| {
                        let s: u64 = rng.random();
                        let w = synth_speechlike(&mut ChaCha8Rng::seed_from_u64(s), cfg.duration_s, cfg.sample_rate);
                        (w, format!("synthetic:{s}"))
                    })
                    .unzip(),
            };
            let mut noise_rng = ChaCha8Rng::seed_from_u64(scene.seed);
            let bundle = synthesize_mixture(&scene, &dry[0], &dry[1..], &mut noise_rng)?;
            let id = format!("mix{i:05}");
            let entry = ManifestEntry {
                split: format!("{n}I"),
                scene,
                sources,
                mixture: format!("mix/{id}.wav"),
                target: format!("ref/{id}_target.wav"),
                interferers: (1..=n).map(|k| format!("ref/{id}_intf{k}.wav")).collect(),
                noise: format!("ref/{id}_noise.wav"),
                id,
            };
            write_wav(root.join(&entry.mixture), &bundle.mixture)?;
            write_wav(root.join(&entry.target), &bundle.target_image)?;
            for (p, img) in entry.interferers.iter().zip(&bundle.interferer_images) {
                write_wav(root.join(p), img)?;
            }
            write_wav(root.join(&entry.noise), &bundle.noise)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        version: 1,
        seed: cfg.seed,
        sample_rate: cfg.sample_rate,
        duration_s: cfg.duration_s,
        synthetic_sources: pool.is_none(),
        entries,
    };
    manifest.save(root)?;
    Ok(manifest)
}
