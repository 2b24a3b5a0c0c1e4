use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tfbeam::combination::write_weights;
use tfbeam::evaluation::{evaluate_corpus, MetricReport};
use tfbeam::figure::{save_image, spectrogram_image, weight_image};
use tfbeam::neural::{load_checkpoint, train, CombinationNet};
use tfbeam::pipeline::{process, Method, MixtureInputs};
use tfbeam::scene::{generate_corpus, Manifest};
use tfbeam::spectral::{read_wav, write_wav, StftPlan};
use tfbeam::Error;

use crate::settings::{echo, EvaluateSettings, FileConfig, GenCorpusSettings, PlotSettings, RunSettings, TrainSettings};
use crate::{Cli, CliError, Command, EvaluateArgs, GenCorpusArgs, PlotArgs, RunArgs, TrainArgs, CORPUS_ENV};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(file.gen_corpus, a),
        Command::Run(a) => run(file.run, a),
        Command::Train(a) => train_cmd(file.train, a),
        Command::Evaluate(a) => evaluate(file.evaluate, a),
        Command::Plot(a) => plot(file.plot, a),
    }
}

fn required(p: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

fn corpus_dir(p: Option<PathBuf>) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Usage(format!("--corpus is required (or set {CORPUS_ENV})")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn gen_corpus(mut s: GenCorpusSettings, a: GenCorpusArgs) -> Result<(), CliError> {
    if let Some(v) = a.count {
        s.corpus.count = v;
    }
    if let Some(v) = a.interferers {
        s.corpus.interferers = Some(v as usize);
    }
    if let Some(v) = a.seed {
        s.corpus.seed = v;
    }
    if let Some(v) = a.duration {
        s.corpus.duration_s = v;
    }
    if a.source_pool.is_some() {
        s.corpus.source_pool = a.source_pool;
    }
    if a.out.is_some() {
        s.out = a.out;
    }
    s.corpus.interferer_plan().map_err(|e| CliError::Usage(e.to_string()))?;
    if s.corpus.count == 0 || !(s.corpus.duration_s > 0.0) {
        return Err(CliError::Usage("count and duration must be positive".into()));
    }
    let out = required(s.out.clone(), "--out")?;
    echo("gen-corpus", &s)?;
    let manifest = generate_corpus(&s.corpus, &out)?;
    eprintln!("wrote {} mixtures to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn run(mut s: RunSettings, a: RunArgs) -> Result<(), CliError> {
    if a.corpus.is_some() {
        s.corpus = a.corpus;
    }
    if a.method.is_some() {
        s.method = a.method;
    }
    if let Some(v) = a.iters {
        s.process.iters = v;
    }
    if a.nulls.is_some() {
        s.process.null_doas = a.nulls;
    }
    if a.checkpoint.is_some() {
        s.checkpoint = a.checkpoint;
    }
    if let Some(r) = a.rtf {
        s.process.rtf = r.into();
    }
    if a.out.is_some() {
        s.out = a.out;
    }
    let corpus = corpus_dir(s.corpus.clone())?;
    let method = s.method.ok_or_else(|| CliError::Usage("--method is required".into()))?;
    if method == Method::NnTflcMpdr && s.checkpoint.is_none() {
        return Err(CliError::Usage("nn-tflc-mpdr needs --checkpoint".into()));
    }
    if method != Method::NnTflcMpdr && s.checkpoint.is_some() {
        return Err(CliError::Usage(format!("--checkpoint only applies to nn-tflc-mpdr, not {method}")));
    }
    if let Some(n) = &s.process.null_doas {
        if n.is_empty() || n.iter().any(|d| !(0.0..=180.0).contains(d)) {
            return Err(CliError::Usage("null directions must lie in [0, 180] degrees".into()));
        }
    }
    s.process.stft.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out_root = s.out.clone().unwrap_or_else(|| corpus.join("outputs"));
    echo("run", &s)?;

    let manifest = Manifest::load(&corpus)?;
    let net = match &s.checkpoint {
        Some(p) => Some(load_checkpoint(p)?.0),
        None => None,
    };
    let dir = out_root.join(method.name());
    create_dir(&dir)?;
    let failures: Vec<String> = manifest
        .entries
        .par_iter()
        .filter_map(|e| {
            run_one(&corpus, e, method, &s, net.as_ref(), &dir)
                .err()
                .map(|err| format!("{}: {err}", e.id))
        })
        .collect();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        return Err(CliError::Runtime(format!("{} of {} mixtures failed", failures.len(), manifest.entries.len())));
    }
    eprintln!("wrote {} estimates to {}", manifest.entries.len(), dir.display());
    Ok(())
}

fn run_one(
    corpus: &Path,
    entry: &tfbeam::scene::ManifestEntry,
    method: Method,
    s: &RunSettings,
    net: Option<&CombinationNet>,
    dir: &Path,
) -> Result<(), Error> {
    let inputs = MixtureInputs::load(corpus, entry)?;
    let out = process(&inputs, method, &s.process, net)?;
    write_wav(dir.join(format!("{}.wav", entry.id)), &out.estimate)?;
    if let Some(w) = &out.weights {
        write_weights(&dir.join(format!("{}.tfwf", entry.id)), w)?;
    }
    Ok(())
}

fn train_cmd(mut s: TrainSettings, a: TrainArgs) -> Result<(), CliError> {
    if a.corpus.is_some() {
        s.corpus = a.corpus;
    }
    if a.val_corpus.is_some() {
        s.val_corpus = a.val_corpus;
    }
    if a.out.is_some() {
        s.out = a.out;
    }
    let t = &mut s.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.beams {
        t.beams = v;
    }
    if let Some(v) = a.channels {
        t.model.channels = v;
    }
    if let Some(v) = a.hidden {
        t.model.hidden = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if a.init.is_some() {
        t.init = a.init;
    }
    let corpus = corpus_dir(s.corpus.clone())?;
    let out = required(s.out.clone(), "--out")?;
    t.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    t.stft.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if t.epochs == 0 || t.batch_size == 0 || t.beams == 0 || !(t.lr > 0.0) {
        return Err(CliError::Usage("epochs, batch size, beams and learning rate must be positive".into()));
    }
    echo("train", &s)?;
    let outcome = train(&s.train, &corpus, s.val_corpus.as_deref(), &out)?;
    for e in &outcome.log {
        let val = e.val_si_sdr.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        eprintln!(
            "epoch {:3}  lr {:.2e}  loss {:8.4}  train SI-SDR {:6.2} dB  val {val}  entropy {:.4}",
            e.epoch, e.lr, e.train_loss, e.train_si_sdr, e.weight_entropy
        );
    }
    eprintln!("best epoch {} -> {}", outcome.best_epoch, out.join("best.ckpt").display());
    Ok(())
}

fn evaluate(mut s: EvaluateSettings, a: EvaluateArgs) -> Result<(), CliError> {
    if a.corpus.is_some() {
        s.corpus = a.corpus;
    }
    if a.outputs.is_some() {
        s.outputs = a.outputs;
    }
    if let Some(m) = a.methods {
        s.methods = m;
    }
    if a.out.is_some() {
        s.out = a.out;
    }
    let corpus = corpus_dir(s.corpus.clone())?;
    let outputs = s.outputs.clone().unwrap_or_else(|| corpus.join("outputs"));
    if s.methods.is_empty() {
        s.methods = Method::ALL
            .into_iter()
            .filter(|m| outputs.join(m.name()).is_dir())
            .collect();
        if s.methods.is_empty() {
            return Err(CliError::Runtime(format!("no method outputs under {}", outputs.display())));
        }
    }
    let out = s.out.clone().unwrap_or_else(|| outputs.clone());
    echo("evaluate", &s)?;

    let manifest = Manifest::load(&corpus)?;
    let reports = s
        .methods
        .iter()
        .map(|m| evaluate_corpus(&manifest, &corpus, &outputs.join(m.name()), m.name()))
        .collect::<Result<Vec<_>, _>>()?;
    let report = MetricReport::merge(reports);
    create_dir(&out)?;
    report.write_csv(&out.join("metrics.csv"))?;
    report.write_json(&out.join("metrics.json"))?;
    for g in &report.aggregates {
        eprintln!(
            "{:14} {:3} n={:4}  SI-SDR {:6.2} ± {:5.2} dB  SI-SIR {:6.2} ± {:5.2} dB",
            g.method, g.split, g.count, g.si_sdr_mean, g.si_sdr_std, g.si_sir_mean, g.si_sir_std
        );
    }
    Ok(())
}

fn plot(mut s: PlotSettings, a: PlotArgs) -> Result<(), CliError> {
    if a.input.is_some() {
        s.input = a.input;
    }
    if a.out.is_some() {
        s.out = a.out;
    }
    if let Some(v) = a.beam {
        s.beam = v;
    }
    if let Some(v) = a.channel {
        s.channel = v;
    }
    if let Some(v) = a.floor_db {
        s.floor_db = v;
    }
    let input = required(s.input.clone(), "--input")?;
    let out = required(s.out.clone(), "--out")?;
    if !(s.floor_db < 0.0) {
        return Err(CliError::Usage("--floor-db must be negative".into()));
    }
    echo("plot", &s)?;
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let img = match ext {
        "wav" => {
            let wav = read_wav(&input)?;
            let cfg = tfbeam::StftConfig {
                sample_rate: wav.sample_rate,
                ..s.stft
            };
            let spec = StftPlan::new(cfg)?.stft(&wav)?;
            spectrogram_image(&spec, s.channel, s.floor_db)?
        }
        "tfwf" => weight_image(&tfbeam::combination::read_weights(&input)?, s.beam)?,
        _ => {
            return Err(CliError::Runtime(format!(
                "{}: expected a .wav spectrogram source or a .tfwf weight field",
                input.display()
            )))
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_image(&img, &out)?;
    eprintln!("wrote {}x{} image to {}", img.width(), img.height(), out.display());
    Ok(())
}
