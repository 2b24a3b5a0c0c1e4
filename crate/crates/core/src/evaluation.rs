//! Scale-invariant separation metrics and corpus reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{Manifest, ManifestEntry};
use crate::spectral::read_wav;
use crate::{Error, Result};

/// Reports are clamped to `[-METRIC_CLAMP_DB, METRIC_CLAMP_DB]`.
pub const METRIC_CLAMP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(num / den)` clamped to the reporting range; exact zeros map to the bounds.
fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return METRIC_CLAMP_DB;
    }
    if num == 0.0 {
        return -METRIC_CLAMP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-METRIC_CLAMP_DB, METRIC_CLAMP_DB)
}

/// SI-SDR of `est` against `reference`, in dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!("estimate has {} samples, reference {}", est.len(), reference.len())));
    }
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return Err(Error::Silent("reference"));
    }
    let beta = dot(est, reference) / rr;
    let num = beta * beta * rr;
    let den: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (beta * r - e).powi(2))
        .sum();
    Ok(ratio_db(num, den))
}

/// SI-SIR: `est` is least-squares decomposed on the target and interferer
/// references; the ratio compares the target part with the summed interferer part.
pub fn si_sir(est: &[f64], target: &[f64], interferers: &[&[f64]]) -> Result<f64> {
    let refs: Vec<&[f64]> = std::iter::once(target).chain(interferers.iter().copied()).collect();
    if refs.iter().any(|r| r.len() != est.len()) {
        return Err(Error::Shape("references and estimate differ in length".into()));
    }
    let norms: Vec<f64> = refs.iter().map(|r| dot(r, r).sqrt()).collect();
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::Silent("reference"));
    }
    let k = refs.len();
    // Gram matrix of the unit-normalized references
    let gram = DMatrix::from_fn(k, k, |i, j| dot(refs[i], refs[j]) / (norms[i] * norms[j]));
    if gram.clone().symmetric_eigenvalues().min() < 1e-10 {
        return Err(Error::RankDeficient);
    }
    let rhs = DVector::from_fn(k, |i, _| dot(refs[i], est) / norms[i]);
    let coef = gram.cholesky().ok_or(Error::RankDeficient)?.solve(&rhs);
    let t_energy = (coef[0] / norms[0]).powi(2) * norms[0].powi(2);
    let mut interference = vec![0.0; est.len()];
    for i in 1..k {
        let c = coef[i] / norms[i];
        for (acc, v) in interference.iter_mut().zip(refs[i]) {
            *acc += c * v;
        }
    }
    Ok(ratio_db(t_energy, dot(&interference, &interference)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: String,
    pub method: String,
    pub split: String,
    pub si_sdr_db: f64,
    pub si_sir_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub split: String,
    pub count: usize,
    pub si_sdr_mean: f64,
    pub si_sdr_std: f64,
    pub si_sir_mean: f64,
    pub si_sir_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricReport {
    /// Sorts records by (method, id) and aggregates per (method, split).
    pub fn from_records(mut records: Vec<MetricRecord>) -> Self {
        records.sort_by(|a, b| (&a.method, &a.id).cmp(&(&b.method, &b.id)));
        let mut groups: BTreeMap<(String, String), Vec<&MetricRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry((r.method.clone(), r.split.clone())).or_default().push(r);
        }
        let aggregates = groups
            .into_iter()
            .map(|((method, split), rs)| {
                let sdr: Vec<f64> = rs.iter().map(|r| r.si_sdr_db).collect();
                let sir: Vec<f64> = rs.iter().map(|r| r.si_sir_db).collect();
                let (si_sdr_mean, si_sdr_std) = mean_std(&sdr);
                let (si_sir_mean, si_sir_std) = mean_std(&sir);
                Aggregate {
                    method,
                    split,
                    count: rs.len(),
                    si_sdr_mean,
                    si_sdr_std,
                    si_sir_mean,
                    si_sir_std,
                }
            })
            .collect();
        Self { records, aggregates }
    }

    /// Combines reports of several methods.
    pub fn merge(reports: impl IntoIterator<Item = MetricReport>) -> Self {
        Self::from_records(reports.into_iter().flat_map(|r| r.records).collect())
    }

    pub fn aggregate(&self, method: &str, split: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.split == split)
    }

    /// `id,method,split,si_sdr_db,si_sir_db`, floats in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "method", "split", "si_sdr_db", "si_sir_db"])?;
        for r in &self.records {
            w.write_record([
                r.id.clone(),
                r.method.clone(),
                r.split.clone(),
                r.si_sdr_db.to_string(),
                r.si_sir_db.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<MetricRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.aggregates)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

fn evaluate_entry(entry: &ManifestEntry, root: &Path, outputs: &Path, method: &str) -> Result<MetricRecord> {
    let est = read_wav(outputs.join(format!("{}.wav", entry.id)))?;
    let target = read_wav(root.join(&entry.target))?;
    let interferers = entry
        .interferers
        .iter()
        .map(|p| read_wav(root.join(p)))
        .collect::<Result<Vec<_>>>()?;
    let intf: Vec<&[f64]> = interferers.iter().map(|w| w.channel(0)).collect();
    Ok(MetricRecord {
        id: entry.id.clone(),
        method: method.to_string(),
        split: entry.split.clone(),
        si_sdr_db: si_sdr(est.channel(0), target.channel(0))?,
        si_sir_db: si_sir(est.channel(0), target.channel(0), &intf)?,
    })
}

/// Scores `<outputs>/<id>.wav` for every manifest entry against the reference
/// microphone of the corpus images.
pub fn evaluate_corpus(manifest: &Manifest, root: &Path, outputs: &Path, method: &str) -> Result<MetricReport> {
    let missing: Vec<String> = manifest
        .entries
        .iter()
        .filter(|e| !outputs.join(format!("{}.wav", e.id)).is_file())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutputs(missing));
    }
    let records = manifest
        .entries
        .par_iter()
        .map(|e| evaluate_entry(e, root, outputs, method))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_records(records))
}
