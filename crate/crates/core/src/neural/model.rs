use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::graph::{si_sdr_parts, Graph, Var};
use super::Tensor;
use crate::beamforming::{masked_covariance, mpdr_update, BeamformerKind, BeamformerSet, Rtf};
use crate::combination::{combine, BeamOutputs, WeightField};
use crate::spectral::StftPlan;
use crate::{Error, MultichannelSpectrogram, Result};

/// Input channels of the mixture encoder: Re/Im of both microphones and cos/sin of the EIPD.
pub const MIX_INPUTS: usize = 6;
/// Input channels of the beam encoder: Re/Im of one beam output.
pub const BEAM_INPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoded channels `C`.
    pub channels: usize,
    /// Hidden units per direction of the recurrent layers.
    pub hidden: usize,
    /// Kernel length along frequency.
    pub kernel: usize,
    pub blocks: usize,
    pub groups: usize,
    pub lstm_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            hidden: 32,
            kernel: 5,
            blocks: 4,
            groups: 4,
            lstm_layers: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.channels == 0 || self.hidden == 0 || self.blocks == 0 || self.lstm_layers == 0 {
            return bad("model dimensions must be positive");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel length must be odd");
        }
        if self.groups == 0 || self.channels % self.groups != 0 {
            return bad("channels must be divisible by the group count");
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (c, h, k) = (self.channels, self.hidden, self.kernel);
        let mut out = Vec::new();
        for (prefix, cin) in [("mix", MIX_INPUTS), ("beam", BEAM_INPUTS)] {
            for b in 0..self.blocks {
                let ci = if b == 0 { cin } else { c };
                out.push((format!("{prefix}.block{b}.conv.w"), vec![2 * c, ci, k]));
                out.push((format!("{prefix}.block{b}.conv.b"), vec![2 * c]));
                out.push((format!("{prefix}.block{b}.norm.gamma"), vec![c]));
                out.push((format!("{prefix}.block{b}.norm.beta"), vec![c]));
            }
            for l in 0..self.lstm_layers {
                let d = if l == 0 { c } else { 2 * h };
                for dir in ["fw", "bw"] {
                    out.push((format!("{prefix}.lstm{l}.{dir}.wih"), vec![4 * h, d]));
                    out.push((format!("{prefix}.lstm{l}.{dir}.whh"), vec![4 * h, h]));
                    out.push((format!("{prefix}.lstm{l}.{dir}.b"), vec![4 * h]));
                }
            }
            out.push((format!("{prefix}.proj.w"), vec![c, 2 * h]));
            out.push((format!("{prefix}.proj.b"), vec![c]));
        }
        out
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    fn leaves(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// `h x h` orthogonal matrix from the QR factorization of a Gaussian matrix.
fn orthogonal(rng: &mut ChaCha8Rng, h: usize) -> Vec<f64> {
    let a = DMatrix::from_fn(h, h, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..h {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = vec![0.0; h * h];
    for i in 0..h {
        for j in 0..h {
            out[i * h + j] = q[(i, j)];
        }
    }
    out
}

fn init_params(cfg: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.hidden;
    let entries = cfg
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("conv.w") {
                uniform(&mut rng, n, 1.0 / ((shape[1] * shape[2]) as f64).sqrt())
            } else if name.ends_with("proj.w") || name.ends_with("wih") {
                uniform(&mut rng, n, 1.0 / (shape[1] as f64).sqrt())
            } else if name.ends_with("whh") {
                (0..4).flat_map(|_| orthogonal(&mut rng, h)).collect()
            } else if name.ends_with("gamma") {
                vec![1.0; n]
            } else if name.contains(".lstm") && name.ends_with(".b") {
                // forget-gate bias 1
                (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect()
            } else {
                vec![0.0; n]
            };
            (name, Tensor { shape, data })
        })
        .collect();
    Params::new(entries)
}

/// Cosine and sine of the expected inter-channel phase difference, `[2, F, T]`.
pub fn eipd_features(a: &Rtf, frames: usize) -> Result<Tensor> {
    if a.num_channels() != 2 {
        return Err(Error::Config(format!("phase cues need 2 microphones, got {}", a.num_channels())));
    }
    let f = a.num_bins();
    let mut data = vec![0.0; 2 * f * frames];
    for fi in 0..f {
        let v = a.at(fi);
        let phi = (v[1] / v[0]).arg();
        data[fi * frames..(fi + 1) * frames].fill(phi.cos());
        data[(f + fi) * frames..(f + fi + 1) * frames].fill(phi.sin());
    }
    Tensor::new(vec![2, f, frames], data)
}

/// RMS magnitude of the reference channel, used to normalize network inputs.
fn input_scale(x: &MultichannelSpectrogram) -> f64 {
    let n = (x.num_bins() * x.num_frames()) as f64;
    let p: f64 = (0..x.num_bins())
        .flat_map(|f| (0..x.num_frames()).map(move |t| (f, t)))
        .map(|(f, t)| x.get(0, f, t).norm_sqr())
        .sum();
    let s = (p / n).sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

fn mixture_features(x: &MultichannelSpectrogram, a: &Rtf, scale: f64) -> Result<Tensor> {
    let (f, t) = (x.num_bins(), x.num_frames());
    let ft = f * t;
    let mut data = vec![0.0; MIX_INPUTS * ft];
    for fi in 0..f {
        for ti in 0..t {
            for m in 0..2 {
                let v = x.get(m, fi, ti) / scale;
                data[(2 * m) * ft + fi * t + ti] = v.re;
                data[(2 * m + 1) * ft + fi * t + ti] = v.im;
            }
        }
    }
    let eipd = eipd_features(a, t)?;
    data[4 * ft..].copy_from_slice(&eipd.data);
    Tensor::new(vec![MIX_INPUTS, f, t], data)
}

/// Beam outputs as `[J, 2, F, T]` real and imaginary planes.
fn outputs_tensor(y: &BeamOutputs) -> Tensor {
    let (j, f, t) = (y.num_beams(), y.num_bins(), y.num_frames());
    let ft = f * t;
    let mut data = vec![0.0; j * 2 * ft];
    for fi in 0..f {
        for ti in 0..t {
            for (k, v) in y.bin(fi, ti).iter().enumerate() {
                data[k * 2 * ft + fi * t + ti] = v.re;
                data[k * 2 * ft + ft + fi * t + ti] = v.im;
            }
        }
    }
    Tensor {
        shape: vec![j, 2, f, t],
        data,
    }
}

/// How gradients treat the masked MPDR update between the two attention passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineGradient {
    /// Differentiate the update with respect to the first weights.
    #[default]
    Through,
    /// Treat the updated beams as constants.
    Stop,
}

/// Which weight fields the entropy penalty applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyTarget {
    /// Both attention passes.
    #[default]
    Both,
    /// Only the final weights.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossOptions {
    pub lambda: f64,
    pub eps: f64,
    pub entropy: EntropyTarget,
    pub refine: RefineGradient,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            eps: 1e-8,
            entropy: EntropyTarget::Both,
            refine: RefineGradient::Through,
        }
    }
}

/// One training example: mixture STFT, target RTF, initial beams and the
/// time-domain reference at the reference microphone.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x: MultichannelSpectrogram,
    pub a: Rtf,
    pub init: BeamformerSet,
    pub reference: Arc<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NetOutput {
    pub estimate: MultichannelSpectrogram,
    pub weights: WeightField,
    pub first_weights: WeightField,
    pub beams: BeamformerSet,
    pub outputs: BeamOutputs,
}

/// Loss, metrics and parameter gradients of one example.
#[derive(Debug, Clone)]
pub struct ItemResult {
    pub loss: f64,
    pub si_sdr: f64,
    pub entropy_final: f64,
    pub grads: Vec<Vec<f64>>,
}

struct Forward {
    alpha1: Var,
    alpha2: Var,
    y: Var,
    beams: BeamformerSet,
    outputs: BeamOutputs,
}

/// Source of the refined beams inside a forward pass.
#[derive(Clone, Copy)]
enum Stage<'a> {
    Frozen(&'a BeamformerSet),
    Detached,
    Through,
}

/// Attention-gated combination network with one masked MPDR refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationNet {
    pub config: ModelConfig,
    pub params: Params,
}

fn weight_field(g: &Graph, v: Var) -> Result<WeightField> {
    let (f, t, j) = g.value(v).dims3();
    WeightField::from_data(j, f, t, g.value(v).data.clone())
}

impl CombinationNet {
    /// Freshly initialized network.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self { config, params })
    }

    /// Network from stored parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::format("checkpoint", "parameter count does not match the model"));
        }
        for ((name, shape), (n, t)) in layout.iter().zip(params.names().iter().zip(params.tensors())) {
            if name != n || shape != &t.shape {
                return Err(Error::format("checkpoint", format!("unexpected parameter {n} {:?}", t.shape)));
            }
        }
        Ok(Self { config, params })
    }

    fn encode(&self, g: &mut Graph, pv: &[Var], prefix: &str, input: Var) -> Var {
        let p = |name: String| pv[self.params.position(&name).expect("parameter in layout")];
        let mut h = input;
        for b in 0..self.config.blocks {
            let conv = g.conv_freq(h, p(format!("{prefix}.block{b}.conv.w")), p(format!("{prefix}.block{b}.conv.b")));
            let gated = g.glu(conv);
            let norm = g.group_norm(
                gated,
                p(format!("{prefix}.block{b}.norm.gamma")),
                p(format!("{prefix}.block{b}.norm.beta")),
                self.config.groups,
            );
            h = g.elu(norm);
        }
        let mut seq = g.to_sequences(h);
        for l in 0..self.config.lstm_layers {
            let names = ["fw.wih", "fw.whh", "fw.b", "bw.wih", "bw.whh", "bw.b"];
            let vars = names.map(|n| p(format!("{prefix}.lstm{l}.{n}")));
            seq = g.bilstm(seq, vars);
        }
        let proj = g.linear(seq, p(format!("{prefix}.proj.w")), p(format!("{prefix}.proj.b")));
        g.from_sequences(proj)
    }

    fn keys(&self, g: &mut Graph, pv: &[Var], y: Var, scale: f64) -> Vec<Var> {
        let shape = g.value(y).shape.clone();
        let (j, plane) = (shape[0], 2 * shape[2] * shape[3]);
        (0..j)
            .map(|k| {
                let input = g.slice(y, k * plane, shape[1..].to_vec(), 1.0 / scale);
                self.encode(g, pv, "beam", input)
            })
            .collect()
    }

    /// Builds the two attention passes around the masked MPDR update.
    fn forward(
        &self,
        g: &mut Graph,
        pv: &[Var],
        x: &MultichannelSpectrogram,
        a: &Rtf,
        init: &BeamformerSet,
        stage: Stage,
    ) -> Result<Forward> {
        if x.num_channels() != 2 {
            return Err(Error::Config(format!("the network expects 2 microphones, got {}", x.num_channels())));
        }
        if init.is_empty() {
            return Err(Error::Empty("initial beamformers"));
        }
        let scale = input_scale(x);
        let mix_in = g.leaf(mixture_features(x, a, scale)?);
        let q = self.encode(g, pv, "mix", mix_in);

        let y0 = g.leaf(outputs_tensor(&BeamOutputs::compute(init, x)?));
        let keys = self.keys(g, pv, y0, scale);
        let alpha1 = g.attention(q, &keys);

        let with_doas = |beams: Vec<crate::Beamformer>| {
            BeamformerSet::new(
                beams
                    .into_iter()
                    .zip(&init.beams)
                    .map(|(mut b, i)| {
                        b.null_doa = i.null_doa;
                        b
                    })
                    .collect(),
            )
        };
        let (beams, y) = match stage {
            Stage::Frozen(b) => (b.clone(), None),
            Stage::Detached => {
                let w1 = weight_field(g, alpha1)?;
                let refined = (0..init.len())
                    .map(|j| mpdr_update(&masked_covariance(x, Some(&w1.mask(j)))?, a, BeamformerKind::Mpdr))
                    .collect::<Result<Vec<_>>>()?;
                (with_doas(refined), None)
            }
            Stage::Through => {
                let (y, refined) = g.refine(alpha1, Arc::new(x.clone()), Arc::new(a.clone()))?;
                (with_doas(refined), Some(y))
            }
        };
        let outputs = BeamOutputs::compute(&beams, x)?;
        let y = match y {
            Some(y) => y,
            None => g.leaf(outputs_tensor(&outputs)),
        };
        let keys = self.keys(g, pv, y, scale);
        let alpha2 = g.attention(q, &keys);
        Ok(Forward {
            alpha1,
            alpha2,
            y,
            beams,
            outputs,
        })
    }

    /// Enhancement of one mixture spectrogram.
    pub fn infer(&self, x: &MultichannelSpectrogram, a: &Rtf, init: &BeamformerSet) -> Result<NetOutput> {
        let mut g = Graph::new();
        let pv = self.params.leaves(&mut g);
        let fw = self.forward(&mut g, &pv, x, a, init, Stage::Detached)?;
        let weights = weight_field(&g, fw.alpha2)?;
        let first_weights = weight_field(&g, fw.alpha1)?;
        let estimate = combine(&weights, &fw.outputs)?;
        Ok(NetOutput {
            estimate,
            weights,
            first_weights,
            beams: fw.beams,
            outputs: fw.outputs,
        })
    }

    fn build_loss(
        &self,
        g: &mut Graph,
        pv: &[Var],
        item: &TrainItem,
        plan: &Arc<StftPlan>,
        opts: &LossOptions,
        frozen: Option<&BeamformerSet>,
    ) -> Result<(Var, Var, Var, BeamformerSet)> {
        let stage = match (frozen, opts.refine) {
            (Some(b), _) => Stage::Frozen(b),
            (None, RefineGradient::Stop) => Stage::Detached,
            (None, RefineGradient::Through) => Stage::Through,
        };
        let fw = self.forward(g, pv, &item.x, &item.a, &item.init, stage)?;
        let est = g.combine_istft(fw.alpha2, fw.y, plan.clone(), item.reference.len());
        let sdr = g.si_sdr_loss(est, item.reference.clone());
        let ent2 = g.entropy(fw.alpha2, opts.eps);
        let mut terms = vec![(sdr, 1.0), (ent2, opts.lambda)];
        if opts.entropy == EntropyTarget::Both {
            let ent1 = g.entropy(fw.alpha1, opts.eps);
            terms.push((ent1, opts.lambda));
        }
        let total = g.weighted_sum(&terms);
        Ok((total, est, ent2, fw.beams))
    }

    /// Loss and gradients of one example. Whether gradients flow through the
    /// refinement step follows `opts.refine`.
    pub fn loss_and_grads(&self, item: &TrainItem, plan: &Arc<StftPlan>, opts: &LossOptions) -> Result<ItemResult> {
        let mut g = Graph::new();
        let pv = self.params.leaves(&mut g);
        let (total, est, ent2, _) = self.build_loss(&mut g, &pv, item, plan, opts, None)?;
        let mut grads = g.backward(total);
        let (sdr, _) = si_sdr_parts(&g.value(est).data, &item.reference);
        Ok(ItemResult {
            loss: g.value(total).data[0],
            si_sdr: sdr.clamp(-60.0, 60.0),
            entropy_final: g.value(ent2).data[0],
            grads: pv
                .iter()
                .zip(self.params.tensors())
                .map(|(&v, t)| grads.take(v, t.numel()))
                .collect(),
        })
    }

    /// Loss value with the refined beams held fixed, for finite differences.
    pub(crate) fn loss_frozen(
        &self,
        item: &TrainItem,
        plan: &Arc<StftPlan>,
        opts: &LossOptions,
        frozen: Option<&BeamformerSet>,
    ) -> Result<(f64, BeamformerSet)> {
        let mut g = Graph::new();
        let pv = self.params.leaves(&mut g);
        let (total, _, _, beams) = self.build_loss(&mut g, &pv, item, plan, opts, frozen)?;
        Ok((g.value(total).data[0], beams))
    }
}
