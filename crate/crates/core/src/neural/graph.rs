//! Tape of fused tensor operations with reverse-mode differentiation.

use std::f64::consts::LN_10;
use std::sync::Arc;

use super::lstm::{lstm_backward, lstm_forward, LstmCache, LstmWeights};
use super::Tensor;
use crate::beamforming::{masked_covariance, mpdr_update, Beamformer, BeamformerKind, Rtf, LOADING};
use crate::linalg::{inner, solve};
use crate::spectral::StftPlan;
use crate::{MultichannelSpectrogram, Result, C64};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// SI-SDR values are clamped to this range; outside it the loss has no gradient.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;
const GN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var },
    Glu { x: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Elu { x: Var },
    ToSequences { x: Var },
    FromSequences { x: Var },
    Linear { x: Var, w: Var, b: Var },
    BiLstm { x: Var, p: [Var; 6], cache: Box<[LstmCache; 2]> },
    Attention { q: Var, ks: Vec<Var> },
    Slice { x: Var, offset: usize, scale: f64 },
    Refine { alpha: Var, x: Arc<MultichannelSpectrogram>, a: Arc<Rtf> },
    CombineIstft { alpha: Var, y: Var, plan: Arc<StftPlan>, frames: usize },
    SiSdrLoss { est: Var, reference: Arc<Vec<f64>>, clamped: bool },
    Entropy { alpha: Var, eps: f64 },
    DotConst { x: Var, c: Arc<Vec<f64>> },
    WeightedSum { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node.
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0[v.0].as_deref()
    }

    /// Gradient of `v`, zeros when the scalar does not depend on it.
    pub fn take(&mut self, v: Var, len: usize) -> Vec<f64> {
        self.0[v.0].take().unwrap_or_else(|| vec![0.0; len])
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    /// Convolution along frequency with an odd kernel, stride 1 and zero
    /// padding: `x [Ci, F, T]`, `w [Co, Ci, K]`, `b [Co]` -> `[Co, F, T]`.
    pub fn conv_freq(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (ci, f, t) = self.value(x).dims3();
        let (co, wci, k) = self.value(w).dims3();
        assert_eq!(ci, wci, "conv input channels");
        assert!(k % 2 == 1, "conv kernel must be odd");
        let half = (k / 2) as isize;
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let mut y = vec![0.0; co * f * t];
        for o in 0..co {
            for fi in 0..f {
                let row = &mut y[(o * f + fi) * t..(o * f + fi + 1) * t];
                row.fill(bv[o]);
                for i in 0..ci {
                    for kk in 0..k {
                        let src = fi as isize + kk as isize - half;
                        if src < 0 || src >= f as isize {
                            continue;
                        }
                        let wgt = wv[(o * ci + i) * k + kk];
                        let xr = &xv[(i * f + src as usize) * t..(i * f + src as usize + 1) * t];
                        for (r, xx) in row.iter_mut().zip(xr) {
                            *r += wgt * xx;
                        }
                    }
                }
            }
        }
        self.push(Tensor { shape: vec![co, f, t], data: y }, Op::Conv { x, w, b })
    }

    /// Gated linear unit over the channel axis: first half times sigmoid of the second.
    pub fn glu(&mut self, x: Var) -> Var {
        let (c2, f, t) = self.value(x).dims3();
        let c = c2 / 2;
        let n = c * f * t;
        let xv = self.val(x);
        let y = (0..n).map(|i| xv[i] * sigmoid(xv[n + i])).collect();
        self.push(Tensor { shape: vec![c, f, t], data: y }, Op::Glu { x })
    }

    /// Group normalization of `[C, F, T]` with per-channel affine terms.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (c, f, t) = self.value(x).dims3();
        assert!(groups > 0 && c % groups == 0, "channels must split into groups");
        let per = c / groups * f * t;
        let (xv, gv, bv) = (self.val(x), self.val(gamma), self.val(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; groups];
        for g in 0..groups {
            let seg = &xv[g * per..(g + 1) * per];
            let mean = seg.iter().sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + GN_EPS).sqrt();
            inv_std[g] = is;
            for (h, v) in xhat[g * per..(g + 1) * per].iter_mut().zip(seg) {
                *h = (v - mean) * is;
            }
        }
        let ft = f * t;
        let y = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| gv[i / ft] * h + bv[i / ft])
            .collect();
        self.push(
            Tensor { shape: vec![c, f, t], data: y },
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std },
        )
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let y = self
            .val(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp_m1() })
            .collect();
        let shape = self.value(x).shape.clone();
        self.push(Tensor { shape, data: y }, Op::Elu { x })
    }

    /// `[C, F, T]` -> `[F, T, C]`: one time sequence of feature vectors per bin.
    pub fn to_sequences(&mut self, x: Var) -> Var {
        let (c, f, t) = self.value(x).dims3();
        let xv = self.val(x);
        let mut y = vec![0.0; xv.len()];
        for ci in 0..c {
            for fi in 0..f {
                for ti in 0..t {
                    y[(fi * t + ti) * c + ci] = xv[(ci * f + fi) * t + ti];
                }
            }
        }
        self.push(Tensor { shape: vec![f, t, c], data: y }, Op::ToSequences { x })
    }

    /// `[F, T, C]` -> `[C, F, T]`.
    pub fn from_sequences(&mut self, x: Var) -> Var {
        let (f, t, c) = self.value(x).dims3();
        let xv = self.val(x);
        let mut y = vec![0.0; xv.len()];
        for ci in 0..c {
            for fi in 0..f {
                for ti in 0..t {
                    y[(ci * f + fi) * t + ti] = xv[(fi * t + ti) * c + ci];
                }
            }
        }
        self.push(Tensor { shape: vec![c, f, t], data: y }, Op::FromSequences { x })
    }

    /// Affine map of the last axis: `x [..., Din]`, `w [Dout, Din]`, `b [Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = &self.value(x).shape;
        let din = *xs.last().expect("non-scalar input");
        let (dout, wdin) = match self.value(w).shape[..] {
            [o, i] => (o, i),
            _ => panic!("linear weight must be 2-d"),
        };
        assert_eq!(din, wdin, "linear input width");
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = dout;
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        let rows = xv.len() / din;
        let mut y = vec![0.0; rows * dout];
        for r in 0..rows {
            let xr = &xv[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                y[r * dout + o] = bv[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(Tensor { shape, data: y }, Op::Linear { x, w, b })
    }

    /// Bidirectional LSTM over the time axis of `x [S, T, D]`, each of the `S`
    /// sequences processed independently with shared weights. `p` holds
    /// `(w_ih, w_hh, b)` of the forward then the backward direction; the output
    /// `[S, T, 2H]` stacks forward and backward states.
    pub fn bilstm(&mut self, x: Var, p: [Var; 6]) -> Var {
        let (s, t, d) = self.value(x).dims3();
        let h = self.value(p[1]).shape[1];
        let xv = self.val(x);
        let mut y = vec![0.0; s * t * 2 * h];
        let dirs = [false, true].map(|reverse| {
            let dir = if reverse { 3 } else { 0 };
            let w = LstmWeights {
                wih: self.val(p[dir]),
                whh: self.val(p[dir + 1]),
                b: self.val(p[dir + 2]),
                input: d,
                hidden: h,
            };
            lstm_forward(&w, xv, s, t, reverse)
        });
        for (k, (out, _)) in dirs.iter().enumerate() {
            for st in 0..s * t {
                y[st * 2 * h + k * h..st * 2 * h + (k + 1) * h].copy_from_slice(&out[st * h..(st + 1) * h]);
            }
        }
        let [(_, c0), (_, c1)] = dirs;
        self.push(
            Tensor { shape: vec![s, t, 2 * h], data: y },
            Op::BiLstm { x, p, cache: Box::new([c0, c1]) },
        )
    }

    /// Softmax over beams of scaled dot products: `q [C, F, T]`, each of `ks`
    /// `[C, F, T]` -> weights `[F, T, J]`.
    pub fn attention(&mut self, q: Var, ks: &[Var]) -> Var {
        let (c, f, t) = self.value(q).dims3();
        let j = ks.len();
        assert!(j > 0, "attention needs at least one key");
        let scale = 1.0 / (c as f64).sqrt();
        let qv = self.val(q);
        let kvs: Vec<&[f64]> = ks.iter().map(|&k| self.val(k)).collect();
        let ft = f * t;
        let mut alpha = vec![0.0; ft * j];
        let mut logits = vec![0.0; j];
        for bin in 0..ft {
            for (l, kv) in logits.iter_mut().zip(&kvs) {
                *l = (0..c).map(|ci| qv[ci * ft + bin] * kv[ci * ft + bin]).sum::<f64>() * scale;
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut alpha[bin * j..(bin + 1) * j];
            let mut z = 0.0;
            for (o, l) in out.iter_mut().zip(&logits) {
                *o = (l - m).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
        self.push(
            Tensor { shape: vec![f, t, j], data: alpha },
            Op::Attention { q, ks: ks.to_vec() },
        )
    }

    /// Contiguous block of `x` starting at `offset`, reshaped to `shape` and
    /// multiplied by `scale`.
    pub fn slice(&mut self, x: Var, offset: usize, shape: Vec<usize>, scale: f64) -> Var {
        let n: usize = shape.iter().product();
        let data = self.val(x)[offset..offset + n].iter().map(|v| v * scale).collect();
        self.push(Tensor { shape, data }, Op::Slice { x, offset, scale })
    }

    /// Masked MPDR update of every beam from the weights `alpha [F, T, J]`
    /// followed by beamforming of `x`. Returns the outputs `[J, 2, F, T]`
    /// (real, imaginary) and the updated beamformers.
    pub fn refine(
        &mut self,
        alpha: Var,
        x: Arc<MultichannelSpectrogram>,
        a: Arc<Rtf>,
    ) -> Result<(Var, Vec<Beamformer>)> {
        let (f, t, j) = self.value(alpha).dims3();
        let av = self.val(alpha);
        let mut beams = Vec::with_capacity(j);
        let mut y = vec![0.0; j * 2 * f * t];
        for k in 0..j {
            let mask: Vec<f64> = (0..f * t).map(|b| av[b * j + k]).collect();
            let phi = masked_covariance(&x, Some(&mask))?;
            let b = mpdr_update(&phi, &a, BeamformerKind::Mpdr)?;
            let out = b.apply(&x)?;
            let base = k * 2 * f * t;
            for fi in 0..f {
                for ti in 0..t {
                    let v = out.get(0, fi, ti);
                    y[base + fi * t + ti] = v.re;
                    y[base + f * t + fi * t + ti] = v.im;
                }
            }
            beams.push(b);
        }
        let var = self.push(Tensor { shape: vec![j, 2, f, t], data: y }, Op::Refine { alpha, x, a });
        Ok((var, beams))
    }

    /// `sum_j alpha_{f,t,j} y_{j,f,t}` followed by the inverse STFT of `plan`,
    /// with `alpha [F, T, J]` and `y [J, 2, F, T]` holding real and imaginary parts.
    pub fn combine_istft(&mut self, alpha: Var, y: Var, plan: Arc<StftPlan>, out_len: usize) -> Var {
        let (f, frames, j) = self.value(alpha).dims3();
        assert_eq!(self.value(y).shape, vec![j, 2, f, frames], "beam outputs must match the weights");
        let (av, yv) = (self.val(alpha), self.val(y));
        let ft = f * frames;
        let n = plan.config().window_len;
        let mut buf = vec![C64::new(0.0, 0.0); n];
        let mut frame_signals = Vec::with_capacity(frames);
        for t in 0..frames {
            let bin = |fi: usize| {
                let b = fi * frames + t;
                (0..j).fold(C64::new(0.0, 0.0), |s, k| {
                    let o = k * 2 * ft + b;
                    s + C64::new(yv[o], yv[o + ft]) * av[b * j + k]
                })
            };
            crate::spectral::fill_hermitian(&mut buf, bin);
            plan.inverse_fft().process(&mut buf);
            frame_signals.push(buf.iter().map(|v| v.re / n as f64).collect::<Vec<_>>());
        }
        let out = plan.overlap_add(&frame_signals, out_len);
        self.push(
            Tensor { shape: vec![out_len], data: out },
            Op::CombineIstft { alpha, y, plan, frames },
        )
    }

    /// Negative SI-SDR in dB of `est` against a constant reference, clamped to
    /// `[-60, 60]` dB.
    pub fn si_sdr_loss(&mut self, est: Var, reference: Arc<Vec<f64>>) -> Var {
        let (sdr, _) = si_sdr_parts(self.val(est), &reference);
        let clamped = sdr.abs() >= SI_SDR_CLAMP_DB;
        let loss = -sdr.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB);
        self.push(Tensor::scalar(loss), Op::SiSdrLoss { est, reference, clamped })
    }

    /// `-(1/n) sum alpha ln(max(alpha, eps))` over all `n` weights.
    pub fn entropy(&mut self, alpha: Var, eps: f64) -> Var {
        let av = self.val(alpha);
        let s: f64 = av.iter().map(|&a| crate::combination::entropy_term(a, eps)).sum();
        let v = s / av.len() as f64;
        self.push(Tensor::scalar(v), Op::Entropy { alpha, eps })
    }

    /// Inner product with a constant vector.
    pub fn dot_const(&mut self, x: Var, c: Arc<Vec<f64>>) -> Var {
        let v = self.val(x).iter().zip(c.iter()).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(v), Op::DotConst { x, c })
    }

    /// `sum_k c_k s_k` of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|&(s, c)| c * self.val(s)[0]).sum();
        self.push(Tensor::scalar(v), Op::WeightedSum { terms: terms.to_vec() })
    }

    /// Reverse pass from the scalar `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Grads(grads)
    }

    fn backward_node(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv { x, w, b } => {
                let (ci, f, t) = self.value(x).dims3();
                let (co, _, k) = self.value(w).dims3();
                let half = (k / 2) as isize;
                let (xv, wv) = (self.val(x), self.val(w));
                let mut gx = vec![0.0; xv.len()];
                let mut gw = vec![0.0; wv.len()];
                let mut gb = vec![0.0; co];
                for o in 0..co {
                    for fi in 0..f {
                        let gr = &gy[(o * f + fi) * t..(o * f + fi + 1) * t];
                        gb[o] += gr.iter().sum::<f64>();
                        for i in 0..ci {
                            for kk in 0..k {
                                let src = fi as isize + kk as isize - half;
                                if src < 0 || src >= f as isize {
                                    continue;
                                }
                                let base = (i * f + src as usize) * t;
                                let wi = (o * ci + i) * k + kk;
                                let wgt = wv[wi];
                                let xr = &xv[base..base + t];
                                gw[wi] += dot(gr, xr);
                                for (gxi, g) in gx[base..base + t].iter_mut().zip(gr) {
                                    *gxi += wgt * g;
                                }
                            }
                        }
                    }
                }
                add_into(grads, x, &gx);
                add_into(grads, w, &gw);
                add_into(grads, b, &gb);
            }
            &Op::Glu { x } => {
                let xv = self.val(x);
                let n = xv.len() / 2;
                let g = acc(grads, x, 2 * n);
                for i in 0..n {
                    let s = sigmoid(xv[n + i]);
                    g[i] += gy[i] * s;
                    g[n + i] += gy[i] * xv[i] * s * (1.0 - s);
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, inv_std } => {
                let (c, f, t) = self.value(*x).dims3();
                let ft = f * t;
                let per = c / groups * ft;
                let gv = self.val(*gamma);
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut gx = vec![0.0; c * ft];
                for (i, (g, h)) in gy.iter().zip(xhat).enumerate() {
                    ggamma[i / ft] += g * h;
                    gbeta[i / ft] += g;
                }
                for gi in 0..*groups {
                    let range = gi * per..(gi + 1) * per;
                    let dh: Vec<f64> = range.clone().map(|i| gy[i] * gv[i / ft]).collect();
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(&xhat[range.clone()]).map(|(a, b)| a * b).sum();
                    let n = per as f64;
                    for (k, i) in range.enumerate() {
                        gx[i] = inv_std[gi] / n * (n * dh[k] - sum_dh - xhat[i] * sum_dh_h);
                    }
                }
                add_into(grads, *x, &gx);
                add_into(grads, *gamma, &ggamma);
                add_into(grads, *beta, &gbeta);
            }
            &Op::Elu { x } => {
                let xv = self.val(x);
                let g = acc(grads, x, xv.len());
                for i in 0..xv.len() {
                    g[i] += gy[i] * if xv[i] > 0.0 { 1.0 } else { xv[i].exp() };
                }
            }
            &Op::ToSequences { x } => {
                let (c, f, t) = self.value(x).dims3();
                let g = acc(grads, x, c * f * t);
                for ci in 0..c {
                    for fi in 0..f {
                        for ti in 0..t {
                            g[(ci * f + fi) * t + ti] += gy[(fi * t + ti) * c + ci];
                        }
                    }
                }
            }
            &Op::FromSequences { x } => {
                let (f, t, c) = self.value(x).dims3();
                let g = acc(grads, x, c * f * t);
                for ci in 0..c {
                    for fi in 0..f {
                        for ti in 0..t {
                            g[(fi * t + ti) * c + ci] += gy[(ci * f + fi) * t + ti];
                        }
                    }
                }
            }
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(x), self.val(w));
                let (dout, din) = (self.value(w).shape[0], self.value(w).shape[1]);
                let rows = xv.len() / din;
                let mut gx = vec![0.0; xv.len()];
                let mut gw = vec![0.0; wv.len()];
                let mut gb = vec![0.0; dout];
                for r in 0..rows {
                    let xr = &xv[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let g = gy[r * dout + o];
                        gb[o] += g;
                        for i in 0..din {
                            gw[o * din + i] += g * xr[i];
                            gx[r * din + i] += g * wv[o * din + i];
                        }
                    }
                }
                add_into(grads, x, &gx);
                add_into(grads, w, &gw);
                add_into(grads, b, &gb);
            }
            Op::BiLstm { x, p, cache } => {
                let (s, t, d) = self.value(*x).dims3();
                let h = self.value(p[1]).shape[1];
                let xv = self.val(*x);
                let mut gx = vec![0.0; xv.len()];
                for (k, reverse) in [false, true].into_iter().enumerate() {
                    let dir = 3 * k;
                    let w = LstmWeights {
                        wih: self.val(p[dir]),
                        whh: self.val(p[dir + 1]),
                        b: self.val(p[dir + 2]),
                        input: d,
                        hidden: h,
                    };
                    let mut gout = vec![0.0; s * t * h];
                    for st in 0..s * t {
                        gout[st * h..(st + 1) * h]
                            .copy_from_slice(&gy[st * 2 * h + k * h..st * 2 * h + (k + 1) * h]);
                    }
                    let (gwih, gwhh, gb) = lstm_backward(&w, xv, s, t, reverse, &cache[k], &gout, &mut gx);
                    add_into(grads, p[dir], &gwih);
                    add_into(grads, p[dir + 1], &gwhh);
                    add_into(grads, p[dir + 2], &gb);
                }
                add_into(grads, *x, &gx);
            }
            Op::Attention { q, ks } => {
                let (c, f, t) = self.value(*q).dims3();
                let j = ks.len();
                let ft = f * t;
                let scale = 1.0 / (c as f64).sqrt();
                let alpha = &node.value.data;
                let qv = self.val(*q);
                let kvs: Vec<&[f64]> = ks.iter().map(|&k| self.val(k)).collect();
                let mut gq = vec![0.0; c * ft];
                let mut gks = vec![vec![0.0; c * ft]; j];
                for bin in 0..ft {
                    let a = &alpha[bin * j..(bin + 1) * j];
                    let ga = &gy[bin * j..(bin + 1) * j];
                    let dotp: f64 = a.iter().zip(ga).map(|(x, y)| x * y).sum();
                    for jj in 0..j {
                        let gl = a[jj] * (ga[jj] - dotp) * scale;
                        if gl == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            let i = ci * ft + bin;
                            gq[i] += gl * kvs[jj][i];
                            gks[jj][i] += gl * qv[i];
                        }
                    }
                }
                add_into(grads, *q, &gq);
                for (k, g) in ks.iter().zip(&gks) {
                    add_into(grads, *k, g);
                }
            }
            &Op::Slice { x, offset, scale } => {
                let n = self.value(x).numel();
                let g = acc(grads, x, n);
                for (gi, v) in g[offset..offset + gy.len()].iter_mut().zip(gy) {
                    *gi += v * scale;
                }
            }
            Op::Refine { alpha, x, a } => {
                let g = self.refine_backward(*alpha, x, a, gy);
                add_into(grads, *alpha, &g);
            }
            Op::CombineIstft { alpha, y, plan, frames } => {
                let (f, frames, j) = (self.value(*alpha).shape[0], *frames, self.value(*alpha).shape[2]);
                let ft = f * frames;
                let n = plan.config().window_len;
                let half = n / 2;
                let hop = plan.config().hop;
                let out_len = gy.len();
                let env = plan.envelope(frames, out_len);
                let win = plan.window();
                let (av, yv) = (self.val(*alpha), self.val(*y));
                let mut ga = vec![0.0; ft * j];
                let mut gyv = vec![0.0; yv.len()];
                let mut buf = vec![C64::new(0.0, 0.0); n];
                for t in 0..frames {
                    for (k, slot) in buf.iter_mut().enumerate() {
                        let i = (t * hop + k) as isize - half as isize;
                        let v = if i >= 0 && (i as usize) < out_len && env[i as usize] > 1e-10 {
                            gy[i as usize] * win[k] / env[i as usize]
                        } else {
                            0.0
                        };
                        *slot = C64::new(v, 0.0);
                    }
                    plan.forward_fft().process(&mut buf);
                    for fi in 0..f {
                        let edge = fi == 0 || fi == half;
                        let c = if edge { 1.0 } else { 2.0 } / n as f64;
                        let d_re = c * buf[fi].re;
                        let d_im = if edge { 0.0 } else { c * buf[fi].im };
                        let b = fi * frames + t;
                        for k in 0..j {
                            let o = k * 2 * ft + b;
                            ga[b * j + k] = d_re * yv[o] + d_im * yv[o + ft];
                            gyv[o] = d_re * av[b * j + k];
                            gyv[o + ft] = d_im * av[b * j + k];
                        }
                    }
                }
                add_into(grads, *alpha, &ga);
                add_into(grads, *y, &gyv);
            }
            Op::SiSdrLoss { est, reference, clamped } => {
                if *clamped {
                    return;
                }
                let ev = self.val(*est);
                let (_, parts) = si_sdr_parts(ev, reference);
                let (beta, p_target, p_resid) = parts;
                let k = -gy[0] * 10.0 / LN_10 * 2.0;
                let g = acc(grads, *est, ev.len());
                for i in 0..ev.len() {
                    let target = beta * reference[i];
                    let resid = ev[i] - target;
                    g[i] += k * (target / p_target - resid / p_resid);
                }
            }
            &Op::Entropy { alpha, eps } => {
                let av = self.val(alpha);
                let n = av.len() as f64;
                let g = acc(grads, alpha, av.len());
                for (gi, &a) in g.iter_mut().zip(av) {
                    let d = if a >= eps && a > 0.0 { a.ln() + 1.0 } else { eps.ln() };
                    *gi += -gy[0] / n * d;
                }
            }
            Op::DotConst { x, c } => {
                let g = acc(grads, *x, c.len());
                for (gi, ci) in g.iter_mut().zip(c.iter()) {
                    *gi += gy[0] * ci;
                }
            }
            Op::WeightedSum { terms } => {
                for &(s, c) in terms {
                    acc(grads, s, 1)[0] += gy[0] * c;
                }
            }
        }
    }
}

impl Graph {
    /// Adjoint of the masked MPDR update. With `P` the inverse of the loaded
    /// covariance, `u = P a`, `s = a^H u`, `w = u / s` and `v = sum_t conj(G_t) x_t`
    /// for output gradients `G_t`, a covariance change `D` moves the loss by
    /// `-Re(p^H D u) / s + Re(v^H u) u^H D u / s^2` where `p = P v`.
    fn refine_backward(&self, alpha: Var, x: &MultichannelSpectrogram, a: &Rtf, gy: &[f64]) -> Vec<f64> {
        let (f, t, j) = self.value(alpha).dims3();
        let av = self.val(alpha);
        let m = x.num_channels();
        let ft = f * t;
        let mut g = vec![0.0; ft * j];
        for k in 0..j {
            let base = k * 2 * ft;
            for fi in 0..f {
                let mut phi = vec![C64::new(0.0, 0.0); m * m];
                let mut v = vec![C64::new(0.0, 0.0); m];
                for ti in 0..t {
                    let xt = x.bin(fi, ti);
                    let w2 = av[(fi * t + ti) * j + k].powi(2);
                    let gt = C64::new(gy[base + fi * t + ti], gy[base + ft + fi * t + ti]);
                    for r in 0..m {
                        v[r] += gt.conj() * xt[r];
                        for c in 0..m {
                            phi[r * m + c] += xt[r] * xt[c].conj() * w2;
                        }
                    }
                }
                phi.iter_mut().for_each(|p| *p /= t as f64);
                let trace: f64 = (0..m).map(|i| phi[i * m + i].re).sum();
                let load = LOADING * (trace / m as f64 + crate::beamforming::LOADING_FLOOR);
                for i in 0..m {
                    phi[i * m + i] += load;
                }
                let af = a.at(fi);
                let (Some(u), Some(p)) = (solve(&phi, m, af), solve(&phi, m, &v)) else {
                    continue;
                };
                let s = inner(af, &u).re;
                let r = inner(&v, &u).re;
                let term_i = -inner(&p, &u).re / s + r * inner(&u, &u).re / (s * s);
                for ti in 0..t {
                    let xt = x.bin(fi, ti);
                    let xu = inner(xt, &u);
                    let px = inner(&p, xt);
                    let term_xx = -(px * xu).re / s + r * xu.norm_sqr() / (s * s);
                    let energy: f64 = xt.iter().map(|c| c.norm_sqr()).sum();
                    let idx = (fi * t + ti) * j + k;
                    g[idx] = 2.0 * av[idx] / t as f64 * (term_xx + LOADING / m as f64 * energy * term_i);
                }
            }
        }
        g
    }
}

/// Dot product with four independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    let a = acc(grads, v, g.len());
    for (x, y) in a.iter_mut().zip(g) {
        *x += y;
    }
}

/// Unclamped SI-SDR in dB with `(beta, |beta s|^2, |est - beta s|^2)`.
pub(crate) fn si_sdr_parts(est: &[f64], reference: &[f64]) -> (f64, (f64, f64, f64)) {
    let rr: f64 = reference.iter().map(|v| v * v).sum();
    let er: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let beta = er / rr;
    let p_target = beta * beta * rr;
    let p_resid: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - beta * r).powi(2))
        .sum();
    let sdr = if p_resid == 0.0 {
        f64::INFINITY
    } else if p_target == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (p_target / p_resid).log10()
    };
    (sdr, (beta, p_target, p_resid))
}
