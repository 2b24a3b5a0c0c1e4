//! Forward and backward passes of one LSTM direction over many sequences.

pub(crate) struct LstmWeights<'a> {
    /// `[4H, D]`, gate blocks in the order input, forget, cell, output.
    pub wih: &'a [f64],
    /// `[4H, H]`.
    pub whh: &'a [f64],
    /// `[4H]`.
    pub b: &'a [f64],
    pub input: usize,
    pub hidden: usize,
}

/// Activations saved for the backward pass, indexed by `(sequence, step)`.
pub(crate) struct LstmCache {
    /// Post-activation gates, `4H` per step.
    gates: Vec<f64>,
    /// Cell states, `H` per step.
    cells: Vec<f64>,
    /// Hidden states, `H` per step.
    hidden: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Column-major copy of a row-major `rows x cols` matrix.
fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// `out += M v` with `M` stored column-major.
fn matvec_add(out: &mut [f64], m_t: &[f64], v: &[f64]) {
    let rows = out.len();
    for (c, &vc) in v.iter().enumerate() {
        for (o, mv) in out.iter_mut().zip(&m_t[c * rows..(c + 1) * rows]) {
            *o += mv * vc;
        }
    }
}

/// Runs `s` sequences of length `t` stored as `x [S, T, D]`; `reverse`
/// processes time backwards. Returns hidden states `[S, T, H]`.
pub(crate) fn lstm_forward(w: &LstmWeights, x: &[f64], s: usize, t: usize, reverse: bool) -> (Vec<f64>, LstmCache) {
    let (d, h) = (w.input, w.hidden);
    let mut gates = vec![0.0; s * t * 4 * h];
    let mut cells = vec![0.0; s * t * h];
    let mut hidden = vec![0.0; s * t * h];
    let mut z = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    let wih_t = transpose(w.wih, 4 * h, d);
    let whh_t = transpose(w.whh, 4 * h, h);
    let mut c_new = vec![0.0; h];
    for seq in 0..s {
        for step in 0..t {
            let ti = if reverse { t - 1 - step } else { step };
            let idx = seq * t + ti;
            let prev = (step > 0).then(|| if reverse { idx + 1 } else { idx - 1 });
            z.copy_from_slice(w.b);
            matvec_add(&mut z, &wih_t, &x[idx * d..(idx + 1) * d]);
            let (h_prev, c_prev): (&[f64], &[f64]) = match prev {
                Some(p) => (&hidden[p * h..(p + 1) * h], &cells[p * h..(p + 1) * h]),
                None => (&zeros, &zeros),
            };
            matvec_add(&mut z, &whh_t, h_prev);
            let g = &mut gates[idx * 4 * h..(idx + 1) * 4 * h];
            for k in 0..h {
                let (ig, fg, cg, og) = (sigmoid(z[k]), sigmoid(z[h + k]), z[2 * h + k].tanh(), sigmoid(z[3 * h + k]));
                g[k] = ig;
                g[h + k] = fg;
                g[2 * h + k] = cg;
                g[3 * h + k] = og;
                c_new[k] = fg * c_prev[k] + ig * cg;
            }
            for k in 0..h {
                hidden[idx * h + k] = g[3 * h + k] * c_new[k].tanh();
            }
            cells[idx * h..(idx + 1) * h].copy_from_slice(&c_new);
        }
    }
    let out = hidden.clone();
    (out, LstmCache { gates, cells, hidden })
}

/// Backpropagation through time. Accumulates the input gradient into `gx` and
/// returns `(d w_ih, d w_hh, d b)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    w: &LstmWeights,
    x: &[f64],
    s: usize,
    t: usize,
    reverse: bool,
    cache: &LstmCache,
    gout: &[f64],
    gx: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, h) = (w.input, w.hidden);
    let mut gwih = vec![0.0; 4 * h * d];
    let mut gwhh = vec![0.0; 4 * h * h];
    let mut gb = vec![0.0; 4 * h];
    let mut dz = vec![0.0; 4 * h];
    for seq in 0..s {
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for step in (0..t).rev() {
            let ti = if reverse { t - 1 - step } else { step };
            let idx = seq * t + ti;
            let prev = (step > 0).then(|| if reverse { idx + 1 } else { idx - 1 });
            let g = &cache.gates[idx * 4 * h..(idx + 1) * 4 * h];
            let c = &cache.cells[idx * h..(idx + 1) * h];
            for k in 0..h {
                let dh = gout[idx * h + k] + dh_next[k];
                let (ig, fg, cg, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = c[k].tanh();
                let dc = dh * og * (1.0 - tc * tc) + dc_next[k];
                let c_prev = prev.map_or(0.0, |p| cache.cells[p * h + k]);
                dz[k] = dc * cg * ig * (1.0 - ig);
                dz[h + k] = dc * c_prev * fg * (1.0 - fg);
                dz[2 * h + k] = dc * ig * (1.0 - cg * cg);
                dz[3 * h + k] = dh * tc * og * (1.0 - og);
                dc_next[k] = dc * fg;
            }
            let xr = &x[idx * d..(idx + 1) * d];
            let gxr = &mut gx[idx * d..(idx + 1) * d];
            for (r, &dzr) in dz.iter().enumerate() {
                gb[r] += dzr;
                let wr = &w.wih[r * d..(r + 1) * d];
                for ((gw, gxi), (&xi, &wi)) in gwih[r * d..(r + 1) * d].iter_mut().zip(gxr.iter_mut()).zip(xr.iter().zip(wr)) {
                    *gw += dzr * xi;
                    *gxi += dzr * wi;
                }
            }
            dh_next.fill(0.0);
            if let Some(p) = prev {
                let hp = &cache.hidden[p * h..(p + 1) * h];
                for (r, &dzr) in dz.iter().enumerate() {
                    let wr = &w.whh[r * h..(r + 1) * h];
                    for ((gw, dn), (&hk, &wk)) in gwhh[r * h..(r + 1) * h].iter_mut().zip(dh_next.iter_mut()).zip(hp.iter().zip(wr)) {
                        *gw += dzr * hk;
                        *dn += dzr * wk;
                    }
                }
            }
        }
    }
    (gwih, gwhh, gb)
}
