use super::{mix, BeamOutputs, WeightField};
use crate::{Error, Result, C64};

/// Largest number of beams accepted by the linear-combination solver.
pub const MAX_TFLC_BEAMS: usize = 8;

#[inline]
fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

/// Minimizes `|sum_j alpha_j y_j|^2` over the probability simplex.
///
/// The outputs are points of the complex plane, so the minimizer is the point
/// of their convex hull closest to the origin. It lies on a vertex, an edge or
/// inside a triangle, and every such support is tried. Candidates are scored by
/// the same summation used by [`super::combine`], so the result never exceeds
/// the best single beam.
pub fn tflc_bin(y: &[C64], alpha: &mut [f64]) {
    let j = y.len();
    debug_assert_eq!(alpha.len(), j);
    alpha.fill(0.0);
    if j == 1 {
        alpha[0] = 1.0;
        return;
    }
    if y.iter().all(|&v| v == y[0]) {
        alpha.fill(1.0 / j as f64);
        return;
    }

    let mut best = 0;
    for k in 1..j {
        if y[k].norm_sqr() < y[best].norm_sqr() {
            best = k;
        }
    }
    alpha[best] = 1.0;
    let mut best_power = y[best].norm_sqr();
    if best_power == 0.0 {
        return;
    }
    let mut cand = vec![0.0; j];

    for p in 0..j {
        for q in p + 1..j {
            let d = y[p] - y[q];
            let dd = d.norm_sqr();
            if dd == 0.0 {
                continue;
            }
            let a = (y[q].conj() * (y[q] - y[p])).re / dd;
            if a <= 0.0 || a >= 1.0 {
                continue;
            }
            cand.fill(0.0);
            cand[p] = a;
            cand[q] = 1.0 - a;
            let power = mix(&cand, y).norm_sqr();
            if power < best_power {
                best_power = power;
                alpha.copy_from_slice(&cand);
            }
        }
    }

    for p in 0..j {
        for q in p + 1..j {
            for r in q + 1..j {
                let (e1, e2) = (y[q] - y[p], y[r] - y[p]);
                let det = cross(e1, e2);
                if det == 0.0 {
                    continue;
                }
                let l1 = cross(-y[p], e2) / det;
                let l2 = cross(e1, -y[p]) / det;
                let l0 = 1.0 - l1 - l2;
                if !(l0 > 0.0 && l1 > 0.0 && l2 > 0.0) {
                    continue;
                }
                cand.fill(0.0);
                cand[p] = l0;
                cand[q] = l1;
                cand[r] = l2;
                let power = mix(&cand, y).norm_sqr();
                if power < best_power {
                    best_power = power;
                    alpha.copy_from_slice(&cand);
                }
            }
        }
    }
}

/// Power-minimizing convex weights for every bin.
pub fn tflc_weights(y: &BeamOutputs) -> Result<WeightField> {
    let beams = y.num_beams();
    if beams == 0 || beams > MAX_TFLC_BEAMS {
        return Err(Error::Config(format!(
            "linear combination supports 1..={MAX_TFLC_BEAMS} beams, got {beams}"
        )));
    }
    let (bins, frames) = (y.num_bins(), y.num_frames());
    let mut w = WeightField::from_data(beams, bins, frames, vec![0.0; beams * bins * frames])?;
    for f in 0..bins {
        for t in 0..frames {
            tflc_bin(y.bin(f, t), w.bin_mut(f, t));
        }
    }
    Ok(w)
}
