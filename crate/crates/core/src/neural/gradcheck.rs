use std::sync::Arc;

use rand::Rng;

use super::{CombinationNet, LossOptions, RefineGradient, TrainItem};
use crate::spectral::StftPlan;
use crate::Result;

/// Largest relative deviation between reverse-mode gradients and central
/// differences with step `h`, over `samples` parameters spread across every
/// tensor. Under [`RefineGradient::Stop`] the refined beams are held at the
/// values of the unperturbed forward pass, matching the detached update.
///
/// Differences are taken relative to `max(|exact|, |numeric|, floor)` with
/// `floor = 1e-4 * max |gradient|`, so entries many orders below the largest
/// gradient are not scored on round-off alone.
pub fn grad_check<R: Rng + ?Sized>(
    net: &CombinationNet,
    item: &TrainItem,
    plan: &Arc<StftPlan>,
    opts: &LossOptions,
    samples: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64> {
    let analytic = net.loss_and_grads(item, plan, opts)?.grads;
    let frozen = match opts.refine {
        RefineGradient::Stop => Some(net.loss_frozen(item, plan, opts, None)?.1),
        RefineGradient::Through => None,
    };
    let largest = analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-4 * largest).max(f64::MIN_POSITIVE);
    let mut probe = net.clone();
    let tensors = net.params.len();
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let ti = s % tensors;
        let i = rng.random_range(0..net.params.tensors()[ti].numel());
        let orig = net.params.tensors()[ti].data[i];
        probe.params.tensors_mut()[ti].data[i] = orig + h;
        let (plus, _) = probe.loss_frozen(item, plan, opts, frozen.as_ref())?;
        probe.params.tensors_mut()[ti].data[i] = orig - h;
        let (minus, _) = probe.loss_frozen(item, plan, opts, frozen.as_ref())?;
        probe.params.tensors_mut()[ti].data[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic[ti][i];
        let denom = exact.abs().max(numeric.abs()).max(floor);
        worst = worst.max((exact - numeric).abs() / denom);
    }
    Ok(worst)
}
