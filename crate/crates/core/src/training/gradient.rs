//! Per-batch losses with hand-rolled gradients, and their finite-difference check.

use rand::Rng;

use super::{mse_loss, LossKind};
use crate::denoiser::{draw_probe, probe_step, ChannelImage, CnnArch, CnnGradients, SmallCnn};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// One denoising example: noisy input at per-entry variance `noise_var`,
/// with the clean image when supervised.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: ChannelImage,
    pub noise_var: f64,
    pub truth: Option<ChannelImage>,
}

/// Loss of one pair; gradients scaled by `scale` are added to `grads`.
fn pair_loss(net: &SmallCnn, pair: &TrainingPair, kind: LossKind, probe: &[f64], scale: f64, grads: Option<&mut CnnGradients>) -> Result<f64> {
    let r = &pair.input;
    let (h, w) = (r.beams(), r.subcarriers());
    let p = r.len() as f64;
    let t0 = net.forward_trace(r.data(), h, w)?;
    match kind {
        LossKind::Mse => {
            let truth = pair
                .truth
                .as_ref()
                .ok_or_else(|| Error::input("MSE training needs ground truth"))?;
            r.check_shape(truth)?;
            // D(r) − h = r − R(r) − h
            let err: Vec<f64> = r
                .data()
                .iter()
                .zip(&t0.residual)
                .zip(truth.data())
                .map(|((x, e), t)| x - e - t)
                .collect();
            let loss = err.iter().map(|e| e * e).sum::<f64>() / p;
            if let Some(g) = grads {
                let g_res: Vec<f64> = err.iter().map(|e| -2.0 * scale * e / p).collect();
                net.backward(&t0, &g_res, g, false);
            }
            Ok(loss)
        }
        LossKind::Sure => {
            Error::check_len("probe", r.len(), probe.len())?;
            let s2 = pair.noise_var / 2.0;
            let eps = probe_step(r);
            let shifted: Vec<f64> = r.data().iter().zip(probe).map(|(x, b)| x + eps * b).collect();
            let t1 = net.forward_trace(&shifted, h, w)?;
            // D(r+εb) − D(r) = εb − (R(r+εb) − R(r))
            let div: f64 = probe
                .iter()
                .zip(t1.residual.iter().zip(&t0.residual))
                .map(|(b, (r1, r0))| b * (eps * b - (r1 - r0)))
                .sum::<f64>()
                / eps;
            let fit = t0.residual.iter().map(|e| e * e).sum::<f64>() / p;
            let loss = fit - s2 + 2.0 * s2 * div / p;
            if let Some(g) = grads {
                let c = 2.0 * s2 / (p * eps);
                let g0: Vec<f64> = t0.residual.iter().zip(probe).map(|(e, b)| scale * (2.0 * e / p + c * b)).collect();
                let g1: Vec<f64> = probe.iter().map(|b| -scale * c * b).collect();
                net.backward(&t0, &g0, g, false);
                net.backward(&t1, &g1, g, false);
            }
            Ok(loss)
        }
    }
}

/// Mean loss over a batch and its gradient as a flat vector. SURE uses one
/// probe for the whole batch.
pub fn batch_loss_and_grad<R: Rng + ?Sized>(net: &SmallCnn, batch: &[TrainingPair], kind: LossKind, probe_rng: &mut R) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let probe = match kind {
        LossKind::Sure => draw_probe(batch[0].input.len(), probe_rng),
        LossKind::Mse => Vec::new(),
    };
    let mut grads = CnnGradients::zeros(net.arch());
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for pair in batch {
        loss += scale * pair_loss(net, pair, kind, &probe, scale, Some(&mut grads))?;
    }
    Ok((loss, grads.flat()))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    /// `max_k |g_k − ĝ_k| / max(|g_k|, |ĝ_k|, 1e−7)` over checked parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose ±step perturbation flipped a ReLU; central
    /// differences are meaningless across the kink, so these are skipped.
    pub skipped_kinks: usize,
}

/// Loss and gradient of a network.
pub type LossFn<'a> = dyn Fn(&SmallCnn) -> Result<(f64, Vec<f64>)> + 'a;
/// Activation pattern a loss depends on.
pub type PatternFn<'a> = dyn Fn(&SmallCnn) -> Result<Vec<bool>> + 'a;

/// Central differences against an analytic gradient. `pattern` reports the
/// activation state the loss depends on; pass `None` for smooth losses.
pub fn finite_difference_gradcheck(
    net: &SmallCnn,
    loss: &LossFn<'_>,
    pattern: Option<&PatternFn<'_>>,
    step: f64,
) -> Result<GradcheckReport> {
    let (_, analytic) = loss(net)?;
    let base = net.params();
    Error::check_len("analytic gradient", base.len(), analytic.len())?;
    let base_pattern = pattern.map(|f| f(net)).transpose()?;
    let mut probe = net.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut params = base.clone();
    for k in 0..base.len() {
        let mut values = [0.0; 2];
        let mut crossed = false;
        for (slot, delta) in [step, -step].into_iter().enumerate() {
            params[k] = base[k] + delta;
            probe.set_params(&params)?;
            values[slot] = loss(&probe)?.0;
            if let (Some(f), Some(b)) = (pattern, &base_pattern) {
                crossed |= f(&probe)? != *b;
            }
        }
        params[k] = base[k];
        if crossed {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (values[0] - values[1]) / (2.0 * step);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-7);
        report.max_rel_error = report.max_rel_error.max((analytic[k] - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}

/// Gradcheck of a four-layer network with 4 hidden channels (446
/// parameters) on a small random image.
pub fn gradcheck_fixture(kind: LossKind, seed: u64) -> Result<GradcheckReport> {
    let (beams, subcarriers) = (4, 5);
    let net = SmallCnn::init(CnnArch::with_hidden(4, 4), &mut substream(seed, Stream::Init, 0))?;
    let mut rng = substream(seed, Stream::Oracle, 0);
    let mut image = |s: f64| {
        let data = (0..2 * beams * subcarriers).map(|_| s * rng.random_range(-1.0..1.0)).collect();
        ChannelImage::from_data(beams, subcarriers, data)
    };
    let pair = TrainingPair {
        input: image(1.0)?,
        noise_var: 0.2,
        truth: Some(image(0.5)?),
    };
    let probe = draw_probe(pair.input.len(), &mut substream(seed, Stream::Probe, 0));
    let loss = |n: &SmallCnn| -> Result<(f64, Vec<f64>)> {
        let mut g = CnnGradients::zeros(n.arch());
        let value = pair_loss(n, &pair, kind, &probe, 1.0, Some(&mut g))?;
        Ok((value, g.flat()))
    };
    let eps = probe_step(&pair.input);
    let shifted: Vec<f64> = pair.input.data().iter().zip(&probe).map(|(x, b)| x + eps * b).collect();
    let pattern = |n: &SmallCnn| -> Result<Vec<bool>> {
        let mut units = n.forward_trace(pair.input.data(), beams, subcarriers)?.active_units();
        if kind == LossKind::Sure {
            units.extend(n.forward_trace(&shifted, beams, subcarriers)?.active_units());
        }
        Ok(units)
    };
    finite_difference_gradcheck(&net, &loss, Some(&pattern), 1e-4)
}

/// MSE of the denoised pairs (supervised check).
pub fn denoised_mse(net: &SmallCnn, pairs: &[TrainingPair]) -> Result<f64> {
    use crate::denoiser::Denoiser;
    let mut total = 0.0;
    for pair in pairs {
        let out = net.denoise(&pair.input, pair.noise_var)?;
        let truth = pair.truth.as_ref().ok_or_else(|| Error::input("missing truth"))?;
        total += mse_loss(&out, truth, out.len() as f64)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_single_layer_is_exact() {
        let arch = CnnArch {
            channels: vec![2, 2],
            kernel: 3,
        };
        let mut net = SmallCnn::init(arch.clone(), &mut substream(1, Stream::Init, 0)).unwrap();
        let mut params = net.params();
        params.iter_mut().enumerate().for_each(|(k, p)| *p += 0.01 * k as f64);
        net.set_params(&params).unwrap();
        let mut rng = substream(1, Stream::Oracle, 0);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pair = TrainingPair {
            input: ChannelImage::from_data(3, 4, data.clone()).unwrap(),
            noise_var: 0.1,
            truth: Some(ChannelImage::from_data(3, 4, data.iter().map(|x| 0.5 * x).collect()).unwrap()),
        };
        for kind in [LossKind::Mse, LossKind::Sure] {
            let probe = draw_probe(24, &mut substream(2, Stream::Probe, 0));
            let loss = |n: &SmallCnn| {
                let mut g = CnnGradients::zeros(n.arch());
                let v = pair_loss(n, &pair, kind, &probe, 1.0, Some(&mut g))?;
                Ok((v, g.flat()))
            };
            let rep = finite_difference_gradcheck(&net, &loss, None, 1e-4).unwrap();
            assert!(rep.max_rel_error < 1e-8, "{kind}: {rep:?}");
        }
    }

    #[test]
    fn zero_weights_have_finite_gradients() {
        let net = SmallCnn::zeros(CnnArch::default()).unwrap();
        let data: Vec<f64> = (0..2 * 3 * 3).map(|k| (k as f64 - 8.0) / 9.0).collect();
        let pair = TrainingPair {
            input: ChannelImage::from_data(3, 3, data).unwrap(),
            noise_var: 0.3,
            truth: Some(ChannelImage::zeros(3, 3)),
        };
        for kind in [LossKind::Mse, LossKind::Sure] {
            let (loss, grad) = batch_loss_and_grad(&net, std::slice::from_ref(&pair), kind, &mut substream(0, Stream::Probe, 0)).unwrap();
            assert!(loss.is_finite());
            assert!(grad.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn full_cnn_gradcheck() {
        for kind in [LossKind::Mse, LossKind::Sure] {
            let rep = gradcheck_fixture(kind, 5).unwrap();
            assert!(rep.max_rel_error < 1e-5, "{kind}: {rep:?}");
            assert!(rep.checked + rep.skipped_kinks == 446);
            assert!(rep.skipped_kinks <= 4, "{kind}: {rep:?}");
        }
    }
}
