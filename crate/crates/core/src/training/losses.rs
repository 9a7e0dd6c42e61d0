//! Adversarial (hinge + R1), reconstruction and style objectives.

use serde::{Deserialize, Serialize};
use tch::{Kind, Reduction, Tensor};

use crate::error::{HisdError, Result};
use crate::hierarchy::IterationSample;
use crate::net::NetworkBundle;
use crate::training::paths::PathOutputs;

/// Networks see pixels as `2x − 1`. Pixel-space losses and the R1
/// gradient are measured on that scale, so the loss weights keep the
/// balance they have for images stored in [−1,1].
pub const PIXEL_SCALE: f64 = 2.0;

/// Fake images that receive an adversarial term. The self-translation
/// reconstruction x″ is deliberately not representable here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FakeTerm {
    /// x_{i,j̃}, judged by head (i, j̃).
    Translated,
    /// x‴, judged by head (i, j).
    CycleRecon,
}

pub fn fake_terms(cycle_adversarial: bool) -> Vec<FakeTerm> {
    if cycle_adversarial {
        vec![FakeTerm::Translated, FakeTerm::CycleRecon]
    } else {
        vec![FakeTerm::Translated]
    }
}

impl FakeTerm {
    fn select<'a>(self, out: &'a PathOutputs, sample: &IterationSample) -> (&'a Tensor, usize) {
        match self {
            FakeTerm::Translated => (&out.translated, sample.target),
            FakeTerm::CycleRecon => (&out.recon_cycle, sample.source),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_adv: f64,
    pub d_r1: f64,
    pub g_adv: f64,
    pub rec: f64,
    pub sty: f64,
    pub g_total: f64,
    pub d_total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.d_adv, self.d_r1, self.g_adv, self.rec, self.sty, self.g_total, self.d_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `2·E[max(0, 1 − real)] + Σ_fakes E[max(0, 1 + fake)]`.
pub fn hinge_d(real: &Tensor, fakes: &[Tensor]) -> Tensor {
    let mut loss = (real.neg() + 1.0).relu().mean(Kind::Float) * 2.0;
    for f in fakes {
        loss = loss + (f + 1.0).relu().mean(Kind::Float);
    }
    loss
}

/// `−Σ_fakes E[fake]`.
pub fn hinge_g(fakes: &[Tensor]) -> Tensor {
    let mut loss = Tensor::zeros([], (Kind::Float, tch::Device::Cpu));
    for f in fakes {
        loss = loss - f.mean(Kind::Float);
    }
    loss
}

/// `(γ/2)·E_batch ‖∂score/∂x‖²`. `x` must require grad and `scores` must be
/// a per-sample function of it; the result stays differentiable.
pub fn r1_penalty(scores: &Tensor, x: &Tensor, gamma: f64) -> Tensor {
    let grads = Tensor::run_backward(&[scores.sum(Kind::Float)], &[x], true, true);
    let g = &grads[0];
    let per_sample = g.pow_tensor_scalar(2).flatten(1, -1).sum_dim_intlist(1, false, Kind::Float);
    per_sample.mean(Kind::Float) * (gamma / 2.0)
}

/// Mean absolute difference.
pub fn mean_abs(a: &Tensor, b: &Tensor) -> Tensor {
    a.l1_loss(b, Reduction::Mean)
}

/// Sum over the three reconstructions of the per-pixel mean absolute error,
/// on the [−1,1] scale.
pub fn loss_rec(out: &PathOutputs, x: &Tensor) -> Tensor {
    (mean_abs(&out.recon_plain, x) + mean_abs(&out.recon_self, x) + mean_abs(&out.recon_cycle, x)) * PIXEL_SCALE
}

/// Mean absolute difference between re-extracted and generated styles.
pub fn loss_sty(style_back: &Tensor, style_generated: &Tensor) -> Result<Tensor> {
    if style_back.size() != style_generated.size() {
        return Err(HisdError::Shape(format!(
            "style shapes differ: {:?} vs {:?}",
            style_back.size(),
            style_generated.size()
        )));
    }
    Ok(mean_abs(style_back, style_generated))
}

/// Discriminator side with fakes treated as constants; returns
/// `(d_adv, d_r1)`.
pub fn loss_d(bundle: &NetworkBundle, sample: &IterationSample, out: &PathOutputs, gamma: f64) -> Result<(Tensor, Tensor)> {
    let x = sample.x.detach().set_requires_grad(true);
    let real = bundle.discriminate(&x, sample.tag, sample.source, &sample.conditions)?;
    // ∂D/∂(2x − 1) = (∂D/∂x) / 2.
    let r1 = r1_penalty(&real, &x, gamma) / (PIXEL_SCALE * PIXEL_SCALE);
    let fakes = fake_terms(bundle.config.cycle_adversarial())
        .into_iter()
        .map(|term| {
            let (img, attr) = term.select(out, sample);
            bundle.discriminate(&img.detach(), sample.tag, attr, &sample.conditions)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((hinge_d(&real, &fakes), r1))
}

/// Generator-side hinge term.
pub fn loss_g(bundle: &NetworkBundle, sample: &IterationSample, out: &PathOutputs) -> Result<Tensor> {
    let fakes = fake_terms(bundle.config.cycle_adversarial())
        .into_iter()
        .map(|term| {
            let (img, attr) = term.select(out, sample);
            bundle.discriminate(img, sample.tag, attr, &sample.conditions)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hinge_g(&fakes))
}

/// `g_adv + λ_rec·rec + λ_sty·sty`.
pub fn total_g(g_adv: &Tensor, rec: &Tensor, sty: &Tensor, lambda_rec: f64, lambda_sty: f64) -> Tensor {
    g_adv + rec * lambda_rec + sty * lambda_sty
}
