//! Base and control-variate-corrected ELBO gradient estimators, and the
//! variance statistics computed from them.

use rand::Rng;
use rayon::prelude::*;

use crate::control_variates::{QuadSurrogate, TaylorExpansion};
use crate::error::{check_len, Error, Result};
use crate::families::{FamilyParams, NoiseDraw, WGradient};
use crate::models::LogJointModel;

/// One draw of the base estimator together with its control variate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub noise: NoiseDraw,
    pub z: Vec<f64>,
    pub f_value: f64,
    /// `∇f(z)`, kept so the surrogate fit needs no further model calls.
    pub grad_f: Vec<f64>,
    /// Base estimate including the entropy gradient.
    pub g: WGradient,
    /// Control variate; zero when no control variate is in use.
    pub c: WGradient,
}

/// Which control variate accompanies each draw.
#[derive(Clone, Copy, Debug)]
pub enum CvSource<'a> {
    None,
    Quadratic(&'a QuadSurrogate),
    Taylor(&'a TaylorExpansion),
}

/// `g(w, ε) = (∂T/∂w)ᵀ ∇f(T_w(ε)) + ∇H(w)`, with `c = 0`.
pub fn base_grad(model: &dyn LogJointModel, family: &FamilyParams, noise: &NoiseDraw) -> Result<GradSample> {
    let entropy_grad = family.entropy_grad()?;
    base_grad_with_entropy(model, family, noise, &entropy_grad)
}

fn base_grad_with_entropy(
    model: &dyn LogJointModel,
    family: &FamilyParams,
    noise: &NoiseDraw,
    entropy_grad: &WGradient,
) -> Result<GradSample> {
    check_len("model dimension", model.dim(), family.dim())?;
    let z = family.transform(noise)?;
    let (f_value, grad_f) = model.value_and_grad(&z)?;
    let mut g = family.jtvp(noise, &grad_f)?;
    g.axpy(1.0, entropy_grad);
    let c = family.zero_gradient();
    Ok(GradSample { noise: noise.clone(), z, f_value, grad_f, g, c })
}

/// `g + γ c`.
pub fn corrected_grad(sample: &GradSample, gamma: f64) -> WGradient {
    let mut out = sample.g.clone();
    out.axpy(gamma, &sample.c);
    out
}

/// Evaluates the base estimator and control variate at each given noise draw.
/// Per-draw work runs on the rayon pool; results keep the input order.
pub fn evaluate_samples(
    model: &dyn LogJointModel,
    family: &FamilyParams,
    cv: CvSource<'_>,
    noises: Vec<NoiseDraw>,
) -> Result<Vec<GradSample>> {
    let entropy_grad = family.entropy_grad()?;
    noises
        .into_par_iter()
        .map(|noise| {
            let mut s = base_grad_with_entropy(model, family, &noise, &entropy_grad)?;
            s.c = match cv {
                CvSource::None => s.c,
                CvSource::Quadratic(q) => q.cv_value_at(family, &s.noise, &s.z)?,
                CvSource::Taylor(t) => t.cv_at(model, family, &s.noise, &s.z)?,
            };
            Ok(s)
        })
        .collect()
}

/// Draws `m` noise samples from `rng` and returns the mean of `g + γ c` along
/// with the per-sample records. The reduction runs in sample order.
pub fn multi_sample<R: Rng + ?Sized>(
    model: &dyn LogJointModel,
    family: &FamilyParams,
    cv: CvSource<'_>,
    m: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<(WGradient, Vec<GradSample>)> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one sample per step".into()));
    }
    let noises: Vec<NoiseDraw> = (0..m).map(|_| family.sample_noise(rng)).collect();
    let samples = evaluate_samples(model, family, cv, noises)?;
    Ok((mean_corrected(&samples, gamma), samples))
}

pub(crate) fn mean_corrected(samples: &[GradSample], gamma: f64) -> WGradient {
    let mut mean = WGradient::zeros_like(&samples[0].g);
    for s in samples {
        mean.axpy(1.0, &corrected_grad(s, gamma));
    }
    mean.scale(1.0 / samples.len() as f64);
    mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    All,
    Mean,
    Scale,
}

fn block(x: &WGradient, which: Block) -> Box<dyn Iterator<Item = &f64> + '_> {
    match which {
        Block::All => Box::new(x.iter()),
        Block::Mean => Box::new(x.mean_block.iter()),
        Block::Scale => Box::new(x.scale_block.iter()),
    }
}

/// `Ê‖X‖² − ‖ÊX‖²` over the chosen block, computed in two passes.
pub fn empirical_variance(samples: &[WGradient], which: Block) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("variance needs at least 2 samples, got {n}")));
    }
    let len = block(&samples[0], which).count();
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(block(s, which)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut total = 0.0;
    for s in samples {
        total += block(s, which).zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Mean of `f(z_i)` plus the closed-form entropy.
pub fn elbo_estimate(samples: &[GradSample], family: &FamilyParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("ELBO estimate needs at least one sample".into()));
    }
    let mean_f = samples.iter().map(|s| s.f_value).sum::<f64>() / samples.len() as f64;
    Ok(mean_f + family.entropy()?)
}
