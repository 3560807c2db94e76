//! The double-descent training loop, Adam, and the experiment drivers.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{CvKind, RunConfig};
use crate::control_variates::{GammaTracker, QuadSurrogate, TaylorExpansion, VGradient};
use crate::error::{check_len, Error, Result};
use crate::estimators::{
    corrected_grad, elbo_estimate, empirical_variance, evaluate_samples, mean_corrected, Block, CvSource,
    GradSample,
};
use crate::families::{FamilyKind, FamilyParams, NoiseDraw, Scale, WGradient};
use crate::linalg::LowRankFactor;
use crate::models::LogJointModel;
use crate::trace::{RunTrace, SweepRow, TraceRow};

/// RNG stream for the optimization path.
pub const TRAIN_STREAM: u64 = 0;
/// RNG stream for variance and ELBO probes.
pub const PROBE_STREAM: u64 = 1;
/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 2;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, alpha: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, alpha, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected Adam update; `ascend` adds the step, otherwise it is subtracted.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascend: bool) -> Result<()> {
        check_len("adam parameters", params.len(), self.m.len())?;
        check_len("adam gradient", grad.len(), self.m.len())?;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let sign = if ascend { 1.0 } else { -1.0 };
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] += sign * self.alpha * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, params: &[f64], grad: &[f64], ascend: bool) -> Result<(AdamState, Vec<f64>)> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.step(&mut params, grad, ascend)?;
    Ok((state, params))
}

/// Starting point: zero mean and standard deviation `init_scale` per coordinate.
/// A low-rank factor gets small random entries, since `F = 0` is a stationary
/// point of the ELBO in `F`.
pub fn initial_family<R: Rng + ?Sized>(
    kind: FamilyKind,
    d: usize,
    r_w: usize,
    init_scale: f64,
    rng: &mut R,
) -> Result<FamilyParams> {
    let fam = FamilyParams::isotropic(kind, vec![0.0; d], init_scale, r_w)?;
    if kind != FamilyKind::MeanDiagLowRank || r_w == 0 {
        return Ok(fam);
    }
    let normal = Normal::new(0.0, 0.1 * init_scale).expect("positive scale");
    let factor = LowRankFactor::new(d, r_w, (0..d * r_w).map(|_| normal.sample(rng)).collect())?;
    let Scale::DiagLowRank { psi, .. } = fam.scale_params() else { unreachable!() };
    FamilyParams::diag_low_rank(vec![0.0; d], psi.clone(), factor)
}

/// Surrogate-fit gradient averaged over samples, reusing their stored model
/// evaluations.
pub fn surrogate_fit_gradient(
    surrogate: &QuadSurrogate,
    family: &FamilyParams,
    method: CvKind,
    samples: &[GradSample],
) -> Result<VGradient> {
    let parts: Vec<VGradient> = samples
        .par_iter()
        .map(|s| match method {
            CvKind::QuadraticM1 => surrogate.fit_grad_method1_at(family, &s.noise, &s.z, &s.g, &s.c),
            CvKind::QuadraticM2 => surrogate.fit_grad_method2_at(&s.z, &s.grad_f),
            _ => Err(Error::InvalidArgument(format!("{} has no surrogate to fit", method.name()))),
        })
        .collect::<Result<_>>()?;
    let mut h = VGradient::zeros(surrogate.dim(), surrogate.rank());
    for p in &parts {
        h.axpy(1.0, p);
    }
    let inv = 1.0 / parts.len() as f64;
    let mut out = VGradient::zeros(surrogate.dim(), surrogate.rank());
    out.axpy(inv, &h);
    Ok(out)
}

/// Fits `v` at fixed `w` with `iters` single-sample dual steps. `z₀` is set to
/// the family mean.
pub fn fit_surrogate<R: Rng + ?Sized>(
    model: &dyn LogJointModel,
    family: &FamilyParams,
    surrogate: &mut QuadSurrogate,
    method: CvKind,
    iters: usize,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<()> {
    surrogate.z0 = family.mean().to_vec();
    let mut v = surrogate.to_flat();
    for _ in 0..iters {
        let noise = family.sample_noise(rng);
        let samples = evaluate_samples(model, family, CvSource::Quadratic(surrogate), vec![noise])?;
        let h = surrogate_fit_gradient(surrogate, family, method, &samples)?;
        let flat = h.to_flat();
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("surrogate fitting gradient".into()));
        }
        adam.step(&mut v, &flat, false)?;
        surrogate.set_flat(&v)?;
    }
    Ok(())
}

/// Per-block variance of `g + γ c` with the (deterministic) entropy gradient
/// removed, plus the ELBO estimate from the same draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeStats {
    pub elbo: f64,
    pub var_total: f64,
    pub var_mean_block: f64,
    pub var_scale_block: f64,
}

pub fn probe_stats(samples: &[GradSample], family: &FamilyParams, gamma: f64) -> Result<ProbeStats> {
    let entropy_grad = family.entropy_grad()?;
    let xs: Vec<WGradient> = samples
        .iter()
        .map(|s| {
            let mut x = corrected_grad(s, gamma);
            x.axpy(-1.0, &entropy_grad);
            x
        })
        .collect();
    Ok(ProbeStats {
        elbo: elbo_estimate(samples, family)?,
        var_total: empirical_variance(&xs, Block::All)?,
        var_mean_block: empirical_variance(&xs, Block::Mean)?,
        var_scale_block: empirical_variance(&xs, Block::Scale)?,
    })
}

/// What one call of [`RunState::train_step`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub gamma_used: f64,
    pub mean_grad: WGradient,
}

/// Training state: variational parameters `w`, surrogate `v`, the weight
/// tracker and both optimizers.
pub struct RunState<'a> {
    model: &'a dyn LogJointModel,
    pub family: FamilyParams,
    pub surrogate: Option<QuadSurrogate>,
    pub tracker: GammaTracker,
    pub adam_w: AdamState,
    pub adam_v: Option<AdamState>,
    pub cv: CvKind,
    pub m: usize,
    /// Overrides the tracked weight in the primary step when set.
    pub pinned_gamma: Option<f64>,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

impl<'a> RunState<'a> {
    pub fn new(model: &'a dyn LogJointModel, cfg: &RunConfig) -> Result<Self> {
        let mut init_rng = rng_for(cfg.seed, INIT_STREAM);
        let family = initial_family(cfg.family, model.dim(), cfg.r_w, cfg.init_scale, &mut init_rng)?;
        Self::with_family(model, family, cfg, &mut init_rng)
    }

    /// Starts from the given `w`; `init_rng` draws the surrogate factor.
    pub fn with_family(
        model: &'a dyn LogJointModel,
        family: FamilyParams,
        cfg: &RunConfig,
        init_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        check_len("model dimension", model.dim(), family.dim())?;
        if cfg.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let (surrogate, adam_v) = if cfg.cv.is_quadratic() {
            let s = QuadSurrogate::initial(family.mean().to_vec(), cfg.r_v, init_rng);
            let n = s.num_params();
            (Some(s), Some(AdamState::new(n, cfg.alpha_v)))
        } else {
            (None, None)
        };
        Ok(Self {
            model,
            adam_w: AdamState::new(family.num_params(), cfg.alpha_w),
            family,
            surrogate,
            tracker: GammaTracker::new(cfg.gamma_decay)?,
            adam_v,
            cv: cfg.cv,
            m: cfg.m,
            pinned_gamma: None,
            iteration: 0,
            rng: rng_for(cfg.seed, TRAIN_STREAM),
        })
    }

    pub fn model(&self) -> &'a dyn LogJointModel {
        self.model
    }

    pub fn gamma(&self) -> f64 {
        match self.cv {
            CvKind::None => 0.0,
            _ => self.pinned_gamma.unwrap_or_else(|| self.tracker.gamma()),
        }
    }

    /// One iteration: sample, primary ascent on `w` with `g + γc`, update the
    /// weight statistics, then descend on `v` using the same model evaluations.
    /// `z₀` is set to the current mean before any sample is drawn.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        if let Some(s) = self.surrogate.as_mut() {
            s.z0.copy_from_slice(self.family.mean());
        }
        let taylor = match self.cv {
            CvKind::Taylor => Some(TaylorExpansion::new(self.model, &self.family)?),
            _ => None,
        };
        let source = match (&self.surrogate, &taylor) {
            (Some(s), _) => CvSource::Quadratic(s),
            (None, Some(t)) => CvSource::Taylor(t),
            _ => CvSource::None,
        };
        let noises: Vec<NoiseDraw> = (0..self.m).map(|_| self.family.sample_noise(&mut self.rng)).collect();
        let samples = evaluate_samples(self.model, &self.family, source, noises)?;

        let gamma = self.gamma();
        let mean_grad = mean_corrected(&samples, gamma);
        if !mean_grad.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient estimate at iteration {} (gamma {gamma}, mean parameters {:?})",
                self.iteration,
                self.family.mean()
            )));
        }
        let family_k = self.family.clone();
        let mut w = self.family.to_flat();
        self.adam_w.step(&mut w, &mean_grad.to_flat(), true)?;
        self.family.set_flat(&w)?;

        if self.cv != CvKind::None {
            for s in &samples {
                self.tracker.update(&s.c, &s.g);
            }
        }

        if let (Some(surrogate), Some(adam_v)) = (self.surrogate.as_mut(), self.adam_v.as_mut()) {
            let h = surrogate_fit_gradient(surrogate, &family_k, self.cv, &samples)?;
            let flat = h.to_flat();
            if flat.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("surrogate gradient at iteration {}", self.iteration)));
            }
            let mut v = surrogate.to_flat();
            adam_v.step(&mut v, &flat, false)?;
            surrogate.set_flat(&v)?;
        }
        self.iteration += 1;
        Ok(StepRecord { gamma_used: gamma, mean_grad })
    }

    /// ELBO and gradient-variance measurement at the current `w` with fresh
    /// draws from `rng`. Does not touch the training state.
    pub fn probe<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<ProbeStats> {
        let noises: Vec<NoiseDraw> = (0..samples).map(|_| self.family.sample_noise(rng)).collect();
        let taylor = match self.cv {
            CvKind::Taylor => Some(TaylorExpansion::new(self.model, &self.family)?),
            _ => None,
        };
        let surrogate = self.surrogate.as_ref().map(|s| {
            let mut s = s.clone();
            s.z0.copy_from_slice(self.family.mean());
            s
        });
        let source = match (&surrogate, &taylor) {
            (Some(s), _) => CvSource::Quadratic(s),
            (None, Some(t)) => CvSource::Taylor(t),
            _ => CvSource::None,
        };
        let evaluated = evaluate_samples(self.model, &self.family, source, noises)?;
        probe_stats(&evaluated, &self.family, self.gamma())
    }
}

fn trace_row(iteration: usize, elapsed: Duration, timing: bool, stats: ProbeStats, gamma: f64) -> TraceRow {
    TraceRow {
        iteration,
        elapsed_ms: if timing { elapsed.as_millis() as u64 } else { 0 },
        elbo_estimate: stats.elbo,
        var_total: stats.var_total,
        var_mean_block: stats.var_mean_block,
        var_scale_block: stats.var_scale_block,
        gamma,
    }
}

/// Runs the training loop for `cfg.iterations` steps on `model`, probing at
/// iteration 0, every `probe_interval` steps and at the end. `elapsed_ms`
/// counts training time only.
pub fn run_model(model: &dyn LogJointModel, cfg: &RunConfig) -> Result<RunTrace> {
    let mut state = RunState::new(model, cfg)?;
    run_state(&mut state, cfg)
}

/// Continues `state` for `cfg.iterations` steps, emitting a trace.
pub fn run_state(state: &mut RunState<'_>, cfg: &RunConfig) -> Result<RunTrace> {
    let mut trace = RunTrace::default();
    if cfg.iterations == 0 {
        return Ok(trace);
    }
    let mut probe_rng = rng_for(cfg.seed, PROBE_STREAM);
    let mut elapsed = Duration::ZERO;
    for k in 0..=cfg.iterations {
        if k % cfg.probe_interval == 0 || k == cfg.iterations {
            let stats = state.probe(cfg.probe_samples, &mut probe_rng)?;
            trace.push(trace_row(k, elapsed, cfg.timing, stats, state.gamma()))?;
        }
        if k < cfg.iterations {
            let start = Instant::now();
            state.train_step()?;
            elapsed += start.elapsed();
        }
    }
    Ok(trace)
}

/// Builds the configured model and runs it.
pub fn run(cfg: &RunConfig) -> Result<RunTrace> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    run_model(model.as_ref(), cfg)
}

/// One trace per step size in `cfg.step_sizes`, runs executed in parallel.
pub fn stepsize_sweep(model: &dyn LogJointModel, cfg: &RunConfig) -> Result<Vec<(f64, RunTrace)>> {
    cfg.step_sizes
        .par_iter()
        .map(|&alpha| {
            let mut c = cfg.clone();
            c.alpha_w = alpha;
            Ok((alpha, run_model(model, &c)?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub family: FamilyKind,
    pub r_w: usize,
    pub r_v: usize,
    pub sigmas: Vec<f64>,
    pub estimators: Vec<CvKind>,
    pub fit_iters: usize,
    pub alpha_v: f64,
    pub probe_samples: usize,
    pub seed: u64,
}

impl SweepSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            family: cfg.family,
            r_w: cfg.r_w,
            r_v: cfg.r_v,
            sigmas: cfg.sigmas.clone(),
            estimators: vec![CvKind::None, CvKind::Taylor, CvKind::QuadraticM1, CvKind::QuadraticM2],
            fit_iters: cfg.fit_iters,
            alpha_v: cfg.alpha_v,
            probe_samples: cfg.probe_samples,
            seed: cfg.seed,
        }
    }
}

/// Variance of each estimator at `μ = 0`, `Σ = σ² I` with the weight fixed at
/// 1. Quadratic control variates are first fitted for `fit_iters` steps.
/// Every estimator at a given σ is probed with the same noise draws.
pub fn sigma_sweep(model: &dyn LogJointModel, settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, f64, CvKind)> = settings
        .sigmas
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| settings.estimators.iter().map(move |&cv| (i, s, cv)))
        .collect();
    jobs.par_iter()
        .map(|&(i, sigma, cv)| {
            let family = FamilyParams::isotropic(settings.family, vec![0.0; model.dim()], sigma, settings.r_w)?;
            let gamma = if cv == CvKind::None { 0.0 } else { 1.0 };
            let mut surrogate = None;
            if cv.is_quadratic() {
                let mut init = rng_for(settings.seed, INIT_STREAM);
                let mut s = QuadSurrogate::initial(family.mean().to_vec(), settings.r_v, &mut init);
                let mut adam = AdamState::new(s.num_params(), settings.alpha_v);
                let mut fit_rng = rng_for(settings.seed.wrapping_add(i as u64), TRAIN_STREAM);
                fit_surrogate(model, &family, &mut s, cv, settings.fit_iters, &mut adam, &mut fit_rng)?;
                surrogate = Some(s);
            }
            let taylor = match cv {
                CvKind::Taylor => Some(TaylorExpansion::new(model, &family)?),
                _ => None,
            };
            let source = match (&surrogate, &taylor) {
                (Some(s), _) => CvSource::Quadratic(s),
                (None, Some(t)) => CvSource::Taylor(t),
                _ => CvSource::None,
            };
            let mut probe_rng = rng_for(settings.seed.wrapping_add(i as u64), PROBE_STREAM);
            let noises = (0..settings.probe_samples).map(|_| family.sample_noise(&mut probe_rng)).collect();
            let samples = evaluate_samples(model, &family, source, noises)?;
            let stats = probe_stats(&samples, &family, gamma)?;
            Ok(SweepRow {
                sigma,
                estimator: cv.name().to_string(),
                var_total: stats.var_total,
                var_mean_block: stats.var_mean_block,
                var_scale_block: stats.var_scale_block,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;
    use crate::models::GaussianModel;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let (_, p) = adam_step(&AdamState::new(2, 0.1), &[1.0, 2.0], &[0.0, 0.0], true).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_alpha() {
        let (_, up) = adam_step(&AdamState::new(2, 0.01), &[0.0, 0.0], &[3.0, -0.5], true).unwrap();
        let (_, down) = adam_step(&AdamState::new(2, 0.01), &[0.0, 0.0], &[3.0, -0.5], false).unwrap();
        assert!((up[0] - 0.01).abs() < 1e-9 && (up[1] + 0.01).abs() < 1e-9);
        assert!((down[0] + 0.01).abs() < 1e-9 && (down[1] - 0.01).abs() < 1e-9);
        assert!(adam_step(&AdamState::new(2, 0.01), &[0.0], &[1.0], true).is_err());
    }

    #[test]
    fn zero_iterations_gives_header_only_trace() {
        let model = GaussianModel::standard(2);
        let mut cfg = RunConfig::new(ModelKind::Gaussian, FamilyKind::MeanLogScale);
        cfg.iterations = 0;
        assert!(run_model(&model, &cfg).unwrap().rows.is_empty());
    }

    #[test]
    fn cv_none_leaves_gamma_alone() {
        let model = GaussianModel::standard(3);
        let mut cfg = RunConfig::new(ModelKind::Gaussian, FamilyKind::MeanLogScale);
        cfg.cv = CvKind::None;
        let mut st = RunState::new(&model, &cfg).unwrap();
        for _ in 0..5 {
            st.train_step().unwrap();
        }
        assert_eq!(st.tracker.updates(), 0);
        assert!(st.surrogate.is_none());
        assert_eq!(st.gamma(), 0.0);
    }

    #[test]
    fn probe_rows_on_schedule() {
        let model = GaussianModel::standard(2);
        let mut cfg = RunConfig::new(ModelKind::Gaussian, FamilyKind::MeanLogScale);
        cfg.iterations = 7;
        cfg.probe_interval = 3;
        cfg.probe_samples = 10;
        let its: Vec<usize> = run_model(&model, &cfg).unwrap().rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![0, 3, 6, 7]);
    }

    #[test]
    fn low_rank_start_is_not_zero() {
        let mut rng = rng_for(0, INIT_STREAM);
        let fam = initial_family(FamilyKind::MeanDiagLowRank, 4, 2, 0.1, &mut rng).unwrap();
        let Scale::DiagLowRank { factor, .. } = fam.scale_params() else { panic!() };
        assert!(factor.as_slice().iter().all(|&x| x != 0.0));
    }
}
