//! Quadratic-surrogate control variates, their fitting gradients, the
//! Taylor-expansion baselines and the running optimal-weight estimate.
//!
//! The surrogate is `f̂(z) = bᵀ(z − z₀) + ½ (z − z₀)ᵀ B (z − z₀)` with
//! `B = D_B + U Uᵀ`. For any Gaussian family with mean `μ` and covariance `Σ`,
//!
//! ```text
//! E_q f̂ = bᵀ(μ − z₀) + ½ tr(B Σ) + ½ (μ − z₀)ᵀ B (μ − z₀)
//! ```
//!
//! and the control variate is `c = ∇_w E_q f̂ − (∂T/∂w)ᵀ ∇f̂(T_w(ε))`, which has
//! zero mean for every `v = (b, D_B, U)`. `z₀` is held constant under `∇_w`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::families::{packed_index, FamilyParams, NoiseDraw, Scale, WGradient};
use crate::linalg::{dot, trace_product, DiagMat, DiagPlusLowRank, LowRankFactor, StructuredMatrix};
use crate::models::LogJointModel;

/// Standard deviation of the initial surrogate factor entries (variance 1e-4).
pub const FACTOR_INIT_STD: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadSurrogate {
    pub b: Vec<f64>,
    pub curvature: DiagPlusLowRank,
    pub z0: Vec<f64>,
}

/// Gradient with respect to the surrogate parameters `v = (b, D_B, U)`; the
/// factor block is column-major like [`LowRankFactor`].
#[derive(Clone, Debug, PartialEq)]
pub struct VGradient {
    pub b: Vec<f64>,
    pub diag: Vec<f64>,
    pub factor: Vec<f64>,
}

impl VGradient {
    pub fn zeros(d: usize, rank: usize) -> Self {
        Self { b: vec![0.0; d], diag: vec![0.0; d], factor: vec![0.0; d * rank] }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.b.iter().chain(&self.diag).chain(&self.factor).copied().collect()
    }

    pub fn axpy(&mut self, alpha: f64, other: &VGradient) {
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += alpha * b;
        }
        for (a, b) in self.diag.iter_mut().zip(&other.diag) {
            *a += alpha * b;
        }
        for (a, b) in self.factor.iter_mut().zip(&other.factor) {
            *a += alpha * b;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.b.iter().chain(&self.diag).chain(&self.factor).map(|x| x * x).sum()
    }
}

impl QuadSurrogate {
    pub fn new(b: Vec<f64>, curvature: DiagPlusLowRank, z0: Vec<f64>) -> Result<Self> {
        check_len("surrogate b", b.len(), curvature.dim())?;
        check_len("surrogate z0", z0.len(), curvature.dim())?;
        Ok(Self { b, curvature, z0 })
    }

    pub fn zeros(d: usize, rank: usize) -> Self {
        Self { b: vec![0.0; d], curvature: DiagPlusLowRank::zeros(d, rank), z0: vec![0.0; d] }
    }

    /// `b = 0`, `D_B = 0`, factor entries `~ N(0, 1e-4)`, `z₀ = z0`.
    pub fn initial<R: Rng + ?Sized>(z0: Vec<f64>, rank: usize, rng: &mut R) -> Self {
        let d = z0.len();
        let normal = Normal::new(0.0, FACTOR_INIT_STD).expect("valid std");
        let factor = LowRankFactor::new(d, rank, (0..d * rank).map(|_| normal.sample(rng)).collect())
            .expect("finite");
        Self {
            b: vec![0.0; d],
            curvature: DiagPlusLowRank::new(DiagMat::zeros(d), factor).expect("dims agree"),
            z0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn rank(&self) -> usize {
        self.curvature.rank()
    }

    pub fn num_params(&self) -> usize {
        self.dim() * (2 + self.rank())
    }

    /// `v` flattened as `b`, then `D_B`, then the factor columns.
    pub fn to_flat(&self) -> Vec<f64> {
        self.b
            .iter()
            .chain(self.curvature.diag().entries())
            .chain(self.curvature.factor().as_slice())
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("surrogate parameter vector", flat.len(), self.num_params())?;
        let d = self.dim();
        self.b.copy_from_slice(&flat[..d]);
        self.curvature.diag_mut().entries_mut().copy_from_slice(&flat[d..2 * d]);
        self.curvature.factor_mut().as_mut_slice().copy_from_slice(&flat[2 * d..]);
        Ok(())
    }

    fn offset(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("surrogate input", z.len(), self.dim())?;
        Ok(z.iter().zip(&self.z0).map(|(a, b)| a - b).collect())
    }

    /// `f̂(z)`.
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        let delta = self.offset(z)?;
        let bd = self.curvature.matvec(&delta)?;
        Ok(dot(&self.b, &delta) + 0.5 * dot(&delta, &bd))
    }

    /// `∇f̂(z) = b + B (z − z₀)`.
    pub fn quad_grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        let delta = self.offset(z)?;
        let mut g = self.curvature.matvec(&delta)?;
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        Ok(g)
    }

    fn check_family(&self, family: &FamilyParams) -> Result<()> {
        check_len("family dimension", family.dim(), self.dim())
    }

    /// Closed-form `E_{q_w} f̂`.
    pub fn expected_quadratic(&self, family: &FamilyParams) -> Result<f64> {
        self.check_family(family)?;
        let (mu, sigma) = family.mean_cov();
        let m = self.offset(&mu)?;
        let bm = self.curvature.matvec(&m)?;
        let b = StructuredMatrix::DiagLowRank(self.curvature.clone());
        Ok(dot(&self.b, &m) + 0.5 * trace_product(&b, &sigma)? + 0.5 * dot(&m, &bm))
    }

    /// `∇_w E_{q_w} f̂` with `z₀` fixed.
    pub fn grad_expected_quadratic(&self, family: &FamilyParams) -> Result<WGradient> {
        self.check_family(family)?;
        let d = self.dim();
        let m = self.offset(family.mean())?;
        let mut mean_block = self.curvature.matvec(&m)?;
        for (x, b) in mean_block.iter_mut().zip(&self.b) {
            *x += b;
        }
        let mut scale_block = vec![0.0; family.scale_len()];
        match family.scale_params() {
            Scale::LogScale { psi } => {
                let bd = self.curvature.diag_of();
                for i in 0..d {
                    scale_block[i] = bd[i] * (2.0 * psi[i]).exp();
                }
            }
            Scale::DiagLowRank { psi, factor } => {
                let bd = self.curvature.diag_of();
                for i in 0..d {
                    scale_block[i] = bd[i] * (2.0 * psi[i]).exp();
                }
                for (a, col) in factor.columns().enumerate() {
                    let bf = self.curvature.matvec(col)?;
                    scale_block[d + a * d..d + (a + 1) * d].copy_from_slice(&bf);
                }
            }
            Scale::Cholesky { .. } => {
                let l = family.cholesky_factor().expect("cholesky family");
                let u = self.curvature.factor();
                let dvals = self.curvature.diag().entries();
                // rows of Uᵀ L, one per factor column
                let utl: Vec<Vec<f64>> = u.columns().map(|col| l.left_mul_column(col)).collect();
                for i in 0..d {
                    for j in 0..=i {
                        let mut bl = dvals[i] * l.get(i, j);
                        for (a, t) in utl.iter().enumerate() {
                            bl += u.get(i, a) * t[j];
                        }
                        let k = packed_index(i, j);
                        scale_block[k] = if i == j { bl * l.get(i, i) } else { bl };
                    }
                }
            }
        }
        Ok(WGradient { mean_block, scale_block })
    }

    /// `c_v(w, ε)`.
    pub fn cv_value(&self, family: &FamilyParams, noise: &NoiseDraw) -> Result<WGradient> {
        let z = family.transform(noise)?;
        self.cv_value_at(family, noise, &z)
    }

    /// [`Self::cv_value`] with `z = T_w(ε)` already computed.
    pub fn cv_value_at(&self, family: &FamilyParams, noise: &NoiseDraw, z: &[f64]) -> Result<WGradient> {
        let mut c = self.grad_expected_quadratic(family)?;
        let stochastic = family.jtvp(noise, &self.quad_grad(z)?)?;
        c.axpy(-1.0, &stochastic);
        Ok(c)
    }

    /// `½ ∇_v ‖∇f(z) − ∇f̂(z)‖²` at `z = T_w(ε)`.
    pub fn fit_grad_method2(
        &self,
        family: &FamilyParams,
        noise: &NoiseDraw,
        grad_f_at_z: &[f64],
    ) -> Result<VGradient> {
        let z = family.transform(noise)?;
        self.fit_grad_method2_at(&z, grad_f_at_z)
    }

    pub fn fit_grad_method2_at(&self, z: &[f64], grad_f_at_z: &[f64]) -> Result<VGradient> {
        check_len("model gradient", grad_f_at_z.len(), self.dim())?;
        let delta = self.offset(z)?;
        let fhat = self.quad_grad(z)?;
        let r: Vec<f64> = grad_f_at_z.iter().zip(&fhat).map(|(a, b)| a - b).collect();
        let u = self.curvature.factor();
        let utd = u.transpose_mul(&delta);
        let utr = u.transpose_mul(&r);
        let d = self.dim();
        let mut factor = vec![0.0; d * self.rank()];
        for a in 0..self.rank() {
            let out = &mut factor[a * d..(a + 1) * d];
            for i in 0..d {
                out[i] = -(r[i] * utd[a] + delta[i] * utr[a]);
            }
        }
        Ok(VGradient {
            b: r.iter().map(|x| -x).collect(),
            diag: r.iter().zip(&delta).map(|(a, b)| -a * b).collect(),
            factor,
        })
    }

    /// `∇_v ‖g + c_v‖²` for the base estimate `g` at the same noise.
    pub fn fit_grad_method1(&self, family: &FamilyParams, noise: &NoiseDraw, g: &WGradient) -> Result<VGradient> {
        let z = family.transform(noise)?;
        let c = self.cv_value_at(family, noise, &z)?;
        self.fit_grad_method1_at(family, noise, &z, g, &c)
    }

    /// [`Self::fit_grad_method1`] reusing `z` and `c = c_v(w, ε)`.
    pub fn fit_grad_method1_at(
        &self,
        family: &FamilyParams,
        noise: &NoiseDraw,
        z: &[f64],
        g: &WGradient,
        c: &WGradient,
    ) -> Result<VGradient> {
        self.check_family(family)?;
        check_len("base estimate", g.len(), family.num_params())?;
        let d = self.dim();
        // e = g + c; h = 2 ∇_v ⟨e, c_v⟩ with e held fixed, c_v linear in (b, B)
        let mut e = g.clone();
        e.axpy(1.0, c);
        let mu = family.mean();
        let s: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
        let delta = self.offset(z)?;

        let mut sens = CurvatureSensitivity::new(d);
        let mut beta = vec![0.0; d];

        // mean block: c_μ = −B (z − μ)
        sens.add_pair(-1.0, e.mean_block.clone(), s, 1);

        let push_noise_term = |k: Vec<f64>, sens: &mut CurvatureSensitivity, beta: &mut [f64]| {
            for (bi, ki) in beta.iter_mut().zip(&k) {
                *bi -= ki;
            }
            sens.add_pair(-1.0, k, delta.clone(), 1);
        };

        match family.scale_params() {
            Scale::LogScale { psi } => {
                let a: Vec<f64> =
                    (0..d).map(|i| e.scale_block[i] * psi[i].exp() * noise.eps_d[i]).collect();
                for i in 0..d {
                    sens.diag[i] += e.scale_block[i] * (2.0 * psi[i]).exp();
                }
                push_noise_term(a, &mut sens, &mut beta);
            }
            Scale::DiagLowRank { psi, factor } => {
                let a: Vec<f64> =
                    (0..d).map(|i| e.scale_block[i] * psi[i].exp() * noise.eps_d[i]).collect();
                for i in 0..d {
                    sens.diag[i] += e.scale_block[i] * (2.0 * psi[i]).exp();
                }
                push_noise_term(a, &mut sens, &mut beta);
                let rw = factor.rank();
                let e_f = e.scale_block[d..].to_vec();
                // ⟨E_F, B F⟩ and −(E_F ε_r)ᵀ ∇f̂
                let mut k = vec![0.0; d];
                for a in 0..rw {
                    for i in 0..d {
                        k[i] += e_f[a * d + i] * noise.eps_r[a];
                    }
                }
                if rw > 0 {
                    sens.add_pair(1.0, factor.as_slice().to_vec(), e_f, rw);
                }
                push_noise_term(k, &mut sens, &mut beta);
            }
            Scale::Cholesky { .. } => {
                let l = family.cholesky_factor().expect("cholesky family");
                // E: lower-triangular weights with the log-diagonal chain rule folded in
                let mut e_mat = vec![0.0; d * d]; // column-major
                let mut l_cols = vec![0.0; d * d];
                let mut k = vec![0.0; d];
                for i in 0..d {
                    for j in 0..=i {
                        let mut w = e.scale_block[packed_index(i, j)];
                        if i == j {
                            w *= l.get(i, i);
                        }
                        e_mat[j * d + i] = w;
                        l_cols[j * d + i] = l.get(i, j);
                        k[i] += w * noise.eps_d[j];
                    }
                }
                sens.add_pair(1.0, l_cols, e_mat, d);
                push_noise_term(k, &mut sens, &mut beta);
            }
        }
        let mut out = sens.into_gradient(beta, self.curvature.factor());
        out.b.iter_mut().chain(out.diag.iter_mut()).chain(out.factor.iter_mut()).for_each(|x| *x *= 2.0);
        Ok(out)
    }
}

/// Derivative of a scalar `S = βᵀ b + ⟨G, B⟩_F` where `G` is kept as a diagonal
/// plus a sum of `coef · P Qᵀ` terms (`P`, `Q` column-major `d × k`), so that the
/// gradient with respect to `(b, D_B, U)` never needs a dense `d × d` matrix.
struct CurvatureSensitivity {
    d: usize,
    diag: Vec<f64>,
    pairs: Vec<(f64, Vec<f64>, Vec<f64>, usize)>,
}

impl CurvatureSensitivity {
    fn new(d: usize) -> Self {
        Self { d, diag: vec![0.0; d], pairs: Vec::new() }
    }

    fn add_pair(&mut self, coef: f64, p: Vec<f64>, q: Vec<f64>, k: usize) {
        debug_assert_eq!(p.len(), self.d * k);
        debug_assert_eq!(q.len(), self.d * k);
        self.pairs.push((coef, p, q, k));
    }

    fn into_gradient(self, beta: Vec<f64>, u: &LowRankFactor) -> VGradient {
        let d = self.d;
        let rv = u.rank();
        // ∂S/∂D_B = diag(G)
        let mut diag = self.diag.clone();
        for (coef, p, q, k) in &self.pairs {
            for a in 0..*k {
                for i in 0..d {
                    diag[i] += coef * p[a * d + i] * q[a * d + i];
                }
            }
        }
        // ∂S/∂U = (G + Gᵀ) U
        let mut factor = vec![0.0; d * rv];
        for c in 0..rv {
            let ucol = u.column(c);
            let out = &mut factor[c * d..(c + 1) * d];
            for i in 0..d {
                out[i] += 2.0 * self.diag[i] * ucol[i];
            }
            for (coef, p, q, k) in &self.pairs {
                for a in 0..*k {
                    let pa = &p[a * d..(a + 1) * d];
                    let qa = &q[a * d..(a + 1) * d];
                    let qu = dot(qa, ucol);
                    let pu = dot(pa, ucol);
                    for i in 0..d {
                        out[i] += coef * (pa[i] * qu + qa[i] * pu);
                    }
                }
            }
        }
        VGradient { b: beta, diag, factor }
    }
}

/// First/second-order Taylor control variates at the current mean. Holds
/// `∇f(μ)` so a minibatch shares one gradient evaluation; each sample costs
/// one Hessian-vector product.
#[derive(Clone, Debug)]
pub struct TaylorExpansion {
    pub mean: Vec<f64>,
    pub grad_at_mean: Vec<f64>,
}

impl TaylorExpansion {
    pub fn new(model: &dyn LogJointModel, family: &FamilyParams) -> Result<Self> {
        check_len("model dimension", model.dim(), family.dim())?;
        Ok(Self { mean: family.mean().to_vec(), grad_at_mean: model.grad(family.mean())? })
    }

    /// Mean block `−∇²f(μ)(z − μ)`; scale blocks `−(∂T/∂w_scale)ᵀ ∇f(μ)`.
    pub fn cv_at(
        &self,
        model: &dyn LogJointModel,
        family: &FamilyParams,
        noise: &NoiseDraw,
        z: &[f64],
    ) -> Result<WGradient> {
        let s: Vec<f64> = z.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let hs = model.hvp(&self.mean, &s)?;
        let mut c = family.jtvp(noise, &self.grad_at_mean)?;
        c.scale(-1.0);
        c.mean_block = hs.into_iter().map(|x| -x).collect();
        Ok(c)
    }
}

/// Taylor-expansion control variate for one noise draw.
pub fn taylor_cv(family: &FamilyParams, noise: &NoiseDraw, model: &dyn LogJointModel) -> Result<WGradient> {
    let expansion = TaylorExpansion::new(model, family)?;
    let z = family.transform(noise)?;
    expansion.cv_at(model, family, noise, &z)
}

/// Per-sample log-scale control variates in the second-order-plus-baseline form
/// for a minibatch `ε_1..ε_N` (diagonal family only):
///
/// ```text
/// c_i = (∇f(μ) + ∇²f(μ)(e^ψ ⊙ ε_i)) ⊙ ε_i ⊙ e^ψ
///       − 1/(N−1) Σ_{j≠i} (∇²f(μ)(e^ψ ⊙ ε_j)) ⊙ ε_j ⊙ e^ψ
/// ```
///
/// The Hessian terms cancel when summed over the minibatch.
pub fn minibatch_baseline_scale_cv(
    family: &FamilyParams,
    noises: &[NoiseDraw],
    model: &dyn LogJointModel,
) -> Result<Vec<Vec<f64>>> {
    let Scale::LogScale { psi } = family.scale_params() else {
        return Err(Error::InvalidArgument("baseline form is defined for the diagonal family".into()));
    };
    let n = noises.len();
    if n < 2 {
        return Err(Error::InvalidArgument("baseline form needs at least two draws".into()));
    }
    let mu = family.mean();
    let grad_mu = model.grad(mu)?;
    let sd: Vec<f64> = psi.iter().map(|p| p.exp()).collect();
    let hess_terms: Vec<Vec<f64>> = noises
        .iter()
        .map(|noise| {
            let scaled: Vec<f64> = sd.iter().zip(&noise.eps_d).map(|(a, b)| a * b).collect();
            let h = model.hvp(mu, &scaled)?;
            Ok(h.iter().zip(&scaled).map(|(hi, si)| hi * si).collect())
        })
        .collect::<Result<_>>()?;
    let total: Vec<f64> =
        (0..family.dim()).map(|k| hess_terms.iter().map(|t| t[k]).sum()).collect();
    Ok(noises
        .iter()
        .zip(&hess_terms)
        .map(|(noise, own)| {
            (0..family.dim())
                .map(|k| {
                    let first = grad_mu[k] * noise.eps_d[k] * sd[k] + own[k];
                    let baseline = (total[k] - own[k]) / (n - 1) as f64;
                    first - baseline
                })
                .collect()
        })
        .collect())
}

/// Running estimate of the weight `γ = −Cov[c, g] / Var[c]` from exponential
/// moving averages of `cᵀg` and `cᵀc` (both centered, since `E[c] = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTracker {
    pub ema_cg: f64,
    pub ema_cc: f64,
    pub decay: f64,
    pub floor: f64,
    pub gamma_max: f64,
    updates: u64,
}

impl GammaTracker {
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_FLOOR: f64 = 1e-12;
    pub const DEFAULT_GAMMA_MAX: f64 = 10.0;

    pub fn new(decay: f64) -> Result<Self> {
        Self::with_limits(decay, Self::DEFAULT_FLOOR, Self::DEFAULT_GAMMA_MAX)
    }

    pub fn with_limits(decay: f64, floor: f64, gamma_max: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma decay must lie in (0,1), got {decay}")));
        }
        if !(floor > 0.0) || !(gamma_max > 0.0) {
            return Err(Error::InvalidArgument("gamma floor and clamp must be positive".into()));
        }
        Ok(Self { ema_cg: 0.0, ema_cc: 0.0, decay, floor, gamma_max, updates: 0 })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn update(&mut self, c: &WGradient, g: &WGradient) {
        let w = 1.0 - self.decay;
        self.ema_cg = self.decay * self.ema_cg + w * c.dot(g);
        self.ema_cc = self.decay * self.ema_cc + w * c.sq_norm();
        self.updates += 1;
    }

    pub fn gamma(&self) -> f64 {
        if self.updates == 0 {
            return 0.0;
        }
        (-self.ema_cg / self.ema_cc.max(self.floor)).clamp(-self.gamma_max, self.gamma_max)
    }
}
