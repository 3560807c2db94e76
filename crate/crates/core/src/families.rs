//! Reparameterizable Gaussian variational families.
//!
//! Every family is `z = μ + S(ε)` with standard-normal noise. The parameter
//! vector `w` is laid out as the mean block followed by the scale block:
//!
//! * [`FamilyKind::MeanLogScale`]: `ψ` (log standard deviations), length `d`.
//! * [`FamilyKind::MeanDiagLowRank`]: `ψ`, then the columns of `F` (column-major,
//!   `d × r_w`), with `Σ = diag(e^{2ψ}) + F Fᵀ`.
//! * [`FamilyKind::MeanCholesky`]: the rows of the lower triangle of `L`
//!   (row-major, `(0,0), (1,0), (1,1), (2,0), ...`), where diagonal slots hold
//!   `log L_ii` and off-diagonal slots hold `L_ij` directly.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};
use crate::linalg::{DiagMat, DiagPlusLowRank, LowRankFactor, LowerTriangular, StructuredMatrix};

const LN_2PI_E: f64 = 2.837_877_066_409_345_5; // ln(2πe)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    MeanLogScale,
    MeanDiagLowRank,
    MeanCholesky,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::MeanLogScale => "diag",
            FamilyKind::MeanDiagLowRank => "diag_lr",
            FamilyKind::MeanCholesky => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "diag" => Some(FamilyKind::MeanLogScale),
            "diag_lr" => Some(FamilyKind::MeanDiagLowRank),
            "full" => Some(FamilyKind::MeanCholesky),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scale {
    LogScale { psi: Vec<f64> },
    DiagLowRank { psi: Vec<f64>, factor: LowRankFactor },
    /// Packed lower triangle, diagonal in log form.
    Cholesky { packed: Vec<f64> },
}

#[inline]
pub(crate) fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyParams {
    mean: Vec<f64>,
    scale: Scale,
}

/// Gradient (or any vector) with respect to the family parameters `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct WGradient {
    pub mean_block: Vec<f64>,
    pub scale_block: Vec<f64>,
}

impl WGradient {
    pub fn zeros(mean_len: usize, scale_len: usize) -> Self {
        Self { mean_block: vec![0.0; mean_len], scale_block: vec![0.0; scale_len] }
    }

    pub fn zeros_like(other: &WGradient) -> Self {
        Self::zeros(other.mean_block.len(), other.scale_block.len())
    }

    pub fn len(&self) -> usize {
        self.mean_block.len() + self.scale_block.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.mean_block.iter().chain(self.scale_block.iter())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn from_flat(flat: &[f64], mean_len: usize) -> Self {
        Self { mean_block: flat[..mean_len].to_vec(), scale_block: flat[mean_len..].to_vec() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &WGradient) {
        for (a, b) in self.mean_block.iter_mut().zip(&other.mean_block) {
            *a += alpha * b;
        }
        for (a, b) in self.scale_block.iter_mut().zip(&other.scale_block) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.mean_block.iter_mut().chain(self.scale_block.iter_mut()).for_each(|x| *x *= alpha);
    }

    pub fn dot(&self, other: &WGradient) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Standard-normal base noise `ε`: `eps_d` of length `d` and `eps_r` of length
/// `r_w` (empty unless the family has a low-rank factor).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub eps_d: Vec<f64>,
    pub eps_r: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeros(d: usize, r: usize) -> Self {
        Self { eps_d: vec![0.0; d], eps_r: vec![0.0; r] }
    }
}

impl FamilyParams {
    pub fn log_scale(mean: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        check_len("log-scale psi", psi.len(), mean.len())?;
        Self::validated(mean, Scale::LogScale { psi })
    }

    pub fn diag_low_rank(mean: Vec<f64>, psi: Vec<f64>, factor: LowRankFactor) -> Result<Self> {
        check_len("diag+low-rank psi", psi.len(), mean.len())?;
        check_len("diag+low-rank factor rows", factor.dim(), mean.len())?;
        Self::validated(mean, Scale::DiagLowRank { psi, factor })
    }

    /// `packed` holds the lower triangle row by row with `log L_ii` on the diagonal.
    pub fn cholesky(mean: Vec<f64>, packed: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        check_len("cholesky packed lower triangle", packed.len(), d * (d + 1) / 2)?;
        Self::validated(mean, Scale::Cholesky { packed })
    }

    fn validated(mean: Vec<f64>, scale: Scale) -> Result<Self> {
        let out = Self { mean, scale };
        if !out.param_iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("family parameters must be finite".into()));
        }
        Ok(out)
    }

    /// Mean `mean`, covariance `σ² I` in the kind's own parameterization (any
    /// low-rank factor is zero).
    pub fn isotropic(kind: FamilyKind, mean: Vec<f64>, sigma: f64, rank: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let d = mean.len();
        let ls = sigma.ln();
        match kind {
            FamilyKind::MeanLogScale => Self::log_scale(mean, vec![ls; d]),
            FamilyKind::MeanDiagLowRank => {
                Self::diag_low_rank(mean, vec![ls; d], LowRankFactor::zeros(d, rank))
            }
            FamilyKind::MeanCholesky => {
                let mut packed = vec![0.0; d * (d + 1) / 2];
                for i in 0..d {
                    packed[packed_index(i, i)] = ls;
                }
                Self::cholesky(mean, packed)
            }
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self.scale {
            Scale::LogScale { .. } => FamilyKind::MeanLogScale,
            Scale::DiagLowRank { .. } => FamilyKind::MeanDiagLowRank,
            Scale::Cholesky { .. } => FamilyKind::MeanCholesky,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `r_w`; zero for families without a low-rank factor.
    pub fn noise_rank(&self) -> usize {
        match &self.scale {
            Scale::DiagLowRank { factor, .. } => factor.rank(),
            _ => 0,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale_params(&self) -> &Scale {
        &self.scale
    }

    pub fn scale_len(&self) -> usize {
        let d = self.dim();
        match &self.scale {
            Scale::LogScale { .. } => d,
            Scale::DiagLowRank { factor, .. } => d + d * factor.rank(),
            Scale::Cholesky { .. } => d * (d + 1) / 2,
        }
    }

    pub fn num_params(&self) -> usize {
        self.dim() + self.scale_len()
    }

    fn param_iter(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        let scale: Box<dyn Iterator<Item = f64>> = match &self.scale {
            Scale::LogScale { psi } => Box::new(psi.iter().copied()),
            Scale::DiagLowRank { psi, factor } => {
                Box::new(psi.iter().chain(factor.as_slice()).copied())
            }
            Scale::Cholesky { packed } => Box::new(packed.iter().copied()),
        };
        Box::new(self.mean.iter().copied().chain(scale))
    }

    /// Flat parameter vector in the documented layout.
    pub fn to_flat(&self) -> Vec<f64> {
        self.param_iter().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("family parameter vector", flat.len(), self.num_params())?;
        let d = self.dim();
        self.mean.copy_from_slice(&flat[..d]);
        let rest = &flat[d..];
        match &mut self.scale {
            Scale::LogScale { psi } => psi.copy_from_slice(rest),
            Scale::DiagLowRank { psi, factor } => {
                psi.copy_from_slice(&rest[..d]);
                factor.as_mut_slice().copy_from_slice(&rest[d..]);
            }
            Scale::Cholesky { packed } => packed.copy_from_slice(rest),
        }
        Ok(())
    }

    pub fn zero_gradient(&self) -> WGradient {
        WGradient::zeros(self.dim(), self.scale_len())
    }

    /// The Cholesky factor `L` with exponentiated diagonal. `None` for other kinds.
    pub fn cholesky_factor(&self) -> Option<LowerTriangular> {
        let Scale::Cholesky { packed } = &self.scale else {
            return None;
        };
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                data[i * d + j] = packed[packed_index(i, j)];
            }
            data[i * d + i] = packed[packed_index(i, i)].exp();
        }
        Some(LowerTriangular::new(d, data).expect("packed parameters are finite"))
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        let eps_d = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let eps_r = (0..self.noise_rank()).map(|_| rng.sample(StandardNormal)).collect();
        NoiseDraw { eps_d, eps_r }
    }

    fn check_noise(&self, noise: &NoiseDraw) -> Result<()> {
        check_len("noise eps_d", noise.eps_d.len(), self.dim())?;
        check_len("noise eps_r", noise.eps_r.len(), self.noise_rank())
    }

    /// `z = T_w(ε)`.
    pub fn transform(&self, noise: &NoiseDraw) -> Result<Vec<f64>> {
        self.check_noise(noise)?;
        let mut z = self.mean.clone();
        match &self.scale {
            Scale::LogScale { psi } => {
                for ((zi, p), e) in z.iter_mut().zip(psi).zip(&noise.eps_d) {
                    *zi += p.exp() * e;
                }
            }
            Scale::DiagLowRank { psi, factor } => {
                for ((zi, p), e) in z.iter_mut().zip(psi).zip(&noise.eps_d) {
                    *zi += p.exp() * e;
                }
                factor.mul_add_into(&noise.eps_r, &mut z);
            }
            Scale::Cholesky { .. } => {
                let l = self.cholesky_factor().expect("cholesky family");
                let le = l.matvec(&noise.eps_d)?;
                for (zi, x) in z.iter_mut().zip(le) {
                    *zi += x;
                }
            }
        }
        Ok(z)
    }

    /// Mean and structured covariance. The Cholesky family returns `L` in
    /// [`StructuredMatrix::Cholesky`] form.
    pub fn mean_cov(&self) -> (Vec<f64>, StructuredMatrix) {
        let cov = match &self.scale {
            Scale::LogScale { psi } => StructuredMatrix::Diag(
                DiagMat::new(psi.iter().map(|p| (2.0 * p).exp()).collect()).expect("finite"),
            ),
            Scale::DiagLowRank { psi, factor } => StructuredMatrix::DiagLowRank(
                DiagPlusLowRank::new(
                    DiagMat::new(psi.iter().map(|p| (2.0 * p).exp()).collect()).expect("finite"),
                    factor.clone(),
                )
                .expect("dimensions agree"),
            ),
            Scale::Cholesky { .. } => {
                StructuredMatrix::Cholesky(self.cholesky_factor().expect("cholesky family"))
            }
        };
        (self.mean.clone(), cov)
    }

    /// `H(w) = ½ (d ln(2πe) + ln det Σ)`.
    pub fn entropy(&self) -> Result<f64> {
        let logdet = match &self.scale {
            Scale::LogScale { psi } => 2.0 * psi.iter().sum::<f64>(),
            Scale::Cholesky { packed } => {
                2.0 * (0..self.dim()).map(|i| packed[packed_index(i, i)]).sum::<f64>()
            }
            Scale::DiagLowRank { .. } => self.mean_cov().1.logdet()?,
        };
        if !logdet.is_finite() {
            return Err(Error::Domain("degenerate covariance".into()));
        }
        Ok(0.5 * (self.dim() as f64 * LN_2PI_E + logdet))
    }

    /// `∇_w H(w)`; the mean block is identically zero.
    pub fn entropy_grad(&self) -> Result<WGradient> {
        let d = self.dim();
        let mut g = self.zero_gradient();
        match &self.scale {
            Scale::LogScale { .. } => g.scale_block.fill(1.0),
            Scale::Cholesky { .. } => {
                for i in 0..d {
                    g.scale_block[packed_index(i, i)] = 1.0;
                }
            }
            Scale::DiagLowRank { psi, factor } => {
                let StructuredMatrix::DiagLowRank(cov) = self.mean_cov().1 else {
                    unreachable!()
                };
                let (inv_diag, inv_f) = cov.inverse_parts()?;
                for i in 0..d {
                    // ½ ∂ ln det Σ / ∂ψ_i = [Σ⁻¹]_ii e^{2ψ_i}
                    g.scale_block[i] = inv_diag[i] * (2.0 * psi[i]).exp();
                }
                debug_assert_eq!(inv_f.rank(), factor.rank());
                g.scale_block[d..].copy_from_slice(inv_f.as_slice());
            }
        }
        Ok(g)
    }

    /// Jacobian-transpose product `(∂T_w(ε)/∂w)ᵀ u`.
    pub fn jtvp(&self, noise: &NoiseDraw, u: &[f64]) -> Result<WGradient> {
        self.check_noise(noise)?;
        check_len("jtvp direction", u.len(), self.dim())?;
        let d = self.dim();
        let mut scale_block = vec![0.0; self.scale_len()];
        match &self.scale {
            Scale::LogScale { psi } => {
                for i in 0..d {
                    scale_block[i] = psi[i].exp() * noise.eps_d[i] * u[i];
                }
            }
            Scale::DiagLowRank { psi, factor } => {
                for i in 0..d {
                    scale_block[i] = psi[i].exp() * noise.eps_d[i] * u[i];
                }
                for a in 0..factor.rank() {
                    let ea = noise.eps_r[a];
                    let col = &mut scale_block[d + a * d..d + (a + 1) * d];
                    for (c, ui) in col.iter_mut().zip(u) {
                        *c = ui * ea;
                    }
                }
            }
            Scale::Cholesky { packed } => {
                for i in 0..d {
                    for j in 0..i {
                        scale_block[packed_index(i, j)] = u[i] * noise.eps_d[j];
                    }
                    let k = packed_index(i, i);
                    scale_block[k] = u[i] * noise.eps_d[i] * packed[k].exp();
                }
            }
        }
        Ok(WGradient { mean_block: u.to_vec(), scale_block })
    }
}
