#![allow(dead_code)]

//! Oracles shared by the integration tests: dense re-implementations via
//! nalgebra, central finite differences and Monte-Carlo summaries.

use nalgebra::{DMatrix, DVector};
use quadcv::control_variates::QuadSurrogate;
use quadcv::families::{FamilyKind, FamilyParams, Scale};
use quadcv::linalg::{DiagMat, DiagPlusLowRank, LowRankFactor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals<R: Rng>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn std_normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn factor_dense(f: &LowRankFactor) -> DMatrix<f64> {
    DMatrix::from_fn(f.dim(), f.rank(), |i, a| f.get(i, a))
}

pub fn dlr_dense(m: &DiagPlusLowRank) -> DMatrix<f64> {
    let f = factor_dense(m.factor());
    DMatrix::from_diagonal(&DVector::from_column_slice(m.diag().entries())) + &f * f.transpose()
}

/// `L` with exponentiated diagonal from the packed row-major lower triangle.
pub fn packed_to_l(d: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = if i == j { packed[k].exp() } else { packed[k] };
            k += 1;
        }
    }
    l
}

/// Dense covariance straight from the family parameters.
pub fn family_cov(fam: &FamilyParams) -> DMatrix<f64> {
    let d = fam.dim();
    match fam.scale_params() {
        Scale::LogScale { psi } => DMatrix::from_diagonal(&DVector::from_iterator(d, psi.iter().map(|p| (2.0 * p).exp()))),
        Scale::DiagLowRank { psi, factor } => {
            let f = factor_dense(factor);
            DMatrix::from_diagonal(&DVector::from_iterator(d, psi.iter().map(|p| (2.0 * p).exp()))) + &f * f.transpose()
        }
        Scale::Cholesky { packed } => {
            let l = packed_to_l(d, packed);
            &l * l.transpose()
        }
    }
}

pub fn surrogate_dense_b(s: &QuadSurrogate) -> DMatrix<f64> {
    dlr_dense(&s.curvature)
}

/// Central finite-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn fd_jvp(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    let up: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + h * b).collect();
    let down: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - h * b).collect();
    f(&up).iter().zip(f(&down)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Per-coordinate running mean and standard error.
#[derive(Clone, Debug)]
pub struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self { n: 0, sum: vec![0.0; len], sum_sq: vec![0.0; len] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for (i, v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    pub fn std_err(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let m = s / n;
                ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            })
            .collect()
    }

    /// Largest `|mean − target| / se` over coordinates. Deviations below
    /// finite-difference precision count as zero, so deterministic coordinates
    /// can be compared with numerically derived targets.
    pub fn max_z(&self, target: &[f64]) -> f64 {
        self.mean()
            .iter()
            .zip(self.std_err())
            .zip(target)
            .map(|((m, se), t)| {
                let dev = (m - t).abs();
                if dev <= 1e-7 * t.abs().max(1.0) && se < 1e-7 {
                    0.0
                } else if se == 0.0 {
                    f64::INFINITY
                } else {
                    dev / se
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Random family of the given kind: means and scale parameters `N(0, sd²)`.
pub fn random_family<R: Rng>(kind: FamilyKind, d: usize, r_w: usize, sd: f64, rng: &mut R) -> FamilyParams {
    let mut f = FamilyParams::isotropic(kind, vec![0.0; d], 1.0, r_w).unwrap();
    let flat = normals(rng, f.num_params(), sd);
    f.set_flat(&flat).unwrap();
    f
}

pub fn random_surrogate<R: Rng>(d: usize, r_v: usize, sd: f64, rng: &mut R) -> QuadSurrogate {
    let b = normals(rng, d, sd);
    let diag = DiagMat::new(normals(rng, d, sd)).unwrap();
    let factor = LowRankFactor::new(d, r_v, normals(rng, d * r_v, sd)).unwrap();
    let z0 = normals(rng, d, sd);
    QuadSurrogate::new(b, DiagPlusLowRank::new(diag, factor).unwrap(), z0).unwrap()
}

/// Random symmetric positive definite matrix, row-major, with eigenvalues
/// roughly in `[1, 1 + spread]`.
pub fn random_spd<R: Rng>(d: usize, spread: f64, rng: &mut R) -> Vec<f64> {
    let a = DMatrix::from_vec(d, d, normals(rng, d * d, (spread / d as f64).sqrt()));
    let p = &a * a.transpose() + DMatrix::identity(d, d);
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    out
}

pub fn all_kinds() -> [FamilyKind; 3] {
    [FamilyKind::MeanLogScale, FamilyKind::MeanDiagLowRank, FamilyKind::MeanCholesky]
}
