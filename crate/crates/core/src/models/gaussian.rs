use super::{check_point, LogJointModel, LN_2PI};
use crate::error::{check_len, Result};
use crate::linalg::DenseCholesky;

/// Normalized Gaussian log-density `log N(z | center, precision⁻¹)` with a dense
/// precision. Its Hessian is the constant `-precision`, which makes it the
/// reference target for conjugate and exact-cancellation checks.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    center: Vec<f64>,
    precision: Vec<f64>,
    log_norm: f64,
}

impl GaussianModel {
    /// `precision` is row-major `d × d` and must be symmetric positive definite.
    pub fn new(center: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        let d = center.len();
        let chol = DenseCholesky::factor(precision.clone(), d)?;
        let log_norm = 0.5 * chol.logdet() - 0.5 * d as f64 * LN_2PI;
        Ok(Self { center, precision, log_norm })
    }

    pub fn standard(d: usize) -> Self {
        let mut precision = vec![0.0; d * d];
        for i in 0..d {
            precision[i * d + i] = 1.0;
        }
        Self::new(vec![0.0; d], precision).expect("identity is positive definite")
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    fn apply_precision(&self, x: &[f64]) -> Vec<f64> {
        let d = self.center.len();
        self.precision.chunks_exact(d.max(1)).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

impl LogJointModel for GaussianModel {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_point(self.dim(), z)?;
        let delta: Vec<f64> = z.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let pd = self.apply_precision(&delta);
        Ok(self.log_norm - 0.5 * delta.iter().zip(&pd).map(|(a, b)| a * b).sum::<f64>())
    }

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        let delta: Vec<f64> = z.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        Ok(self.apply_precision(&delta).into_iter().map(|x| -x).collect())
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        check_len("hvp direction", v.len(), self.dim())?;
        Ok(self.apply_precision(v).into_iter().map(|x| -x).collect())
    }
}
