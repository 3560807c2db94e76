use super::{check_point, sigmoid, softplus, ClassificationData, LogJointModel, LN_2PI};
use crate::error::{check_len, Result};

/// Bayesian logistic regression with a standard-normal prior on the bias and
/// every coefficient. `z = (w₀, w₁..w_p)` and `P(y_i = 1) = 1 / (1 + exp(w₀ + w·x_i))`.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    data: ClassificationData,
    /// `+1` where `y = 1`, `-1` where `y = 0`; the log-likelihood is `-softplus(sign * a)`.
    signs: Vec<f64>,
}

impl LogisticModel {
    pub fn new(data: ClassificationData) -> Self {
        let signs = data.labels.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect();
        Self { data, signs }
    }

    pub fn data(&self) -> &ClassificationData {
        &self.data
    }

    fn activations(&self, z: &[f64]) -> Vec<f64> {
        let p = self.data.p;
        self.data
            .features
            .chunks_exact(p.max(1))
            .take(self.data.n)
            .map(|row| z[0] + row.iter().zip(&z[1..]).map(|(x, w)| x * w).sum::<f64>())
            .collect()
    }

    /// `Xᵀ r` with the bias column prepended, added into `out`.
    fn add_transpose(&self, r: &[f64], out: &mut [f64]) {
        let p = self.data.p;
        for (row, ri) in self.data.features.chunks_exact(p.max(1)).zip(r) {
            out[0] += ri;
            for (o, x) in out[1..].iter_mut().zip(row) {
                *o += ri * x;
            }
        }
    }
}

impl LogJointModel for LogisticModel {
    fn dim(&self) -> usize {
        self.data.p + 1
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_point(self.dim(), z)?;
        let prior = -0.5 * z.iter().map(|x| x * x).sum::<f64>() - 0.5 * self.dim() as f64 * LN_2PI;
        let lik: f64 = self
            .activations(z)
            .iter()
            .zip(&self.signs)
            .map(|(a, s)| -softplus(s * a))
            .sum();
        Ok(prior + lik)
    }

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(z)?.1)
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim(), z)?;
        let acts = self.activations(z);
        let mut lik = 0.0;
        let resid: Vec<f64> = acts
            .iter()
            .zip(&self.signs)
            .map(|(a, s)| {
                lik -= softplus(s * a);
                -s * sigmoid(s * a)
            })
            .collect();
        let mut g: Vec<f64> = z.iter().map(|x| -x).collect();
        self.add_transpose(&resid, &mut g);
        let prior = -0.5 * z.iter().map(|x| x * x).sum::<f64>() - 0.5 * self.dim() as f64 * LN_2PI;
        Ok((prior + lik, g))
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        check_len("hvp direction", v.len(), self.dim())?;
        let acts = self.activations(z);
        let xv = self.activations(v);
        let weighted: Vec<f64> = acts
            .iter()
            .zip(&self.signs)
            .zip(&xv)
            .map(|((a, s), t)| {
                let sg = sigmoid(s * a);
                -sg * (1.0 - sg) * t
            })
            .collect();
        let mut out: Vec<f64> = v.iter().map(|x| -x).collect();
        self.add_transpose(&weighted, &mut out);
        Ok(out)
    }
}
