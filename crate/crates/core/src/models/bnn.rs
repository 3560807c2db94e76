use super::{check_point, LogJointModel, RegressionData, LN_2PI};
use crate::error::{check_len, Result};

/// Rate of the Gamma(shape 1, rate 0.1) priors on the weight precision `α` and
/// the noise precision `τ`.
pub const PRECISION_PRIOR_RATE: f64 = 0.1;

/// One-hidden-layer ReLU regression network with hierarchical Gaussian weights.
///
/// Layout of `z`: `log α`, `log τ`, hidden weights `W1` (`hidden × p`,
/// row-major), hidden biases `b1`, output weights `W2`, output bias `b2`.
/// `α, τ ~ Gamma(1, 0.1)` are evaluated on the log scale with the Jacobian,
/// every weight and bias is `N(0, 1/α)`, and `y_i ~ N(ŷ_i, 1/τ)`.
#[derive(Clone, Debug)]
pub struct BnnModel {
    data: RegressionData,
    hidden: usize,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl BnnModel {
    pub fn new(data: RegressionData, hidden: usize) -> Self {
        Self { data, hidden }
    }

    pub fn data(&self) -> &RegressionData {
        &self.data
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> Offsets {
        let w1 = 2;
        let b1 = w1 + self.hidden * self.data.p;
        let w2 = b1 + self.hidden;
        Offsets { w1, b1, w2, b2: w2 + self.hidden }
    }

    fn num_weights(&self) -> usize {
        self.dim() - 2
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.data.features.chunks_exact(self.data.p.max(1)).zip(self.data.targets.iter().copied())
    }

    /// Fills `pre` with the hidden pre-activations for row `x` and returns `ŷ`.
    fn forward(&self, z: &[f64], x: &[f64], pre: &mut [f64]) -> f64 {
        let o = self.offsets();
        let p = self.data.p;
        let mut y = z[o.b2];
        for j in 0..self.hidden {
            let w = &z[o.w1 + j * p..o.w1 + (j + 1) * p];
            pre[j] = z[o.b1 + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if pre[j] > 0.0 {
                y += z[o.w2 + j] * pre[j];
            }
        }
        y
    }
}

fn log_gamma_prior(u: f64) -> f64 {
    // shape 1: ln(rate) + u - rate e^u, Jacobian included
    PRECISION_PRIOR_RATE.ln() + u - PRECISION_PRIOR_RATE * u.exp()
}

impl LogJointModel for BnnModel {
    fn dim(&self) -> usize {
        2 + self.hidden * self.data.p + 2 * self.hidden + 1
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        check_point(self.dim(), z)?;
        let (ua, ut) = (z[0], z[1]);
        let (alpha, tau) = (ua.exp(), ut.exp());
        let k = self.num_weights() as f64;
        let w_sq: f64 = z[2..].iter().map(|w| w * w).sum();
        let mut f = log_gamma_prior(ua) + log_gamma_prior(ut);
        f += 0.5 * k * (ua - LN_2PI) - 0.5 * alpha * w_sq;
        let mut pre = vec![0.0; self.hidden];
        for (x, y) in self.rows() {
            let e = y - self.forward(z, x, &mut pre);
            f += 0.5 * (ut - LN_2PI) - 0.5 * tau * e * e;
        }
        Ok(f)
    }

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        let o = self.offsets();
        let p = self.data.p;
        let (alpha, tau) = (z[0].exp(), z[1].exp());
        let k = self.num_weights() as f64;
        let n = self.data.n as f64;
        let mut g = vec![0.0; self.dim()];
        let w_sq: f64 = z[2..].iter().map(|w| w * w).sum();
        g[0] = 0.5 * k - 0.5 * alpha * w_sq + 1.0 - PRECISION_PRIOR_RATE * alpha;
        for (gi, w) in g[2..].iter_mut().zip(&z[2..]) {
            *gi = -alpha * w;
        }
        let mut pre = vec![0.0; self.hidden];
        let mut sq_err = 0.0;
        for (x, y) in self.rows() {
            let e = y - self.forward(z, x, &mut pre);
            sq_err += e * e;
            let l = tau * e;
            g[o.b2] += l;
            for j in 0..self.hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                g[o.w2 + j] += l * pre[j];
                let da = l * z[o.w2 + j];
                g[o.b1 + j] += da;
                for (gk, xk) in g[o.w1 + j * p..o.w1 + (j + 1) * p].iter_mut().zip(x) {
                    *gk += da * xk;
                }
            }
        }
        g[1] = 0.5 * n - 0.5 * tau * sq_err + 1.0 - PRECISION_PRIOR_RATE * tau;
        Ok(g)
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        check_len("hvp direction", v.len(), self.dim())?;
        let o = self.offsets();
        let p = self.data.p;
        let (alpha, tau) = (z[0].exp(), z[1].exp());
        let (alpha_dot, tau_dot) = (alpha * v[0], tau * v[1]);
        let mut out = vec![0.0; self.dim()];

        let w_sq: f64 = z[2..].iter().map(|w| w * w).sum();
        let w_v: f64 = z[2..].iter().zip(&v[2..]).map(|(a, b)| a * b).sum();
        out[0] = -0.5 * alpha_dot * w_sq - alpha * w_v - PRECISION_PRIOR_RATE * alpha_dot;
        for ((oi, w), vi) in out[2..].iter_mut().zip(&z[2..]).zip(&v[2..]) {
            *oi = -alpha_dot * w - alpha * vi;
        }

        let mut pre = vec![0.0; self.hidden];
        let mut sq_err = 0.0;
        let mut err_dot = 0.0;
        for (x, y) in self.rows() {
            let yhat = self.forward(z, x, &mut pre);
            let e = y - yhat;
            // tangent of ŷ along v
            let mut y_dot = v[o.b2];
            let mut h_dot = vec![0.0; self.hidden];
            for j in 0..self.hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                let vw = &v[o.w1 + j * p..o.w1 + (j + 1) * p];
                let a_dot = v[o.b1 + j] + vw.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                h_dot[j] = a_dot;
                y_dot += v[o.w2 + j] * pre[j] + z[o.w2 + j] * a_dot;
            }
            let e_dot = -y_dot;
            sq_err += e * e;
            err_dot += e * e_dot;
            let l = tau * e;
            let l_dot = tau_dot * e + tau * e_dot;
            out[o.b2] += l_dot;
            for j in 0..self.hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                out[o.w2 + j] += l_dot * pre[j] + l * h_dot[j];
                let da_dot = l_dot * z[o.w2 + j] + l * v[o.w2 + j];
                out[o.b1 + j] += da_dot;
                for (ok, xk) in out[o.w1 + j * p..o.w1 + (j + 1) * p].iter_mut().zip(x) {
                    *ok += da_dot * xk;
                }
            }
        }
        out[1] = -0.5 * tau_dot * sq_err - tau * err_dot - PRECISION_PRIOR_RATE * tau_dot;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_wine_shaped_dimension() {
        let data = RegressionData::new(2, 11, vec![0.0; 22], vec![5.0, 6.0]).unwrap();
        assert_eq!(BnnModel::new(data, 50).dim(), 653);
    }

    #[test]
    fn zero_network_likelihood() {
        let data = RegressionData::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0], vec![1.0, -2.0, 0.5])
            .unwrap();
        let m = BnnModel::new(data, 4);
        let mut z = vec![0.0; m.dim()];
        z[0] = 0.3;
        let f = m.log_joint(&z).unwrap();
        let lik: f64 = [1.0f64, -2.0, 0.5].iter().map(|y| -0.5 * LN_2PI - 0.5 * y * y).sum();
        let k = (m.dim() - 2) as f64;
        let prior = log_gamma_prior(0.3) + log_gamma_prior(0.0) + 0.5 * k * (0.3 - LN_2PI);
        assert!((f - lik - prior).abs() < 1e-12);
    }
}
