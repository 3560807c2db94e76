use super::{check_point, FriskData, LogJointModel, LN_2PI};
use crate::error::{check_len, Result};

const TOP_PRIOR_VAR: f64 = 100.0;

/// Hierarchical Poisson regression over an ethnicity × precinct table.
///
/// `z = (μ, log σ_α, log σ_β, α_1..α_E, β_1..β_P)` and
/// `Y_ep ~ Poisson(exp(μ + α_e + β_p + log N_ep))`.
#[derive(Clone, Debug)]
pub struct HierarchicalModel {
    data: FriskData,
    log_offsets: Vec<f64>,
    log_factorials: Vec<f64>,
}

impl HierarchicalModel {
    pub fn new(data: FriskData) -> Self {
        let log_offsets = data.offsets.iter().map(|&n| (n as f64).ln()).collect();
        let log_factorials =
            data.counts.iter().map(|&y| (2..=y).map(|k| (k as f64).ln()).sum()).collect();
        Self { data, log_offsets, log_factorials }
    }

    pub fn data(&self) -> &FriskData {
        &self.data
    }

    fn alpha_offset(&self) -> usize {
        3
    }

    fn beta_offset(&self) -> usize {
        3 + self.data.n_e
    }

    fn log_rate(&self, z: &[f64], e: usize, p: usize) -> f64 {
        z[0] + z[self.alpha_offset() + e] + z[self.beta_offset() + p]
            + self.log_offsets[e * self.data.n_p + p]
    }
}

fn normal_logpdf(x: f64, var: f64) -> f64 {
    -0.5 * LN_2PI - 0.5 * var.ln() - 0.5 * x * x / var
}

impl LogJointModel for HierarchicalModel {
    fn dim(&self) -> usize {
        3 + self.data.n_e + self.data.n_p
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(z)?.0)
    }

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(z)?.1)
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_point(self.dim(), z)?;
        let (ne, np) = (self.data.n_e, self.data.n_p);
        let (lsa, lsb) = (z[1], z[2]);
        let (prec_a, prec_b) = ((-2.0 * lsa).exp(), (-2.0 * lsb).exp());
        let mut g = vec![0.0; self.dim()];

        let mut f = normal_logpdf(z[0], TOP_PRIOR_VAR)
            + normal_logpdf(lsa, TOP_PRIOR_VAR)
            + normal_logpdf(lsb, TOP_PRIOR_VAR);
        g[0] = -z[0] / TOP_PRIOR_VAR;
        g[1] = -lsa / TOP_PRIOR_VAR;
        g[2] = -lsb / TOP_PRIOR_VAR;

        for e in 0..ne {
            let a = z[self.alpha_offset() + e];
            f += -0.5 * LN_2PI - lsa - 0.5 * a * a * prec_a;
            g[1] += -1.0 + a * a * prec_a;
            g[self.alpha_offset() + e] -= a * prec_a;
        }
        for p in 0..np {
            let b = z[self.beta_offset() + p];
            f += -0.5 * LN_2PI - lsb - 0.5 * b * b * prec_b;
            g[2] += -1.0 + b * b * prec_b;
            g[self.beta_offset() + p] -= b * prec_b;
        }

        for e in 0..ne {
            for p in 0..np {
                let k = e * np + p;
                let eta = self.log_rate(z, e, p);
                let lambda = eta.exp();
                let y = self.data.counts[k] as f64;
                f += y * eta - lambda - self.log_factorials[k];
                let r = y - lambda;
                g[0] += r;
                g[self.alpha_offset() + e] += r;
                g[self.beta_offset() + p] += r;
            }
        }
        Ok((f, g))
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_point(self.dim(), z)?;
        check_len("hvp direction", v.len(), self.dim())?;
        let (ne, np) = (self.data.n_e, self.data.n_p);
        let (lsa, lsb) = (z[1], z[2]);
        let (prec_a, prec_b) = ((-2.0 * lsa).exp(), (-2.0 * lsb).exp());
        let mut out = vec![0.0; self.dim()];
        out[0] = -v[0] / TOP_PRIOR_VAR;
        out[1] = -v[1] / TOP_PRIOR_VAR;
        out[2] = -v[2] / TOP_PRIOR_VAR;

        for e in 0..ne {
            let ia = self.alpha_offset() + e;
            let a = z[ia];
            out[1] += -2.0 * a * a * prec_a * v[1] + 2.0 * a * prec_a * v[ia];
            out[ia] += 2.0 * a * prec_a * v[1] - prec_a * v[ia];
        }
        for p in 0..np {
            let ib = self.beta_offset() + p;
            let b = z[ib];
            out[2] += -2.0 * b * b * prec_b * v[2] + 2.0 * b * prec_b * v[ib];
            out[ib] += 2.0 * b * prec_b * v[2] - prec_b * v[ib];
        }

        for e in 0..ne {
            for p in 0..np {
                let ia = self.alpha_offset() + e;
                let ib = self.beta_offset() + p;
                let lambda = self.log_rate(z, e, p).exp();
                let q = -lambda * (v[0] + v[ia] + v[ib]);
                out[0] += q;
                out[ia] += q;
                out[ib] += q;
            }
        }
        Ok(out)
    }
}
