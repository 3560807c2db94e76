//! Target log-joints `f(z) = log p(x, z)` with hand-derived gradients and
//! Hessian-vector products.

mod bnn;
pub mod data;
mod gaussian;
mod hierarchical;
mod logistic;

use std::sync::atomic::{AtomicUsize, Ordering};

pub use bnn::BnnModel;
pub use data::{ClassificationData, FriskData, RegressionData};
pub use gaussian::GaussianModel;
pub use hierarchical::HierarchicalModel;
pub use logistic::LogisticModel;

use crate::error::{check_len, Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A differentiable unnormalized log-density over `R^d`.
pub trait LogJointModel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_joint(&self, z: &[f64]) -> Result<f64>;

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>>;

    /// `∇²f(z) v`.
    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Value and gradient from a single pass over the data.
    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.log_joint(z)?, self.grad(z)?))
    }
}

pub(crate) fn check_point(model_dim: usize, z: &[f64]) -> Result<()> {
    check_len("model input", z.len(), model_dim)?;
    if z.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN in model input".into()));
    }
    Ok(())
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Wraps a model and counts every call that touches the data.
pub struct CountingModel<'a> {
    inner: &'a dyn LogJointModel,
    evals: AtomicUsize,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn LogJointModel) -> Self {
        Self { inner, evals: AtomicUsize::new(0) }
    }

    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.evals.fetch_add(1, Ordering::Relaxed);
    }
}

impl LogJointModel for CountingModel<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        self.bump();
        self.inner.log_joint(z)
    }

    fn grad(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.bump();
        self.inner.grad(z)
    }

    fn hvp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.bump();
        self.inner.hvp(z, v)
    }

    fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.bump();
        self.inner.value_and_grad(z)
    }
}
