//! Central finite-difference checks of every analytic derivative, run by the
//! `check-grads` subcommand.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::control_variates::QuadSurrogate;
use crate::error::Result;
use crate::estimators::base_grad;
use crate::families::{FamilyKind, FamilyParams};
use crate::linalg::dot;
use crate::models::{data, BnnModel, GaussianModel, HierarchicalModel, LogJointModel, LogisticModel};
use crate::trainer::{rng_for, INIT_STREAM};

pub const GRAD_TOL: f64 = 1e-5;
pub const HVP_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tol
    }
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let up = f(&xp)?;
        xp[i] = x[i] - step;
        let down = f(&xp)?;
        xp[i] = x[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Central difference of a vector function along `dir`.
pub fn fd_directional(f: &dyn Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64], dir: &[f64], h: f64) -> Result<Vec<f64>> {
    let up: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + h * b).collect();
    let down: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - h * b).collect();
    Ok(f(&up)?.iter().zip(f(&down)?).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt()).max(1e-8);
    diff / scale
}

fn random_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Family of the given kind at a random non-degenerate point.
pub fn random_family<R: Rng + ?Sized>(kind: FamilyKind, d: usize, r_w: usize, rng: &mut R) -> Result<FamilyParams> {
    let mut fam = FamilyParams::isotropic(kind, vec![0.0; d], 1.0, r_w)?;
    let flat = random_vec(rng, fam.num_params(), 0.3);
    fam.set_flat(&flat)?;
    Ok(fam)
}

pub fn random_surrogate<R: Rng + ?Sized>(d: usize, r_v: usize, rng: &mut R) -> QuadSurrogate {
    let mut s = QuadSurrogate::zeros(d, r_v);
    let flat = random_vec(rng, s.num_params(), 0.5);
    s.set_flat(&flat).expect("sized to the surrogate");
    s.z0 = random_vec(rng, d, 0.5);
    s
}

pub fn check_model(name: &str, model: &dyn LogJointModel, z: &[f64]) -> Result<Vec<CheckResult>> {
    let mut rng = rng_for(17, INIT_STREAM);
    let fd = fd_gradient(&|x| model.log_joint(x), z, 1e-6)?;
    let g = model.grad(z)?;
    let dir: Vec<f64> = (0..z.len()).map(|_| rng.sample(StandardNormal)).collect();
    let hv = model.hvp(z, &dir)?;
    let fd_hv = fd_directional(&|x| model.grad(x), z, &dir, 1e-5)?;
    Ok(vec![
        CheckResult { name: format!("{name}: grad"), rel_err: rel_err(&g, &fd), tol: GRAD_TOL },
        CheckResult { name: format!("{name}: hvp"), rel_err: rel_err(&hv, &fd_hv), tol: HVP_TOL },
    ])
}

/// Checks the family and control-variate derivatives for one family kind.
pub fn check_family(kind: FamilyKind, d: usize, r_w: usize, r_v: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = rng_for(seed, INIT_STREAM);
    let fam = random_family(kind, d, r_w, &mut rng)?;
    let noise = fam.sample_noise(&mut rng);
    let s = random_surrogate(d, r_v, &mut rng);
    let w = fam.to_flat();
    let with_w = |x: &[f64]| -> Result<FamilyParams> {
        let mut f = fam.clone();
        f.set_flat(x)?;
        Ok(f)
    };
    let label = kind.name();
    let mut out = Vec::new();

    let fd = fd_gradient(&|x| with_w(x)?.entropy(), &w, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: entropy_grad"),
        rel_err: rel_err(&fam.entropy_grad()?.to_flat(), &fd),
        tol: GRAD_TOL,
    });

    let u = random_vec(&mut rng, d, 1.0);
    let fd = fd_gradient(&|x| Ok(dot(&u, &with_w(x)?.transform(&noise)?)), &w, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: jtvp"),
        rel_err: rel_err(&fam.jtvp(&noise, &u)?.to_flat(), &fd),
        tol: GRAD_TOL,
    });

    let fd = fd_gradient(&|x| s.expected_quadratic(&with_w(x)?), &w, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: grad_expected_quadratic"),
        rel_err: rel_err(&s.grad_expected_quadratic(&fam)?.to_flat(), &fd),
        tol: GRAD_TOL,
    });

    let z = fam.transform(&noise)?;
    let fd = fd_gradient(&|x| s.value(x), &z, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: quad_grad"),
        rel_err: rel_err(&s.quad_grad(&z)?, &fd),
        tol: GRAD_TOL,
    });

    let model = GaussianModel::new(
        random_vec(&mut rng, d, 1.0),
        {
            let a = random_vec(&mut rng, d * d, 0.3);
            let mut p = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    p[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>();
                }
                p[i * d + i] += 1.0;
            }
            p
        },
    )?;
    let sample = base_grad(&model, &fam, &noise)?;
    let v = s.to_flat();
    let with_v = |x: &[f64]| -> Result<QuadSurrogate> {
        let mut t = s.clone();
        t.set_flat(x)?;
        Ok(t)
    };
    let objective1 = |x: &[f64]| -> Result<f64> {
        let mut e = sample.g.clone();
        e.axpy(1.0, &with_v(x)?.cv_value(&fam, &noise)?);
        Ok(e.sq_norm())
    };
    let fd = fd_gradient(&objective1, &v, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: fit_grad_method1"),
        rel_err: rel_err(&s.fit_grad_method1(&fam, &noise, &sample.g)?.to_flat(), &fd),
        tol: GRAD_TOL,
    });

    let objective2 = |x: &[f64]| -> Result<f64> {
        let q = with_v(x)?.quad_grad(&z)?;
        Ok(0.5 * sample.grad_f.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    };
    let fd = fd_gradient(&objective2, &v, 1e-6)?;
    out.push(CheckResult {
        name: format!("{label}: fit_grad_method2"),
        rel_err: rel_err(&s.fit_grad_method2(&fam, &noise, &sample.grad_f)?.to_flat(), &fd),
        tol: GRAD_TOL,
    });
    Ok(out)
}

/// Every check run by the `check-grads` subcommand.
pub fn check_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = rng_for(seed, INIT_STREAM);

    let logistic = LogisticModel::new(data::synth_logistic(60, 7, seed)?);
    let z = random_vec(&mut rng, logistic.dim(), 0.3);
    out.extend(check_model("logistic", &logistic, &z)?);

    let frisk = HierarchicalModel::new(data::synth_frisk(3, 8, seed)?);
    let mut z = random_vec(&mut rng, frisk.dim(), 0.3);
    z[0] = 4.0;
    out.extend(check_model("hierarchical poisson", &frisk, &z)?);

    let bnn = BnnModel::new(data::synth_regression(30, 4, seed)?, 6);
    let z = random_vec(&mut rng, bnn.dim(), 0.5);
    out.extend(check_model("bnn", &bnn, &z)?);

    let gaussian = GaussianModel::standard(5);
    let z = random_vec(&mut rng, 5, 1.0);
    out.extend(check_model("gaussian", &gaussian, &z)?);

    for kind in [FamilyKind::MeanLogScale, FamilyKind::MeanDiagLowRank, FamilyKind::MeanCholesky] {
        for r_v in [0, 1, 3] {
            let mut checks = check_family(kind, 6, 2, r_v, seed + r_v as u64)?;
            for c in &mut checks {
                c.name = format!("{} (r_v={r_v})", c.name);
            }
            out.extend(checks);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in check_all(3).unwrap() {
            assert!(c.passed(), "{} rel err {:.3e}", c.name, c.rel_err);
        }
    }
}
