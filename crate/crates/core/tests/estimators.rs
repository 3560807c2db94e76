mod common;

use common::{all_kinds, family_cov, fd_grad, random_family, random_spd, random_surrogate, Moments};
use nalgebra::{DMatrix, DVector};
use quadcv::control_variates::TaylorExpansion;
use quadcv::estimators::{
    base_grad, corrected_grad, elbo_estimate, empirical_variance, evaluate_samples, multi_sample, Block, CvSource,
};
use quadcv::families::{FamilyParams, WGradient};
use quadcv::models::{GaussianModel, LogJointModel};

fn gaussian_target(d: usize, seed: u64) -> GaussianModel {
    let mut rng = common::rng(seed);
    GaussianModel::new(common::std_normals(&mut rng, d), random_spd(d, 2.0, &mut rng)).unwrap()
}

/// ELBO of `q` against a Gaussian target, from dense algebra.
fn closed_form_elbo(model: &GaussianModel, fam: &FamilyParams) -> f64 {
    let d = model.dim();
    let p = DMatrix::from_row_slice(d, d, model.precision());
    let cov = family_cov(fam);
    let delta = DVector::from_iterator(d, fam.mean().iter().zip(model.center()).map(|(a, b)| a - b));
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let log_norm = 0.5 * p.determinant().ln() - 0.5 * d as f64 * ln_2pi;
    let expected_f = log_norm - 0.5 * (delta.dot(&(&p * &delta)) + (&p * &cov).trace());
    let entropy = 0.5 * (d as f64 * (1.0 + ln_2pi) + cov.determinant().ln());
    expected_f + entropy
}

#[test]
fn elbo_estimate_matches_the_closed_form() {
    for kind in all_kinds() {
        let model = gaussian_target(4, 1);
        let mut rng = common::rng(2);
        let fam = random_family(kind, 4, 2, 0.3, &mut rng);
        let exact = closed_form_elbo(&model, &fam);
        let mut m = Moments::new(1);
        for _ in 0..200 {
            let noises = (0..100).map(|_| fam.sample_noise(&mut rng)).collect();
            let samples = evaluate_samples(&model, &fam, CvSource::None, noises).unwrap();
            m.push(&[elbo_estimate(&samples, &fam).unwrap()]);
        }
        assert!(m.max_z(&[exact]) < 5.0, "{}: {:?} vs {exact}", kind.name(), m.mean());
    }
}

#[test]
fn estimators_are_unbiased_for_the_elbo_gradient() {
    for kind in all_kinds() {
        let model = gaussian_target(4, 3);
        let mut rng = common::rng(4);
        let fam = random_family(kind, 4, 2, 0.3, &mut rng);
        let exact = fd_grad(
            |w| {
                let mut f = fam.clone();
                f.set_flat(w).unwrap();
                closed_form_elbo(&model, &f)
            },
            &fam.to_flat(),
            1e-6,
        );
        let surrogate = random_surrogate(4, 2, 0.5, &mut rng);
        let taylor = TaylorExpansion::new(&model, &fam).unwrap();
        for (label, cv, gamma) in [
            ("base", CvSource::None, 0.0),
            ("quadratic", CvSource::Quadratic(&surrogate), 0.8),
            ("taylor", CvSource::Taylor(&taylor), 1.0),
        ] {
            let mut m = Moments::new(fam.num_params());
            for _ in 0..40_000 {
                let noises = vec![fam.sample_noise(&mut rng)];
                let s = evaluate_samples(&model, &fam, cv, noises).unwrap();
                m.push(&corrected_grad(&s[0], gamma).to_flat());
            }
            let z = m.max_z(&exact);
            assert!(z < 5.0, "{} / {label}: z-score {z}", kind.name());
        }
    }
}

#[test]
fn variance_of_the_corrected_estimator_is_quadratic_in_gamma() {
    let model = gaussian_target(5, 5);
    let mut rng = common::rng(6);
    let fam = random_family(quadcv::families::FamilyKind::MeanCholesky, 5, 0, 0.3, &mut rng);
    let s = random_surrogate(5, 2, 0.5, &mut rng);
    let noises = (0..2000).map(|_| fam.sample_noise(&mut rng)).collect();
    let samples = evaluate_samples(&model, &fam, CvSource::Quadratic(&s), noises).unwrap();
    let gs: Vec<WGradient> = samples.iter().map(|x| x.g.clone()).collect();
    let cs: Vec<WGradient> = samples.iter().map(|x| x.c.clone()).collect();
    let var_g = empirical_variance(&gs, Block::All).unwrap();
    let var_c = empirical_variance(&cs, Block::All).unwrap();
    let n = samples.len() as f64;
    let mut mean_g = WGradient::zeros_like(&gs[0]);
    let mut mean_c = WGradient::zeros_like(&cs[0]);
    for (g, c) in gs.iter().zip(&cs) {
        mean_g.axpy(1.0 / n, g);
        mean_c.axpy(1.0 / n, c);
    }
    let cov: f64 = gs.iter().zip(&cs).map(|(g, c)| g.dot(c)).sum::<f64>() / n - mean_g.dot(&mean_c);
    for gamma in [-1.0, 0.3, 2.0] {
        let xs: Vec<WGradient> = samples.iter().map(|x| corrected_grad(x, gamma)).collect();
        let got = empirical_variance(&xs, Block::All).unwrap();
        let expected = var_g + 2.0 * gamma * cov + gamma * gamma * var_c;
        assert!((got - expected).abs() < 1e-9 * expected.abs(), "gamma {gamma}: {got} vs {expected}");
    }
}

#[test]
fn averaging_m_samples_divides_the_variance_by_m() {
    let model = gaussian_target(3, 7);
    let mut rng = common::rng(8);
    let fam = random_family(quadcv::families::FamilyKind::MeanLogScale, 3, 0, 0.3, &mut rng);
    let single: Vec<WGradient> =
        (0..20_000).map(|_| base_grad(&model, &fam, &fam.sample_noise(&mut rng)).unwrap().g).collect();
    let averaged: Vec<WGradient> =
        (0..5_000).map(|_| multi_sample(&model, &fam, CvSource::None, 8, 0.0, &mut rng).unwrap().0).collect();
    let ratio = empirical_variance(&single, Block::All).unwrap() / empirical_variance(&averaged, Block::All).unwrap();
    assert!((ratio - 8.0).abs() < 0.8, "variance ratio {ratio}");
}

#[test]
fn multi_sample_mean_is_the_mean_of_its_samples() {
    let model = gaussian_target(4, 9);
    let mut rng = common::rng(10);
    let fam = random_family(quadcv::families::FamilyKind::MeanDiagLowRank, 4, 2, 0.3, &mut rng);
    let s = random_surrogate(4, 2, 0.5, &mut rng);
    let (mean, samples) = multi_sample(&model, &fam, CvSource::Quadratic(&s), 6, 0.7, &mut rng).unwrap();
    let mut expected = WGradient::zeros_like(&mean);
    for x in &samples {
        expected.axpy(1.0 / 6.0, &corrected_grad(x, 0.7));
    }
    assert!(common::rel_err(&mean.to_flat(), &expected.to_flat()) < 1e-14);
    assert!(multi_sample(&model, &fam, CvSource::None, 0, 0.0, &mut rng).is_err());
}

#[test]
fn two_pass_variance_matches_a_naive_oracle_and_survives_offsets() {
    let mut rng = common::rng(11);
    let xs: Vec<WGradient> = (0..500)
        .map(|_| WGradient { mean_block: common::normals(&mut rng, 3, 2.0), scale_block: common::normals(&mut rng, 2, 0.5) })
        .collect();
    let naive = |sel: &dyn Fn(&WGradient) -> Vec<f64>| {
        let n = xs.len() as f64;
        let len = sel(&xs[0]).len();
        let mut total = 0.0;
        for k in 0..len {
            let mean: f64 = xs.iter().map(|x| sel(x)[k]).sum::<f64>() / n;
            total += xs.iter().map(|x| (sel(x)[k] - mean).powi(2)).sum::<f64>() / n;
        }
        total
    };
    let mean_block = naive(&|x| x.mean_block.clone());
    let scale_block = naive(&|x| x.scale_block.clone());
    assert!((empirical_variance(&xs, Block::Mean).unwrap() - mean_block).abs() < 1e-12 * mean_block);
    assert!((empirical_variance(&xs, Block::Scale).unwrap() - scale_block).abs() < 1e-12 * scale_block);
    let total = empirical_variance(&xs, Block::All).unwrap();
    assert!((total - mean_block - scale_block).abs() < 1e-12 * total);

    // A large common offset must not destroy precision.
    let shifted: Vec<WGradient> = xs
        .iter()
        .map(|x| WGradient {
            mean_block: x.mean_block.iter().map(|v| v + 1e8).collect(),
            scale_block: x.scale_block.clone(),
        })
        .collect();
    let got = empirical_variance(&shifted, Block::Mean).unwrap();
    assert!((got - mean_block).abs() < 1e-6 * mean_block, "{got} vs {mean_block}");
    assert!(empirical_variance(&xs[..1], Block::All).is_err());
}
