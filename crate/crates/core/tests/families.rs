mod common;

use common::{all_kinds, family_cov, fd_grad, random_family, rel_err, Moments};
use nalgebra::DMatrix;
use quadcv::families::{FamilyKind, FamilyParams};

#[test]
fn samples_have_the_family_moments() {
    for kind in all_kinds() {
        let mut rng = common::rng(11);
        let d = 4;
        let fam = random_family(kind, d, 2, 0.4, &mut rng);
        let cov = family_cov(&fam);
        let mut first = Moments::new(d);
        let mut second = Moments::new(d * d);
        for _ in 0..200_000 {
            let z = fam.transform(&fam.sample_noise(&mut rng)).unwrap();
            let centered: Vec<f64> = z.iter().zip(fam.mean()).map(|(a, b)| a - b).collect();
            first.push(&z);
            let outer: Vec<f64> = (0..d * d).map(|k| centered[k / d] * centered[k % d]).collect();
            second.push(&outer);
        }
        let z_mean = first.max_z(fam.mean());
        let z_cov = second.max_z(cov.as_slice());
        assert!(z_mean < 5.0, "{}: mean z-score {z_mean}", kind.name());
        assert!(z_cov < 5.0, "{}: covariance z-score {z_cov}", kind.name());
    }
}

#[test]
fn mean_cov_matches_parameters() {
    for kind in all_kinds() {
        let fam = random_family(kind, 6, 2, 0.5, &mut common::rng(3));
        let (mean, cov) = fam.mean_cov();
        assert_eq!(mean, fam.mean());
        assert!(rel_err(&cov.to_dense(), family_cov(&fam).as_slice()) < 1e-13, "{}", kind.name());
    }
}

#[test]
fn entropy_matches_dense_logdet() {
    for kind in all_kinds() {
        for seed in 0..5 {
            let d = 7;
            let fam = random_family(kind, d, 3, 0.6, &mut common::rng(seed));
            let cov: DMatrix<f64> = family_cov(&fam);
            let logdet = cov.determinant().ln();
            let expected = 0.5 * (d as f64 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + logdet);
            let got = fam.entropy().unwrap();
            assert!((got - expected).abs() < 1e-9, "{}: {got} vs {expected}", kind.name());
        }
    }
}

#[test]
fn jtvp_is_the_transpose_of_the_transform_jacobian() {
    for kind in all_kinds() {
        let mut rng = common::rng(21);
        let fam = random_family(kind, 5, 2, 0.4, &mut rng);
        let noise = fam.sample_noise(&mut rng);
        let u = common::std_normals(&mut rng, 5);
        let w = fam.to_flat();
        let fd = fd_grad(
            |x| {
                let mut f = fam.clone();
                f.set_flat(x).unwrap();
                u.iter().zip(f.transform(&noise).unwrap()).map(|(a, b)| a * b).sum::<f64>()
            },
            &w,
            1e-6,
        );
        assert!(rel_err(&fam.jtvp(&noise, &u).unwrap().to_flat(), &fd) < 1e-7, "{}", kind.name());
    }
}

#[test]
fn entropy_gradient_matches_finite_differences() {
    for kind in all_kinds() {
        let fam = random_family(kind, 5, 2, 0.4, &mut common::rng(8));
        let fd = fd_grad(
            |x| {
                let mut f = fam.clone();
                f.set_flat(x).unwrap();
                f.entropy().unwrap()
            },
            &fam.to_flat(),
            1e-6,
        );
        assert!(rel_err(&fam.entropy_grad().unwrap().to_flat(), &fd) < 1e-7, "{}", kind.name());
    }
}

#[test]
fn isotropic_start_and_flat_round_trip() {
    for kind in all_kinds() {
        let fam = FamilyParams::isotropic(kind, vec![1.0, -2.0, 0.5], 0.3, 2).unwrap();
        let cov = family_cov(&fam);
        let expected = DMatrix::<f64>::identity(3, 3) * 0.09;
        assert!((cov - expected).abs().max() < 1e-15, "{}", kind.name());
        let mut other = random_family(kind, 3, 2, 1.0, &mut common::rng(1));
        other.set_flat(&fam.to_flat()).unwrap();
        assert_eq!(other, fam);
        assert!(other.set_flat(&[0.0; 2]).is_err());
    }
}

#[test]
fn noise_has_the_family_shape() {
    let mut rng = common::rng(0);
    let diag = FamilyParams::isotropic(FamilyKind::MeanLogScale, vec![0.0; 4], 1.0, 0).unwrap();
    let dlr = FamilyParams::isotropic(FamilyKind::MeanDiagLowRank, vec![0.0; 4], 1.0, 3).unwrap();
    assert_eq!(diag.sample_noise(&mut rng).eps_r.len(), 0);
    let n = dlr.sample_noise(&mut rng);
    assert_eq!((n.eps_d.len(), n.eps_r.len()), (4, 3));
    assert_eq!(FamilyKind::parse("full"), Some(FamilyKind::MeanCholesky));
    assert_eq!(FamilyKind::parse("dense"), None);
}
