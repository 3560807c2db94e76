mod common;

use common::{dlr_dense, rel_err};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use quadcv::linalg::{trace_product, DiagMat, DiagPlusLowRank, LowRankFactor, LowerTriangular, StructuredMatrix};

fn dlr_strategy(max_d: usize, max_r: usize) -> impl Strategy<Value = DiagPlusLowRank> {
    (1..=max_d, 0..=max_r).prop_flat_map(|(d, r)| {
        (prop::collection::vec(0.1f64..3.0, d), prop::collection::vec(-1.5f64..1.5, d * r)).prop_map(
            move |(diag, f)| {
                DiagPlusLowRank::new(DiagMat::new(diag).unwrap(), LowRankFactor::new(d, r, f).unwrap()).unwrap()
            },
        )
    })
}

fn lower_strategy(d: usize) -> impl Strategy<Value = LowerTriangular> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |mut data| {
        for i in 0..d {
            for j in i + 1..d {
                data[i * d + j] = 0.0;
            }
            data[i * d + i] = data[i * d + i].abs() + 0.5;
        }
        LowerTriangular::new(d, data).unwrap()
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dlr_matvec_matches_dense(m in dlr_strategy(12, 4), seed in any::<u64>()) {
        let x = common::std_normals(&mut common::rng(seed), m.dim());
        let dense = dlr_dense(&m) * DVector::from_column_slice(&x);
        prop_assert!(rel_err(&m.matvec(&x).unwrap(), dense.as_slice()) < 1e-12);
    }

    #[test]
    fn dlr_logdet_matches_dense(m in dlr_strategy(12, 4)) {
        let dense = dlr_dense(&m).cholesky().unwrap();
        let expected: f64 = 2.0 * dense.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        prop_assert!((m.logdet().unwrap() - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn dlr_inverse_parts_match_dense(m in dlr_strategy(10, 3)) {
        let inv = dlr_dense(&m).try_inverse().unwrap();
        let (diag, inv_f) = m.inverse_parts().unwrap();
        let expected_diag: Vec<f64> = inv.diagonal().iter().copied().collect();
        prop_assert!(rel_err(&diag, &expected_diag) < 1e-9);
        let f = common::factor_dense(m.factor());
        let expected_f = &inv * &f;
        let got = common::factor_dense(&inv_f);
        prop_assert!(rel_err(got.as_slice(), expected_f.as_slice()) < 1e-9);
    }

    #[test]
    fn dlr_diag_of_matches_dense(m in dlr_strategy(12, 4)) {
        let expected: Vec<f64> = dlr_dense(&m).diagonal().iter().copied().collect();
        prop_assert!(rel_err(&m.diag_of(), &expected) < 1e-13);
    }

    #[test]
    fn trace_product_matches_dense(b in dlr_strategy(8, 3), seed in any::<u64>()) {
        let d = b.dim();
        let mut rng = common::rng(seed);
        let f = LowRankFactor::new(d, 2, common::std_normals(&mut rng, d * 2)).unwrap();
        let diag = DiagMat::new(common::std_normals(&mut rng, d).iter().map(|x| x.abs() + 0.1).collect()).unwrap();
        let sigma_dlr = DiagPlusLowRank::new(diag, f).unwrap();
        let mut l = common::std_normals(&mut rng, d * d);
        for i in 0..d {
            for j in i + 1..d {
                l[i * d + j] = 0.0;
            }
        }
        let sigmas = [
            StructuredMatrix::Diag(sigma_dlr.diag().clone()),
            StructuredMatrix::DiagLowRank(sigma_dlr),
            StructuredMatrix::Cholesky(LowerTriangular::new(d, l).unwrap()),
        ];
        let bd = dlr_dense(&b);
        let bs = StructuredMatrix::DiagLowRank(b);
        for sigma in &sigmas {
            let s = DMatrix::from_row_slice(d, d, &sigma.to_dense());
            let expected = (&bd * s).trace();
            let got = trace_product(&bs, sigma).unwrap();
            prop_assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn cholesky_matvec_and_logdet(l in (1usize..10).prop_flat_map(lower_strategy), seed in any::<u64>()) {
        let d = l.dim();
        let dense = DMatrix::from_row_slice(d, d, l.as_slice());
        let x = common::std_normals(&mut common::rng(seed), d);
        let expected = &dense * DVector::from_column_slice(&x);
        prop_assert!(rel_err(&l.matvec(&x).unwrap(), expected.as_slice()) < 1e-13);
        let cov = &dense * dense.transpose();
        prop_assert!(rel_err(&StructuredMatrix::Cholesky(l.clone()).to_dense(), &row_major(&cov)) < 1e-13);
        let logdet = cov.determinant().ln();
        prop_assert!((l.logdet_cov().unwrap() - logdet).abs() < 1e-9 * logdet.abs().max(1.0));
    }
}

#[test]
fn rejects_bad_shapes() {
    assert!(DiagMat::new(vec![1.0, f64::NAN]).is_err());
    assert!(LowRankFactor::new(3, 2, vec![0.0; 5]).is_err());
    assert!(DiagPlusLowRank::new(DiagMat::identity(3), LowRankFactor::zeros(4, 1)).is_err());
    assert!(LowerTriangular::new(2, vec![1.0, 1.0, 0.0, 1.0]).is_err());
    let bad = DiagPlusLowRank::new(DiagMat::new(vec![1.0, -1.0]).unwrap(), LowRankFactor::zeros(2, 1)).unwrap();
    assert!(bad.logdet().is_err());
    assert!(DiagMat::identity(3).matvec(&[1.0, 2.0]).is_err());
}
