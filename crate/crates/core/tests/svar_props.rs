use cika::scm::{nonidentifiability_witness, reduced_form_covariance};
use cika::svar::{identify_chain, ChainFixture, SvarProbe};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn structural_pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (2usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(-0.3f64..0.3, n * n),
            prop::collection::vec(0.5f64..2.0, n),
        )
            .prop_map(move |(off, var)| {
                let mut b0 = DMatrix::from_row_slice(n, n, &off);
                for i in 0..n {
                    b0[(i, i)] = 1.0;
                }
                (
                    b0,
                    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(var)),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn witness_preserves_reduced_form((b0, cov) in structural_pair(), seed in any::<u64>()) {
        let (b0_alt, cov_alt) = nonidentifiability_witness(&b0, &cov, seed).unwrap();
        let a = reduced_form_covariance(&b0, &cov).unwrap();
        let b = reduced_form_covariance(&b0_alt, &cov_alt).unwrap();
        prop_assert!((&a - &b).norm() < 1e-9);
        prop_assert!((&b0 - &b0_alt).amax() >= 1e-3);
    }
}

#[test]
fn shuffled_chains_are_oriented() {
    for (n, seed) in [(3usize, 1u64), (4, 2), (5, 3)] {
        let f = ChainFixture::new(&vec![0.8; n], 1.0, Some(seed)).unwrap();
        let r = identify_chain(&SvarProbe::new(f.scm.clone()), n, 200, seed).unwrap();
        assert_eq!(r.edges, f.edges(), "n={n}");
        assert_eq!(r.interventions_used, n - 1);
        assert!(r.ambiguity.is_none());
    }
}
