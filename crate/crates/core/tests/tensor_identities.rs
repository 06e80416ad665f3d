//! Unfolding, vectorization and Khatri-Rao identities on random CP tensors.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rischan::scenario::complex_normal;
use rischan::tensor::{
    fold, fold_vector, khatri_rao, rel_err_matrix, unfold, vectorize, CMatrix, CVector, Kruskal,
    Tensor3,
};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
}

/// Random rank-`r` CP tensor plus its factors with the weights folded into A.
fn instance(seed: u64, d: (usize, usize, usize), r: usize) -> (Tensor3, CMatrix, CMatrix, CMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c) = (
        rand_mat(&mut rng, d.0, r),
        rand_mat(&mut rng, d.1, r),
        rand_mat(&mut rng, d.2, r),
    );
    let w: Vec<_> = (0..r).map(|_| complex_normal(&mut rng, 1.0)).collect();
    let t = Kruskal::new(a.clone(), b.clone(), c.clone(), w.clone()).to_dense();
    let mut aw = a;
    for (u, wu) in w.iter().enumerate() {
        let col = aw.column(u) * *wu;
        aw.set_column(u, &col);
    }
    (t, aw, b, c)
}

fn dims() -> impl Strategy<Value = ((usize, usize, usize), usize, u64)> {
    (
        (1usize..=6, 1usize..=6, 1usize..=6),
        1usize..=3,
        any::<u64>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mode_unfoldings_match_khatri_rao_forms((d, r, seed) in dims()) {
        let (t, a, b, c) = instance(seed, d, r);
        prop_assert!(rel_err_matrix(&unfold(&t, 1), &(&a * khatri_rao(&c, &b).transpose())) < 1e-12);
        prop_assert!(rel_err_matrix(&unfold(&t, 2), &(&b * khatri_rao(&c, &a).transpose())) < 1e-12);
        prop_assert!(rel_err_matrix(&unfold(&t, 3), &(&c * khatri_rao(&b, &a).transpose())) < 1e-12);
    }

    #[test]
    fn vectorization_is_triple_khatri_rao((d, r, seed) in dims()) {
        let (t, a, b, c) = instance(seed, d, r);
        let ones = CVector::from_element(r, rischan::tensor::ONE);
        let v = khatri_rao(&khatri_rao(&c, &b), &a) * ones;
        let lhs = CMatrix::from_column_slice(v.len(), 1, vectorize(&t).as_slice());
        let rhs = CMatrix::from_column_slice(v.len(), 1, v.as_slice());
        prop_assert!(rel_err_matrix(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn fold_inverts_unfold((d, r, seed) in dims(), mode in 1usize..=3) {
        let (t, ..) = instance(seed, d, r);
        prop_assert_eq!(fold(&unfold(&t, mode), mode, d), t.clone());
        prop_assert_eq!(fold_vector(&vectorize(&t), d), t);
    }

    #[test]
    fn kruskal_norms_match_dense((d, r, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Kruskal::new(rand_mat(&mut rng, d.0, r), rand_mat(&mut rng, d.1, r), rand_mat(&mut rng, d.2, r), vec![rischan::tensor::ONE; r]);
        let dense = k.to_dense().frobenius_sq();
        prop_assert!((k.frobenius_sq() - dense).abs() <= 1e-12 * dense.max(1e-300));
    }
}
