use proptest::prelude::*;
use rosa_core::adapters::{LoraAdapter, RosaAdapter, SamplingScheme};
use rosa_core::linalg::{numerical_rank, seeded_rng, Matrix, SeededRng};

fn scheme_from(i: u8) -> SamplingScheme {
    SamplingScheme::ALL[i as usize % 3]
}

/// ROSA adapter whose factors have been perturbed as if trained.
fn trained_rosa(m: usize, n: usize, rank: usize, scheme: SamplingScheme, rng: &mut SeededRng) -> RosaAdapter {
    let w = Matrix::random_normal(m, n, 1.0, rng);
    let mut r = RosaAdapter::new(&w, rank, scheme, rng).unwrap();
    let da = Matrix::random_normal(m, rank, 0.3, rng);
    let db = Matrix::random_normal(rank, n, 0.3, rng);
    r.a_mut().add_assign(&da).unwrap();
    r.b_mut().add_assign(&db).unwrap();
    r
}

#[test]
fn rosa_forward_matches_dense_materialization() {
    let mut rng = seeded_rng(10);
    let r = trained_rosa(6, 5, 2, SamplingScheme::Random, &mut rng);
    let x = Matrix::random_normal(5, 7, 1.0, &mut rng);
    let dense = r.effective_weight().matmul(&x).unwrap();
    assert!(r.forward(&x).unwrap().max_abs_diff(&dense).unwrap() <= 1e-10);
}

#[test]
fn lora_forward_matches_dense_materialization() {
    let mut rng = seeded_rng(11);
    let w = Matrix::random_normal(6, 5, 1.0, &mut rng);
    let mut l = LoraAdapter::new(&w, 3, &mut rng).unwrap();
    *l.b_mut() = Matrix::random_normal(3, 5, 1.0, &mut rng);
    let x = Matrix::random_normal(5, 7, 1.0, &mut rng);
    let dense = w.add(&l.a().matmul(l.b()).unwrap()).unwrap().matmul(&x).unwrap();
    assert!(l.forward(&x).unwrap().max_abs_diff(&dense).unwrap() <= 1e-10);
}

#[test]
fn zero_adapter_factorize_is_factorization_of_fixed_weight() {
    let mut rng = seeded_rng(12);
    let w = Matrix::random_normal(5, 5, 1.0, &mut rng);
    let mut r = RosaAdapter::new_deferred(&w, 2, SamplingScheme::Top).unwrap();
    r.factorize_step(&mut rng).unwrap();
    let direct = RosaAdapter::new(&w, 2, SamplingScheme::Top, &mut rng).unwrap();
    assert_eq!(r.a(), direct.a());
    assert_eq!(r.b(), direct.b());
}

#[test]
fn lora_residual_rank_bounded_after_updates() {
    let mut rng = seeded_rng(13);
    let w = Matrix::random_normal(10, 8, 1.0, &mut rng);
    for rank in 1..=4 {
        let mut l = LoraAdapter::new(&w, rank, &mut rng).unwrap();
        for _ in 0..20 {
            let da = Matrix::random_normal(10, rank, 0.1, &mut rng);
            let db = Matrix::random_normal(rank, 8, 0.1, &mut rng);
            l.a_mut().add_assign(&da).unwrap();
            l.b_mut().add_assign(&db).unwrap();
        }
        let res = l.effective_weight().sub(&w).unwrap();
        assert!(numerical_rank(&res, 1e-8).unwrap() <= rank);
    }
}

#[test]
fn rosa_residual_rank_exceeds_adapter_rank_after_random_cycles() {
    let mut rng = seeded_rng(14);
    let w = Matrix::random_normal(8, 8, 1.0, &mut rng);
    let mut r = RosaAdapter::new(&w, 1, SamplingScheme::Random, &mut rng).unwrap();
    for _ in 0..3 {
        let db = Matrix::random_normal(1, 8, 0.5, &mut rng);
        r.b_mut().add_assign(&db).unwrap();
        r.factorize_step(&mut rng).unwrap();
    }
    assert!(numerical_rank(&r.residual(), 1e-8).unwrap() > 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factorize_preserves_forward(m in 2usize..9, n in 2usize..9, scheme in any::<u8>(), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let rank = 1 + (seed as usize) % m.min(n);
        let mut r = trained_rosa(m, n, rank, scheme_from(scheme), &mut rng);
        let probes = Matrix::random_normal(n, 100, 1.0, &mut rng);
        let before = r.forward(&probes).unwrap();
        r.factorize_step(&mut rng).unwrap();
        prop_assert_eq!(r.steps_since_factorize(), 0);
        let after = r.forward(&probes).unwrap();
        prop_assert!(before.max_abs_diff(&after).unwrap() <= 1e-9);
    }

    #[test]
    fn double_factorize_round_trip(m in 2usize..9, n in 2usize..9, scheme in any::<u8>(), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let rank = 1 + (seed as usize) % m.min(n);
        let mut r = trained_rosa(m, n, rank, scheme_from(scheme), &mut rng);
        let w0 = r.effective_weight();
        r.factorize_step(&mut rng).unwrap();
        r.factorize_step(&mut rng).unwrap();
        prop_assert!(r.effective_weight().relative_error(&w0).unwrap() <= 1e-10);
    }
}
