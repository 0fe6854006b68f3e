mod support;

use rosa_core::linalg::{numerical_rank, seeded_rng, Matrix};
use rosa_core::oracle::{
    add_orthogonal_noise, closed_form_iterate, lora_error_lower_bound, realizable_instance, rosa_exact_iterate,
    rrr_optimum, RegressionProblem,
};
use support::{descent_baseline, rank_update_error};

fn achieved(prob: &RegressionProblem, rank: usize) -> f64 {
    let upd = rrr_optimum(prob, rank).unwrap();
    rank_update_error(prob.x(), prob.y(), prob.w0(), &upd.a, &upd.b)
}

fn noisy_instance(n: usize, d: usize, p: usize, r: usize, seed: u64) -> RegressionProblem {
    add_orthogonal_noise(&realizable_instance(n, d, p, r, seed).unwrap(), 0.3, seed + 1000).unwrap()
}

#[test]
fn rrr_matches_multi_restart_descent() {
    let prob = noisy_instance(12, 6, 4, 4, 5);
    let closed = achieved(&prob, 2);
    let descent = descent_baseline(prob.x(), prob.y(), prob.w0(), 2, 20, 5);
    assert!((closed - descent).abs() <= 1e-6, "closed {closed} vs descent {descent}");
}

#[test]
fn full_rank_update_leaves_only_irreducible_error() {
    let prob = noisy_instance(15, 5, 4, 3, 6);
    for rank in 3..=4 {
        assert!((achieved(&prob, rank) - prob.irreducible_error()).abs() <= 1e-9);
    }
}

#[test]
fn bound_is_attained_and_dominates_random_updates() {
    let mut rng = seeded_rng(99);
    for seed in 0..10 {
        let prob = noisy_instance(20, 7, 5, 5, seed);
        for rank in 1..=5 {
            let bound = lora_error_lower_bound(&prob, rank).unwrap();
            let excess = achieved(&prob, rank) - prob.irreducible_error();
            assert!((excess - bound).abs() <= 1e-8 * bound.max(1.0), "seed {seed} rank {rank}");
            for _ in 0..20 {
                let a = Matrix::random_normal(7, rank, 1.0, &mut rng);
                let b = Matrix::random_normal(rank, 5, 1.0, &mut rng);
                let err = rank_update_error(prob.x(), prob.y(), prob.w0(), &a, &b);
                assert!(err >= bound + prob.irreducible_error() - 1e-9);
            }
        }
    }
}

#[test]
fn realizable_instance_has_requested_residual_rank() {
    for r in 0..=4 {
        let prob = realizable_instance(25, 6, 4, r, 17).unwrap();
        let residual = prob.x().matmul(prob.w0()).unwrap().sub(prob.y()).unwrap();
        assert_eq!(numerical_rank(&residual, 1e-9).unwrap(), r);
        if r == 0 {
            assert_eq!(prob.squared_error(prob.w0()).unwrap(), 0.0);
        }
    }
}

#[test]
fn rank_one_reaches_zero_in_exactly_residual_rank_steps() {
    let prob = realizable_instance(30, 10, 8, 5, 8).unwrap();
    let trace = rosa_exact_iterate(&prob, 1, 7).unwrap();
    assert_eq!(trace.t_predicted, 5);
    let energy = prob.y().frobenius_norm_sq();
    assert!(trace.steps[4].error > 1e-6 * energy);
    assert!(trace.steps[5].error <= 1e-16 * energy);
    assert_eq!(trace.converged_at(1e-16), Some(5));
}

#[test]
fn full_rank_update_converges_in_one_step() {
    let prob = realizable_instance(30, 10, 8, 5, 9).unwrap();
    let trace = rosa_exact_iterate(&prob, 5, 2).unwrap();
    assert_eq!(trace.t_predicted, 1);
    assert_eq!(trace.converged_at(1e-16), Some(1));
}

#[test]
fn errors_never_increase() {
    for seed in 0..5 {
        let prob = noisy_instance(18, 6, 5, 5, seed);
        let errors = rosa_exact_iterate(&prob, 2, 6).unwrap().errors();
        assert!(errors.windows(2).all(|w| w[1] <= w[0]));
        let last = *errors.last().unwrap();
        assert!((last - prob.irreducible_error()).abs() <= 1e-9 * prob.y().frobenius_norm_sq());
    }
}

#[test]
fn iterates_match_closed_form_recurrence() {
    for seed in 0..5 {
        let prob = noisy_instance(20, 7, 6, 6, seed);
        for rank in [1, 2, 4] {
            let trace = rosa_exact_iterate(&prob, rank, 4).unwrap();
            for (t, step) in trace.steps.iter().enumerate() {
                let closed = closed_form_iterate(&prob, rank, t).unwrap();
                let diff = step.weight.sub(&closed).unwrap().frobenius_norm();
                assert!(diff <= 1e-8, "seed {seed} rank {rank} step {t}: {diff:e}");
            }
        }
    }
}
