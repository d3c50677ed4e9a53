mod common;

use common::*;

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..5 {
        for case in op_cases(seed) {
            let ad = autodiff(&case.inputs, &case.f);
            let fd = finite_diff(&case.inputs, 1e-5, &|x| (case.f)(x).item());
            let err = max_rel_err(&ad, &fd);
            assert!(err < 1e-5, "{} (seed {seed}): rel err {err:e}", case.name);
        }
    }
}

#[test]
fn second_order_through_mlp_bce() {
    for seed in 0..3 {
        let (p, x, y) = mlp_bce_problem(seed);
        let ad = grad_norm_sq_autodiff(&p, &x, &y);
        let fd = finite_diff(&p, 1e-5, &|q| grad_norm_sq(q, &x, &y));
        let err = max_rel_err(&ad, &fd);
        assert!(err < 1e-4, "seed {seed}: rel err {err:e}");
    }
}
