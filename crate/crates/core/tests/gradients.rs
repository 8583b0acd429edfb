mod common;

use common::{worst_over_seeds, CASES, GRAD_TOL};

macro_rules! gradient_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                let (_, case) = CASES
                    .iter()
                    .find(|(n, _)| *n == stringify!($name))
                    .expect("case is registered");
                let err = worst_over_seeds(*case);
                assert!(err < GRAD_TOL, "relative error {err:e}");
            }
        )*

        #[test]
        fn every_case_has_a_test() {
            let named = [$(stringify!($name)),*];
            for (n, _) in CASES {
                assert!(named.contains(n), "no test for {n}");
            }
        }
    };
}

gradient_tests!(
    matmul,
    add,
    add_row_broadcast,
    sub_col_broadcast,
    mul,
    mul_row_broadcast,
    scale,
    scale_by,
    relu,
    sigmoid,
    tanh,
    exp,
    log,
    elu,
    leaky_relu,
    softmax_cols,
    softmax_rows,
    log_softmax_cols,
    log_softmax_rows,
    concat_cols,
    concat_rows,
    slice_cols,
    slice_rows,
    reduce_sum,
    reduce_mean,
    reduce_max,
    sum_all,
    cross_entropy,
    spmm,
    neighborhood_attention,
    sage_layer,
    gat_layer,
);
