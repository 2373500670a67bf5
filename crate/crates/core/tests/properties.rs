use bottleneck_lab::dual::dual_decomposition;
use bottleneck_lab::error_exp::{chernoff_information, DEFAULT_CHERNOFF_TOL};
use bottleneck_lab::prob::{ConditionalDistribution, JointDistribution};
use bottleneck_lab::state::BottleneckState;
use bottleneck_lab::{
    geometric_decoder, kl_divergence, mutual_information, solve, Framework, Joint, SolveOptions, Var,
};
use ndarray::Array2;
use proptest::prelude::*;

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| normalize(&v))
}

fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(distribution(cols), rows)
        .prop_map(move |r| Array2::from_shape_fn((rows, cols), |(i, j)| r[i][j]))
}

fn joint() -> impl Strategy<Value = Joint> {
    (2usize..=6, 2usize..=4).prop_flat_map(|(n_x, n_y)| {
        (distribution(n_x), stochastic(n_x, n_y))
            .prop_map(|(p_x, rule)| JointDistribution::from_conditional(&p_x, rule, 1e-9).unwrap())
    })
}

fn framework() -> impl Strategy<Value = Framework> {
    prop_oneof![Just(Framework::Ib), Just(Framework::Dual)]
}

fn row_sum_error(rows: ndarray::ArrayView2<'_, f64>) -> f64 {
    rows.outer_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

fn opts(trace: bool) -> SolveOptions {
    SolveOptions {
        record_trace: trace,
        ..SolveOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructed_conditionals_are_normalized(j in joint(), fw in framework(), beta in 0.1f64..40.0, seed in 0u64..1000) {
        prop_assert!(row_sum_error(j.p_y_given_x()) <= 1e-12);
        prop_assert!(row_sum_error(j.p_x_given_y().rows()) <= 1e-12);
        let init = BottleneckState::random(&j, fw, beta, j.n_x(), seed).unwrap();
        let r = solve(&j, fw, beta, &init, &opts(false)).unwrap();
        prop_assert!(row_sum_error(r.state.encoder.rows()) <= 1e-12);
        prop_assert!(row_sum_error(r.state.decoder.rows()) <= 1e-12);
        prop_assert!((r.state.marginal.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mutual_information_is_nonnegative_and_transpose_symmetric(j in joint()) {
        let forward = mutual_information(j.p_xy()).unwrap();
        let backward = mutual_information(j.p_xy().t()).unwrap();
        prop_assert!(forward >= -1e-15);
        prop_assert!((forward - backward).abs() <= 1e-12);
        prop_assert!(forward <= j.entropy_x().min(j.entropy_y()) + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal((p, q) in (2usize..8).prop_flat_map(|n| (distribution(n), distribution(n)))) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn geometric_decoder_rows_sit_at_minus_log_partition(
        (j, w) in joint().prop_flat_map(|j| { let n = j.n_x(); (Just(j), stochastic(3, n)) })
    ) {
        let inverse = ConditionalDistribution::new(w.clone(), Var::XHat, Var::X).unwrap();
        let (dec, log_z) = geometric_decoder(&j, &inverse).unwrap();
        for k in 0..3 {
            let q = dec.row(k).to_vec();
            let mean_kl: f64 = (0..j.n_x())
                .map(|x| w[[k, x]] * kl_divergence(&q, &j.p_y_given_x().row(x).to_vec()).unwrap())
                .sum();
            prop_assert!((mean_kl + log_z[k]).abs() <= 1e-12, "{} vs {}", mean_kl, -log_z[k]);
        }
    }

    #[test]
    fn functional_never_increases(j in joint(), fw in framework(), beta in 0.1f64..40.0, seed in 0u64..1000) {
        let init = BottleneckState::random(&j, fw, beta, j.n_x(), seed).unwrap();
        let r = solve(&j, fw, beta, &init, &opts(true)).unwrap();
        prop_assert!(r.converged);
        for w in r.functional_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fixed_point_is_relabeling_invariant(
        j in joint(), fw in framework(), beta in 0.1f64..40.0, seed in 0u64..1000, shift in 1usize..6
    ) {
        let k = j.n_x();
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let init = BottleneckState::random(&j, fw, beta, k, seed).unwrap();
        let a = solve(&j, fw, beta, &init, &opts(false)).unwrap();
        let b = solve(&j, fw, beta, &init.permute(&perm).unwrap(), &opts(false)).unwrap();
        prop_assert!((a.i_x - b.i_x).abs() <= 1e-9);
        prop_assert!((a.i_y - b.i_y).abs() <= 1e-9);
        let relabeled = a.state.permute(&perm).unwrap();
        prop_assert!(relabeled.encoder.max_abs_diff(&b.state.encoder) <= 1e-9);
    }

    #[test]
    fn dual_distortion_splits_at_any_state(j in joint(), beta in 0.1f64..40.0, seed in 0u64..1000, k in 1usize..6) {
        let s = BottleneckState::random(&j, Framework::Dual, beta, k, seed).unwrap();
        let d = dual_decomposition(&s, &j);
        prop_assert!(d.residual() <= 1e-9);
        prop_assert!(d.term_b >= -1e-12);
    }

    #[test]
    fn chernoff_is_symmetric((p0, p1) in (2usize..8).prop_flat_map(|n| (distribution(n), distribution(n)))) {
        let (a, la) = chernoff_information(&p0, &p1, DEFAULT_CHERNOFF_TOL).unwrap();
        let (b, lb) = chernoff_information(&p1, &p0, DEFAULT_CHERNOFF_TOL).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= DEFAULT_CHERNOFF_TOL);
        prop_assert!((la + lb - 1.0).abs() <= 10.0 * DEFAULT_CHERNOFF_TOL);
    }
}
