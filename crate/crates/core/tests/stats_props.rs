use infarct_core::stats::{
    bland_altman, chi_square_uniform, cohen_kappa, concordance, wilcoxon_signed_rank,
    ConfusionMatrix, PairedSeries, Weighting, WilcoxonMode, ZeroMethod,
};
use proptest::prelude::*;

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

fn integer_paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec((-40i32..40).prop_map(f64::from), n),
            prop::collection::vec((-40i32..40).prop_map(f64::from), n),
        )
    })
}

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (2usize..6)
        .prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..30, k), k))
        .prop_filter("non-empty", |rows| rows.iter().flatten().sum::<u64>() > 0)
        .prop_map(|rows| {
            let labels = (0..rows.len()).map(|i| i.to_string()).collect();
            ConfusionMatrix::new(labels, rows).unwrap()
        })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn concordance_is_bounded_by_pearson((x, y) in paired(3..30)) {
        let c = concordance(&PairedSeries::new(x, y).unwrap(), 0.95).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c.rho_c));
        prop_assert!(c.rho_c.abs() <= c.pearson_r.abs() + 1e-12);
    }

    #[test]
    fn concordance_survives_shared_affine_map((x, y) in paired(3..30), a in 0.01f64..100.0, b in -100.0f64..100.0) {
        let before = concordance(&PairedSeries::new(x.clone(), y.clone()).unwrap(), 0.95).unwrap().rho_c;
        let map = |v: &Vec<f64>| v.iter().map(|t| a * t + b).collect::<Vec<_>>();
        let after = concordance(&PairedSeries::new(map(&x), map(&y)).unwrap(), 0.95).unwrap().rho_c;
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn bland_altman_shift_and_offset((x, y) in integer_paired(2..30), c in -20i32..20) {
        let c = f64::from(c);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let r = bland_altman(&PairedSeries::new(x.clone(), shifted).unwrap(), 1.96).unwrap();
        prop_assert_eq!(r.bias, c);
        let base = bland_altman(&PairedSeries::new(x.clone(), y.clone()).unwrap(), 1.96).unwrap();
        let both = bland_altman(
            &PairedSeries::new(x.iter().map(|v| v + c).collect(), y.iter().map(|v| v + c).collect()).unwrap(),
            1.96,
        ).unwrap();
        prop_assert_eq!(base.sd_diff, both.sd_diff);
        prop_assert!(base.loa_low <= base.bias && base.bias <= base.loa_high);
    }

    #[test]
    fn wilcoxon_depends_only_on_signed_ranks((x, y) in integer_paired(1..16), e in -3i32..4, b in -30i32..30) {
        let (a, b) = (2f64.powi(e), f64::from(b));
        let s = PairedSeries::new(x.clone(), y.clone()).unwrap();
        let p = wilcoxon_signed_rank(&s, WilcoxonMode::Exact, ZeroMethod::Wilcox).unwrap().p_value;
        let affine = PairedSeries::new(
            x.iter().map(|v| a * v + b).collect(),
            y.iter().map(|v| a * v + b).collect(),
        ).unwrap();
        prop_assert_eq!(wilcoxon_signed_rank(&affine, WilcoxonMode::Exact, ZeroMethod::Wilcox).unwrap().p_value, p);
        // A sign-preserving increasing map of the differences keeps every signed rank.
        let d = s.differences();
        let warped = PairedSeries::new(
            vec![0.0; d.len()],
            d.iter().map(|v| v.signum() * v.abs().powi(3)).collect(),
        ).unwrap();
        prop_assert_eq!(wilcoxon_signed_rank(&warped, WilcoxonMode::Exact, ZeroMethod::Wilcox).unwrap().p_value, p);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn kappa_is_transpose_symmetric(m in matrix()) {
        for w in [Weighting::None, Weighting::Linear] {
            let k = cohen_kappa(&m, w).unwrap();
            let kt = cohen_kappa(&m.transpose(), w).unwrap();
            prop_assert!(close(k, kt, 1e-12) || (k - kt).abs() < 1e-14);
            prop_assert!(k <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn chi_square_ignores_category_order(counts in prop::collection::vec(0u64..200, 2..8), rot in 0usize..8) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let a = chi_square_uniform(&counts).unwrap();
        let mut permuted = counts.clone();
        permuted.rotate_left(rot % counts.len());
        permuted.reverse();
        let b = chi_square_uniform(&permuted).unwrap();
        prop_assert_eq!(a.df, b.df);
        prop_assert!(close(a.statistic, b.statistic, 1e-12) || (a.statistic - b.statistic).abs() < 1e-12);
        prop_assert!(close(a.p_value, b.p_value, 1e-9) || (a.p_value - b.p_value).abs() < 1e-15);
    }
}
