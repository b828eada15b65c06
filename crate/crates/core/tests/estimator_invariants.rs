use nbcensor::estimator::{fit_mccle, fit_with_restarts, grid_oracle, FitConfig};
use nbcensor::{Dataset, ModelSpec, Observation};
use proptest::prelude::*;

fn records(spec: &ModelSpec) -> impl Strategy<Value = Vec<Observation>> {
    let r0 = spec.r0();
    let arities = spec.arities().to_vec();
    let attrs: Vec<_> = arities.iter().map(|&r| 1..=r).collect();
    prop::collection::vec((any::<bool>(), 0..=r0, attrs), 3..12).prop_map(move |rows| {
        rows.into_iter()
            .map(|(censor, v, attrs)| {
                if censor {
                    Observation::censored(v.min(r0 - 1), attrs)
                } else {
                    Observation::observed(v.max(1), attrs)
                }
            })
            .collect()
    })
}

fn small_dataset() -> impl Strategy<Value = Dataset> {
    prop_oneof![
        Just(ModelSpec::new(2, vec![]).unwrap()),
        Just(ModelSpec::new(3, vec![]).unwrap()),
        Just(ModelSpec::new(2, vec![2]).unwrap()),
    ]
    .prop_flat_map(|spec| records(&spec).prop_map(move |r| Dataset::new(spec.clone(), r).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn record_order_does_not_change_the_fit(ds in small_dataset(), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = fit_mccle(&ds, &FitConfig::default()).unwrap();
        let b = fit_mccle(&ds.permuted(&order), &FitConfig::default()).unwrap();
        prop_assert!((a.log_cccl - b.log_cccl).abs() <= 1e-9 * (1.0 + a.log_cccl.abs()));
    }

    #[test]
    fn fit_dominates_coarse_grid(ds in small_dataset()) {
        let fit = fit_mccle(&ds, &FitConfig::default()).unwrap();
        let (_, grid) = grid_oracle(&ds, 21).unwrap();
        prop_assert!(fit.log_cccl >= grid - 1e-9, "fit {} grid {}", fit.log_cccl, grid);
    }

    #[test]
    fn restarts_never_hurt(ds in small_dataset()) {
        let config = FitConfig::default();
        let single = fit_mccle(&ds, &config).unwrap();
        let multi = fit_with_restarts(&ds, &config, 3).unwrap();
        prop_assert!(multi.log_cccl >= single.log_cccl);
    }
}
