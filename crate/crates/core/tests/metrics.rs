use mgfn::metrics::{average_precision, evaluate, roc_auc};
use proptest::prelude::*;

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![-5.0f64..5.0, (0u8..4).prop_map(f64::from)], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn both_classes(y: &[bool]) -> bool {
    y.iter().any(|&v| v) && y.iter().any(|&v| !v)
}

proptest! {
    #[test]
    fn auc_and_ap_ignore_strictly_monotone_transforms((s, y) in scored()) {
        prop_assume!(both_classes(&y));
        let t: Vec<f64> = s.iter().map(|v| (0.7 * v).exp() + 3.0).collect();
        prop_assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&t, &y).unwrap());
        prop_assert_eq!(average_precision(&s, &y).unwrap(), average_precision(&t, &y).unwrap());
    }

    #[test]
    fn negated_scores_mirror_auc((s, y) in scored()) {
        prop_assume!(both_classes(&y));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let sum = roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ap_lies_in_unit_interval((s, y) in scored()) {
        prop_assume!(y.iter().any(|&v| v));
        let ap = average_precision(&s, &y).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }
}

#[test]
fn fixed_cases() {
    let y = [false, false, true, false, true];
    assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 0.3, 0.8], &y).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.4; 5], &y).unwrap(), 0.5);
    let ap = average_precision(
        &[0.9, 0.8, 0.7, 0.6, 0.5],
        &[false, false, false, false, true],
    )
    .unwrap();
    assert!((ap - 0.2).abs() < 1e-15);
    let r = evaluate(&[0.1, 0.2, 0.9, 0.3, 0.8], &y).unwrap();
    assert_eq!((r.n_frames, r.n_positive), (5, 2));
}
