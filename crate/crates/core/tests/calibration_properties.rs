use proptest::prelude::*;
use venncal_core::calibration::platt::{platt_loss, platt_targets};
use venncal_core::calibration::{fit_platt, pava, Calibrator, CalibratorKind, VennAbersCalibrator};

fn scored_labels(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    proptest::collection::vec((0u8..21, 0u8..2), 1..max)
        .prop_map(|v| v.into_iter().map(|(s, y)| (f64::from(s) / 20.0, y)).unzip())
}

fn both_classes(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    scored_labels(max).prop_filter("needs both classes", |(_, y)| {
        y.contains(&0) && y.contains(&1)
    })
}

proptest! {
    #[test]
    fn isotonic_fit_is_monotone_and_mean_preserving((s, y) in scored_labels(60)) {
        let fit = pava(&s, &y).unwrap();
        let v = fit.fitted_values();
        prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
        let total: f64 = v.iter().zip(fit.weights()).map(|(a, w)| a * w).sum();
        let positives = y.iter().filter(|&&l| l == 1).count() as f64;
        prop_assert!((total - positives).abs() < 1e-9);
    }

    #[test]
    fn isotonic_fit_ignores_input_order((s, y) in scored_labels(40)) {
        let mut pairs: Vec<(f64, u8)> = s.iter().copied().zip(y.iter().copied()).collect();
        pairs.reverse();
        let (rs, ry): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        prop_assert_eq!(pava(&s, &y).unwrap(), pava(&rs, &ry).unwrap());
    }

    #[test]
    fn venn_abers_interval_is_ordered_and_matches_refit(
        (s, y) in scored_labels(60),
        t in 0u8..25,
    ) {
        let cal = VennAbersCalibrator::new(s, y).unwrap();
        let test = f64::from(t) / 20.0 - 0.1;
        let iv = cal.interval(test).unwrap();
        prop_assert!(0.0 <= iv.p0 && iv.p0 <= iv.p1 && iv.p1 <= 1.0);
        prop_assert!(iv.p0 <= iv.point && iv.point <= iv.p1);
        prop_assert_eq!(iv, cal.interval_by_refit(test).unwrap());
    }

    #[test]
    fn venn_abers_interval_is_monotone_in_the_score((s, y) in scored_labels(60)) {
        let cal = VennAbersCalibrator::new(s, y).unwrap();
        let ivs: Vec<_> = (0..=20).map(|k| cal.interval(f64::from(k) / 20.0).unwrap()).collect();
        for w in ivs.windows(2) {
            prop_assert!(w[0].p0 <= w[1].p0);
            prop_assert!(w[0].p1 <= w[1].p1);
        }
    }

    #[test]
    fn platt_optimum_beats_a_parameter_grid((s, y) in both_classes(40)) {
        let fit = fit_platt(&s, &y).unwrap();
        let (_, _, targets) = platt_targets(&y);
        let best = platt_loss(&s, &targets, fit.a, fit.b);
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (f64::from(i), f64::from(j) * 0.5);
                prop_assert!(best <= platt_loss(&s, &targets, a, b) + 1e-9);
            }
        }
    }

    #[test]
    fn platt_gradient_vanishes_by_finite_differences((s, y) in both_classes(40)) {
        let fit = fit_platt(&s, &y).unwrap();
        let (_, _, targets) = platt_targets(&y);
        let h = 1e-5;
        let ga = (platt_loss(&s, &targets, fit.a + h, fit.b) - platt_loss(&s, &targets, fit.a - h, fit.b)) / (2.0 * h);
        let gb = (platt_loss(&s, &targets, fit.a, fit.b + h) - platt_loss(&s, &targets, fit.a, fit.b - h)) / (2.0 * h);
        prop_assert!(ga.abs() < 1e-5 && gb.abs() < 1e-5, "gradient ({ga}, {gb}) at {fit:?}");
    }

    #[test]
    fn calibrated_outputs_stay_in_the_unit_interval((s, y) in both_classes(40), t in 0u8..21) {
        for kind in CalibratorKind::ALL {
            let cal = Calibrator::fit(kind, &s, &y).unwrap();
            let iv = cal.calibrate(f64::from(t) / 20.0).unwrap();
            prop_assert!(0.0 <= iv.p0 && iv.p0 <= iv.p1 && iv.p1 <= 1.0);
        }
    }
}

#[test]
fn calibrator_survives_json() {
    let cal = Calibrator::fit(
        CalibratorKind::VennAbers,
        &[0.1, 0.4, 0.4, 0.8],
        &[0, 1, 0, 1],
    )
    .unwrap();
    let back: Calibrator = serde_json::from_str(&serde_json::to_string(&cal).unwrap()).unwrap();
    assert_eq!(back.calibrate(0.4).unwrap(), cal.calibrate(0.4).unwrap());
}
