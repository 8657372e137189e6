use proptest::prelude::*;
use vlearn::bandit::{ess, estimate_base, estimate_vtrace, estimate_wis, WeightedSample};

fn samples() -> impl Strategy<Value = Vec<WeightedSample>> {
    prop::collection::vec((1e-3..5.0f64, -10.0..10.0f64), 1..40).prop_map(|v| {
        v.into_iter()
            .map(|(rho, reward)| WeightedSample { rho, reward })
            .collect()
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn closed_forms(s in samples()) {
        let n = s.len() as f64;
        let base: f64 = s.iter().map(|x| x.rho * x.reward).sum::<f64>() / n;
        let wis = s.iter().map(|x| x.rho * x.reward).sum::<f64>() / s.iter().map(|x| x.rho).sum::<f64>();
        let vt = s.iter().map(|x| x.rho * x.rho * x.reward).sum::<f64>()
            / s.iter().map(|x| x.rho * x.rho).sum::<f64>();
        prop_assert!(close(estimate_base(&s).unwrap(), base));
        prop_assert!(close(estimate_wis(&s).unwrap(), wis));
        prop_assert!(close(estimate_vtrace(&s).unwrap(), vt));
    }

    #[test]
    fn self_normalized_estimates_are_convex_combinations(s in samples()) {
        let lo = s.iter().map(|x| x.reward).fold(f64::INFINITY, f64::min);
        let hi = s.iter().map(|x| x.reward).fold(f64::NEG_INFINITY, f64::max);
        for v in [estimate_wis(&s).unwrap(), estimate_vtrace(&s).unwrap()] {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn self_normalized_estimates_are_scale_free(s in samples(), c in 1e-3..1e3f64) {
        let scaled: Vec<_> = s.iter().map(|x| WeightedSample { rho: c * x.rho, reward: x.reward }).collect();
        prop_assert!(close(estimate_wis(&s).unwrap(), estimate_wis(&scaled).unwrap()));
        prop_assert!(close(estimate_vtrace(&s).unwrap(), estimate_vtrace(&scaled).unwrap()));
    }

    #[test]
    fn unit_weights_coincide(r in prop::collection::vec(-10.0..10.0f64, 1..40)) {
        let s: Vec<_> = r.iter().map(|&reward| WeightedSample { rho: 1.0, reward }).collect();
        let b = estimate_base(&s).unwrap();
        prop_assert_eq!(b, estimate_wis(&s).unwrap());
        prop_assert_eq!(b, estimate_vtrace(&s).unwrap());
    }

    #[test]
    fn ess_bounds_and_ordering(w in prop::collection::vec(1e-6..10.0f64, 1..64)) {
        let n = w.len() as f64;
        let e1 = ess(&w, false).unwrap();
        let e2 = ess(&w, true).unwrap();
        prop_assert!(e1 >= e2);
        prop_assert!(e2 >= 1.0 - 1e-12);
        prop_assert!(e1 <= n * (1.0 + 1e-12));
    }
}

#[test]
fn equal_weights_have_full_sample_size() {
    assert_eq!(ess(&[0.3; 17], false).unwrap(), 17.0);
    assert_eq!(ess(&[0.3; 17], true).unwrap(), 17.0);
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(estimate_wis(&[]).is_err());
    assert!(estimate_wis(&[WeightedSample {
        rho: 0.0,
        reward: 1.0
    }])
    .is_err());
    assert!(estimate_base(&[WeightedSample {
        rho: -1.0,
        reward: 1.0
    }])
    .is_err());
    assert!(ess(&[0.0, 0.0], false).is_err());
    assert!(ess(&[f64::NAN], true).is_err());
}
