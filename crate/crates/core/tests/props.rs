//! Property tests for the metric structure, the monotone inverse, and
//! the simplex projection.

use ldm_core::due::project_od;
use ldm_core::flow::{l2_distance, PathFlowVector, StepFunction};
use ldm_core::loader::ExitTimeFn;
use ldm_core::testing::brute_force_projection;
use proptest::prelude::*;

fn step_function() -> impl Strategy<Value = StepFunction> {
    (
        proptest::collection::vec(0.0f64..4.0, 2..6),
        proptest::collection::vec(-5.0f64..5.0, 5),
    )
        .prop_map(|(mut times, rates)| {
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            times.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            if times.len() < 2 {
                return StepFunction::zero();
            }
            let n = times.len() - 1;
            StepFunction::new(times, rates[..n].to_vec()).unwrap()
        })
}

fn flow_vector() -> impl Strategy<Value = PathFlowVector> {
    proptest::collection::vec(step_function(), 2).prop_map(|fs| {
        let mut v = PathFlowVector::empty();
        v.insert("p0", fs[0].clone());
        v.insert("p1", fs[1].clone());
        v
    })
}

proptest! {
    #[test]
    fn l2_is_a_metric(a in flow_vector(), b in flow_vector(), c in flow_vector()) {
        let ab = l2_distance(&a, &b).unwrap();
        let ba = l2_distance(&b, &a).unwrap();
        let ac = l2_distance(&a, &c).unwrap();
        let cb = l2_distance(&c, &b).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        // triangle inequality up to floating-point slack
        prop_assert!(ab <= ac + cb + 1e-9);
    }

    #[test]
    fn invert_roundtrips(knots in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0), 2..8),
                         probe in 0.0f64..1.0) {
        let mut acc = vec![(0.0, 0.5)];
        for (dx, dy) in knots {
            let (x, y) = *acc.last().unwrap();
            acc.push((x + dx, y + dy));
        }
        let tau = ExitTimeFn::from_knots(acc.clone(), true).unwrap();
        let span = acc.last().unwrap().0 + 1.0;
        let t = -0.5 + probe * span;
        let s = tau.eval(t).unwrap();
        prop_assert!((tau.invert(s).unwrap() - t).abs() <= 1e-9 * t.abs().max(1.0));
    }

    #[test]
    fn projection_matches_brute_force(values in proptest::collection::vec(-4.0f64..4.0, 1..6),
                                      weights in proptest::collection::vec(0.25f64..2.0, 6),
                                      q in 0.0f64..8.0) {
        let w = &weights[..values.len()];
        let fast = project_od(&values, w, q).unwrap();
        let slow = brute_force_projection(&values, w, q).unwrap();
        for (f, s) in fast.iter().zip(&slow) {
            prop_assert!((f - s).abs() <= 1e-8, "{fast:?} vs {slow:?}");
        }
        let total: f64 = fast.iter().zip(w).map(|(y, wi)| y * wi).sum();
        prop_assert!((total - q).abs() <= 1e-9 * q.max(1.0));
        prop_assert!(fast.iter().all(|&y| y >= 0.0));
    }
}
