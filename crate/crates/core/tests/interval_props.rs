//! Inclusion and bisection properties of the interval layer.

use dtcbf_core::{BoxN, Interval};
use proptest::prelude::*;

fn interval_with_point() -> impl Strategy<Value = (Interval, f64)> {
    (-1e3..1e3f64, 0.0..50.0f64, 0.0..=1.0f64)
        .prop_map(|(lo, w, t)| (Interval::new(lo, lo + w).unwrap(), (lo + t * w).min(lo + w)))
}

fn boxn(n: usize) -> impl Strategy<Value = BoxN> {
    proptest::collection::vec((-10.0..10.0f64, 0.0..5.0f64), n).prop_map(|v| {
        let lo: Vec<f64> = v.iter().map(|d| d.0).collect();
        let hi: Vec<f64> = v.iter().map(|d| d.0 + d.1).collect();
        BoxN::from_bounds(&lo, &hi).unwrap()
    })
}

/// A box and a root box of the same dimension.
fn box_pair() -> impl Strategy<Value = (BoxN, BoxN)> {
    (1..6usize).prop_flat_map(|n| (boxn(n), boxn(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn binary_ops_contain_point_results((a, x) in interval_with_point(), (b, y) in interval_with_point()) {
        prop_assert!((a + b).contains(x + y));
        prop_assert!((a - b).contains(x - y));
        prop_assert!((a * b).contains(x * y));
        if !b.contains_zero() {
            let q = a.div(&b).unwrap().inflate(1e-12);
            prop_assert!(q.contains(x / y), "{} / {} misses {}", a, b, x / y);
        }
    }

    #[test]
    fn unary_ops_contain_point_results((a, x) in interval_with_point()) {
        let slack = |i: Interval| i.inflate(1e-12);
        prop_assert!(a.sqr().contains(x * x));
        prop_assert!(slack(a.powi(3)).contains(x * x * x));
        prop_assert!(slack(a.sin()).contains(x.sin()));
        prop_assert!(slack(a.cos()).contains(x.cos()));
        prop_assert!(a.abs().contains(x.abs()));
        let small = Interval::new(a.lo() / 500.0, a.hi() / 500.0).unwrap();
        prop_assert!(slack(small.exp()).contains((x / 500.0).exp()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn bisection_partitions_the_parent((parent, root) in box_pair()) {
        let Ok(j) = parent.scaled_longest_side(&root) else {
            return Ok(());
        };
        let (a, b) = parent.bisect_scaled_longest_side(&root).unwrap();
        let (d, da, db) = (parent.get(j), a.get(j), b.get(j));
        prop_assert_eq!(da.lo(), d.lo());
        prop_assert_eq!(da.hi(), db.lo());
        prop_assert_eq!(db.hi(), d.hi());
        prop_assert!(((da.width() + db.width()) - d.width()).abs() <= 4.0 * f64::EPSILON * d.width());
        for i in (0..parent.dim()).filter(|i| *i != j) {
            prop_assert_eq!(a.get(i), parent.get(i));
            prop_assert_eq!(b.get(i), parent.get(i));
        }
        let v = a.volume() + b.volume();
        prop_assert!((v - parent.volume()).abs() <= 1e-12 * parent.volume().max(f64::MIN_POSITIVE));
        prop_assert!(a.diagonal_sq() < parent.diagonal_sq());
        prop_assert!(b.diagonal_sq() < parent.diagonal_sq());
    }
}
