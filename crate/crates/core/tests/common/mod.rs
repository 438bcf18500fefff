//! Shared generators and problem builders for the property suites.
#![allow(dead_code)]

use dtcbf_core::expr::{parse, Env, Func, ParseContext, VarKind, VarRef};
use dtcbf_core::problem::{Candidate, Gamma, Problem};
use dtcbf_core::{BoxN, Expr};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random smooth expressions in `x1, x2` that stay finite on `[-2, 2]²`.
pub fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::x(0)),
        Just(Expr::x(1)),
        (-2.0..2.0f64).prop_map(Expr::constant),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (b.powi(2) + 2.0)),
            inner.clone().prop_map(|a| a.sin()),
            inner.clone().prop_map(|a| a.cos()),
            inner.clone().prop_map(|a| (a * 0.2).exp()),
            inner.clone().prop_map(|a| a.powi(2)),
            inner.prop_map(|a| a.powi(3)),
        ]
    })
}

/// Boxes inside `[-2, 2]²` with widths in `[0.05, 2]`.
pub fn small_box() -> impl Strategy<Value = BoxN> {
    proptest::collection::vec((-2.0..1.9f64, 0.05..2.0f64), 2).prop_map(|v| {
        let lo: Vec<f64> = v.iter().map(|(l, _)| *l).collect();
        let hi: Vec<f64> = v.iter().map(|(l, w)| (l + w).min(2.0)).collect();
        BoxN::from_bounds(&lo, &hi).unwrap()
    })
}

/// A point of `bx` given unit-square coordinates.
pub fn at(bx: &BoxN, t: &[f64]) -> Vec<f64> {
    bx.dims()
        .iter()
        .zip(t)
        .map(|(d, s)| d.lo() + s * d.width())
        .collect()
}

pub fn state_func(e: &Expr, n: usize) -> Func {
    Func::new(e, &VarRef::range(VarKind::State, n), &Env::default()).unwrap()
}

pub fn parse_in(src: &str, n: usize, m: usize) -> Expr {
    parse(src, &ParseContext::new(n, m, 0, 0)).unwrap()
}

/// `x⁺ = a x + b u` per coordinate, unit input box, search box `[-1.5, 1.5]²`.
pub fn decoupled(a: [f64; 2], b: [f64; 2], s: Option<&str>) -> Problem {
    let f = (0..2)
        .map(|i| parse_in(&format!("{}*x{} + {}*u{}", a[i], i + 1, b[i], i + 1), 2, 2))
        .collect();
    Problem {
        name: "decoupled".into(),
        n: 2,
        m: 2,
        f,
        u_box: BoxN::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
        s: s.map(|e| parse_in(e, 2, 0)),
        search_box: BoxN::from_bounds(&[-1.5, -1.5], &[1.5, 1.5]).unwrap(),
        search_states: vec![0, 1],
    }
}

/// Ellipse `1 − x1² − c x2²` with a linear feedback `u = −k x`.
pub fn ellipse_candidate(c: f64, k: [f64; 2], gamma: f64) -> Candidate {
    Candidate {
        h: parse_in(&format!("1 - x1^2 - {c}*x2^2"), 2, 0),
        gamma: Gamma::Linear(gamma),
        policy: Some(vec![
            parse_in(&format!("-{}*x1", k[0]), 2, 0),
            parse_in(&format!("-{}*x2", k[1]), 2, 0),
        ]),
    }
}

/// Seeded unit-square sampler.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_point(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen::<f64>()).collect()
}
