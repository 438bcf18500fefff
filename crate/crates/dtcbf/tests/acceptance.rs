//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every line reaches the console;
//! exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use dtcbf::cli::{self, Cli};
use dtcbf::{builtin, ProblemFile};
use dtcbf_core::expr::{parse, Env, Func, ParseContext, VarKind, VarRef};
use dtcbf_core::global_opt::{abb_minimize, grid_oracle, AbbConfig};
use dtcbf_core::interval::{BoxN, Interval};
use dtcbf_core::problem::{
    closed_loop_margin, margin_expr, rollout_filter, Candidate, Gamma, Problem,
};
use dtcbf_core::synthesis::{inner_certify, SynthesisConfig};
use dtcbf_core::underestimator::{
    compute_alpha_scaled, convexity_margin, max_separation, Underestimator,
};
use dtcbf_core::verifier::{
    check_safe_subset, verify_known, verify_unknown, RecordStatus, SafeVerdict, Verdict,
    VerifierConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;
type Family = (&'static str, fn(&mut ChaCha8Rng) -> Result<(), String>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs the command line in-process; returns the exit code and the JSON report.
fn run_cli(args: &[&str]) -> Result<(u8, Value), String> {
    let argv: Vec<String> = std::iter::once("dtcbf")
        .chain(args.iter().copied())
        .map(String::from)
        .collect();
    let parsed = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    let done = cli::run(&parsed, &argv).map_err(|e| e.to_string())?;
    let report = serde_json::to_value(&done.report).map_err(|e| e.to_string())?;
    Ok((done.code, report))
}

fn load(name: &str) -> ProblemFile {
    builtin(name).expect("bundled problem loads")
}

fn vec_of(v: &Value) -> Vec<f64> {
    v.as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default()
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() <= limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

/// `h(x)` and the closed-loop margin computed by stepping the dynamics numerically.
fn recheck(p: &Problem, c: &Candidate, x: &[f64]) -> (f64, f64) {
    let env = Env::states(x);
    let h = |e: &Env| c.h.eval(e).unwrap();
    let u: Vec<f64> = c
        .policy
        .as_ref()
        .unwrap()
        .iter()
        .map(|pi| pi.eval(&env).unwrap())
        .collect();
    let xu = Env {
        x: x.to_vec(),
        u,
        ..Env::default()
    };
    let next: Vec<f64> = p.f.iter().map(|f| f.eval(&xu).unwrap()).collect();
    let h0 = h(&env);
    (h0, h(&Env::states(&next)) - h0 + c.gamma.eval(h0).unwrap())
}

fn criterion_1() -> Check {
    let t = Instant::now();
    let (code, rep) = run_cli(&[
        "verify",
        "--problem",
        "linear2d",
        "--mode",
        "known",
        "--eps-f",
        "1e-6",
        "--eps-h",
        "1e-6",
    ])?;
    let elapsed = t.elapsed();
    ensure(
        code == 2 && rep["outcome"]["verdict"] == "falsified-exact",
        || format!("exit {code}, {}", rep["outcome"]),
    )?;
    let file = load("linear2d");
    let c = file.candidate.as_ref().unwrap();
    let x = vec_of(&rep["outcome"]["point"]);
    let (h, m) = recheck(&file.problem, c, &x);
    ensure(h >= 0.0 && m < 0.0, || {
        format!("returned point {x:?}: h {h}, margin {m}")
    })?;
    let (hp, mp) = recheck(&file.problem, c, &[1.030, -1.110]);
    ensure(hp >= 0.0 && mp < 0.0, || {
        format!("reference point: h {hp}, margin {mp}")
    })?;
    within(elapsed, 10.0)?;
    Ok(format!(
        "counterexample ({:.4}, {:.4}) with h {h:.3e}, margin {m:.3e}; (1.030, -1.110) has margin {mp:.3e}; {:.2} s",
        x[0],
        x[1],
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Check {
    let t = Instant::now();
    let (code, rep) = run_cli(&[
        "minimize",
        "--problem",
        "linear2d",
        "--target",
        "margin-known",
        "--eps-c",
        "1e-6",
        "--eps-feas",
        "1e-12",
    ])?;
    let elapsed = t.elapsed();
    ensure(code == 0 && rep["outcome"]["status"] == "converged", || {
        format!("exit {code}, {}", rep["outcome"])
    })?;
    let x = vec_of(&rep["outcome"]["minimizer"]);
    let dist = ((x[0] - 0.841).powi(2) + (x[1] + 1.457).powi(2)).sqrt();
    let gap = rep["outcome"]["gap"].as_f64().unwrap_or(f64::INFINITY);
    ensure(dist <= 2e-2, || {
        format!("minimizer {x:?} is {dist:.3e} from the reference")
    })?;
    ensure(gap <= 1e-6, || format!("gap {gap:e}"))?;
    within(elapsed, 60.0)?;
    Ok(format!(
        "minimizer ({:.4}, {:.4}), distance {dist:.2e}, gap {gap:.1e}, {} iterations, {:.2} s",
        x[0],
        x[1],
        rep["outcome"]["iterations"],
        elapsed.as_secs_f64()
    ))
}

fn criterion_3() -> Check {
    let file = load("linear2d");
    let (p, c) = (&file.problem, file.candidate.as_ref().unwrap());
    let t = Instant::now();
    let cfg = VerifierConfig {
        eps_f: 1e-4,
        eps_h: 1e-4,
        eps_d: 1e-4,
        keep_records: false,
        ..VerifierConfig::default()
    };
    let out = verify_unknown(p, c, &cfg).map_err(|e| e.to_string())?;
    let coarse = t.elapsed();
    ensure(out.verdict == Verdict::Valid, || {
        format!("1e-4 run: {:?}", out.verdict)
    })?;
    within(coarse, 600.0)?;
    let friend = out.friend.as_ref().ok_or("no friend")?;

    let vars: Vec<VarRef> = VarRef::range(VarKind::State, 2)
        .into_iter()
        .chain(VarRef::range(VarKind::Input, 2))
        .collect();
    let margin = Func::new(&margin_expr(p, &c.h, &c.gamma), &vars, &Env::default()).unwrap();
    let h = Func::new(&c.h, &VarRef::range(VarKind::State, 2), &Env::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut n, mut worst) = (0, f64::INFINITY);
    while n < 100_000 {
        let x: Vec<f64> = p
            .search_box
            .dims()
            .iter()
            .map(|d| rng.gen_range(d.lo()..=d.hi()))
            .collect();
        if h.value(&x).unwrap() < 0.0 {
            continue;
        }
        n += 1;
        let u = friend
            .input_at(&x)
            .ok_or_else(|| format!("no friend cell at {x:?}"))?;
        let xu: Vec<f64> = x.iter().chain(u).copied().collect();
        worst = worst.min(margin.value(&xu).unwrap());
    }
    ensure(worst >= -1e-9, || {
        format!("sampled margin reaches {worst:e}")
    })?;

    let t = Instant::now();
    let (code, rep) = run_cli(&[
        "verify",
        "--problem",
        "linear2d",
        "--mode",
        "unknown",
        "--eps-f",
        "1e-6",
        "--eps-h",
        "1e-6",
        "--eps-d",
        "1e-6",
    ])?;
    let fine = t.elapsed();
    ensure(code == 0, || {
        format!("1e-6 run: exit {code}, {}", rep["outcome"])
    })?;
    within(fine, 3600.0)?;
    Ok(format!(
        "1e-4: valid, {} friend cells, {:.2} s, worst sampled margin {worst:.3e}; 1e-6: valid after {} iterations, {:.1} s",
        friend.cells.len(),
        coarse.as_secs_f64(),
        rep["stats"]["iterations"],
        fine.as_secs_f64()
    ))
}

fn criterion_4() -> Check {
    let t = Instant::now();
    let (code, known) = run_cli(&["verify", "--problem", "cartpole", "--mode", "known"])?;
    let tk = t.elapsed();
    ensure(code == 0, || {
        format!("known: exit {code}, {}", known["outcome"])
    })?;
    within(tk, 120.0)?;
    let t = Instant::now();
    let (code, unknown) = run_cli(&["verify", "--problem", "cartpole", "--mode", "unknown"])?;
    let tu = t.elapsed();
    ensure(code == 0, || {
        format!("unknown: exit {code}, {}", unknown["outcome"])
    })?;
    let cells = unknown["outcome"]["friend_cells"].as_u64().unwrap_or(0);
    ensure(cells > 0, || "unknown: empty friend".into())?;
    within(tu, 300.0)?;
    Ok(format!(
        "known valid in {} iterations ({:.2} s); unknown valid in {} iterations with {cells} friend cells ({:.2} s)",
        known["stats"]["iterations"],
        tk.as_secs_f64(),
        unknown["stats"]["iterations"],
        tu.as_secs_f64()
    ))
}

/// Returns the synthesized candidate for the safe-subset criterion.
fn criterion_5() -> Result<(String, Candidate), String> {
    let file = load("poly2d");
    let spec = &file.synthesis.as_ref().unwrap().spec;
    let t = Instant::now();
    let (code, rep) = run_cli(&[
        "synthesize",
        "--problem",
        "poly2d",
        "--eps-f",
        "1e-3",
        "--eps-F",
        "0.4",
    ])?;
    let elapsed = t.elapsed();
    ensure(code == 0 && rep["outcome"]["status"] == "found", || {
        format!("exit {code}, status {}", rep["outcome"]["status"])
    })?;
    let (theta, mu) = (
        vec_of(&rep["outcome"]["theta"]),
        vec_of(&rep["outcome"]["mu"]),
    );
    let cand = spec.candidate(&theta, &mu).map_err(|e| e.to_string())?;
    let v = verify_known(
        &spec.problem,
        &cand,
        &VerifierConfig {
            keep_records: false,
            ..VerifierConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(v.verdict == Verdict::Valid, || {
        format!("synthesized candidate: {:?}", v.verdict)
    })?;
    let l = theta[1] * theta[1] - 4.0 * theta[0] * theta[2];
    ensure(l <= -0.76, || format!("L = {l}"))?;
    within(elapsed, 4.0 * 3600.0)?;

    let cfg = SynthesisConfig::default();
    let reference = ([0.626, 0.537, 0.580], [-0.976, -1.0, -0.976, -1.0]);
    let mut s = spec.clone();
    s.eps_f = 1e-3;
    let certs = inner_certify(&s, &reference.0, &reference.1, &cfg).map_err(|e| e.to_string())?;
    ensure(certs.iter().all(|c| c.passed), || {
        let failed: Vec<String> = certs
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.kind.to_string())
            .collect();
        format!("reference coefficients fail {failed:?}")
    })?;

    // a steep policy gain leaves the input box somewhere on the ellipse
    let steep = [-5.0, -1.0, -0.976, -1.0];
    let certs = inner_certify(&s, &reference.0, &steep, &cfg).map_err(|e| e.to_string())?;
    let bad = spec.candidate(&reference.0, &steep).unwrap();
    let h = Func::new(&bad.h, &VarRef::range(VarKind::State, 2), &Env::default()).unwrap();
    let pi1 = Func::new(
        &bad.policy.as_ref().unwrap()[0],
        &VarRef::range(VarKind::State, 2),
        &Env::default(),
    )
    .unwrap();
    let grid_max = grid_points(&spec.problem.search_box, 201)
        .filter(|x| h.value(x).unwrap() >= 0.0)
        .map(|x| pi1.value(&x).unwrap().powi(2))
        .fold(0.0, f64::max);
    ensure(grid_max > 2.25, || format!("grid max of π₁² is {grid_max}"))?;
    ensure(
        certs
            .iter()
            .any(|c| !c.passed && c.kind.to_string().starts_with("input")),
        || "steep gain passed every admissibility certificate".into(),
    )?;

    let msg = format!(
        "found θ = ({:.4}, {:.4}, {:.4}), L = {l:.4}, crosscheck valid, {} nodes, {:.1} s; reference coefficients pass; steep gain rejected (grid π₁² max {grid_max:.2})",
        theta[0],
        theta[1],
        theta[2],
        rep["stats"]["nodes"],
        elapsed.as_secs_f64()
    );
    Ok((msg, cand))
}

fn grid_points(bx: &BoxN, res: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..res * res).map(move |k| {
        let (i, j) = (k / res, k % res);
        let at = |d: Interval, s: usize| d.lo() + d.width() * s as f64 / (res - 1) as f64;
        vec![at(bx.get(0), i), at(bx.get(1), j)]
    })
}

fn criterion_6(synthesized: Option<&Candidate>) -> Check {
    let cfg = VerifierConfig {
        keep_records: false,
        ..VerifierConfig::default()
    };
    let file = load("poly2d");
    let mut notes = Vec::new();
    let mut candidates: Vec<(&str, &Candidate)> =
        vec![("bundled poly2d candidate", file.candidate.as_ref().unwrap())];
    if let Some(c) = synthesized {
        candidates.push(("synthesized candidate", c));
    }
    for (name, c) in candidates {
        let t = Instant::now();
        let out = check_safe_subset(&file.problem, c, &cfg).map_err(|e| e.to_string())?;
        ensure(out.verdict == SafeVerdict::Holds, || {
            format!("{name}: {:?}", out.verdict)
        })?;
        within(t.elapsed(), 10.0)?;
        notes.push(format!("{name} holds ({:.2} s)", t.elapsed().as_secs_f64()));
    }
    if synthesized.is_none() {
        return Err("no synthesized candidate to check".into());
    }

    let ctx = ParseContext::new(1, 1, 0, 0);
    let toy = Problem {
        name: "toy".into(),
        n: 1,
        m: 1,
        f: vec![parse("x1 + u1", &ctx).unwrap()],
        u_box: BoxN::from_bounds(&[-1.0], &[1.0]).unwrap(),
        s: Some(parse("-x1", &ctx).unwrap()),
        search_box: BoxN::from_bounds(&[-2.0], &[2.0]).unwrap(),
        search_states: vec![0],
    };
    let c = Candidate {
        h: parse("1 - x1^2", &ctx).unwrap(),
        gamma: Gamma::Identity,
        policy: None,
    };
    let t = Instant::now();
    let out = check_safe_subset(&toy, &c, &cfg).map_err(|e| e.to_string())?;
    let SafeVerdict::Violated(x) = &out.verdict else {
        return Err(format!("toy: {:?}", out.verdict));
    };
    ensure(-x[0] < 0.0 && 1.0 - x[0] * x[0] >= 0.0, || {
        format!("toy point {x:?} is not a violation")
    })?;
    within(t.elapsed(), 10.0)?;
    notes.push(format!("toy violated at x = {:.4}", x[0]));
    Ok(notes.join("; "))
}

// ---- criterion 7: seeded sweep of the structural invariants ----

fn random_func(rng: &mut ChaCha8Rng) -> Func {
    let mut c = || rng.gen_range(-2.0..2.0);
    let src = format!(
        "{}*sin({}*x1 + {}*x2) + {}*x1^2*x2 + {}*exp({}*x2/2) + {}*x1*x2 + {}*x1^3",
        c(),
        c(),
        c(),
        c(),
        c(),
        c(),
        c(),
        c()
    );
    let e = parse(&src, &ParseContext::new(2, 0, 0, 0)).unwrap();
    Func::new(&e, &VarRef::range(VarKind::State, 2), &Env::default()).unwrap()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoxN {
    let lo: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..1.8)).collect();
    let hi: Vec<f64> = lo
        .iter()
        .map(|l| (l + rng.gen_range(0.05..2.0)).min(2.0))
        .collect();
    BoxN::from_bounds(&lo, &hi).unwrap()
}

fn sample(rng: &mut ChaCha8Rng, bx: &BoxN) -> Vec<f64> {
    bx.dims()
        .iter()
        .map(|d| rng.gen_range(d.lo()..=d.hi()))
        .collect()
}

fn interval_inclusion(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..100 {
        let mut pick = || {
            let lo = rng.gen_range(-100.0..100.0);
            let iv = Interval::new(lo, lo + rng.gen_range(0.0..10.0)).unwrap();
            (iv, rng.gen_range(iv.lo()..=iv.hi()))
        };
        let ((a, x), (b, y)) = (pick(), pick());
        ensure(
            (a + b).contains(x + y) && (a - b).contains(x - y) && (a * b).contains(x * y),
            || format!("{a} ∘ {b} misses {x} ∘ {y}"),
        )?;
    }
    Ok(())
}

fn relaxation_invariants(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let f = random_func(rng);
    let parent = random_box(rng);
    let scale = parent.widths();
    let (ap, jet) = compute_alpha_scaled(&f, &parent, &scale, 1.0).unwrap();
    ensure(convexity_margin(&jet.hess, &ap) >= -1e-9, || {
        "convexity certificate".into()
    })?;
    let up = Underestimator::new(f.clone(), ap.clone()).unwrap();
    for _ in 0..1_000 {
        let x = sample(rng, &parent);
        ensure(up.value(&x).unwrap() <= f.value(&x).unwrap() + 1e-9, || {
            format!("dominance at {x:?}")
        })?;
    }
    let c = parent.center();
    let (gap, sep) = (
        f.value(&c).unwrap() - up.value(&c).unwrap(),
        max_separation(&ap),
    );
    ensure(
        (gap - sep).abs() <= 1e-12 * sep.max(f.value(&c).unwrap().abs()).max(1.0),
        || format!("center gap {gap} vs {sep}"),
    )?;

    let (p, q) = (sample(rng, &parent), sample(rng, &parent));
    let lo: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a.min(*b)).collect();
    let hi: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a.max(*b)).collect();
    let child = BoxN::from_bounds(&lo, &hi).unwrap();
    let (ac, _) = compute_alpha_scaled(&f, &child, &scale, 1.0).unwrap();
    ensure(
        ac.values()
            .iter()
            .zip(ap.values())
            .all(|(c, p)| *c <= p + 1e-12 * p.max(1.0)),
        || format!("child α {:?} above parent α {:?}", ac.values(), ap.values()),
    )?;
    let uc = Underestimator::new(f.clone(), ac).unwrap();
    for _ in 0..1_000 {
        let x = sample(rng, &child);
        let (vp, vc, v) = (
            up.value(&x).unwrap(),
            uc.value(&x).unwrap(),
            f.value(&x).unwrap(),
        );
        ensure(vp <= vc + 1e-9 && vc <= v + 1e-9, || {
            format!("nesting fails at {x:?}")
        })?;
    }
    Ok(())
}

fn abb_invariants(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (f, bx) = (random_func(rng), random_box(rng));
    let cfg = AbbConfig {
        trace: true,
        max_iters: 5_000,
        ..AbbConfig::default()
    };
    let r = abb_minimize(&f, None, &bx, &cfg).map_err(|e| e.to_string())?;
    let mut prev = (f64::NEG_INFINITY, f64::INFINITY);
    for &(lo, up) in &r.trace {
        ensure(lo >= prev.0 && up <= prev.1 && lo <= up, || {
            format!("trace {prev:?} -> {:?}", (lo, up))
        })?;
        prev = (lo, up);
    }
    let (grid, _) = grid_oracle(&f, None, &bx, 101).unwrap();
    ensure(r.lower_bound <= grid + 1e-12 * grid.abs().max(1.0), || {
        format!("lower bound {} above grid {grid}", r.lower_bound)
    })?;
    ensure(
        r.upper_bound <= grid + cfg.eps_c + 1e-12 * grid.abs(),
        || format!("value {} above grid {grid}", r.upper_bound),
    )?;
    ensure(abb_minimize(&f, None, &bx, &cfg).unwrap() == r, || {
        "rerun differs".into()
    })
}

fn verifier_invariants(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let ctx2 = ParseContext::new(2, 2, 0, 0);
    let mut g = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let (a1, a2, b1, b2) = (g(0.5, 1.2), g(0.5, 1.2), g(0.05, 0.5), g(0.05, 0.5));
    let (k1, k2, c, gamma) = (g(0.0, 1.0), g(0.0, 1.0), g(0.5, 2.0), g(0.1, 1.0));
    let p = Problem {
        name: "sweep".into(),
        n: 2,
        m: 2,
        f: vec![
            parse(&format!("{a1}*x1 + {b1}*u1"), &ctx2).unwrap(),
            parse(&format!("{a2}*x2 + {b2}*u2"), &ctx2).unwrap(),
        ],
        u_box: BoxN::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
        s: None,
        search_box: BoxN::from_bounds(&[-1.5, -1.5], &[1.5, 1.5]).unwrap(),
        search_states: vec![0, 1],
    };
    let k2 = k2 * c.sqrt();
    let cand = Candidate {
        h: parse(&format!("1 - x1^2 - {c}*x2^2"), &ctx2).unwrap(),
        gamma: Gamma::Linear(gamma),
        policy: Some(vec![
            parse(&format!("-{k1}*x1"), &ctx2).unwrap(),
            parse(&format!("-{k2}*x2"), &ctx2).unwrap(),
        ]),
    };
    let cfg = VerifierConfig {
        eps_f: 1e-3,
        eps_h: 1e-3,
        ..VerifierConfig::default()
    };
    let out = verify_known(&p, &cand, &cfg).map_err(|e| e.to_string())?;
    let margin = Func::new(
        &closed_loop_margin(&p, &cand).unwrap(),
        &VarRef::range(VarKind::State, 2),
        &Env::default(),
    )
    .unwrap();
    let h = Func::new(&cand.h, &VarRef::range(VarKind::State, 2), &Env::default()).unwrap();
    match &out.verdict {
        Verdict::Valid => {
            let vol: f64 = out
                .records
                .iter()
                .filter(|r| {
                    matches!(
                        r.status,
                        RecordStatus::ApprovedValid | RecordStatus::ApprovedEmpty
                    )
                })
                .map(|r| r.bx.volume())
                .sum();
            ensure(
                (vol - p.search_box.volume()).abs() <= 1e-9 * p.search_box.volume(),
                || format!("approved volume {vol}"),
            )?;
            for _ in 0..10_000 {
                let x = sample(rng, &p.search_box);
                if h.value(&x).unwrap() >= 0.0 {
                    ensure(margin.value(&x).unwrap() >= -1e-9, || {
                        format!("valid verdict but margin < 0 at {x:?}")
                    })?;
                }
            }
            let mut x0 = sample(rng, &p.search_box);
            while h.value(&x0).unwrap() < 0.0 {
                x0 = sample(rng, &p.search_box);
            }
            let nominal = vec![parse("1", &ctx2).unwrap(), parse("-1", &ctx2).unwrap()];
            let traj = rollout_filter(&p, &cand, &nominal, &x0, 10, &AbbConfig::default())
                .map_err(|e| e.to_string())?;
            ensure(traj.replays_exactly(&p).unwrap(), || {
                "rollout does not replay".into()
            })
        }
        Verdict::FalsifiedExact(x) => ensure(
            h.value(x).unwrap() >= 0.0 && margin.value(x).unwrap() < 0.0,
            || format!("bad counterexample {x:?}"),
        ),
        _ => Ok(()),
    }?;

    let out = verify_unknown(&p, &cand, &cfg).map_err(|e| e.to_string())?;
    let Some(friend) = out
        .friend
        .as_ref()
        .filter(|_| out.verdict == Verdict::Valid)
    else {
        return Ok(());
    };
    let vars: Vec<VarRef> = VarRef::range(VarKind::State, 2)
        .into_iter()
        .chain(VarRef::range(VarKind::Input, 2))
        .collect();
    let open = Func::new(
        &margin_expr(&p, &cand.h, &cand.gamma),
        &vars,
        &Env::default(),
    )
    .unwrap();
    for _ in 0..10_000 {
        let x = sample(rng, &p.search_box);
        if h.value(&x).unwrap() < 0.0 {
            continue;
        }
        let u = friend
            .input_at(&x)
            .ok_or_else(|| format!("no friend cell at {x:?}"))?;
        ensure(u.iter().all(|v| v.abs() <= 1.0), || {
            format!("friend input {u:?} outside the input box")
        })?;
        let xu: Vec<f64> = x.iter().chain(u).copied().collect();
        ensure(open.value(&xu).unwrap() >= -1e-9, || {
            format!("friend margin < 0 at {x:?}")
        })?;
    }
    Ok(())
}

fn criterion_7() -> Check {
    let t = Instant::now();
    let families: [Family; 4] = [
        ("interval inclusion", interval_inclusion),
        (
            "underestimator dominance, convexity, center gap, α nesting",
            relaxation_invariants,
        ),
        (
            "αBB sandwich, oracle consistency, reproducibility",
            abb_invariants,
        ),
        (
            "verifier partition and soundness in both modes, rollout exactness",
            verifier_invariants,
        ),
    ];
    for (name, check) in families {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check(&mut rng).map_err(|e| format!("{name}, seed {seed}: {e}"))?;
        }
    }
    within(t.elapsed(), 900.0)?;
    Ok(format!(
        "4 invariant families × 100 seeds, {:.1} s",
        t.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: u32, r: &Check| match r {
        Ok(msg) => println!("criterion {n}: PASS  {msg}"),
        Err(msg) => {
            failed += 1;
            println!("criterion {n}: FAIL  {msg}");
        }
    };
    report(1, &criterion_1());
    report(2, &criterion_2());
    report(3, &criterion_3());
    report(4, &criterion_4());
    let (c5, synthesized) = match criterion_5() {
        Ok((msg, cand)) => (Ok(msg), Some(cand)),
        Err(e) => (Err(e), None),
    };
    report(5, &c5);
    report(6, &criterion_6(synthesized.as_ref()));
    report(7, &criterion_7());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
