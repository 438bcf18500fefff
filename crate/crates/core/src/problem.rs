//! Discrete-time systems, barrier candidates and the online safety filter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Func, Tape, VarKind, VarRef};
use crate::global_opt::{abb_minimize, AbbConfig, GlobalStatus};
use crate::interval::BoxN;

/// `x_{t+1} = f(x_t, u_t)` with input box, safe-set function and search box.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    /// One component per state, over state and input variables.
    pub f: Vec<Expr>,
    pub u_box: BoxN,
    /// Safe set `{x : s(x) ≥ 0}`.
    pub s: Option<Expr>,
    /// Box over the states listed in `search_states`.
    pub search_box: BoxN,
    /// States spanned by the search box; the others pass through untouched
    /// and must not influence the barrier analysis.
    pub search_states: Vec<usize>,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if self.f.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.f.len(),
            });
        }
        if self.u_box.dim() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: self.u_box.dim(),
            });
        }
        if self.search_box.dim() != self.search_states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.search_states.len(),
                found: self.search_box.dim(),
            });
        }
        if self.search_states.iter().any(|&i| i >= self.n) {
            return Err(Error::Precondition(
                "search state index out of range".into(),
            ));
        }
        for (i, fi) in self.f.iter().enumerate() {
            check_vars(fi, &format!("f{}", i + 1), self.n, self.m, false)?;
        }
        if let Some(s) = &self.s {
            check_vars(s, "s", self.n, 0, false)?;
        }
        Ok(())
    }

    /// Dimension the verifier works in.
    pub fn search_dim(&self) -> usize {
        self.search_states.len()
    }

    /// Rewrites an expression over full states into one over search
    /// coordinates. Fails if a pass-through state appears.
    pub fn project(&self, e: &Expr) -> Result<Expr> {
        for v in e.variables() {
            if v.kind == VarKind::State && !self.search_states.contains(&v.index) {
                return Err(Error::Precondition(format!(
                    "expression depends on state {v}, which is outside the search box"
                )));
            }
        }
        let map = &self.search_states;
        Ok(e.substitute(&|v| {
            (v.kind == VarKind::State)
                .then(|| {
                    map.iter()
                        .position(|&s| s == v.index)
                        .map(|j| Expr::var(VarRef::state(j)))
                })
                .flatten()
        }))
    }

    /// Full state with pass-through components set to zero.
    pub fn embed(&self, y: &[f64]) -> Vec<f64> {
        let mut x = alloc::vec![0.0; self.n];
        for (&i, &v) in self.search_states.iter().zip(y) {
            x[i] = v;
        }
        x
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let env = Env {
            x: x.to_vec(),
            u: u.to_vec(),
            ..Env::default()
        };
        Tape::compile(&self.f).eval_f64(&env)
    }
}

fn check_vars(e: &Expr, what: &str, n: usize, m: usize, allow_params: bool) -> Result<()> {
    for v in e.variables() {
        let ok = match v.kind {
            VarKind::State => v.index < n,
            VarKind::Input => v.index < m,
            VarKind::Theta | VarKind::Mu => allow_params,
        };
        if !ok {
            return Err(Error::Precondition(format!(
                "{what} must not reference {v}"
            )));
        }
    }
    Ok(())
}

/// The class-𝒦∞ rate γ with γ(r) ≤ r.
#[derive(Clone, Debug)]
pub enum Gamma {
    Identity,
    /// `γ(r) = c·r` with `0 < c ≤ 1`.
    Linear(f64),
    /// Any formula in `r`, stored as state variable 0.
    General(Expr),
}

impl Gamma {
    pub fn apply(&self, r: &Expr) -> Expr {
        match self {
            Gamma::Identity => r.clone(),
            Gamma::Linear(c) => *c * r,
            Gamma::General(g) => g.substitute_kind(VarKind::State, core::slice::from_ref(r)),
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        match self {
            Gamma::Identity => Ok(r),
            Gamma::Linear(c) => Ok(c * r),
            Gamma::General(g) => g.eval(&Env::states(&[r])),
        }
    }

    /// Checks γ(0) = 0, strict increase and γ(r) ≤ r on `samples` points of `[0, r_max]`.
    pub fn validate(&self, r_max: f64, samples: usize) -> Result<()> {
        if let Gamma::Linear(c) = self {
            if !(*c > 0.0 && *c <= 1.0) {
                return Err(Error::Precondition(format!(
                    "linear gamma needs 0 < c <= 1, got {c}"
                )));
            }
            return Ok(());
        }
        if self.eval(0.0)?.abs() > 1e-12 {
            return Err(Error::Precondition("gamma(0) must be 0".into()));
        }
        let mut prev = 0.0;
        for k in 1..=samples.max(2) {
            let r = r_max * k as f64 / samples.max(2) as f64;
            let g = self.eval(r)?;
            if !(g > prev) || g > r + 1e-12 {
                return Err(Error::Precondition(format!(
                    "gamma must be increasing with gamma(r) <= r; fails at r = {r}"
                )));
            }
            prev = g;
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Gamma::Identity) || matches!(self, Gamma::Linear(c) if *c == 1.0)
    }
}

/// A barrier candidate `(h, γ)` with an optional policy.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub h: Expr,
    pub gamma: Gamma,
    pub policy: Option<Vec<Expr>>,
}

impl Candidate {
    pub fn validate(&self, p: &Problem) -> Result<()> {
        check_vars(&self.h, "h", p.n, 0, false)?;
        if let Some(pi) = &self.policy {
            if pi.len() != p.m {
                return Err(Error::DimensionMismatch {
                    expected: p.m,
                    found: pi.len(),
                });
            }
            for (i, c) in pi.iter().enumerate() {
                check_vars(c, &format!("pi{}", i + 1), p.n, 0, false)?;
            }
        }
        Ok(())
    }

    /// Same candidate with γ replaced by the identity.
    pub fn with_identity_gamma(&self) -> Candidate {
        Candidate {
            gamma: Gamma::Identity,
            ..self.clone()
        }
    }
}

/// `h(f(x,u)) − h(x) + γ(h(x))` over full state and input variables.
pub fn margin_expr(p: &Problem, h: &Expr, gamma: &Gamma) -> Expr {
    let next = h.substitute_kind(VarKind::State, &p.f);
    next - h + gamma.apply(h)
}

/// The margin with inputs replaced by the policy.
pub fn closed_loop_margin(p: &Problem, c: &Candidate) -> Result<Expr> {
    let pi = c
        .policy
        .as_ref()
        .ok_or_else(|| Error::Precondition("candidate has no policy".into()))?;
    Ok(margin_expr(p, &c.h, &c.gamma).substitute_kind(VarKind::Input, pi))
}

/// Point evaluation of the DTCBF margin at full state `x` and input `u`.
pub fn dtcbf_margin(p: &Problem, c: &Candidate, x: &[f64], u: &[f64]) -> Result<f64> {
    let env = Env {
        x: x.to_vec(),
        u: u.to_vec(),
        ..Env::default()
    };
    margin_expr(p, &c.h, &c.gamma).eval(&env)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub h: f64,
    pub margin: f64,
}

/// States and the inputs applied at them; the final state has no input.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_state: Vec<f64>,
    pub final_h: f64,
}

impl Trajectory {
    /// Re-applies `f` to every stored pair and checks bit-identical states.
    pub fn replays_exactly(&self, p: &Problem) -> Result<bool> {
        for (i, s) in self.steps.iter().enumerate() {
            let next = p.step(&s.state, &s.input)?;
            let want = self
                .steps
                .get(i + 1)
                .map_or(&self.final_state, |n| &n.state);
            if next
                .iter()
                .zip(want)
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Radical-inverse (Halton) coordinate `k` in base `b`.
fn halton(mut k: usize, b: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while k > 0 {
        f /= b as f64;
        r += f * (k % b) as f64;
        k /= b;
    }
    r
}

/// Looks for a point of the zero level set of `h` where its gradient
/// vanishes, which breaks the regularity the verifier relies on. Pairs of
/// Halton points in the search box whose `h` values differ in sign are
/// bisected onto the level set. This samples; it does not certify.
pub fn degenerate_boundary_point(
    p: &Problem,
    c: &Candidate,
    pairs: usize,
) -> Result<Option<Vec<f64>>> {
    const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let d = p.search_dim();
    if d > PRIMES.len() {
        return Ok(None);
    }
    let h = Func::new(
        &p.project(&c.h)?,
        &VarRef::range(VarKind::State, d),
        &Env::default(),
    )?;
    let at = |k: usize| -> Vec<f64> {
        p.search_box
            .dims()
            .iter()
            .zip(PRIMES)
            .map(|(iv, b)| iv.lo() + iv.width() * halton(k + 1, b))
            .collect()
    };
    let diam = p
        .search_box
        .widths()
        .iter()
        .map(|w| w * w)
        .sum::<f64>()
        .sqrt();
    let mut scale: f64 = 1.0;
    for k in 0..pairs {
        let (mut a, mut b) = (at(2 * k), at(2 * k + 1));
        let (ha, hb) = (h.value(&a)?, h.value(&b)?);
        scale = scale.max(ha.abs()).max(hb.abs());
        if (ha >= 0.0) == (hb >= 0.0) {
            continue;
        }
        if ha < 0.0 {
            core::mem::swap(&mut a, &mut b);
        }
        for _ in 0..60 {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            if h.value(&mid)? >= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let g = h.jet(&a)?.grad;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm * diam <= 1e-8 * scale {
            return Ok(Some(p.embed(&a)));
        }
    }
    Ok(None)
}

/// Closed-loop rollout with the minimally invasive filter
/// `min ‖u − π_nom(x)‖²  s.t.  margin(x, u) ≥ 0, u ∈ 𝕌`.
pub fn rollout_filter(
    p: &Problem,
    c: &Candidate,
    nominal: &[Expr],
    x0: &[f64],
    steps: usize,
    cfg: &AbbConfig,
) -> Result<Trajectory> {
    if x0.len() != p.n {
        return Err(Error::DimensionMismatch {
            expected: p.n,
            found: x0.len(),
        });
    }
    if nominal.len() != p.m {
        return Err(Error::DimensionMismatch {
            expected: p.m,
            found: nominal.len(),
        });
    }
    let h_tape = Tape::compile(core::slice::from_ref(&c.h));
    let h_at = |x: &[f64]| -> Result<f64> { Ok(h_tape.eval_f64(&Env::states(x))?[0]) };
    let h0 = h_at(x0)?;
    if !(h0 >= 0.0) {
        return Err(Error::Precondition(format!(
            "initial state has h = {h0} < 0"
        )));
    }
    let inputs = VarRef::range(VarKind::Input, p.m);
    let margin = margin_expr(p, &c.h, &c.gamma);
    let nominal_tape = Tape::compile(nominal);
    let f_tape = Tape::compile(&p.f);
    // objective and constraint are rebound to the current state every step
    let u_ref: Vec<Expr> = (0..p.m).map(|i| Expr::var(VarRef::mu(i))).collect();
    let dist = inputs
        .iter()
        .zip(&u_ref)
        .map(|(u, r)| (Expr::var(*u) - r).powi(2))
        .reduce(|a, b| a + b)
        .unwrap_or_else(|| Expr::constant(0.0));
    let slack = Expr::var(VarRef::theta(0));
    let con_expr = slack - &margin;
    let margin_u = Func::new(&margin, &inputs, &Env::states(x0))?;
    let mut obj = Func::new(
        &dist,
        &inputs,
        &Env {
            mu: alloc::vec![0.0; p.m],
            ..Env::default()
        },
    )?;
    let mut con = Func::new(
        &con_expr,
        &inputs,
        &Env {
            x: x0.to_vec(),
            theta: alloc::vec![0.0],
            ..Env::default()
        },
    )?;

    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let env_x = Env::states(&x);
        let u_nom = nominal_tape.eval_f64(&env_x)?;
        let mut u_nom_clamped = u_nom.clone();
        p.u_box.clamp(&mut u_nom_clamped);
        let mf = margin_u.rebind(&env_x)?;
        let u = if u_nom_clamped == u_nom && mf.value(&u_nom)? >= 0.0 {
            u_nom
        } else {
            obj = obj.rebind(&Env {
                mu: u_nom.clone(),
                ..Env::default()
            })?;
            let mut found = None;
            for delta in [1e-9, 0.0] {
                con = con.rebind(&Env {
                    x: x.clone(),
                    theta: alloc::vec![delta],
                    ..Env::default()
                })?;
                let r = abb_minimize(&obj, Some(&con), &p.u_box, cfg)?;
                if r.status != GlobalStatus::Infeasible {
                    if let Some(u) = r.minimizer {
                        found = Some(u);
                        break;
                    }
                }
            }
            found.ok_or_else(|| Error::FilterInfeasible {
                step: t,
                state: x.clone(),
            })?
        };
        let env_xu = Env {
            x: x.clone(),
            u: u.clone(),
            ..Env::default()
        };
        let m = mf.value(&u)?;
        let h = h_at(&x)?;
        let next = f_tape.eval_f64(&env_xu)?;
        out.push(TrajectoryStep {
            t,
            state: x,
            input: u,
            h,
            margin: m,
        });
        x = next;
    }
    let final_h = h_at(&x)?;
    Ok(Trajectory {
        steps: out,
        final_state: x,
        final_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, ParseContext};
    use alloc::vec;

    fn toy(f: &[&str]) -> Problem {
        let ctx = ParseContext::new(1, 1, 0, 0);
        Problem {
            name: "toy".into(),
            n: 1,
            m: 1,
            f: f.iter().map(|s| parse(s, &ctx).unwrap()).collect(),
            u_box: BoxN::from_bounds(&[-1.0], &[1.0]).unwrap(),
            s: None,
            search_box: BoxN::from_bounds(&[-1.5], &[1.5]).unwrap(),
            search_states: vec![0],
        }
    }

    fn cand(h: &str) -> Candidate {
        Candidate {
            h: parse(h, &ParseContext::new(1, 0, 0, 0)).unwrap(),
            gamma: Gamma::Identity,
            policy: None,
        }
    }

    #[test]
    fn identity_dynamics_margin_is_gamma_of_h() {
        let p = toy(&["x1"]);
        let c = cand("1 - x1^2");
        for x in [-1.0, -0.3, 0.0, 0.8] {
            let m = dtcbf_margin(&p, &c, &[x], &[0.4]).unwrap();
            assert!((m - (1.0 - x * x)).abs() < 1e-15);
        }
    }

    #[test]
    fn filter_keeps_feasible_nominal() {
        let p = toy(&["x1"]);
        let c = cand("1 - x1^2");
        let nominal = [parse("0.25", &ParseContext::new(1, 1, 0, 0)).unwrap()];
        let tr = rollout_filter(&p, &c, &nominal, &[0.5], 5, &AbbConfig::default()).unwrap();
        assert!(tr.steps.iter().all(|s| s.input == vec![0.25]));
        assert!(tr.replays_exactly(&p).unwrap());
    }

    #[test]
    fn filter_corrects_unsafe_nominal() {
        // x+ = x + u; h = 1 - x^2, γ = id: need 1 - (x+u)^2 >= 0
        let p = toy(&["x1 + u1"]);
        let c = cand("1 - x1^2");
        let nominal = [parse("1", &ParseContext::new(1, 1, 0, 0)).unwrap()];
        let tr = rollout_filter(&p, &c, &nominal, &[0.5], 10, &AbbConfig::default()).unwrap();
        for s in &tr.steps {
            assert!(s.margin >= -1e-9, "{s:?}");
            assert!(s.h >= -1e-9);
        }
        assert!(tr.final_h >= -1e-9);
        assert!((tr.steps[0].input[0] - 0.5).abs() < 1e-4);
        assert!(tr.replays_exactly(&p).unwrap());
    }

    #[test]
    fn filter_precondition_and_infeasibility() {
        let p = toy(&["x1 + u1"]);
        let nominal = [parse("0", &ParseContext::new(1, 1, 0, 0)).unwrap()];
        let c = cand("1 - x1^2");
        assert!(matches!(
            rollout_filter(&p, &c, &nominal, &[2.0], 3, &AbbConfig::default()),
            Err(Error::Precondition(_))
        ));
        // margin = -(x+u)^2 - 1 < 0 whatever u is
        let bad = Candidate {
            gamma: Gamma::General(
                parse(
                    "r/2",
                    &ParseContext::new(0, 0, 0, 0).with_alias("r", VarRef::state(0)),
                )
                .unwrap(),
            ),
            ..cand("-x1^2 - 1 + 2")
        };
        let p2 = toy(&["3 + u1"]);
        let r = rollout_filter(&p2, &bad, &nominal, &[0.0], 3, &AbbConfig::default());
        assert!(
            matches!(r, Err(Error::FilterInfeasible { step: 0, .. })),
            "{r:?}"
        );
    }

    #[test]
    fn gamma_checks() {
        assert!(Gamma::Linear(0.8).validate(10.0, 100).is_ok());
        assert!(Gamma::Linear(1.5).validate(10.0, 100).is_err());
        let ctx = ParseContext::new(0, 0, 0, 0).with_alias("r", VarRef::state(0));
        assert!(Gamma::General(parse("r^2", &ctx).unwrap())
            .validate(2.0, 50)
            .is_err());
        assert!(Gamma::General(parse("r/(1+r)", &ctx).unwrap())
            .validate(5.0, 50)
            .is_ok());
        assert!(Gamma::General(parse("r + 1", &ctx).unwrap())
            .validate(5.0, 50)
            .is_err());
    }

    #[test]
    fn projection_rejects_pass_through_dependence() {
        let ctx = ParseContext::new(3, 0, 0, 0);
        let mut p = toy(&["x1"]);
        p.n = 3;
        p.search_states = vec![2];
        let e = parse("x3^2 + 1", &ctx).unwrap();
        let pe = p.project(&e).unwrap();
        assert_eq!(pe.eval(&Env::states(&[2.0])).unwrap(), 5.0);
        assert!(p.project(&parse("x1 + x3", &ctx).unwrap()).is_err());
        assert_eq!(p.embed(&[4.0]), vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn regular_boundary_passes() {
        let p = toy(&["x1 + u1"]);
        assert_eq!(
            degenerate_boundary_point(&p, &cand("1 - x1^2"), 200).unwrap(),
            None
        );
    }

    #[test]
    fn flat_boundary_is_reported() {
        // triple root: the sign changes at 0.3 with zero slope
        let p = toy(&["x1 + u1"]);
        let x = degenerate_boundary_point(&p, &cand("-(x1 - 0.3)^3"), 200)
            .unwrap()
            .unwrap();
        assert!((x[0] - 0.3).abs() < 1e-2, "{x:?}");
    }
}
