//! Joint synthesis of a parameterized barrier `h(x; ϑ)` and policy `π(x; μ)`.
//!
//! An outer best-first branch-and-bound runs over `Θ × M`. Node bounds come
//! from interval evaluation of the outer objective on the ϑ part. A node's
//! candidate is its ϑ center paired with a μ found by a sampled pattern
//! search, and it only becomes an incumbent after every inner minimization
//! has been certified by αBB and the pair has passed `verify_known`.
//!
//! Nodes are discarded in three sound ways: by bound against the incumbent,
//! by interval evaluation of the outer constraints, and by a witness state
//! at which some inner condition fails for every parameter in the node.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Func, Tape, VarKind, VarRef};
use crate::global_opt::{abb_minimize, AbbConfig, GlobalResult, GlobalStatus};
use crate::interval::BoxN;
use crate::problem::{margin_expr, Candidate, Gamma, Problem};
use crate::verifier::{verify_known, Verdict, VerificationOutcome, VerifierConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissibilityMode {
    /// Bound each `π_i` from below and above separately.
    PerComponentMinMax,
    /// One super-ellipsoid inner approximation of the input box, even `p ≥ 2`.
    SuperEllipsoid(u32),
    /// `(π_i − c_i)² ≤ r_i²` per component.
    SymmetricSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SafeSubsetMode {
    /// Minimize `s` over `{h ≥ 0}` for every candidate.
    InnerBB,
    /// Rely on the outer constraints on ϑ alone.
    DirectParamConstraint,
}

#[derive(Clone, Debug)]
pub struct SynthesisSpec {
    pub problem: Problem,
    /// Over full states and ϑ.
    pub h_template: Expr,
    /// One entry per input, over full states and μ.
    pub pi_template: Vec<Expr>,
    pub gamma: Gamma,
    pub theta_box: BoxN,
    pub mu_box: BoxN,
    /// Minimized; over ϑ only.
    pub outer_objective: Expr,
    /// Each `g(ϑ) ≤ 0`.
    pub outer_constraints: Vec<Expr>,
    pub admissibility: AdmissibilityMode,
    pub safe_subset: SafeSubsetMode,
    pub eps_f: f64,
    pub eps_big_f: f64,
}

fn only_kinds(e: &Expr, kinds: &[VarKind], what: &str) -> Result<()> {
    match e.variables().into_iter().find(|v| !kinds.contains(&v.kind)) {
        Some(v) => Err(Error::Precondition(alloc::format!(
            "{what} must not reference {v}"
        ))),
        None => Ok(()),
    }
}

impl SynthesisSpec {
    pub fn n_theta(&self) -> usize {
        self.theta_box.dim()
    }

    pub fn n_mu(&self) -> usize {
        self.mu_box.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        p.validate()?;
        if self.pi_template.len() != p.m {
            return Err(Error::DimensionMismatch {
                expected: p.m,
                found: self.pi_template.len(),
            });
        }
        only_kinds(
            &self.h_template,
            &[VarKind::State, VarKind::Theta],
            "h template",
        )?;
        for e in &self.pi_template {
            only_kinds(e, &[VarKind::State, VarKind::Mu], "policy template")?;
        }
        only_kinds(&self.outer_objective, &[VarKind::Theta], "outer objective")?;
        for g in &self.outer_constraints {
            only_kinds(g, &[VarKind::Theta], "outer constraint")?;
        }
        let k = self.n_theta();
        let j = self.n_mu();
        let in_range = |e: &Expr| {
            e.variables().iter().all(|v| match v.kind {
                VarKind::Theta => v.index < k,
                VarKind::Mu => v.index < j,
                VarKind::State => v.index < p.n,
                VarKind::Input => false,
            })
        };
        let all = core::iter::once(&self.h_template)
            .chain(&self.pi_template)
            .chain(core::iter::once(&self.outer_objective))
            .chain(&self.outer_constraints);
        for e in all {
            if !in_range(e) {
                return Err(Error::Precondition(
                    "parameter or state index out of range".into(),
                ));
            }
        }
        if let AdmissibilityMode::SuperEllipsoid(pw) = self.admissibility {
            if pw < 2 || pw % 2 != 0 {
                return Err(Error::InvalidConfig(
                    "super-ellipsoid exponent must be even and at least 2".into(),
                ));
            }
        }
        if self.safe_subset == SafeSubsetMode::InnerBB && p.s.is_none() {
            return Err(Error::Precondition(
                "inner safe-subset check needs a safe-set function".into(),
            ));
        }
        if !(self.eps_f > 0.0 && self.eps_big_f > 0.0) {
            return Err(Error::InvalidConfig(
                "eps_f and eps_F must be positive".into(),
            ));
        }
        self.gamma.validate(10.0, 64)
    }

    /// The concrete candidate for one parameter pair.
    pub fn candidate(&self, theta: &[f64], mu: &[f64]) -> Result<Candidate> {
        if theta.len() != self.n_theta() || mu.len() != self.n_mu() {
            return Err(Error::DimensionMismatch {
                expected: self.n_theta() + self.n_mu(),
                found: theta.len() + mu.len(),
            });
        }
        Ok(Candidate {
            h: self.h_template.bind(VarKind::Theta, theta),
            gamma: self.gamma.clone(),
            policy: Some(
                self.pi_template
                    .iter()
                    .map(|e| e.bind(VarKind::Mu, mu))
                    .collect(),
            ),
        })
    }

    /// Inner conditions as expressions that must be nonnegative on `{h ≥ 0}`,
    /// in search coordinates and still over ϑ and μ. Cheap ones come first.
    fn inner_conditions(&self) -> Result<Vec<(CertificateKind, Expr)>> {
        let p = &self.problem;
        let pi = &self.pi_template;
        let mut out = Vec::new();
        match self.admissibility {
            AdmissibilityMode::PerComponentMinMax => {
                for (i, d) in p.u_box.dims().iter().enumerate() {
                    out.push((CertificateKind::InputLower(i), &pi[i] - d.lo()));
                    out.push((
                        CertificateKind::InputUpper(i),
                        Expr::constant(d.hi()) - &pi[i],
                    ));
                }
            }
            AdmissibilityMode::SymmetricSquare => {
                for (i, d) in p.u_box.dims().iter().enumerate() {
                    let r = d.width() / 2.0;
                    let dev = &pi[i] - d.mid();
                    out.push((
                        CertificateKind::InputSquare(i),
                        Expr::constant(r * r) - dev.powi(2),
                    ));
                }
            }
            AdmissibilityMode::SuperEllipsoid(pw) => {
                let se =
                    superellipsoid_inner_set(&p.u_box, pw)?.substitute_kind(VarKind::Input, pi);
                out.push((
                    CertificateKind::InputSuperEllipsoid,
                    Expr::constant(1.0) - se,
                ));
            }
        }
        if self.safe_subset == SafeSubsetMode::InnerBB {
            if let Some(s) = &p.s {
                out.push((CertificateKind::SafeSubset, s.clone()));
            }
        }
        let m = margin_expr(p, &self.h_template, &self.gamma).substitute_kind(VarKind::Input, pi);
        out.push((CertificateKind::Margin, m));
        out.into_iter()
            .map(|(k, e)| Ok((k, p.project(&e)?)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertificateKind {
    Margin,
    InputLower(usize),
    InputUpper(usize),
    InputSquare(usize),
    InputSuperEllipsoid,
    SafeSubset,
}

impl core::fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CertificateKind::Margin => write!(f, "margin"),
            CertificateKind::InputLower(i) => write!(f, "input-lower-{}", i + 1),
            CertificateKind::InputUpper(i) => write!(f, "input-upper-{}", i + 1),
            CertificateKind::InputSquare(i) => write!(f, "input-square-{}", i + 1),
            CertificateKind::InputSuperEllipsoid => write!(f, "input-superellipsoid"),
            CertificateKind::SafeSubset => write!(f, "safe-subset"),
        }
    }
}

/// One inner minimization of a condition `g ≥ 0` over `{h ≥ 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub result: GlobalResult,
    /// The minimum is certified nonnegative (or the set is empty).
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    /// Settings for every inner αBB run; `eps_c` and `cutoff` are overridden.
    pub inner: AbbConfig,
    /// ϑ dimensions narrower than this are not split. μ is never split;
    /// its node range only shrinks through witness contraction.
    pub width_floor: f64,
    pub max_nodes: usize,
    /// Grid points per search dimension used to screen candidates.
    pub screen_resolution: usize,
    /// Score evaluations per μ pattern search.
    pub refine_evals: usize,
    /// Pattern searches per node, each after a failed certificate. Zero
    /// disables candidates.
    pub refine_rounds: usize,
    /// Candidates are tried at depths divisible by this.
    pub candidate_stride: usize,
    /// Witness states kept for pruning.
    pub witness_pool: usize,
    pub verifier: VerifierConfig,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            inner: AbbConfig {
                max_iters: 20_000,
                ..AbbConfig::default()
            },
            width_floor: 1e-3,
            max_nodes: 200_000,
            screen_resolution: 16,
            refine_evals: 200,
            refine_rounds: 3,
            candidate_stride: 2,
            witness_pool: 48,
            verifier: VerifierConfig {
                keep_records: false,
                max_iters: 200_000,
                ..VerifierConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthesisStatus {
    Found,
    Infeasible,
    Budget,
}

impl SynthesisStatus {
    pub fn label(&self) -> &'static str {
        match self {
            SynthesisStatus::Found => "found",
            SynthesisStatus::Infeasible => "infeasible",
            SynthesisStatus::Budget => "budget",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynthesisStats {
    pub nodes: usize,
    pub candidates_screened: usize,
    pub candidates_certified: usize,
    pub certificate_failures: usize,
    pub crosscheck_rejections: usize,
    pub incumbent_updates: usize,
    pub pruned_by_bound: usize,
    pub pruned_by_constraint: usize,
    pub pruned_by_witness: usize,
    /// Nodes left unresolved at the width floor.
    pub floored: usize,
}

#[derive(Clone, Debug)]
pub struct SynthesisOutcome {
    pub status: SynthesisStatus,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    /// Outer objective at `theta` (`+inf` without an incumbent).
    pub outer_value: f64,
    /// Smallest bound among nodes that were not shown infeasible.
    pub lower_bound: f64,
    /// Smallest bound among nodes fathomed against the incumbent (`+inf`
    /// when none were).
    pub fathomed_bound: f64,
    pub certificates: Vec<Certificate>,
    pub verifier_crosscheck: Option<VerificationOutcome>,
    pub stats: SynthesisStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseGeometry {
    pub l: f64,
    /// Semi-major axis.
    pub a: f64,
    pub b: f64,
    pub area: f64,
}

/// Geometry of `{1 − ϑ₁x₁² − ϑ₂x₁x₂ − ϑ₃x₂² ≥ 0}`.
pub fn ellipse_geometry(theta: &[f64]) -> Result<EllipseGeometry> {
    let [t1, t2, t3] = theta else {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: theta.len(),
        });
    };
    let l = t2 * t2 - 4.0 * t1 * t3;
    if !(l < 0.0 && *t1 > 0.0 && *t3 > 0.0) {
        return Err(Error::DegenerateEllipse(l));
    }
    let q = libm::sqrt((t1 - t3) * (t1 - t3) + t2 * t2);
    let axis = |s: f64| libm::sqrt(-2.0 * l * (t1 + t3 + s)) / -l;
    Ok(EllipseGeometry {
        l,
        a: axis(q),
        b: axis(-q),
        area: 2.0 * core::f64::consts::PI / libm::sqrt(-l),
    })
}

/// `Σ ((u_i − c_i)/r_i)^p` with `c`, `r` the center and half-widths of the
/// box. Its 1-sublevel set lies inside the box.
pub fn superellipsoid_inner_set(u_box: &BoxN, p: u32) -> Result<Expr> {
    if p < 2 || !p.is_multiple_of(2) {
        return Err(Error::InvalidConfig(
            "super-ellipsoid exponent must be even and at least 2".into(),
        ));
    }
    let mut sum = Expr::constant(0.0);
    for (i, d) in u_box.dims().iter().enumerate() {
        if d.width() <= 0.0 {
            return Err(Error::DegenerateBox);
        }
        let t = (Expr::u(i) - d.mid()) * (2.0 / d.width());
        sum = sum + t.powi(p as i32);
    }
    Ok(sum)
}

fn search_vars(d: usize) -> Vec<VarRef> {
    VarRef::range(VarKind::State, d)
}

/// One certificate per inner condition for the pair `(ϑ, μ)`.
pub fn inner_certify(
    spec: &SynthesisSpec,
    theta: &[f64],
    mu: &[f64],
    cfg: &SynthesisConfig,
) -> Result<Vec<Certificate>> {
    spec.validate()?;
    let conds = spec.inner_conditions()?;
    let neg_h = spec.problem.project(&-&spec.h_template)?;
    let (certs, _) = certify(spec, &conds, &neg_h, theta, mu, cfg, false)?;
    Ok(certs)
}

/// Runs the inner αBB certificates; with `stop_early` it returns at the
/// first failure together with a violating state when one was found.
fn certify(
    spec: &SynthesisSpec,
    conds: &[(CertificateKind, Expr)],
    neg_h: &Expr,
    theta: &[f64],
    mu: &[f64],
    cfg: &SynthesisConfig,
    stop_early: bool,
) -> Result<(Vec<Certificate>, Option<Vec<f64>>)> {
    let d = spec.problem.search_dim();
    let vars = search_vars(d);
    let bind = |e: &Expr| e.bind(VarKind::Theta, theta).bind(VarKind::Mu, mu);
    let con = Func::new(&bind(neg_h), &vars, &Env::default())?;
    let abb = AbbConfig {
        eps_c: spec.eps_f,
        cutoff: Some(0.0),
        ..cfg.inner.clone()
    };
    let mut out = Vec::new();
    let mut witness = None;
    for (kind, e) in conds {
        let g = Func::new(&bind(e), &vars, &Env::default())?;
        let result = abb_minimize(&g, Some(&con), &spec.problem.search_box, &abb)?;
        let passed = matches!(
            result.status,
            GlobalStatus::CutoffProved | GlobalStatus::Infeasible
        );
        if !passed && witness.is_none() {
            witness = result
                .minimizer
                .clone()
                .filter(|_| result.upper_bound < 0.0);
        }
        out.push(Certificate {
            kind: *kind,
            result,
            passed,
        });
        if !passed && stop_early {
            break;
        }
    }
    Ok((out, witness))
}

struct Node {
    lb: f64,
    seq: u64,
    depth: usize,
    bx: BoxN,
    /// Best policy parameters seen at the parent.
    mu_hint: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest.
    fn cmp(&self, o: &Self) -> Ordering {
        o.lb.total_cmp(&self.lb).then(o.seq.cmp(&self.seq))
    }
}

/// Precompiled pieces of a spec.
struct Prepared<'a> {
    spec: &'a SynthesisSpec,
    conds: Vec<(CertificateKind, Expr)>,
    neg_h: Expr,
    /// Output 0 is `h`, then one output per condition.
    screen: Tape,
    objective: Func,
    constraints: Vec<Func>,
    /// `h` over (search state, ϑ).
    wit_h: Func,
    /// Conditions over (search state, ϑ, μ).
    wit_g: Vec<Func>,
    grid: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    fn new(spec: &'a SynthesisSpec, cfg: &SynthesisConfig) -> Result<Self> {
        let p = &spec.problem;
        let d = p.search_dim();
        let (k, j) = (spec.n_theta(), spec.n_mu());
        let conds = spec.inner_conditions()?;
        let h = p.project(&spec.h_template)?;
        let thetas = VarRef::range(VarKind::Theta, k);
        let mut all: Vec<Expr> = vec![h.clone()];
        all.extend(conds.iter().map(|(_, e)| e.clone()));
        let mut xt = search_vars(d);
        xt.extend(thetas.iter().copied());
        let mut xtm = xt.clone();
        xtm.extend(VarRef::range(VarKind::Mu, j));
        let env = Env::default();
        let objective = Func::new(&spec.outer_objective, &thetas, &env)?;
        let constraints = spec
            .outer_constraints
            .iter()
            .map(|g| Func::new(g, &thetas, &env))
            .collect::<Result<Vec<_>>>()?;
        let wit_g = conds
            .iter()
            .map(|(_, e)| Func::new(e, &xtm, &env))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            spec,
            neg_h: -&h,
            screen: Tape::compile(&all),
            objective,
            constraints,
            wit_h: Func::new(&h, &xt, &env)?,
            wit_g,
            grid: grid_points(&p.search_box, cfg.screen_resolution),
            conds,
        })
    }

    fn split(&self, bx: &BoxN) -> (BoxN, BoxN) {
        let k = self.spec.n_theta();
        let dims = bx.dims();
        let t = BoxN::new(dims[..k].to_vec()).expect("theta part");
        let m = BoxN::new(dims[k..].to_vec()).expect("mu part");
        (t, m)
    }

    fn objective_lb(&self, theta: &BoxN) -> Option<f64> {
        self.objective.interval_value(theta).ok().map(|v| v.lo())
    }

    fn constraints_refute(&self, theta: &BoxN) -> bool {
        self.constraints
            .iter()
            .any(|g| g.interval_value(theta).is_ok_and(|v| v.lo() > 0.0))
    }

    fn constraints_hold(&self, theta: &[f64]) -> bool {
        self.constraints
            .iter()
            .all(|g| g.value(theta).is_ok_and(|v| v <= 0.0))
    }

    /// Pool states where `h ≥ 0` for every ϑ in the node, each lifted to a
    /// box over (state, ϑ, μ) with the node's parameter part.
    fn witnesses(&self, node: &BoxN, theta: &BoxN, pool: &[Vec<f64>]) -> Vec<BoxN> {
        pool.iter()
            .filter(|x| {
                let lo: Vec<f64> = x.iter().copied().chain(theta.lo()).collect();
                let hi: Vec<f64> = x.iter().copied().chain(theta.hi()).collect();
                BoxN::from_bounds(&lo, &hi)
                    .is_ok_and(|b| lower_bound(&self.wit_h, &b).is_some_and(|v| v >= 0.0))
            })
            .filter_map(|x| {
                let lo: Vec<f64> = x.iter().copied().chain(node.lo()).collect();
                let hi: Vec<f64> = x.iter().copied().chain(node.hi()).collect();
                BoxN::from_bounds(&lo, &hi).ok()
            })
            .collect()
    }

    /// Some condition is negative on all of `params` at one of the witnesses.
    fn refuted(&self, wits: &[BoxN], params: &BoxN, d: usize) -> bool {
        wits.iter().any(|w| {
            let mut dims = w.dims()[..d].to_vec();
            dims.extend_from_slice(params.dims());
            let Ok(b) = BoxN::new(dims) else { return false };
            self.wit_g
                .iter()
                .any(|g| g.interval_value(&b).is_ok_and(|v| v.hi() < 0.0))
        })
    }

    /// Shrinks the node by discarding end slices refuted by a witness.
    /// `None` when nothing of the node survives.
    fn contract(&self, node: &BoxN, theta: &BoxN, pool: &[Vec<f64>]) -> Option<BoxN> {
        const SLICES: usize = 8;
        let d = self.spec.problem.search_dim();
        let wits = self.witnesses(node, theta, pool);
        if wits.is_empty() {
            return Some(node.clone());
        }
        if wits.iter().any(|w| {
            self.wit_g
                .iter()
                .any(|g| upper_bound(g, w).is_some_and(|v| v < 0.0))
        }) {
            return None;
        }
        let mut bx = node.clone();
        for _ in 0..2 {
            let mut changed = false;
            for i in 0..bx.dim() {
                let iv = bx.get(i);
                if iv.width() <= 0.0 {
                    continue;
                }
                let slice = |s: usize| {
                    let step = iv.width() / SLICES as f64;
                    let lo = iv.lo() + step * s as f64;
                    let hi = if s + 1 == SLICES { iv.hi() } else { lo + step };
                    let mut dims = bx.dims().to_vec();
                    dims[i] = crate::interval::Interval::new(lo, hi).expect("ordered slice");
                    BoxN::new(dims).expect("slice box")
                };
                let first = (0..SLICES).find(|&s| !self.refuted(&wits, &slice(s), d))?;
                let last = (first..SLICES)
                    .rev()
                    .find(|&s| !self.refuted(&wits, &slice(s), d))
                    .unwrap_or(first);
                if first > 0 || last + 1 < SLICES {
                    let lo = slice(first).get(i).lo();
                    let hi = slice(last).get(i).hi();
                    let mut dims = bx.dims().to_vec();
                    dims[i] = crate::interval::Interval::new(lo, hi).expect("ordered hull");
                    bx = BoxN::new(dims).expect("contracted box");
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Some(bx)
    }

    /// Points of `{h(·; ϑ) ≥ 0}` used to score policies.
    fn samples(&self, theta: &[f64], extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut env = Env {
            theta: theta.to_vec(),
            mu: vec![0.0; self.spec.n_mu()],
            ..Env::default()
        };
        self.grid
            .iter()
            .chain(extra)
            .filter(|x| {
                env.x = x.to_vec();
                self.screen.eval_f64(&env).is_ok_and(|v| v[0] >= 0.0)
            })
            .cloned()
            .collect()
    }

    /// Worst condition value over the samples, with the state attaining it.
    fn score(&self, theta: &[f64], mu: &[f64], samples: &[Vec<f64>]) -> (f64, Option<Vec<f64>>) {
        let mut env = Env {
            theta: theta.to_vec(),
            mu: mu.to_vec(),
            ..Env::default()
        };
        let mut worst = (f64::INFINITY, None);
        for x in samples {
            env.x = x.clone();
            let v = match self.screen.eval_f64(&env) {
                Ok(v) => v[1..].iter().copied().fold(f64::INFINITY, f64::min),
                Err(_) => f64::NEG_INFINITY,
            };
            if v < worst.0 {
                worst = (v, Some(x.clone()));
            }
        }
        worst
    }

    /// Coordinate pattern search over `mbox`.
    fn refine_mu(
        &self,
        theta: &[f64],
        mbox: &BoxN,
        starts: &[Vec<f64>],
        samples: &[Vec<f64>],
        evals: usize,
    ) -> (Vec<f64>, f64) {
        let widths = mbox.widths();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            let mut s = s.clone();
            mbox.clamp(&mut s);
            let v = self.score(theta, &s, samples).0;
            if best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((s, v));
            }
        }
        let (mut mu, mut val) = best.expect("at least one start");
        let mut step: Vec<f64> = widths.iter().map(|w| w / 4.0).collect();
        let mut used = starts.len();
        while used < evals {
            let mut improved = false;
            'dims: for i in 0..mu.len() {
                for sign in [1.0, -1.0] {
                    if step[i] <= 0.0 {
                        continue;
                    }
                    let mut trial = mu.clone();
                    trial[i] += sign * step[i];
                    mbox.clamp(&mut trial);
                    used += 1;
                    let v = self.score(theta, &trial, samples).0;
                    if v > val {
                        mu = trial;
                        val = v;
                        improved = true;
                        break 'dims;
                    }
                }
            }
            if !improved {
                step.iter_mut().for_each(|s| *s /= 2.0);
                if step.iter().zip(&widths).all(|(s, w)| *s <= 1e-4 * w) {
                    break;
                }
            }
        }
        (mu, val)
    }
}

fn grid_points(bx: &BoxN, resolution: usize) -> Vec<Vec<f64>> {
    let d = bx.dim();
    // keep the grid around a few thousand points
    let mut r = resolution.max(2);
    while r > 2 && libm::pow(r as f64, d as f64) > 4096.0 {
        r -= 1;
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        out.push(
            idx.iter()
                .zip(bx.dims())
                .map(|(&i, dim)| dim.lo() + dim.width() * (i as f64 + 0.5) / r as f64)
                .collect(),
        );
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < r {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            return out;
        }
    }
}

/// Upper bound from the natural extension, tightened by the mean-value form.
fn upper_bound(f: &Func, bx: &BoxN) -> Option<f64> {
    let natural = f.interval_value(bx).ok()?.hi();
    Some(natural.min(mean_value(f, bx).map_or(f64::INFINITY, |(_, hi)| hi)))
}

fn lower_bound(f: &Func, bx: &BoxN) -> Option<f64> {
    let natural = f.interval_value(bx).ok()?.lo();
    Some(natural.max(mean_value(f, bx).map_or(f64::NEG_INFINITY, |(lo, _)| lo)))
}

fn mean_value(f: &Func, bx: &BoxN) -> Option<(f64, f64)> {
    let c = bx.center();
    let fc = f.value(&c).ok()?;
    let jet = f.interval_jet(bx).ok()?;
    let (mut lo, mut hi) = (fc, fc);
    for (i, d) in bx.dims().iter().enumerate() {
        let g = jet.grad[i];
        let step = g * (*d - crate::interval::Interval::point(c[i]));
        lo += step.lo();
        hi += step.hi();
    }
    Some((lo, hi))
}

struct Incumbent {
    value: f64,
    theta: Vec<f64>,
    mu: Vec<f64>,
    certificates: Vec<Certificate>,
    crosscheck: VerificationOutcome,
}

/// Outer branch-and-bound over `Θ × M`.
pub fn synthesize(spec: &SynthesisSpec, cfg: &SynthesisConfig) -> Result<SynthesisOutcome> {
    synthesize_with(spec, cfg, &|| false)
}

pub fn synthesize_with(
    spec: &SynthesisSpec,
    cfg: &SynthesisConfig,
    interrupt: &dyn Fn() -> bool,
) -> Result<SynthesisOutcome> {
    spec.validate()?;
    if cfg.candidate_stride == 0 || !(cfg.width_floor > 0.0) {
        return Err(Error::InvalidConfig(
            "candidate stride and width floor must be positive".into(),
        ));
    }
    let prep = Prepared::new(spec, cfg)?;
    let k = spec.n_theta();
    let root = BoxN::new(
        spec.theta_box
            .dims()
            .iter()
            .chain(spec.mu_box.dims())
            .copied()
            .collect(),
    )?;
    let root_w = root.widths();
    let mut stats = SynthesisStats::default();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut pool: Vec<Vec<f64>> = Vec::new();
    let mut best: Option<Incumbent> = None;
    // bounds of nodes closed without proof of infeasibility
    let mut closed_lb = f64::INFINITY;
    let mut fathomed_bound = f64::INFINITY;
    let root_lb = prep
        .objective_lb(&spec.theta_box)
        .unwrap_or(f64::NEG_INFINITY);
    heap.push(Node {
        lb: root_lb,
        seq,
        depth: 0,
        bx: root,
        mu_hint: spec.mu_box.center(),
    });
    seq += 1;
    let mut budget_hit = false;

    let add_witness = |pool: &mut Vec<Vec<f64>>, x: Vec<f64>| {
        let known = pool
            .iter()
            .any(|w| w.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        if !known {
            if pool.len() >= cfg.witness_pool {
                pool.remove(0);
            }
            pool.push(x);
        }
    };

    while let Some(node) = heap.pop() {
        let inc = best.as_ref().map_or(f64::INFINITY, |b| b.value);
        if node.lb >= inc - spec.eps_big_f {
            stats.pruned_by_bound += 1 + heap.len();
            closed_lb = closed_lb.min(node.lb);
            fathomed_bound = node.lb;
            heap.clear();
            break;
        }
        if stats.nodes >= cfg.max_nodes || interrupt() {
            closed_lb = closed_lb.min(node.lb);
            budget_hit = true;
            break;
        }
        stats.nodes += 1;
        let (tbox, _) = prep.split(&node.bx);
        if prep.constraints_refute(&tbox) {
            stats.pruned_by_constraint += 1;
            continue;
        }
        let Some(bx) = prep.contract(&node.bx, &tbox, &pool) else {
            stats.pruned_by_witness += 1;
            continue;
        };
        let (tbox, mbox) = prep.split(&bx);
        let lb = prep.objective_lb(&tbox).map_or(node.lb, |v| v.max(node.lb));

        let center = bx.center();
        let theta = center[..k].to_vec();
        let mut hint = node.mu_hint.clone();
        mbox.clamp(&mut hint);
        // a cheap probe at the center feeds the witness pool
        let probe_samples = prep.samples(&theta, &[]);
        if let (v, Some(x)) = prep.score(&theta, &hint, &probe_samples) {
            if v < 0.0 {
                add_witness(&mut pool, x);
            }
        }

        let value = prep.objective.value(&theta).unwrap_or(f64::INFINITY);
        let try_candidate = cfg.refine_rounds > 0
            && node.depth % cfg.candidate_stride == 0
            && value < inc
            && prep.constraints_hold(&theta);
        if try_candidate {
            stats.candidates_screened += 1;
            let mut extra: Vec<Vec<f64>> = pool.clone();
            let mut starts = vec![hint.clone(), center[k..].to_vec()];
            if let Some(b) = &best {
                starts.push(b.mu.clone());
            }
            for _ in 0..cfg.refine_rounds {
                let samples = prep.samples(&theta, &extra);
                let (mu, score) =
                    prep.refine_mu(&theta, &mbox, &starts, &samples, cfg.refine_evals);
                hint = mu.clone();
                if score < 0.0 {
                    if let (_, Some(x)) = prep.score(&theta, &mu, &samples) {
                        add_witness(&mut pool, x);
                    }
                    break;
                }
                stats.candidates_certified += 1;
                let (certs, witness) =
                    certify(spec, &prep.conds, &prep.neg_h, &theta, &mu, cfg, true)?;
                if certs.iter().all(|c| c.passed) {
                    let cand = spec.candidate(&theta, &mu)?;
                    let check = verify_known(&spec.problem, &cand, &cfg.verifier)?;
                    if check.verdict == Verdict::Valid {
                        let (all, _) =
                            certify(spec, &prep.conds, &prep.neg_h, &theta, &mu, cfg, false)?;
                        stats.incumbent_updates += 1;
                        best = Some(Incumbent {
                            value,
                            theta: theta.clone(),
                            mu,
                            certificates: all,
                            crosscheck: check,
                        });
                        break;
                    }
                    stats.crosscheck_rejections += 1;
                    if let Some(x) = check.verdict.point() {
                        extra.push(x.to_vec());
                        add_witness(&mut pool, x.to_vec());
                    }
                } else {
                    stats.certificate_failures += 1;
                    match witness {
                        Some(x) => {
                            extra.push(x.clone());
                            add_witness(&mut pool, x);
                        }
                        None => break,
                    }
                }
                starts = vec![mu];
            }
        }

        // split the ϑ dimension widest relative to the root
        let widths = bx.widths();
        let pick = (0..k)
            .filter(|&i| widths[i] > cfg.width_floor)
            .max_by(|&a, &b| {
                (widths[a] / root_w[a])
                    .total_cmp(&(widths[b] / root_w[b]))
                    .then(b.cmp(&a))
            });
        let Some(dim) = pick else {
            stats.floored += 1;
            closed_lb = closed_lb.min(lb);
            continue;
        };
        let (a, b) = bx.split_at(dim, bx.get(dim).mid());
        for child in [a, b] {
            let (ct, _) = prep.split(&child);
            let clb = prep.objective_lb(&ct).map_or(lb, |v| v.max(lb));
            heap.push(Node {
                lb: clb,
                seq,
                depth: node.depth + 1,
                bx: child,
                mu_hint: hint.clone(),
            });
            seq += 1;
        }
    }
    if budget_hit {
        for n in heap.iter() {
            closed_lb = closed_lb.min(n.lb);
        }
    }

    // without an incumbent, only a search that closed every node by
    // infeasibility proves there is none
    let status = match (&best, budget_hit) {
        (_, true) => SynthesisStatus::Budget,
        (Some(_), false) => SynthesisStatus::Found,
        (None, false) if stats.floored == 0 => SynthesisStatus::Infeasible,
        (None, false) => SynthesisStatus::Budget,
    };
    Ok(match best {
        Some(b) => SynthesisOutcome {
            status,
            lower_bound: closed_lb.min(b.value),
            fathomed_bound,
            theta: b.theta,
            mu: b.mu,
            outer_value: b.value,
            certificates: b.certificates,
            verifier_crosscheck: Some(b.crosscheck),
            stats,
        },
        None => SynthesisOutcome {
            status,
            theta: Vec::new(),
            mu: Vec::new(),
            outer_value: f64::INFINITY,
            lower_bound: closed_lb,
            fathomed_bound,
            certificates: Vec::new(),
            verifier_crosscheck: None,
            stats,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, ParseContext};
    use alloc::vec;

    /// `x⁺ = x + u/10` with `h = 1 − ϑ x²`, `π = μ x` and objective ϑ.
    fn toy(theta: (f64, f64), mu: (f64, f64), constraints: &[&str]) -> SynthesisSpec {
        let ctx = ParseContext::new(1, 1, 1, 1);
        let p = |s: &str| parse(s, &ctx).unwrap();
        SynthesisSpec {
            problem: Problem {
                name: "toy".into(),
                n: 1,
                m: 1,
                f: vec![p("x1 + 0.1*u1")],
                u_box: BoxN::from_bounds(&[-1.0], &[1.0]).unwrap(),
                s: Some(p("4 - x1^2")),
                search_box: BoxN::from_bounds(&[-2.0], &[2.0]).unwrap(),
                search_states: vec![0],
            },
            h_template: p("1 - t1*x1^2"),
            pi_template: vec![p("m1*x1")],
            gamma: Gamma::Identity,
            theta_box: BoxN::from_bounds(&[theta.0], &[theta.1]).unwrap(),
            mu_box: BoxN::from_bounds(&[mu.0], &[mu.1]).unwrap(),
            outer_objective: p("t1"),
            outer_constraints: constraints.iter().map(|c| p(c)).collect(),
            admissibility: AdmissibilityMode::SymmetricSquare,
            safe_subset: SafeSubsetMode::InnerBB,
            eps_f: 1e-4,
            eps_big_f: 0.1,
        }
    }

    fn quick() -> SynthesisConfig {
        SynthesisConfig {
            width_floor: 0.01,
            max_nodes: 2_000,
            ..SynthesisConfig::default()
        }
    }

    #[test]
    fn unit_circle_geometry() {
        let g = ellipse_geometry(&[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.l, -4.0);
        assert!((g.a - 1.0).abs() < 1e-15 && (g.b - 1.0).abs() < 1e-15);
        assert!((g.area - core::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn tilted_ellipse_axes_match_eigenvalues() {
        let t = [0.626, 0.537, 0.580];
        let g = ellipse_geometry(&t).unwrap();
        assert!((g.l - (-1.163951)).abs() < 1e-12);
        // semi-axes are 1/√λ for the eigenvalues λ of [[t1, t2/2], [t2/2, t3]]
        let (tr, det) = (t[0] + t[2], t[0] * t[2] - t[1] * t[1] / 4.0);
        let disc = libm::sqrt(tr * tr / 4.0 - det);
        let (lmin, lmax) = (tr / 2.0 - disc, tr / 2.0 + disc);
        assert!((g.a - 1.0 / libm::sqrt(lmin)).abs() < 1e-12);
        assert!((g.b - 1.0 / libm::sqrt(lmax)).abs() < 1e-12);
        assert!((g.area - core::f64::consts::PI * g.a * g.b).abs() < 1e-12);
        assert!((g.area - 5.824).abs() < 1e-3);
    }

    #[test]
    fn degenerate_ellipse_is_rejected() {
        assert_eq!(
            ellipse_geometry(&[1.0, 2.0, 1.0]),
            Err(Error::DegenerateEllipse(0.0))
        );
        assert!(matches!(
            ellipse_geometry(&[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn superellipsoid_values() {
        let b1 = BoxN::from_bounds(&[-1.0], &[1.0]).unwrap();
        let e = superellipsoid_inner_set(&b1, 2).unwrap();
        assert_eq!(
            e.eval(&Env {
                u: vec![0.5],
                ..Env::default()
            })
            .unwrap(),
            0.25
        );
        let b2 = BoxN::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        for p in [2, 4, 8] {
            let e = superellipsoid_inner_set(&b2, p).unwrap();
            assert_eq!(
                e.eval(&Env {
                    u: vec![1.0, 1.0],
                    ..Env::default()
                })
                .unwrap(),
                2.0
            );
        }
        let shifted = BoxN::from_bounds(&[1.0], &[5.0]).unwrap();
        let e = superellipsoid_inner_set(&shifted, 4).unwrap();
        assert_eq!(
            e.eval(&Env {
                u: vec![5.0],
                ..Env::default()
            })
            .unwrap(),
            1.0
        );
        assert!(matches!(
            superellipsoid_inner_set(&b1, 3),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            superellipsoid_inner_set(&b1, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn validation_catches_bad_templates() {
        let mut s = toy((0.5, 4.0), (-1.0, -0.1), &[]);
        s.admissibility = AdmissibilityMode::SuperEllipsoid(5);
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
        let mut s = toy((0.5, 4.0), (-1.0, -0.1), &[]);
        s.outer_objective = Expr::x(0);
        assert!(matches!(s.validate(), Err(Error::Precondition(_))));
        let mut s = toy((0.5, 4.0), (-1.0, -0.1), &[]);
        s.pi_template.push(Expr::constant(0.0));
        assert!(matches!(s.validate(), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn certificates_accept_and_reject() {
        let s = toy((0.5, 4.0), (-5.0, 0.0), &[]);
        let ok = inner_certify(&s, &[1.0], &[-0.5], &quick()).unwrap();
        assert!(ok.iter().all(|c| c.passed));
        assert_eq!(ok.last().unwrap().kind, CertificateKind::Margin);
        // |π| = 3|x| reaches 3 on 𝒞 = [−1, 1], outside 𝕌
        let bad = inner_certify(&s, &[1.0], &[-3.0], &quick()).unwrap();
        let adm = bad
            .iter()
            .find(|c| c.kind == CertificateKind::InputSquare(0))
            .unwrap();
        assert!(!adm.passed);
        assert!(adm.result.upper_bound < 0.0);
    }

    #[test]
    fn per_component_and_superellipsoid_modes() {
        for mode in [
            AdmissibilityMode::PerComponentMinMax,
            AdmissibilityMode::SuperEllipsoid(4),
        ] {
            let mut s = toy((0.5, 4.0), (-5.0, 0.0), &[]);
            s.admissibility = mode;
            assert!(inner_certify(&s, &[1.0], &[-0.5], &quick())
                .unwrap()
                .iter()
                .all(|c| c.passed));
            assert!(!inner_certify(&s, &[1.0], &[-3.0], &quick())
                .unwrap()
                .iter()
                .all(|c| c.passed));
        }
    }

    #[test]
    fn toy_synthesis_finds_large_set() {
        let s = toy((0.5, 4.0), (-1.0, -0.1), &[]);
        let out = synthesize(&s, &quick()).unwrap();
        assert_eq!(out.status, SynthesisStatus::Found);
        // ϑ = 0.5 is feasible with any μ in M, so the result is within ε_F of it
        assert!(out.outer_value <= 0.5 + s.eps_big_f);
        assert!(out.outer_value - out.fathomed_bound <= s.eps_big_f);
        assert!(out.certificates.iter().all(|c| c.passed));
        assert_eq!(out.verifier_crosscheck.unwrap().verdict, Verdict::Valid);
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let s = toy((0.5, 4.0), (-1.0, -0.1), &["t1 - 1", "2 - t1"]);
        let out = synthesize(&s, &quick()).unwrap();
        assert_eq!(out.status, SynthesisStatus::Infeasible);
        assert!(out.theta.is_empty() && out.verifier_crosscheck.is_none());
    }

    #[test]
    fn node_budget_is_reported() {
        let s = toy((0.5, 4.0), (-1.0, -0.1), &["t1 - 1", "2 - t1"]);
        let cfg = SynthesisConfig {
            max_nodes: 1,
            ..quick()
        };
        assert_eq!(
            synthesize(&s, &cfg).unwrap().status,
            SynthesisStatus::Budget
        );
    }

    #[test]
    fn grid_covers_box_interior() {
        let b = BoxN::from_bounds(&[0.0, -1.0], &[1.0, 1.0]).unwrap();
        let g = grid_points(&b, 4);
        assert_eq!(g.len(), 16);
        assert!(g.iter().all(|p| b.contains(p)));
        assert_eq!(g[0], vec![0.125, -0.75]);
    }
}
