//! Branch-and-bound verification of barrier candidates.
//!
//! Boxes are processed first-in first-out. Every box ends in one of four
//! ways: the relaxed margin is certified nonnegative (approved valid), the
//! relaxed constraint is certified infeasible (approved empty), a point
//! falsifies the candidate outright, or the box is split. When a box can no
//! longer be refined usefully (its underestimator gaps are below ε_f, ε_h
//! and, in unknown-policy mode, its squared diagonal is below ε_d) the run
//! stops with a tolerance counterexample.
//!
//! All boxes and points live in search coordinates, see [`Problem::project`].

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::convex::{self, RelaxationResult, SolverConfig};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Func, VarKind, VarRef};
use crate::global_opt::{abb_maximize_negated, AbbConfig};
use crate::interval::BoxN;
use crate::problem::{closed_loop_margin, margin_expr, Candidate, Problem};
use crate::underestimator::{alpha_from_hessian, compute_alpha_scaled, Underestimator};

#[derive(Clone, Debug, PartialEq)]
pub struct VerifierConfig {
    pub eps_f: f64,
    pub eps_h: f64,
    /// Squared-diagonal floor, unknown-policy mode only.
    pub eps_d: f64,
    pub alpha_safety: f64,
    pub solver: SolverConfig,
    /// Inner maximization over the input box (unknown-policy mode).
    pub step2: AbbConfig,
    /// A box is approved when its certified relaxation bound is at least
    /// `-approve_slack`. Zero keeps approvals exact.
    pub approve_slack: f64,
    pub max_iters: usize,
    pub keep_records: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            eps_f: 1e-6,
            eps_h: 1e-6,
            eps_d: 1e-6,
            alpha_safety: 1.0,
            solver: SolverConfig::default(),
            step2: AbbConfig {
                eps_c: 1e-6,
                max_iters: 10_000,
                ..AbbConfig::default()
            },
            approve_slack: 0.0,
            max_iters: 1_000_000,
            keep_records: true,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_f > 0.0 && self.eps_h > 0.0 && self.eps_d > 0.0) {
            return Err(Error::InvalidConfig(
                "tolerances must be strictly positive".into(),
            ));
        }
        if !(self.approve_slack >= 0.0) {
            return Err(Error::InvalidConfig(
                "approve_slack must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecordStatus {
    ApprovedValid,
    ApprovedEmpty,
    Split {
        children: (usize, usize),
    },
    Counterexample,
    /// Stopping criteria met without a decision.
    Stopped,
    /// Never examined (run ended first).
    Pending,
}

impl RecordStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RecordStatus::ApprovedValid => "approved-valid",
            RecordStatus::ApprovedEmpty => "approved-empty",
            RecordStatus::Split { .. } => "split",
            RecordStatus::Counterexample => "counterexample",
            RecordStatus::Stopped => "stopped",
            RecordStatus::Pending => "pending",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubdomainRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub bx: BoxN,
    pub status: RecordStatus,
    pub assigned_input: Option<Vec<f64>>,
    /// Certified lower bound of the relaxed subproblem, when one was solved.
    pub relaxation_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Valid,
    FalsifiedExact(Vec<f64>),
    FalsifiedTolerance(Vec<f64>),
    /// Iteration or time budget exhausted before a decision.
    Budget,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Valid => "valid",
            Verdict::FalsifiedExact(_) => "falsified-exact",
            Verdict::FalsifiedTolerance(_) => "falsified-tolerance",
            Verdict::Budget => "budget",
        }
    }

    pub fn point(&self) -> Option<&[f64]> {
        match self {
            Verdict::FalsifiedExact(x) | Verdict::FalsifiedTolerance(x) => Some(x),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyStats {
    pub iterations: usize,
    pub approved_valid: usize,
    pub approved_empty: usize,
    /// Empty approvals decided by the interval pre-filter alone.
    pub prefiltered: usize,
    pub splits: usize,
    pub max_depth: usize,
}

/// One admissible input per approved box.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseFriend {
    pub cells: Vec<(BoxN, Vec<f64>)>,
}

impl PiecewiseFriend {
    /// Input of the first cell containing `y`.
    pub fn input_at(&self, y: &[f64]) -> Option<&[f64]> {
        self.cells
            .iter()
            .find(|(b, _)| b.contains(y))
            .map(|(_, u)| u.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub friend: Option<PiecewiseFriend>,
    pub stats: VerifyStats,
    pub records: Vec<SubdomainRecord>,
}

/// Runs batches of independent jobs. Results must come back in index order.
pub trait Executor {
    /// Upper bound on boxes handed out at once; 1 means strictly sequential.
    fn batch_size(&self) -> usize;
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn batch_size(&self) -> usize {
        1
    }
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Per-box result of the pure processing step.
#[derive(Clone, Debug, PartialEq)]
pub enum BoxOutcome {
    Valid {
        bound: f64,
        input: Option<Vec<f64>>,
    },
    Empty {
        bound: Option<f64>,
        prefiltered: bool,
    },
    Exact {
        point: Vec<f64>,
        bound: Option<f64>,
    },
    Tolerance {
        point: Vec<f64>,
        bound: Option<f64>,
    },
    Split {
        bound: Option<f64>,
    },
    Interrupted,
}

/// Shared data for the known-policy and safe-subset analyses:
/// objective `F` and constraint `−h`, both over search coordinates.
struct Relaxed {
    f: Func,
    neg_h: Func,
    scale: Vec<f64>,
}

fn state_func(e: &Expr, d: usize) -> Result<Func> {
    Func::new(e, &VarRef::range(VarKind::State, d), &Env::default())
}

fn stopping(a_f: f64, a_h: f64, delta_sq: f64, cfg: &VerifierConfig, with_d: bool) -> bool {
    a_f / 4.0 * delta_sq <= cfg.eps_f
        && a_h / 4.0 * delta_sq <= cfg.eps_h
        && (!with_d || delta_sq <= cfg.eps_d)
}

impl Relaxed {
    /// Known-policy step: relax `min F s.t. −h ≤ 0` on `bx`.
    fn process(&self, bx: &BoxN, cfg: &VerifierConfig) -> Result<BoxOutcome> {
        let hj = self.neg_h.interval_jet(bx)?;
        if hj.value.lo() > 0.0 {
            return Ok(BoxOutcome::Empty {
                bound: None,
                prefiltered: true,
            });
        }
        let a_h = alpha_from_hessian(&hj.hess, bx, &self.scale, cfg.alpha_safety);
        let (a_f, _) = compute_alpha_scaled(&self.f, bx, &self.scale, cfg.alpha_safety)?;
        let stop = stopping(a_f.max(), a_h.max(), bx.diagonal_sq(), cfg, false);
        let fu = Underestimator::new(self.f.clone(), a_f)?;
        let hu = Underestimator::new(self.neg_h.clone(), a_h)?;
        let relaxed = match convex::solve(&fu, Some(&hu), bx, &cfg.solver) {
            Ok(r) => r,
            Err(Error::IterationLimit(_)) => {
                return Ok(self.undecided(bx, None, None, stop, cfg));
            }
            Err(e) => return Err(e),
        };
        match relaxed {
            RelaxationResult::Infeasible { .. } => Ok(BoxOutcome::Empty {
                bound: None,
                prefiltered: false,
            }),
            RelaxationResult::Optimal {
                minimizer,
                lower_bound,
                ..
            } => {
                if lower_bound >= -cfg.approve_slack {
                    return Ok(BoxOutcome::Valid {
                        bound: lower_bound,
                        input: None,
                    });
                }
                if -self.neg_h.value(&minimizer)? >= 0.0 && self.f.value(&minimizer)? < 0.0 {
                    return Ok(BoxOutcome::Exact {
                        point: minimizer,
                        bound: Some(lower_bound),
                    });
                }
                Ok(self.undecided(bx, Some(minimizer), Some(lower_bound), stop, cfg))
            }
        }
    }

    fn undecided(
        &self,
        bx: &BoxN,
        minimizer: Option<Vec<f64>>,
        bound: Option<f64>,
        stop: bool,
        cfg: &VerifierConfig,
    ) -> BoxOutcome {
        if !stop {
            return BoxOutcome::Split { bound };
        }
        // Report the center when it already meets the tolerance guarantee,
        // otherwise the relaxation minimizer.
        let center = bx.center();
        let meets = |x: &[f64]| {
            matches!((self.neg_h.value(x), self.f.value(x)),
                (Ok(nh), Ok(fv)) if -nh >= -cfg.eps_h && fv < cfg.eps_f)
        };
        let point = match minimizer {
            Some(m) if !meets(&center) && meets(&m) => m,
            _ => center,
        };
        BoxOutcome::Tolerance { point, bound }
    }
}

/// Unknown-policy data: the margin as a function of the input at a fixed
/// state, and as a function of the state at a fixed input.
struct Unknown {
    neg_margin_u: Func,
    margin_x: Func,
    h: Func,
    neg_h: Func,
    u_box: BoxN,
    scale: Vec<f64>,
}

impl Unknown {
    fn process(&self, bx: &BoxN, cfg: &VerifierConfig) -> Result<BoxOutcome> {
        let hj = self.neg_h.interval_jet(bx)?;
        if hj.value.lo() > 0.0 {
            return Ok(BoxOutcome::Empty {
                bound: None,
                prefiltered: true,
            });
        }
        // Step I
        let xc = bx.center();
        // Step II: best input at the center, certified upper bound on its margin
        let nm = self.neg_margin_u.rebind(&Env::states(&xc))?;
        let best = abb_maximize_negated(&nm, None, &self.u_box, &cfg.step2)?;
        let u_star = best
            .minimizer
            .clone()
            .unwrap_or_else(|| self.u_box.center());
        if self.h.value(&xc)? >= 0.0 && best.upper_bound < 0.0 {
            return Ok(BoxOutcome::Exact {
                point: xc,
                bound: None,
            });
        }
        // Step III
        let mf = self.margin_x.rebind(&Env {
            u: u_star.clone(),
            ..Env::default()
        })?;
        let a_h = alpha_from_hessian(&hj.hess, bx, &self.scale, cfg.alpha_safety);
        let (a_f, _) = compute_alpha_scaled(&mf, bx, &self.scale, cfg.alpha_safety)?;
        let stop = stopping(a_f.max(), a_h.max(), bx.diagonal_sq(), cfg, true);
        let fu = Underestimator::new(mf, a_f)?;
        let hu = Underestimator::new(self.neg_h.clone(), a_h)?;
        let bound = match convex::solve(&fu, Some(&hu), bx, &cfg.solver) {
            Ok(RelaxationResult::Infeasible { .. }) => {
                return Ok(BoxOutcome::Empty {
                    bound: None,
                    prefiltered: false,
                })
            }
            Ok(RelaxationResult::Optimal { lower_bound, .. }) => {
                if lower_bound >= -cfg.approve_slack {
                    return Ok(BoxOutcome::Valid {
                        bound: lower_bound,
                        input: Some(u_star),
                    });
                }
                Some(lower_bound)
            }
            Err(Error::IterationLimit(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(if stop {
            BoxOutcome::Tolerance { point: xc, bound }
        } else {
            BoxOutcome::Split { bound }
        })
    }
}

/// FIFO worklist shared by every analysis.
fn drive<E: Executor>(
    root: &BoxN,
    cfg: &VerifierConfig,
    exec: &E,
    interrupt: &(dyn Fn() -> bool + Sync),
    process: &(dyn Fn(&BoxN) -> Result<BoxOutcome> + Sync),
) -> Result<VerificationOutcome> {
    cfg.validate()?;
    struct Item {
        id: usize,
        parent: Option<usize>,
        depth: usize,
        bx: BoxN,
    }
    let mut queue = VecDeque::new();
    queue.push_back(Item {
        id: 0,
        parent: None,
        depth: 0,
        bx: root.clone(),
    });
    let mut next_id = 1;
    let mut stats = VerifyStats::default();
    let mut records: Vec<SubdomainRecord> = Vec::new();
    let mut cells = Vec::new();

    let record = |records: &mut Vec<SubdomainRecord>, it: &Item, status, input, value| {
        if cfg.keep_records {
            records.push(SubdomainRecord {
                id: it.id,
                parent: it.parent,
                depth: it.depth,
                bx: it.bx.clone(),
                status,
                assigned_input: input,
                relaxation_value: value,
            });
        }
    };

    let finish =
        |verdict, friend, stats, mut records: Vec<SubdomainRecord>, queue: VecDeque<Item>| {
            if cfg.keep_records {
                for it in queue {
                    records.push(SubdomainRecord {
                        id: it.id,
                        parent: it.parent,
                        depth: it.depth,
                        bx: it.bx,
                        status: RecordStatus::Pending,
                        assigned_input: None,
                        relaxation_value: None,
                    });
                }
                records.sort_by_key(|r| r.id);
            }
            Ok(VerificationOutcome {
                verdict,
                friend,
                stats,
                records,
            })
        };

    while !queue.is_empty() {
        let room = cfg.max_iters.saturating_sub(stats.iterations);
        if room == 0 {
            return finish(Verdict::Budget, None, stats, records, queue);
        }
        let take = queue.len().min(exec.batch_size().max(1)).min(room);
        let batch: Vec<Item> = queue.drain(..take).collect();
        let results = exec.map(batch.len(), |i| {
            if interrupt() {
                Ok(BoxOutcome::Interrupted)
            } else {
                process(&batch[i].bx)
            }
        });
        let mut rest = batch.into_iter().zip(results);
        while let Some((it, res)) = rest.next() {
            let res = res?;
            if res == BoxOutcome::Interrupted {
                let mut left: VecDeque<Item> =
                    core::iter::once(it).chain(rest.map(|(i, _)| i)).collect();
                left.extend(queue);
                return finish(Verdict::Budget, None, stats, records, left);
            }
            stats.iterations += 1;
            stats.max_depth = stats.max_depth.max(it.depth);
            match res {
                BoxOutcome::Valid { bound, input } => {
                    stats.approved_valid += 1;
                    if let Some(u) = &input {
                        cells.push((it.bx.clone(), u.clone()));
                    }
                    record(
                        &mut records,
                        &it,
                        RecordStatus::ApprovedValid,
                        input,
                        Some(bound),
                    );
                }
                BoxOutcome::Empty { bound, prefiltered } => {
                    stats.approved_empty += 1;
                    stats.prefiltered += usize::from(prefiltered);
                    record(&mut records, &it, RecordStatus::ApprovedEmpty, None, bound);
                }
                BoxOutcome::Exact { point, bound } => {
                    record(&mut records, &it, RecordStatus::Counterexample, None, bound);
                    let left: VecDeque<Item> = rest.map(|(i, _)| i).chain(queue).collect();
                    return finish(Verdict::FalsifiedExact(point), None, stats, records, left);
                }
                BoxOutcome::Tolerance { point, bound } => {
                    record(&mut records, &it, RecordStatus::Stopped, None, bound);
                    let left: VecDeque<Item> = rest.map(|(i, _)| i).chain(queue).collect();
                    return finish(
                        Verdict::FalsifiedTolerance(point),
                        None,
                        stats,
                        records,
                        left,
                    );
                }
                BoxOutcome::Split { bound } => match it.bx.bisect_scaled_longest_side(root) {
                    Ok((a, b)) => {
                        stats.splits += 1;
                        let children = (next_id, next_id + 1);
                        record(
                            &mut records,
                            &it,
                            RecordStatus::Split { children },
                            None,
                            bound,
                        );
                        for (k, bx) in [a, b].into_iter().enumerate() {
                            queue.push_back(Item {
                                id: next_id + k,
                                parent: Some(it.id),
                                depth: it.depth + 1,
                                bx,
                            });
                        }
                        next_id += 2;
                    }
                    Err(Error::DegenerateBox) => {
                        record(&mut records, &it, RecordStatus::Stopped, None, bound);
                        let left: VecDeque<Item> = rest.map(|(i, _)| i).chain(queue).collect();
                        return finish(
                            Verdict::FalsifiedTolerance(it.bx.center()),
                            None,
                            stats,
                            records,
                            left,
                        );
                    }
                    Err(e) => return Err(e),
                },
                BoxOutcome::Interrupted => unreachable!("handled above"),
            }
        }
    }
    finish(
        Verdict::Valid,
        Some(PiecewiseFriend { cells }),
        stats,
        records,
        VecDeque::new(),
    )
}

fn never() -> bool {
    false
}

fn check_candidate(p: &Problem, c: &Candidate) -> Result<()> {
    p.validate()?;
    c.validate(p)
}

/// Verifies that the candidate's policy is a friend of `(h, γ)`.
pub fn verify_known(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
) -> Result<VerificationOutcome> {
    verify_known_with(p, c, cfg, &Sequential, &never)
}

pub fn verify_known_with<E: Executor>(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
    exec: &E,
    interrupt: &(dyn Fn() -> bool + Sync),
) -> Result<VerificationOutcome> {
    check_candidate(p, c)?;
    let d = p.search_dim();
    let f = p.project(&closed_loop_margin(p, c)?)?;
    let nh = p.project(&-&c.h)?;
    let rel = Relaxed {
        f: state_func(&f, d)?,
        neg_h: state_func(&nh, d)?,
        scale: p.search_box.widths(),
    };
    let mut out = drive(&p.search_box, cfg, exec, interrupt, &|bx| {
        rel.process(bx, cfg)
    })?;
    out.friend = None;
    Ok(out)
}

/// Verifies `(h, γ)` without a policy, building a piecewise-constant friend.
pub fn verify_unknown(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
) -> Result<VerificationOutcome> {
    verify_unknown_with(p, c, cfg, &Sequential, &never)
}

pub fn verify_unknown_with<E: Executor>(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
    exec: &E,
    interrupt: &(dyn Fn() -> bool + Sync),
) -> Result<VerificationOutcome> {
    check_candidate(p, c)?;
    let d = p.search_dim();
    let margin = p.project(&margin_expr(p, &c.h, &c.gamma))?;
    let h = p.project(&c.h)?;
    let xc = p.search_box.center();
    let inputs = VarRef::range(VarKind::Input, p.m);
    let un = Unknown {
        neg_margin_u: Func::new(&-&margin, &inputs, &Env::states(&xc))?,
        margin_x: Func::new(
            &margin,
            &VarRef::range(VarKind::State, d),
            &Env {
                u: p.u_box.center(),
                ..Env::default()
            },
        )?,
        h: state_func(&h, d)?,
        neg_h: state_func(&-&h, d)?,
        u_box: p.u_box.clone(),
        scale: p.search_box.widths(),
    };
    drive(&p.search_box, cfg, exec, interrupt, &|bx| {
        un.process(bx, cfg)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum SafeVerdict {
    Holds,
    Violated(Vec<f64>),
    ViolatedTolerance(Vec<f64>),
    Budget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafeSubsetOutcome {
    pub verdict: SafeVerdict,
    pub stats: VerifyStats,
    pub records: Vec<SubdomainRecord>,
}

/// Checks `{h ≥ 0} ⊆ {s ≥ 0}` over the search box.
pub fn check_safe_subset(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
) -> Result<SafeSubsetOutcome> {
    check_safe_subset_with(p, c, cfg, &Sequential, &never)
}

pub fn check_safe_subset_with<E: Executor>(
    p: &Problem,
    c: &Candidate,
    cfg: &VerifierConfig,
    exec: &E,
    interrupt: &(dyn Fn() -> bool + Sync),
) -> Result<SafeSubsetOutcome> {
    check_candidate(p, c)?;
    let s =
        p.s.as_ref()
            .ok_or_else(|| Error::Precondition("problem has no safe-set function".into()))?;
    let d = p.search_dim();
    let rel = Relaxed {
        f: state_func(&p.project(s)?, d)?,
        neg_h: state_func(&p.project(&-&c.h)?, d)?,
        scale: p.search_box.widths(),
    };
    let out = drive(&p.search_box, cfg, exec, interrupt, &|bx| {
        rel.process(bx, cfg)
    })?;
    let verdict = match out.verdict {
        Verdict::Valid => SafeVerdict::Holds,
        Verdict::FalsifiedExact(x) => SafeVerdict::Violated(x),
        Verdict::FalsifiedTolerance(x) => SafeVerdict::ViolatedTolerance(x),
        Verdict::Budget => SafeVerdict::Budget,
    };
    Ok(SafeSubsetOutcome {
        verdict,
        stats: out.stats,
        records: out.records,
    })
}

/// Depth beyond which no box can still be split: once every dimension has
/// been halved often enough, the stopping criteria hold with the root α's,
/// and the shifts only shrink on sub-boxes.
pub fn depth_bound(
    root: &BoxN,
    alpha_f_max: f64,
    alpha_h_max: f64,
    cfg: &VerifierConfig,
    unknown: bool,
) -> usize {
    let mut target = f64::INFINITY;
    if alpha_f_max > 0.0 {
        target = target.min(4.0 * cfg.eps_f / alpha_f_max);
    }
    if alpha_h_max > 0.0 {
        target = target.min(4.0 * cfg.eps_h / alpha_h_max);
    }
    if unknown {
        target = target.min(cfg.eps_d);
    }
    let d0 = root.diagonal_sq();
    let rounds = if target.is_infinite() || d0 <= target {
        0
    } else {
        libm::ceil(libm::log(d0 / target) / libm::log(4.0)) as usize
    };
    // each round halves every dimension once
    root.dim() * (rounds + 1)
}
