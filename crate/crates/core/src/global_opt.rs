//! Classic αBB global minimization over a box with at most one smooth
//! inequality constraint.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::convex::{self, RelaxationResult, SolverConfig};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Func, VarRef};
use crate::interval::BoxN;
use crate::underestimator::{
    compute_alpha_scaled, hessian_certified_convex, AlphaVector, Underestimator,
};

#[derive(Clone, Debug, PartialEq)]
pub struct AbbConfig {
    /// Absolute optimality gap.
    pub eps_c: f64,
    /// Constraint slack tolerated at incumbent points.
    pub eps_feas: f64,
    pub max_iters: usize,
    /// Multiplier on every α (≥ 1).
    pub alpha_safety: f64,
    pub solver: SolverConfig,
    /// Stop as soon as the minimum is proved `≥ c` or a feasible point `< c` is found.
    pub cutoff: Option<f64>,
    /// Record `(lower, upper)` after every node.
    pub trace: bool,
    /// Drop the shifts on nodes where the interval Hessian is certified
    /// positive definite.
    pub convexity_shortcut: bool,
}

impl Default for AbbConfig {
    fn default() -> Self {
        Self {
            eps_c: 1e-6,
            eps_feas: 1e-12,
            max_iters: 100_000,
            alpha_safety: 1.0,
            solver: SolverConfig::default(),
            cutoff: None,
            trace: false,
            convexity_shortcut: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalStatus {
    Converged,
    Infeasible,
    Budget,
    /// Cutoff mode: the minimum is at least the cutoff.
    CutoffProved,
    /// Cutoff mode: a feasible point below the cutoff exists.
    CutoffRefuted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalResult {
    /// Best feasible point found (absent when none was found).
    pub minimizer: Option<Vec<f64>>,
    pub lower_bound: f64,
    /// Objective at `minimizer`, `+inf` without one.
    pub upper_bound: f64,
    pub iterations: usize,
    pub status: GlobalStatus,
    pub trace: Vec<(f64, f64)>,
}

impl GlobalResult {
    pub fn gap(&self) -> f64 {
        self.upper_bound - self.lower_bound
    }

    /// Same result read as a maximization of the negated objective.
    fn negated(mut self) -> GlobalResult {
        let (lo, hi) = (self.lower_bound, self.upper_bound);
        self.lower_bound = -hi;
        self.upper_bound = -lo;
        for t in &mut self.trace {
            *t = (-t.1, -t.0);
        }
        self
    }
}

struct Node {
    lb: f64,
    seq: u64,
    bx: BoxN,
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
    // BinaryHeap is a max-heap: invert so the lowest bound, then the oldest node, pops first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.lb.total_cmp(&self.lb).then_with(|| o.seq.cmp(&self.seq))
    }
}

/// Lower bound of `obj` over `bx` under the constraint, or `None` when the
/// node is certified infeasible. Also returns candidate points for the incumbent.
fn bound_node(
    obj: &Func,
    con: Option<&Func>,
    bx: &BoxN,
    scale: &[f64],
    cfg: &AbbConfig,
) -> Result<Option<(f64, Vec<f64>)>> {
    let shifts = |f: &Func| -> Result<(AlphaVector, crate::expr::IntervalJet)> {
        let (a, j) = compute_alpha_scaled(f, bx, scale, cfg.alpha_safety)?;
        if cfg.convexity_shortcut && a.max() > 0.0 && hessian_certified_convex(&j.hess) {
            return Ok((AlphaVector::zeros(bx), j));
        }
        Ok((a, j))
    };
    let (fa, fj) = shifts(obj)?;
    let interval_lb = fj.value.lo();
    let cu = match con {
        Some(c) => {
            let (ca, cj) = shifts(c)?;
            if cj.value.lo() > 0.0 {
                return Ok(None);
            }
            Some(Underestimator::new(c.clone(), ca)?)
        }
        None => None,
    };
    let fu = Underestimator::new(obj.clone(), fa)?;
    match convex::solve(&fu, cu.as_ref(), bx, &cfg.solver) {
        Ok(RelaxationResult::Infeasible { .. }) => Ok(None),
        Ok(RelaxationResult::Optimal {
            minimizer,
            lower_bound,
            ..
        }) => Ok(Some((lower_bound.max(interval_lb), minimizer))),
        Err(Error::IterationLimit(_)) => Ok(Some((interval_lb, bx.center()))),
        Err(e) => Err(e),
    }
}

/// Finds the global minimum of `obj` over `bx` subject to `con ≤ 0`.
///
/// Both functions must have the box dimensions as their active variables.
pub fn abb_minimize(
    obj: &Func,
    con: Option<&Func>,
    bx: &BoxN,
    cfg: &AbbConfig,
) -> Result<GlobalResult> {
    if !(cfg.eps_c > 0.0 && cfg.eps_feas > 0.0) {
        return Err(Error::InvalidConfig(
            "eps_c and eps_feas must be positive".into(),
        ));
    }
    for f in core::iter::once(obj).chain(con) {
        if f.dim() != bx.dim() {
            return Err(Error::DimensionMismatch {
                expected: bx.dim(),
                found: f.dim(),
            });
        }
    }
    let root = bx.clone();
    let scale = root.widths();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut best: Option<(f64, Vec<f64>)> = None;
    // smallest bound among nodes discarded by the incumbent test
    let mut fathomed_lb = f64::INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0usize;

    let offer = |x: &[f64], best: &mut Option<(f64, Vec<f64>)>| -> Result<()> {
        if let Some(c) = con {
            if !(c.value(x)? <= cfg.eps_feas) {
                return Ok(());
            }
        }
        let v = obj.value(x)?;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            *best = Some((v, x.to_vec()));
        }
        Ok(())
    };

    heap.push(Node {
        lb: f64::NEG_INFINITY,
        seq,
        bx: root.clone(),
    });
    seq += 1;

    let finish = |status, lb: f64, best: Option<(f64, Vec<f64>)>, iterations, trace| {
        let (ub, x) = match best {
            Some((v, x)) => (v, Some(x)),
            None => (f64::INFINITY, None),
        };
        GlobalResult {
            minimizer: x,
            lower_bound: lb.min(ub),
            upper_bound: ub,
            iterations,
            status,
            trace,
        }
    };

    while let Some(node) = heap.pop() {
        let ub = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let global_lb = node.lb.min(fathomed_lb);
        if node.lb >= ub - cfg.eps_c {
            fathomed_lb = fathomed_lb.min(node.lb);
            continue;
        }
        if iterations >= cfg.max_iters {
            return Ok(finish(
                GlobalStatus::Budget,
                global_lb,
                best,
                iterations,
                trace,
            ));
        }
        iterations += 1;

        let bounded = bound_node(obj, con, &node.bx, &scale, cfg)?;
        if let Some((lb, xr)) = bounded {
            let lb = lb.max(node.lb);
            offer(&xr, &mut best)?;
            offer(&node.bx.center(), &mut best)?;
            let ub = best.as_ref().map_or(f64::INFINITY, |b| b.0);
            if lb >= ub - cfg.eps_c {
                fathomed_lb = fathomed_lb.min(lb);
            } else {
                match node.bx.bisect_scaled_longest_side(&root) {
                    Ok((a, b)) => {
                        heap.push(Node { lb, seq, bx: a });
                        heap.push(Node {
                            lb,
                            seq: seq + 1,
                            bx: b,
                        });
                        seq += 2;
                    }
                    // Cannot refine further; keep its bound in the final answer.
                    Err(Error::DegenerateBox) => fathomed_lb = fathomed_lb.min(lb),
                    Err(e) => return Err(e),
                }
            }
        }

        let ub = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let open_lb = heap.peek().map_or(f64::INFINITY, |n| n.lb);
        let lb_now = open_lb.min(fathomed_lb).min(ub);
        if cfg.trace {
            trace.push((lb_now, ub));
        }
        if let Some(c) = cfg.cutoff {
            if lb_now >= c {
                return Ok(finish(
                    GlobalStatus::CutoffProved,
                    lb_now,
                    best,
                    iterations,
                    trace,
                ));
            }
            if ub < c {
                return Ok(finish(
                    GlobalStatus::CutoffRefuted,
                    lb_now,
                    best,
                    iterations,
                    trace,
                ));
            }
        }
        if ub - lb_now <= cfg.eps_c {
            return Ok(finish(
                GlobalStatus::Converged,
                lb_now,
                best,
                iterations,
                trace,
            ));
        }
    }

    match best {
        Some(_) => {
            let ub = best.as_ref().map_or(f64::INFINITY, |b| b.0);
            let status = match cfg.cutoff {
                Some(c) if fathomed_lb.min(ub) >= c => GlobalStatus::CutoffProved,
                Some(c) if ub < c => GlobalStatus::CutoffRefuted,
                _ => GlobalStatus::Converged,
            };
            Ok(finish(status, fathomed_lb, best, iterations, trace))
        }
        None => Ok(GlobalResult {
            minimizer: None,
            lower_bound: f64::INFINITY,
            upper_bound: f64::INFINITY,
            iterations,
            status: GlobalStatus::Infeasible,
            trace,
        }),
    }
}

/// Maximizes `neg_obj`'s negation, i.e. pass `−F` to maximize `F`. Bounds
/// and trace are reported for `F`.
pub fn abb_maximize_negated(
    neg_obj: &Func,
    con: Option<&Func>,
    bx: &BoxN,
    cfg: &AbbConfig,
) -> Result<GlobalResult> {
    let mut c = cfg.clone();
    c.cutoff = cfg.cutoff.map(|v| -v);
    Ok(abb_minimize(neg_obj, con, bx, &c)?.negated())
}

/// Maximizes `obj` over `bx` (coordinates `active`, others fixed from `env`).
///
/// In cutoff mode `CutoffProved` means the maximum is at most the cutoff.
pub fn abb_maximize(
    obj: &Expr,
    con: Option<&Expr>,
    active: &[VarRef],
    env: &Env,
    bx: &BoxN,
    cfg: &AbbConfig,
) -> Result<GlobalResult> {
    let neg = Func::new(&-obj, active, env)?;
    let con = con.map(|c| Func::new(c, active, env)).transpose()?;
    abb_maximize_negated(&neg, con.as_ref(), bx, cfg)
}

/// Brute-force minimum over a uniform grid with `resolution` points per
/// dimension, restricted to points with `con ≤ 0`. Returns `+inf` and no
/// point when no grid point is feasible.
pub fn grid_oracle(
    obj: &Func,
    con: Option<&Func>,
    bx: &BoxN,
    resolution: usize,
) -> Result<(f64, Option<Vec<f64>>)> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(
            "grid resolution must be at least 2".into(),
        ));
    }
    let n = bx.dim();
    let mut idx = alloc::vec![0usize; n];
    let mut x = alloc::vec![0.0; n];
    let mut best = (f64::INFINITY, None);
    loop {
        for i in 0..n {
            let d = bx.get(i);
            x[i] = d.lo() + d.width() * idx[i] as f64 / (resolution - 1) as f64;
        }
        let feasible = match con {
            Some(c) => c.value(&x)? <= 0.0,
            None => true,
        };
        if feasible {
            let v = obj.value(&x)?;
            if v < best.0 {
                best = (v, Some(x.clone()));
            }
        }
        let mut k = 0;
        loop {
            if k == n {
                return Ok(best);
            }
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
