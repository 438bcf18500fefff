//! Log-barrier Newton solver for the convexified subproblems
//! `min F̆(x)  s.t.  H̆(x) ≤ 0,  x ∈ box`.
//!
//! Every returned bound is certified from convexity alone: at any box point
//! `x` and multiplier `λ ≥ 0` the Lagrangian `L = F̆ + λH̆` is convex, so
//! `L(x) + min_{y ∈ box} ∇L(x)·(y − x)` bounds the constrained minimum from
//! below however inaccurate `x` is.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::interval::BoxN;
use crate::linalg::{self, Mat};
use crate::underestimator::Underestimator;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Target gap between the returned value and its certified lower bound,
    /// relative to `max(1, |value|)`.
    pub tol: f64,
    /// Total Newton steps allowed per phase.
    pub max_newton: usize,
    /// Barrier parameter growth per outer step.
    pub mu: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_newton: 400,
            mu: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RelaxationResult {
    Optimal {
        minimizer: Vec<f64>,
        /// `F̆(minimizer)`.
        value: f64,
        /// Certified lower bound on the relaxed minimum.
        lower_bound: f64,
        /// `value − lower_bound`, floored at zero.
        kkt_residual: f64,
        /// `H̆(minimizer)`, or `-inf` without constraint. At most the
        /// solver tolerance when the constraint has no interior.
        constraint_value: f64,
    },
    /// The constraint underestimator is positive on the whole box.
    Infeasible {
        /// Certified lower bound on `min H̆` (strictly positive).
        constraint_lower_bound: f64,
    },
}

impl RelaxationResult {
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            RelaxationResult::Optimal { lower_bound, .. } => Some(*lower_bound),
            RelaxationResult::Infeasible { .. } => None,
        }
    }
}

struct Barrier<'a> {
    obj: &'a Underestimator,
    con: Option<&'a Underestimator>,
    bx: &'a BoxN,
    free: &'a [usize],
    /// The constraint is enforced as `H̆ ≤ slack`.
    slack: f64,
}

struct Point {
    x: Vec<f64>,
    f: f64,
    fg: Vec<f64>,
    fh: Mat<f64>,
    c: f64,
    cg: Vec<f64>,
    ch: Mat<f64>,
}

/// Outcome of one barrier run.
struct Run {
    x: Vec<f64>,
    f: f64,
    c: f64,
    lb: f64,
}

impl<'a> Barrier<'a> {
    fn eval(&self, x: &[f64]) -> Result<Point> {
        let fj = self.obj.jet(x)?;
        let (c, cg, ch) = match self.con {
            Some(con) => {
                let j = con.jet(x)?;
                (j.value - self.slack, j.grad, j.hess)
            }
            None => (f64::NEG_INFINITY, Vec::new(), Mat::zeros(0)),
        };
        Ok(Point {
            x: x.to_vec(),
            f: fj.value,
            fg: fj.grad,
            fh: fj.hess,
            c,
            cg,
            ch,
        })
    }

    fn n_barriers(&self) -> f64 {
        (2 * self.free.len() + usize::from(self.con.is_some())) as f64
    }

    fn strictly_inside(&self, x: &[f64]) -> bool {
        self.free.iter().all(|&i| {
            let d = self.bx.get(i);
            d.lo() < x[i] && x[i] < d.hi()
        })
    }

    fn phi(&self, t: f64, x: &[f64]) -> Result<f64> {
        let mut v = t * self.obj.value(x)?;
        if let Some(con) = self.con {
            let c = con.value(x)? - self.slack;
            if !(c < 0.0) {
                return Ok(f64::INFINITY);
            }
            v -= libm::log(-c);
        }
        for &i in self.free {
            let d = self.bx.get(i);
            v -= libm::log(x[i] - d.lo()) + libm::log(d.hi() - x[i]);
        }
        Ok(v)
    }

    /// Certified lower bound at a point: the dual function bound
    /// maximized over the multiplier. It is concave piecewise linear in λ,
    /// so its maximum sits at λ = 0, at a kink, or at the barrier estimate.
    fn lower_bound(&self, p: &Point, t: f64) -> f64 {
        let at = |lambda: f64| {
            let mut lb = p.f + if lambda > 0.0 { lambda * p.c } else { 0.0 };
            for &i in self.free {
                let d = self.bx.get(i);
                let gi = p.fg[i] + if lambda > 0.0 { lambda * p.cg[i] } else { 0.0 };
                lb += (gi * (d.lo() - p.x[i])).min(gi * (d.hi() - p.x[i]));
            }
            lb
        };
        if self.con.is_none() {
            return at(0.0);
        }
        let mut best = at(0.0);
        if p.c < 0.0 && t > 0.0 {
            best = best.max(at(1.0 / (t * -p.c)));
        }
        for &i in self.free {
            if p.cg[i] != 0.0 {
                let k = -p.fg[i] / p.cg[i];
                if k > 0.0 && k.is_finite() {
                    best = best.max(at(k));
                }
            }
        }
        best
    }

    fn newton_direction(&self, p: &Point, t: f64) -> Option<(Vec<f64>, f64)> {
        let k = self.free.len();
        let mut g = alloc::vec![0.0; k];
        let mut h = Mat::zeros(k);
        let inv_c = if self.con.is_some() { 1.0 / -p.c } else { 0.0 };
        for (a, &i) in self.free.iter().enumerate() {
            let d = self.bx.get(i);
            let (sl, su) = (p.x[i] - d.lo(), d.hi() - p.x[i]);
            g[a] = t * p.fg[i] - 1.0 / sl + 1.0 / su;
            if self.con.is_some() {
                g[a] += p.cg[i] * inv_c;
            }
            for (b, &j) in self.free.iter().enumerate() {
                let mut v = t * p.fh[(i, j)];
                if self.con.is_some() {
                    v += p.ch[(i, j)] * inv_c + p.cg[i] * p.cg[j] * inv_c * inv_c;
                }
                h[(a, b)] = v;
            }
            h[(a, a)] += 1.0 / (sl * sl) + 1.0 / (su * su);
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let d = linalg::solve_spd(&h, &neg)?;
        let slope = linalg::dot(&g, &d);
        Some((d, slope))
    }

    /// Plain Newton steps on the objective from an interior point with an
    /// inactive constraint, kept while they raise the certified bound. The
    /// barrier leaves a gradient of order `1/t`, which the linearized bound
    /// multiplies by the box width.
    fn polish(&self, mut p: Point, t: f64) -> Result<Point> {
        for _ in 0..4 {
            let k = self.free.len();
            let mut h = Mat::zeros(k);
            let mut g = alloc::vec![0.0; k];
            for (a, &i) in self.free.iter().enumerate() {
                g[a] = -p.fg[i];
                for (b, &j) in self.free.iter().enumerate() {
                    h[(a, b)] = p.fh[(i, j)];
                }
            }
            let Some(d) = linalg::solve_spd(&h, &g) else {
                break;
            };
            let mut xn = p.x.clone();
            for (a, &i) in self.free.iter().enumerate() {
                xn[i] += d[a];
            }
            if !self.strictly_inside(&xn) {
                break;
            }
            let pn = self.eval(&xn)?;
            let infeasible = self.con.is_some() && !(pn.c < 0.0);
            if infeasible || !(self.lower_bound(&pn, t) > self.lower_bound(&p, t)) {
                break;
            }
            p = pn;
        }
        Ok(p)
    }

    /// Path-following from a strictly feasible `x0`. `stop` can end the run
    /// early given (x, f, c, certified lb).
    fn run(
        &self,
        x0: Vec<f64>,
        cfg: &SolverConfig,
        stop: &dyn Fn(f64, f64, f64) -> bool,
    ) -> Result<Run> {
        let m = self.n_barriers();
        let mut p = self.eval(&x0)?;
        let mut best_lb = f64::NEG_INFINITY;
        if self.free.is_empty() {
            let lb = p.f;
            return Ok(Run {
                x: p.x,
                f: p.f,
                c: p.c,
                lb,
            });
        }
        let mut t = m / p.f.abs().max(1.0);
        let mut steps = 0usize;
        let mut stalled = 0;
        loop {
            // centering
            let mut progressed = false;
            for _ in 0..60 {
                let Some((d, slope)) = self.newton_direction(&p, t) else {
                    break;
                };
                if -slope / 2.0 < 1e-10 {
                    break;
                }
                steps += 1;
                if steps > cfg.max_newton {
                    return Err(Error::IterationLimit("convex subproblem"));
                }
                let phi0 = self.phi(t, &p.x)?;
                let mut s = 1.0;
                let mut accepted = None;
                while s > 1e-14 {
                    let mut xn = p.x.clone();
                    for (a, &i) in self.free.iter().enumerate() {
                        xn[i] += s * d[a];
                    }
                    if self.strictly_inside(&xn) {
                        let ph = self.phi(t, &xn)?;
                        if ph <= phi0 + 0.25 * s * slope {
                            accepted = Some(xn);
                            break;
                        }
                    }
                    s *= 0.5;
                }
                match accepted {
                    Some(xn) => {
                        p = self.eval(&xn)?;
                        progressed = true;
                    }
                    None => break,
                }
            }
            let lb = self.lower_bound(&p, t);
            if lb > best_lb {
                best_lb = lb;
            }
            if stop(p.f, p.c, best_lb) {
                return Ok(Run {
                    x: p.x,
                    f: p.f,
                    c: p.c,
                    lb: best_lb,
                });
            }
            let scale = p.f.abs().max(1.0);
            if p.f - best_lb <= cfg.tol * scale {
                return Ok(Run {
                    x: p.x,
                    f: p.f,
                    c: p.c,
                    lb: best_lb,
                });
            }
            stalled = if progressed { 0 } else { stalled + 1 };
            // past this point the central path is below rounding noise
            if stalled >= 3 || m / t < 1e-3 * cfg.tol * scale {
                let p = self.polish(p, t)?;
                let lb = best_lb.max(self.lower_bound(&p, t));
                return Ok(Run {
                    x: p.x,
                    f: p.f,
                    c: p.c,
                    lb,
                });
            }
            t *= cfg.mu;
        }
    }
}

/// Minimizes `objective` over `bx` subject to `constraint ≤ 0`.
///
/// Dimensions of zero width are held at their value. Numerical stalls still
/// return a certified lower bound; the reported `kkt_residual` then exceeds
/// the tolerance.
pub fn solve(
    objective: &Underestimator,
    constraint: Option<&Underestimator>,
    bx: &BoxN,
    cfg: &SolverConfig,
) -> Result<RelaxationResult> {
    if objective.bx() != bx || constraint.is_some_and(|c| c.bx() != bx) {
        return Err(Error::Precondition(
            "underestimators built on a different box".into(),
        ));
    }
    let free: Vec<usize> = (0..bx.dim()).filter(|&i| bx.get(i).width() > 0.0).collect();
    let center = bx.center();

    let Some(con) = constraint else {
        let b = Barrier {
            obj: objective,
            con: None,
            bx,
            free: &free,
            slack: 0.0,
        };
        let r = b.run(center, cfg, &|_, _, _| false)?;
        return Ok(optimal(r));
    };

    // Phase 1: minimize H̆ until infeasibility is certified or a comfortably
    // interior point appears.
    let p1 = Barrier {
        obj: con,
        con: None,
        bx,
        free: &free,
        slack: 0.0,
    };
    let r1 = p1.run(center.clone(), cfg, &|f, _, lb| {
        lb > 0.0 || (f < 0.0 && f <= 0.5 * lb)
    })?;
    if r1.lb > 0.0 {
        return Ok(RelaxationResult::Infeasible {
            constraint_lower_bound: r1.lb,
        });
    }
    if !(r1.f < 0.0) {
        // No strictly feasible point: the constrained set is (numerically)
        // a boundary piece. Shifting the constraint by the tolerance only
        // enlarges the feasible set, so the bounds found with the shift
        // remain valid; the minimizer may violate `H̆ ≤ 0` by `tol`.
        let b = Barrier {
            obj: objective,
            con: None,
            bx,
            free: &free,
            slack: 0.0,
        };
        let rb = b.run(center, cfg, &|_, _, _| false)?;
        let c = con.value(&rb.x)?;
        if c <= 0.0 {
            // the unconstrained minimizer already satisfies the constraint
            return Ok(optimal(Run { c, ..rb }));
        }
        let b = Barrier {
            obj: objective,
            con: Some(con),
            bx,
            free: &free,
            slack: 0.0,
        };
        let dual = b.lower_bound(&b.eval(&r1.x)?, 0.0);
        let b = Barrier {
            slack: cfg.tol,
            ..b
        };
        let (x, value, lb) = match b.run(r1.x.clone(), cfg, &|_, _, _| false) {
            Ok(r) => (r.x, r.f, r.lb),
            Err(Error::IterationLimit(_)) => {
                let v = objective.value(&r1.x)?;
                (r1.x, v, f64::NEG_INFINITY)
            }
            Err(e) => return Err(e),
        };
        // `value` comes from a point outside `H̆ ≤ 0` and may sit below the bound
        let lower_bound = lb.max(rb.lb).max(dual);
        return Ok(RelaxationResult::Optimal {
            constraint_value: con.value(&x)?,
            minimizer: x,
            value,
            lower_bound,
            kkt_residual: (value - lower_bound).max(0.0),
        });
    }

    let p2 = Barrier {
        obj: objective,
        con: Some(con),
        bx,
        free: &free,
        slack: 0.0,
    };
    let r2 = p2.run(r1.x, cfg, &|_, _, _| false)?;
    Ok(optimal(r2))
}

fn optimal(r: Run) -> RelaxationResult {
    RelaxationResult::Optimal {
        kkt_residual: (r.f - r.lb).max(0.0),
        minimizer: r.x,
        value: r.f,
        lower_bound: r.lb,
        constraint_value: r.c,
    }
}
