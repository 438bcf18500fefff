//! Linearized expression tapes and forward-mode second-order evaluation.
//!
//! The same tape runs over `f64` (point values, gradients, Hessians) and over
//! [`Interval`] (range enclosures and interval Hessians).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, Mul, Neg, Sub};

use super::{BinaryOp, Expr, Node, UnaryOp, VarKind, VarRef};
use crate::error::{Error, Result};
use crate::fmath;
use crate::interval::{BoxN, Interval};
use crate::linalg::Mat;

/// Arithmetic needed by tape evaluation.
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn finite(&self) -> bool;
    fn div(self, rhs: Self) -> Result<Self>;
    fn powi(self, n: i32) -> Result<Self>;
    fn exp(self) -> Self;
    fn ln(self) -> Result<Self>;
    fn sqrt(self) -> Result<Self>;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Result<Self>;
    fn abs(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn div(self, rhs: f64) -> Result<f64> {
        if rhs == 0.0 {
            return Err(Error::DomainViolation("division by zero"));
        }
        Ok(self / rhs)
    }
    fn powi(self, n: i32) -> Result<f64> {
        if n < 0 && self == 0.0 {
            return Err(Error::DomainViolation("negative power of zero"));
        }
        Ok(fmath::powi(self, n))
    }
    fn exp(self) -> f64 {
        fmath::exp(self)
    }
    fn ln(self) -> Result<f64> {
        if self <= 0.0 {
            return Err(Error::DomainViolation("log of a non-positive value"));
        }
        Ok(fmath::ln(self))
    }
    fn sqrt(self) -> Result<f64> {
        if self < 0.0 {
            return Err(Error::DomainViolation("sqrt of a negative value"));
        }
        Ok(fmath::sqrt(self))
    }
    fn sin(self) -> f64 {
        fmath::sin(self)
    }
    fn cos(self) -> f64 {
        fmath::cos(self)
    }
    fn tan(self) -> Result<f64> {
        if fmath::cos(self) == 0.0 {
            return Err(Error::DomainViolation("tan at a pole"));
        }
        Ok(fmath::tan(self))
    }
    fn abs(self) -> f64 {
        if self < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Scalar for Interval {
    #[inline]
    fn cst(v: f64) -> Self {
        Interval::point(v)
    }
    #[inline]
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn div(self, rhs: Interval) -> Result<Interval> {
        Interval::div(&self, &rhs)
    }
    fn powi(self, n: i32) -> Result<Interval> {
        self.checked_powi(n)
    }
    fn exp(self) -> Interval {
        Interval::exp(&self)
    }
    fn ln(self) -> Result<Interval> {
        Interval::ln(&self)
    }
    fn sqrt(self) -> Result<Interval> {
        Interval::sqrt(&self)
    }
    fn sin(self) -> Interval {
        Interval::sin(&self)
    }
    fn cos(self) -> Interval {
        Interval::cos(&self)
    }
    fn tan(self) -> Result<Interval> {
        Interval::tan(&self)
    }
    fn abs(self) -> Interval {
        Interval::abs(&self)
    }
}

#[derive(Clone, Copy, Debug)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    PowInt(usize, i32),
}

/// Values for every variable family; missing entries mean "unbound".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Env {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Env {
    pub fn states(x: &[f64]) -> Self {
        Self {
            x: x.to_vec(),
            ..Self::default()
        }
    }

    pub fn get(&self, v: VarRef) -> Option<f64> {
        let s = match v.kind {
            VarKind::State => &self.x,
            VarKind::Input => &self.u,
            VarKind::Theta => &self.theta,
            VarKind::Mu => &self.mu,
        };
        s.get(v.index).copied()
    }

    pub fn set(&mut self, v: VarRef, value: f64) {
        let s = match v.kind {
            VarKind::State => &mut self.x,
            VarKind::Input => &mut self.u,
            VarKind::Theta => &mut self.theta,
            VarKind::Mu => &mut self.mu,
        };
        if s.len() <= v.index {
            s.resize(v.index + 1, 0.0);
        }
        s[v.index] = value;
    }
}

/// A compiled, shareable evaluation program for one or more expressions.
#[derive(Clone, Debug)]
pub struct Tape {
    instrs: Vec<Instr>,
    vars: Vec<VarRef>,
    outputs: Vec<usize>,
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Tape {
        let mut t = Tape {
            instrs: Vec::new(),
            vars: Vec::new(),
            outputs: Vec::new(),
        };
        let mut memo = BTreeMap::new();
        let mut var_ids = BTreeMap::new();
        for e in exprs {
            let s = t.emit(e, &mut memo, &mut var_ids);
            t.outputs.push(s);
        }
        t
    }

    fn emit(
        &mut self,
        e: &Expr,
        memo: &mut BTreeMap<usize, usize>,
        var_ids: &mut BTreeMap<VarRef, usize>,
    ) -> usize {
        if let Some(&s) = memo.get(&e.ptr()) {
            return s;
        }
        let ins = match e.node() {
            Node::Const(v) => Instr::Const(*v),
            Node::Var(v) => {
                let next = self.vars.len();
                let id = *var_ids.entry(*v).or_insert(next);
                if id == next {
                    self.vars.push(*v);
                }
                Instr::Var(id)
            }
            Node::Unary(op, a) => Instr::Unary(*op, self.emit(a, memo, var_ids)),
            Node::Binary(op, a, b) => {
                let sa = self.emit(a, memo, var_ids);
                let sb = self.emit(b, memo, var_ids);
                Instr::Binary(*op, sa, sb)
            }
            Node::PowInt(a, n) => Instr::PowInt(self.emit(a, memo, var_ids), *n),
        };
        self.instrs.push(ins);
        let s = self.instrs.len() - 1;
        memo.insert(e.ptr(), s);
        s
    }

    /// Variables in tape order.
    pub fn vars(&self) -> &[VarRef] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    fn bind_env(&self, env: &Env) -> Result<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| {
                env.get(v)
                    .ok_or_else(|| Error::Precondition(format!("unbound variable {v}")))
            })
            .collect()
    }

    /// Evaluates every output at the point described by `env`.
    pub fn eval_f64(&self, env: &Env) -> Result<Vec<f64>> {
        let vals = self.bind_env(env)?;
        let mut slots = Vec::with_capacity(self.instrs.len());
        self.run(&vals, &mut slots)?;
        Ok(self.outputs.iter().map(|&o| slots[o]).collect())
    }

    /// Evaluates every output with per-variable values given in tape order.
    pub fn eval_with<T: Scalar>(&self, var_vals: &[T], slots: &mut Vec<T>) -> Result<Vec<T>> {
        self.run(var_vals, slots)?;
        Ok(self.outputs.iter().map(|&o| slots[o]).collect())
    }

    fn run<T: Scalar>(&self, var_vals: &[T], slots: &mut Vec<T>) -> Result<()> {
        slots.clear();
        for ins in &self.instrs {
            let v = match *ins {
                Instr::Const(c) => T::cst(c),
                Instr::Var(i) => var_vals[i],
                Instr::Unary(op, a) => unary_value(op, slots[a])?,
                Instr::Binary(op, a, b) => {
                    let (x, y) = (slots[a], slots[b]);
                    match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => x.div(y)?,
                    }
                }
                Instr::PowInt(a, n) => slots[a].powi(n)?,
            };
            if !v.finite() {
                return Err(Error::DomainViolation("non-finite intermediate value"));
            }
            slots.push(v);
        }
        Ok(())
    }
}

fn unary_value<T: Scalar>(op: UnaryOp, a: T) -> Result<T> {
    Ok(match op {
        UnaryOp::Neg => -a,
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
        UnaryOp::Tan => a.tan()?,
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => a.ln()?,
        UnaryOp::Sqrt => a.sqrt()?,
        UnaryOp::Abs => a.abs(),
    })
}

/// Value with first and second derivatives of a unary map at `a`.
fn unary_d2<T: Scalar>(op: UnaryOp, a: T) -> Result<(T, T, T)> {
    Ok(match op {
        UnaryOp::Neg => (-a, T::cst(-1.0), T::cst(0.0)),
        UnaryOp::Sin => {
            let s = a.sin();
            (s, a.cos(), -s)
        }
        UnaryOp::Cos => {
            let c = a.cos();
            (c, -a.sin(), -c)
        }
        UnaryOp::Tan => {
            let t = a.tan()?;
            let d1 = T::cst(1.0) + t * t;
            (t, d1, T::cst(2.0) * t * d1)
        }
        UnaryOp::Exp => {
            let e = a.exp();
            (e, e, e)
        }
        UnaryOp::Log => {
            let r = T::cst(1.0).div(a)?;
            (a.ln()?, r, -(r * r))
        }
        UnaryOp::Sqrt => {
            let s = a.sqrt()?;
            // derivative needs a strictly positive argument
            let r = T::cst(0.5).div(s)?;
            (s, r, -(r * r * r) * T::cst(2.0))
        }
        UnaryOp::Abs => return Err(Error::NonSmooth("abs")),
    })
}

/// Point value, gradient and Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct PointJet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Mat<f64>,
}

/// Enclosures of the value, gradient and Hessian over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalJet {
    pub value: Interval,
    pub grad: Vec<Interval>,
    pub hess: Mat<Interval>,
}

/// A scalar function of a chosen list of active variables, with every other
/// variable fixed to a numeric value.
#[derive(Clone, Debug)]
pub struct Func {
    tape: Arc<Tape>,
    active: Vec<VarRef>,
    /// For each tape variable, its coordinate among the active ones.
    coord: Vec<Option<usize>>,
    /// For each tape variable, its fixed value (unused when active).
    fixed: Vec<f64>,
    /// Slots whose value depends on an active variable.
    live: Arc<Vec<bool>>,
}

impl Func {
    pub fn new(expr: &Expr, active: &[VarRef], env: &Env) -> Result<Func> {
        let tape = Arc::new(Tape::compile(core::slice::from_ref(expr)));
        let coord: Vec<Option<usize>> = tape
            .vars
            .iter()
            .map(|v| active.iter().position(|a| a == v))
            .collect();
        let mut live = vec![false; tape.instrs.len()];
        for (i, ins) in tape.instrs.iter().enumerate() {
            live[i] = match *ins {
                Instr::Const(_) => false,
                Instr::Var(v) => coord[v].is_some(),
                Instr::Unary(_, a) | Instr::PowInt(a, _) => live[a],
                Instr::Binary(_, a, b) => live[a] || live[b],
            };
        }
        let mut f = Func {
            tape,
            active: active.to_vec(),
            coord,
            fixed: Vec::new(),
            live: Arc::new(live),
        };
        f.fixed = f.fixed_values(env)?;
        Ok(f)
    }

    fn fixed_values(&self, env: &Env) -> Result<Vec<f64>> {
        self.tape
            .vars
            .iter()
            .zip(&self.coord)
            .map(|(&v, c)| match c {
                Some(_) => Ok(0.0),
                None => env
                    .get(v)
                    .ok_or_else(|| Error::Precondition(format!("unbound variable {v}"))),
            })
            .collect()
    }

    /// Same function with the non-active variables re-fixed from `env`.
    pub fn rebind(&self, env: &Env) -> Result<Func> {
        let mut f = self.clone();
        f.fixed = self.fixed_values(env)?;
        Ok(f)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[VarRef] {
        &self.active
    }

    /// True when the output does not depend on any active variable.
    pub fn is_constant(&self) -> bool {
        !self.live[self.tape.outputs[0]]
    }

    fn seed<T: Scalar>(&self, at: impl Fn(usize) -> T) -> Vec<T> {
        self.coord
            .iter()
            .zip(&self.fixed)
            .map(|(c, &v)| match c {
                Some(i) => at(*i),
                None => T::cst(v),
            })
            .collect()
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let seed = self.seed(|i| x[i]);
        let mut slots = Vec::with_capacity(self.tape.len());
        Ok(self.tape.eval_with(&seed, &mut slots)?[0])
    }

    pub fn jet(&self, x: &[f64]) -> Result<PointJet> {
        self.check_dim(x.len())?;
        let seed = self.seed(|i| x[i]);
        let (value, grad, hess) = self.eval_jet(&seed)?;
        Ok(PointJet {
            value,
            grad,
            hess: Mat::from_vec(self.dim(), hess),
        })
    }

    pub fn interval_value(&self, b: &BoxN) -> Result<Interval> {
        self.check_dim(b.dim())?;
        let seed = self.seed(|i| b.get(i));
        let mut slots = Vec::with_capacity(self.tape.len());
        Ok(self.tape.eval_with(&seed, &mut slots)?[0])
    }

    pub fn interval_jet(&self, b: &BoxN) -> Result<IntervalJet> {
        self.check_dim(b.dim())?;
        let seed = self.seed(|i| b.get(i));
        let (value, grad, hess) = self.eval_jet(&seed)?;
        Ok(IntervalJet {
            value,
            grad,
            hess: Mat::from_vec(self.dim(), hess),
        })
    }

    fn eval_jet<T: Scalar>(&self, seed: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
        let k = self.dim();
        let kk = k * k;
        let n = self.tape.len();
        let zero = T::cst(0.0);
        let mut val: Vec<T> = Vec::with_capacity(n);
        let mut g = vec![zero; n * k];
        let mut h = vec![zero; n * kk];
        let live = &*self.live;

        for (i, ins) in self.tape.instrs.iter().enumerate() {
            let v = match *ins {
                Instr::Const(c) => T::cst(c),
                Instr::Var(vi) => {
                    if let Some(c) = self.coord[vi] {
                        g[i * k + c] = T::cst(1.0);
                    }
                    seed[vi]
                }
                Instr::Unary(op, a) => {
                    if live[i] {
                        let (v, d1, d2) = unary_d2(op, val[a])?;
                        chain(&mut g, &mut h, i, a, k, d1, d2);
                        v
                    } else {
                        unary_value(op, val[a])?
                    }
                }
                Instr::PowInt(a, p) => {
                    let x = val[a];
                    if live[i] && p != 0 {
                        let v = x.powi(p)?;
                        let d1 = T::cst(p as f64) * x.powi(p - 1)?;
                        let d2 = if p == 1 {
                            zero
                        } else {
                            T::cst((p as f64) * (p as f64 - 1.0)) * x.powi(p - 2)?
                        };
                        chain(&mut g, &mut h, i, a, k, d1, d2);
                        v
                    } else {
                        x.powi(p)?
                    }
                }
                Instr::Binary(op, a, b) => {
                    let (x, y) = (val[a], val[b]);
                    let v = match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        BinaryOp::Div => x.div(y)?,
                    };
                    if live[i] {
                        binary_derivs(op, &mut g, &mut h, i, a, b, x, y, v, k, live)?;
                    }
                    v
                }
            };
            if !v.finite() {
                return Err(Error::DomainViolation("non-finite intermediate value"));
            }
            val.push(v);
        }
        let o = self.tape.outputs[0];
        Ok((
            val[o],
            g[o * k..(o + 1) * k].to_vec(),
            h[o * kk..(o + 1) * kk].to_vec(),
        ))
    }
}

/// `g_i = d1 g_a`, `H_i = d1 H_a + d2 g_a g_aᵀ`.
fn chain<T: Scalar>(g: &mut [T], h: &mut [T], i: usize, a: usize, k: usize, d1: T, d2: T) {
    let kk = k * k;
    for p in 0..k {
        let gp = g[a * k + p];
        g[i * k + p] = d1 * gp;
        for q in 0..k {
            h[i * kk + p * k + q] = d1 * h[a * kk + p * k + q] + d2 * gp * g[a * k + q];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn binary_derivs<T: Scalar>(
    op: BinaryOp,
    g: &mut [T],
    h: &mut [T],
    i: usize,
    a: usize,
    b: usize,
    x: T,
    y: T,
    v: T,
    k: usize,
    live: &[bool],
) -> Result<()> {
    let kk = k * k;
    let (la, lb) = (live[a], live[b]);
    match op {
        BinaryOp::Add | BinaryOp::Sub => {
            let sign = if op == BinaryOp::Add {
                T::cst(1.0)
            } else {
                T::cst(-1.0)
            };
            for p in 0..k {
                g[i * k + p] = g[a * k + p] + sign * g[b * k + p];
            }
            for p in 0..kk {
                h[i * kk + p] = h[a * kk + p] + sign * h[b * kk + p];
            }
        }
        BinaryOp::Mul => {
            for p in 0..k {
                g[i * k + p] = match (la, lb) {
                    (true, true) => x * g[b * k + p] + y * g[a * k + p],
                    (true, false) => y * g[a * k + p],
                    _ => x * g[b * k + p],
                };
            }
            for p in 0..k {
                for q in 0..k {
                    let idx = p * k + q;
                    h[i * kk + idx] = match (la, lb) {
                        (true, true) => {
                            x * h[b * kk + idx]
                                + y * h[a * kk + idx]
                                + g[a * k + p] * g[b * k + q]
                                + g[b * k + p] * g[a * k + q]
                        }
                        (true, false) => y * h[a * kk + idx],
                        _ => x * h[b * kk + idx],
                    };
                }
            }
        }
        BinaryOp::Div => {
            let r = T::cst(1.0).div(y)?;
            if !lb {
                for p in 0..k {
                    g[i * k + p] = g[a * k + p] * r;
                }
                for p in 0..kk {
                    h[i * kk + p] = h[a * kk + p] * r;
                }
            } else {
                // q = x/y:  q' = (x' - q y')/y,  q'' = (x'' - q y'' - y' q'ᵀ - q' y'ᵀ)/y
                for p in 0..k {
                    g[i * k + p] = (g[a * k + p] - v * g[b * k + p]) * r;
                }
                for p in 0..k {
                    for q in 0..k {
                        let idx = p * k + q;
                        h[i * kk + idx] = (h[a * kk + idx]
                            - v * h[b * kk + idx]
                            - g[b * k + p] * g[i * k + q]
                            - g[i * k + p] * g[b * k + q])
                            * r;
                    }
                }
            }
        }
    }
    Ok(())
}
