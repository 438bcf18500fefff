//! Immutable symbolic expressions over state, input and coefficient variables.
//!
//! An [`Expr`] is a reference-counted DAG. Structurally identical subtrees may
//! be shared; every consumer (tape compilation, substitution, printing) walks
//! the graph with a pointer-keyed memo so sharing costs nothing.

mod parse;
mod tape;

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

pub use parse::{eval_constant, parse, ParseContext};
pub use tape::{Env, Func, IntervalJet, PointJet, Scalar, Tape};

use crate::error::Result;
use crate::fmath;

/// The four variable families a formula can mention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    State,
    Input,
    /// Coefficients of a parameterized barrier function.
    Theta,
    /// Coefficients of a parameterized policy.
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarRef {
    pub kind: VarKind,
    pub index: usize,
}

impl VarRef {
    pub const fn state(index: usize) -> Self {
        Self {
            kind: VarKind::State,
            index,
        }
    }
    pub const fn input(index: usize) -> Self {
        Self {
            kind: VarKind::Input,
            index,
        }
    }
    pub const fn theta(index: usize) -> Self {
        Self {
            kind: VarKind::Theta,
            index,
        }
    }
    pub const fn mu(index: usize) -> Self {
        Self {
            kind: VarKind::Mu,
            index,
        }
    }

    /// All variables of `kind` with index below `count`, in order.
    pub fn range(kind: VarKind, count: usize) -> Vec<VarRef> {
        (0..count).map(|index| VarRef { kind, index }).collect()
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.kind {
            VarKind::State => 'x',
            VarKind::Input => 'u',
            VarKind::Theta => 't',
            VarKind::Mu => 'm',
        };
        write!(f, "{p}{}", self.index + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<UnaryOp> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
pub enum Node {
    Const(f64),
    Var(VarRef),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
    PowInt(Expr, i32),
}

#[derive(Clone, Debug)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr(Arc::new(Node::Const(v)))
    }

    pub fn var(v: VarRef) -> Expr {
        Expr(Arc::new(Node::Var(v)))
    }

    pub fn x(i: usize) -> Expr {
        Expr::var(VarRef::state(i))
    }
    pub fn u(i: usize) -> Expr {
        Expr::var(VarRef::input(i))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    fn ptr(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Whether two handles point at the same node.
    pub fn same_node(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if let Some(v) = a.as_const() {
            let folded = match op {
                UnaryOp::Neg => Some(-v),
                UnaryOp::Sin => Some(fmath::sin(v)),
                UnaryOp::Cos => Some(fmath::cos(v)),
                UnaryOp::Exp => Some(fmath::exp(v)),
                UnaryOp::Abs => Some(v.abs()),
                UnaryOp::Tan | UnaryOp::Log | UnaryOp::Sqrt => None,
            };
            // Domain-restricted functions stay symbolic so errors surface at evaluation.
            if let Some(r) = folded.filter(|r| r.is_finite()) {
                return Expr::constant(r);
            }
        }
        Expr(Arc::new(Node::Unary(op, a)))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            let r = match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            };
            if r.is_finite() && !(op == BinaryOp::Div && y == 0.0) {
                return Expr::constant(r);
            }
        }
        Expr(Arc::new(Node::Binary(op, a, b)))
    }

    pub fn powi(&self, n: i32) -> Expr {
        if let Some(v) = self.as_const() {
            let r = fmath::powi(v, n);
            if r.is_finite() && !(n < 0 && v == 0.0) {
                return Expr::constant(r);
            }
        }
        Expr(Arc::new(Node::PowInt(self.clone(), n)))
    }

    pub fn sin(&self) -> Expr {
        Expr::unary(UnaryOp::Sin, self.clone())
    }
    pub fn cos(&self) -> Expr {
        Expr::unary(UnaryOp::Cos, self.clone())
    }
    pub fn tan(&self) -> Expr {
        Expr::unary(UnaryOp::Tan, self.clone())
    }
    pub fn exp(&self) -> Expr {
        Expr::unary(UnaryOp::Exp, self.clone())
    }
    pub fn ln(&self) -> Expr {
        Expr::unary(UnaryOp::Log, self.clone())
    }
    pub fn sqrt(&self) -> Expr {
        Expr::unary(UnaryOp::Sqrt, self.clone())
    }
    pub fn abs(&self) -> Expr {
        Expr::unary(UnaryOp::Abs, self.clone())
    }

    /// Replaces variables for which `f` returns a replacement. Shared subgraphs
    /// stay shared in the result.
    pub fn substitute(&self, f: &dyn Fn(VarRef) -> Option<Expr>) -> Expr {
        let mut memo = BTreeMap::new();
        self.subst_rec(f, &mut memo)
    }

    fn subst_rec(
        &self,
        f: &dyn Fn(VarRef) -> Option<Expr>,
        memo: &mut BTreeMap<usize, Expr>,
    ) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let out = match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(v) => f(*v).unwrap_or_else(|| self.clone()),
            Node::Unary(op, a) => {
                let a2 = a.subst_rec(f, memo);
                if a2.same_node(a) {
                    self.clone()
                } else {
                    Expr::unary(*op, a2)
                }
            }
            Node::Binary(op, a, b) => {
                let a2 = a.subst_rec(f, memo);
                let b2 = b.subst_rec(f, memo);
                if a2.same_node(a) && b2.same_node(b) {
                    self.clone()
                } else {
                    Expr::binary(*op, a2, b2)
                }
            }
            Node::PowInt(a, n) => {
                let a2 = a.subst_rec(f, memo);
                if a2.same_node(a) {
                    self.clone()
                } else {
                    a2.powi(*n)
                }
            }
        };
        memo.insert(self.ptr(), out.clone());
        out
    }

    /// Substitutes every variable of `kind` by the matching entry of `with`.
    pub fn substitute_kind(&self, kind: VarKind, with: &[Expr]) -> Expr {
        self.substitute(&|v| {
            if v.kind == kind {
                with.get(v.index).cloned()
            } else {
                None
            }
        })
    }

    /// Substitutes numeric values for every variable of `kind` with an index in range.
    pub fn bind(&self, kind: VarKind, values: &[f64]) -> Expr {
        let consts: Vec<Expr> = values.iter().map(|&v| Expr::constant(v)).collect();
        self.substitute_kind(kind, &consts)
    }

    /// Sorted, deduplicated list of variables referenced.
    pub fn variables(&self) -> Vec<VarRef> {
        let mut seen = BTreeMap::new();
        let mut vars = BTreeMap::new();
        self.collect_vars(&mut seen, &mut vars);
        vars.into_keys().collect()
    }

    fn collect_vars(&self, seen: &mut BTreeMap<usize, ()>, vars: &mut BTreeMap<VarRef, ()>) {
        if seen.insert(self.ptr(), ()).is_some() {
            return;
        }
        match self.node() {
            Node::Const(_) => {}
            Node::Var(v) => {
                vars.insert(*v, ());
            }
            Node::Unary(_, a) | Node::PowInt(a, _) => a.collect_vars(seen, vars),
            Node::Binary(_, a, b) => {
                a.collect_vars(seen, vars);
                b.collect_vars(seen, vars);
            }
        }
    }

    pub fn depends_on_kind(&self, kind: VarKind) -> bool {
        self.variables().iter().any(|v| v.kind == kind)
    }

    /// Point evaluation. Compiles a throwaway tape; hot loops should build a [`Func`].
    pub fn eval(&self, env: &Env) -> Result<f64> {
        let tape = Tape::compile(core::slice::from_ref(self));
        Ok(tape.eval_f64(env)?[0])
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Node::Unary(UnaryOp::Neg, _) => 3,
            Node::Const(v) if *v < 0.0 => 3,
            Node::PowInt(..) => 4,
            _ => 5,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if e.precedence() < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(v) => write!(f, "{v}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                write_operand(f, a, 4)
            }
            Node::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Node::Binary(op, a, b) => {
                let (sym, p) = match op {
                    BinaryOp::Add => (" + ", 1),
                    BinaryOp::Sub => (" - ", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                };
                write_operand(f, a, p)?;
                f.write_str(sym)?;
                // Right operands of - and / need parentheses at equal precedence.
                let rp = if matches!(op, BinaryOp::Sub | BinaryOp::Div) {
                    p + 1
                } else {
                    p
                };
                write_operand(f, b, rp)
            }
            Node::PowInt(a, n) => {
                write_operand(f, a, 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
        }
    }
}

macro_rules! impl_binop {
    ($tr:ident, $m:ident, $op:expr) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::binary($op, self, rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                Expr::binary($op, self.clone(), rhs.clone())
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                Expr::binary($op, self, rhs.clone())
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::binary($op, self.clone(), rhs)
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::binary($op, self, Expr::constant(rhs))
            }
        }
        impl $tr<f64> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                Expr::binary($op, self.clone(), Expr::constant(rhs))
            }
        }
        impl $tr<Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                Expr::binary($op, Expr::constant(self), rhs)
            }
        }
        impl $tr<&Expr> for f64 {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                Expr::binary($op, Expr::constant(self), rhs.clone())
            }
        }
    };
}

impl_binop!(Add, add, BinaryOp::Add);
impl_binop!(Sub, sub, BinaryOp::Sub);
impl_binop!(Mul, mul, BinaryOp::Mul);
impl_binop!(Div, div, BinaryOp::Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::unary(UnaryOp::Neg, self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    #[test]
    fn substitution_keeps_sharing() {
        let x = Expr::x(0);
        let sq = &x * &x;
        let e = &sq + &sq;
        let r = e.substitute_kind(VarKind::State, &[Expr::u(0) + 1.0]);
        match r.node() {
            Node::Binary(_, a, b) => assert!(a.same_node(b)),
            _ => panic!("unexpected shape"),
        }
    }

    #[test]
    fn constant_folding_is_exact() {
        let e = Expr::constant(0.1) + Expr::constant(0.2);
        assert_eq!(e.as_const(), Some(0.1 + 0.2));
        // division by zero must survive to evaluation
        assert!((Expr::constant(1.0) / Expr::constant(0.0))
            .as_const()
            .is_none());
    }

    #[test]
    fn display_round_trips_through_parser() {
        let ctx = ParseContext::new(2, 1, 0, 0);
        for src in [
            "x1 - (x2 - u1)",
            "-x1^2",
            "(x1 + x2)^3/(1 - x2)",
            "x1/(x2*u1)",
            "-(x1 + 1)",
        ] {
            let e = parse(src, &ctx).unwrap();
            let printed = format!("{e}");
            let e2 = parse(&printed, &ctx).unwrap();
            let env = Env {
                x: vec![0.3, -1.7],
                u: vec![2.5],
                ..Env::default()
            };
            assert_eq!(
                e.eval(&env).unwrap(),
                e2.eval(&env).unwrap(),
                "{src} -> {printed}"
            );
        }
    }

    #[test]
    fn variables_sorted() {
        let ctx = ParseContext::new(3, 2, 1, 0);
        let e = parse("u2*x3 + t1*x1 + x3", &ctx).unwrap();
        assert_eq!(
            e.variables(),
            vec![
                VarRef::state(0),
                VarRef::state(2),
                VarRef::input(1),
                VarRef::theta(0)
            ]
        );
    }
}
