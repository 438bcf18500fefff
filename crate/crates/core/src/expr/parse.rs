//! Recursive-descent parser for the formula grammar used in problem files.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Exponents must fold to an integer constant.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Expr, UnaryOp, VarKind, VarRef};
use crate::error::{ParseError, ParseErrorKind};

/// Names a formula may use besides the numbered variables.
#[derive(Clone, Debug, Default)]
pub struct ParseContext {
    pub n_state: usize,
    pub n_input: usize,
    pub n_theta: usize,
    pub n_mu: usize,
    pub constants: BTreeMap<String, f64>,
    /// Extra names bound to variables, e.g. `r` for the argument of γ.
    pub aliases: BTreeMap<String, VarRef>,
}

impl ParseContext {
    pub fn new(n_state: usize, n_input: usize, n_theta: usize, n_mu: usize) -> Self {
        Self {
            n_state,
            n_input,
            n_theta,
            n_mu,
            ..Self::default()
        }
    }

    pub fn with_constant(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_owned(), value);
        self
    }

    pub fn with_alias(mut self, name: &str, var: VarRef) -> Self {
        self.aliases.insert(name.to_owned(), var);
        self
    }

    fn lookup(&self, name: &str) -> Option<Expr> {
        if let Some(v) = self.aliases.get(name) {
            return Some(Expr::var(*v));
        }
        if let Some(&c) = self.constants.get(name) {
            return Some(Expr::constant(c));
        }
        if name == "pi" {
            return Some(Expr::constant(core::f64::consts::PI));
        }
        let mut chars = name.chars();
        let (kind, count) = match chars.next()? {
            'x' => (VarKind::State, self.n_state),
            'u' => (VarKind::Input, self.n_input),
            't' => (VarKind::Theta, self.n_theta),
            'm' => (VarKind::Mu, self.n_mu),
            _ => return None,
        };
        let digits = chars.as_str();
        if digits.is_empty()
            || digits.starts_with('0')
            || !digits.bytes().all(|b| b.is_ascii_digit())
        {
            return None;
        }
        let k: usize = digits.parse().ok()?;
        (k >= 1 && k <= count).then(|| Expr::var(VarRef { kind, index: k - 1 }))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(&c) = self.src.get(self.pos) {
            if c == b'\n' {
                self.line += 1;
                self.col = 1;
            } else if c.is_ascii_whitespace() {
                self.col += 1;
            } else {
                break;
            }
            self.pos += 1;
        }
    }

    /// Returns the next token with the position where it starts.
    fn next(&mut self) -> Result<(Tok, usize, usize), ParseError> {
        self.skip_ws();
        let (line, col) = (self.line, self.col);
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::End, line, col));
        };
        let start = self.pos;
        let tok = if c.is_ascii_digit() || c == b'.' {
            while self.peek_is(|b| b.is_ascii_digit() || b == b'.') {
                self.pos += 1;
            }
            if self.peek_is(|b| b == b'e' || b == b'E') {
                let save = self.pos;
                self.pos += 1;
                if self.peek_is(|b| b == b'+' || b == b'-') {
                    self.pos += 1;
                }
                if self.peek_is(|b| b.is_ascii_digit()) {
                    while self.peek_is(|b| b.is_ascii_digit()) {
                        self.pos += 1;
                    }
                } else {
                    self.pos = save;
                }
            }
            let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| ParseError {
                line,
                column: col,
                kind: ParseErrorKind::Syntax(format!("malformed number `{text}`")),
            })?;
            Tok::Num(v)
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while self.peek_is(|b| b.is_ascii_alphanumeric() || b == b'_') {
                self.pos += 1;
            }
            Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
        } else if b"+-*/^(),".contains(&c) {
            self.pos += 1;
            Tok::Sym(c as char)
        } else {
            return Err(ParseError {
                line,
                column: col,
                kind: ParseErrorKind::Syntax(format!("unexpected character `{}`", c as char)),
            });
        };
        self.col += self.pos - start;
        Ok((tok, line, col))
    }

    fn peek_is(&self, pred: impl Fn(u8) -> bool) -> bool {
        self.src.get(self.pos).is_some_and(|&b| pred(b))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    line: usize,
    col: usize,
    ctx: &'a ParseContext,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (t, l, c) = self.lex.next()?;
        self.tok = t;
        self.line = l;
        self.col = c;
        Ok(())
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            column: self.col,
            kind,
        }
    }

    fn syntax(&self, msg: &str) -> ParseError {
        let found = match &self.tok {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".to_string(),
        };
        self.err(ParseErrorKind::Syntax(format!("{msg}, found {found}")))
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.tok == Tok::Sym(c) {
            self.bump()
        } else {
            Err(self.syntax(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.tok {
                Tok::Sym('+') => {
                    self.bump()?;
                    lhs = lhs + self.term()?;
                }
                Tok::Sym('-') => {
                    self.bump()?;
                    lhs = lhs - self.term()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.tok {
                Tok::Sym('*') => {
                    self.bump()?;
                    lhs = lhs * self.unary()?;
                }
                Tok::Sym('/') => {
                    self.bump()?;
                    lhs = lhs / self.unary()?;
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.tok {
            Tok::Sym('-') => {
                self.bump()?;
                Ok(-self.unary()?)
            }
            Tok::Sym('+') => {
                self.bump()?;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.tok != Tok::Sym('^') {
            return Ok(base);
        }
        self.bump()?;
        let (line, col) = (self.line, self.col);
        let exp = self.unary()?;
        match exp.as_const() {
            Some(v) if v == libm::trunc(v) && v.abs() <= i32::MAX as f64 => Ok(base.powi(v as i32)),
            _ => Err(ParseError {
                line,
                column: col,
                kind: ParseErrorKind::Syntax("exponent must be an integer constant".to_string()),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::constant(v))
            }
            Tok::Sym('(') => {
                self.bump()?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.err(ParseErrorKind::UnknownIdentifier(name.clone()));
                self.bump()?;
                if self.tok == Tok::Sym('(') {
                    self.bump()?;
                    let mut args = Vec::new();
                    if self.tok != Tok::Sym(')') {
                        args.push(self.expr()?);
                        while self.tok == Tok::Sym(',') {
                            self.bump()?;
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(')')?;
                    let op = UnaryOp::from_name(&name).ok_or(at.clone())?;
                    if args.len() != 1 {
                        return Err(ParseError {
                            kind: ParseErrorKind::Arity {
                                name,
                                expected: 1,
                                found: args.len(),
                            },
                            ..at
                        });
                    }
                    Ok(Expr::unary(
                        op,
                        args.pop().unwrap_or_else(|| Expr::constant(0.0)),
                    ))
                } else {
                    if UnaryOp::from_name(&name).is_some() {
                        return Err(ParseError {
                            kind: ParseErrorKind::Arity {
                                name,
                                expected: 1,
                                found: 0,
                            },
                            ..at
                        });
                    }
                    self.ctx.lookup(&name).ok_or(at)
                }
            }
            _ => Err(self.syntax("expected an operand")),
        }
    }
}

/// Parses `text` against the variables and constants declared in `ctx`.
pub fn parse(text: &str, ctx: &ParseContext) -> Result<Expr, ParseError> {
    let mut p = Parser {
        lex: Lexer {
            src: text.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        },
        tok: Tok::End,
        line: 1,
        col: 1,
        ctx,
    };
    p.bump()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.syntax("expected an operator or end of input"));
    }
    Ok(e)
}

/// Parses and folds a formula that may only use constants, e.g. `-pi/4`.
pub fn eval_constant(
    text: &str,
    constants: &BTreeMap<String, f64>,
) -> Result<f64, crate::error::Error> {
    let ctx = ParseContext {
        constants: constants.clone(),
        ..ParseContext::default()
    };
    let e = parse(text, &ctx)?;
    e.eval(&super::Env::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Env;
    use alloc::vec;

    fn ctx() -> ParseContext {
        ParseContext::new(4, 2, 3, 4).with_constant("Ts", 0.1)
    }

    #[test]
    fn constant_binding() {
        let e = parse("x1 + x2*Ts", &ctx()).unwrap();
        let env = Env {
            x: vec![1.0, 1.0, 0.0, 0.0],
            ..Env::default()
        };
        assert!((e.eval(&env).unwrap() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn sin_at_zero() {
        let e = parse("sin(x3)", &ctx()).unwrap();
        assert_eq!(
            e.eval(&Env {
                x: vec![0.0; 4],
                ..Env::default()
            })
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn parameterized_ellipse() {
        let e = parse("1 - t1*x1^2 - t2*x1*x2 - t3*x2^2", &ctx()).unwrap();
        let env = Env {
            x: vec![1.0, 2.0, 0.0, 0.0],
            theta: vec![0.5, 0.25, 0.125],
            ..Env::default()
        };
        assert_eq!(e.eval(&env).unwrap(), 1.0 - 0.5 - 0.5 - 0.5);
    }

    #[test]
    fn precedence_and_associativity() {
        let c = ParseContext::default();
        let v = |s: &str| parse(s, &c).unwrap().eval(&Env::default()).unwrap();
        assert_eq!(v("-2^2"), -4.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("8/4/2"), 1.0);
        assert_eq!(v("1-2-3"), -4.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("1.5e1 + .5"), 15.5);
        assert!((v("-pi/4") + core::f64::consts::FRAC_PI_4).abs() < 1e-16);
    }

    #[test]
    fn error_positions() {
        let e = parse("x1 +\n  * x2", &ctx()).unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        let e = parse("x1 + y7", &ctx()).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("y7".into()));
        assert_eq!(e.column, 6);
        let e = parse("x5", &ctx()).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnknownIdentifier(_)));
        let e = parse("sin(x1, x2)", &ctx()).unwrap_err();
        assert_eq!(
            e.kind,
            ParseErrorKind::Arity {
                name: "sin".into(),
                expected: 1,
                found: 2
            }
        );
        assert!(parse("x1^x2", &ctx()).is_err());
        assert!(parse("x1^1.5", &ctx()).is_err());
        assert!(parse("(x1", &ctx()).is_err());
        assert!(parse("x1 x2", &ctx()).is_err());
        assert!(parse("x1 # 2", &ctx()).is_err());
    }

    #[test]
    fn aliases_take_priority() {
        let c = ParseContext::new(0, 0, 0, 0).with_alias("r", VarRef::state(0));
        let e = parse("0.8*r", &c).unwrap();
        assert_eq!(
            e.eval(&Env {
                x: vec![2.0],
                ..Env::default()
            })
            .unwrap(),
            1.6
        );
    }
}
