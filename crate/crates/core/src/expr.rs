//! A small real-valued expression language for right-hand sides and kernel
//! entries in problem files.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'pi' | 'e' | variable | func '(' expr ')' | '(' expr ')'
//! func   := exp | sin | cos | abs | sqrt | ln
//! ```
//!
//! Variables are `t` and, for two-argument kernels, `s`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("expression error at column {column}: {message} (in `{source_text}`)")]
pub struct ExprError {
    pub column: usize,
    pub message: String,
    pub source_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Ln,
    /// Only produced by differentiation of `abs`.
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
            Func::Sign => "sign",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Abs => x.abs(),
            Func::Sqrt => x.sqrt(),
            Func::Ln => x.ln(),
            Func::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Parses an expression in the single variable `t`.
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        Self::parse_with(src, &[Var::T])
    }

    /// Parses an expression in `t` and `s`.
    pub fn parse_two(src: &str) -> Result<Expr, ExprError> {
        Self::parse_with(src, &[Var::T, Var::S])
    }

    pub fn parse_with(src: &str, vars: &[Var]) -> Result<Expr, ExprError> {
        let tokens = lex(src)?;
        let mut p = Parser {
            src,
            tokens,
            pos: 0,
            vars,
        };
        let e = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(p.error(tok.column, "unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval2(t, 0.0)
    }

    pub fn eval2(&self, t: f64, s: f64) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::S) => s,
            Expr::Neg(a) => -a.eval2(t, s),
            Expr::Add(a, b) => a.eval2(t, s) + b.eval2(t, s),
            Expr::Sub(a, b) => a.eval2(t, s) - b.eval2(t, s),
            Expr::Mul(a, b) => a.eval2(t, s) * b.eval2(t, s),
            Expr::Div(a, b) => a.eval2(t, s) / b.eval2(t, s),
            Expr::Pow(a, b) => pow(a.eval2(t, s), b.eval2(t, s)),
            Expr::Call(f, a) => f.apply(a.eval2(t, s)),
        }
    }

    fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on(v) || b.depends_on(v),
        }
    }

    /// `false` when `abs` or `sign` is applied to a `t`-dependent argument,
    /// i.e. the derivative may jump.
    pub fn is_smooth(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => true,
            Expr::Call(Func::Abs | Func::Sign, a) => !a.depends_on(Var::T),
            Expr::Neg(a) | Expr::Call(_, a) => a.is_smooth(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_smooth() && b.is_smooth(),
        }
    }

    /// Symbolic derivative with respect to `t`.
    pub fn derivative(&self) -> Expr {
        self.diff(Var::T).simplify()
    }

    fn diff(&self, v: Var) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Num(_) => Num(0.0),
            Var(w) => Num(if *w == v { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.diff(v))),
            Add(x, y) => Add(b(x.diff(v)), b(y.diff(v))),
            Sub(x, y) => Sub(b(x.diff(v)), b(y.diff(v))),
            Mul(x, y) => Add(
                b(Mul(b(x.diff(v)), y.clone())),
                b(Mul(x.clone(), b(y.diff(v)))),
            ),
            Div(x, y) => Div(
                b(Sub(
                    b(Mul(b(x.diff(v)), y.clone())),
                    b(Mul(x.clone(), b(y.diff(v)))),
                )),
                b(Pow(y.clone(), b(Num(2.0)))),
            ),
            Pow(x, y) if !y.depends_on(v) => Mul(
                b(Mul(
                    y.clone(),
                    b(Pow(x.clone(), b(Sub(y.clone(), b(Num(1.0)))))),
                )),
                b(x.diff(v)),
            ),
            // d(x^y) = x^y (y' ln x + y x'/x)
            Pow(x, y) => Mul(
                b(self.clone()),
                b(Add(
                    b(Mul(b(y.diff(v)), b(Call(Func::Ln, x.clone())))),
                    b(Div(b(Mul(y.clone(), b(x.diff(v)))), x.clone())),
                )),
            ),
            Call(f, a) => {
                let inner = a.diff(v);
                let outer = match f {
                    Func::Exp => Call(Func::Exp, a.clone()),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(b(Call(Func::Sin, a.clone()))),
                    Func::Abs => Call(Func::Sign, a.clone()),
                    Func::Sqrt => Div(b(Num(0.5)), b(Call(Func::Sqrt, a.clone()))),
                    Func::Ln => Div(b(Num(1.0)), a.clone()),
                    Func::Sign => Num(0.0),
                };
                Mul(b(outer), b(inner))
            }
        }
    }

    fn simplify(self) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Neg(a) => match a.simplify() {
                Num(x) => Num(-x),
                Neg(inner) => *inner,
                a => Neg(b(a)),
            },
            Add(x, y) => match (x.simplify(), y.simplify()) {
                (Num(p), Num(q)) => Num(p + q),
                (Num(0.0), e) | (e, Num(0.0)) => e,
                (x, y) => Add(b(x), b(y)),
            },
            Sub(x, y) => match (x.simplify(), y.simplify()) {
                (Num(p), Num(q)) => Num(p - q),
                (e, Num(0.0)) => e,
                (Num(0.0), e) => Neg(b(e)),
                (x, y) => Sub(b(x), b(y)),
            },
            Mul(x, y) => match (x.simplify(), y.simplify()) {
                (Num(p), Num(q)) => Num(p * q),
                (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
                (Num(o), e) | (e, Num(o)) if o == 1.0 => e,
                (x, y) => Mul(b(x), b(y)),
            },
            Div(x, y) => match (x.simplify(), y.simplify()) {
                (Num(0.0), _) => Num(0.0),
                (e, Num(1.0)) => e,
                (x, y) => Div(b(x), b(y)),
            },
            Pow(x, y) => match (x.simplify(), y.simplify()) {
                (_, Num(0.0)) => Num(1.0),
                (e, Num(1.0)) => e,
                (x, y) => Pow(b(x), b(y)),
            },
            Call(f, a) => match a.simplify() {
                Num(x) => Num(f.apply(x)),
                a => Call(f, b(a)),
            },
            e => e,
        }
    }
}

fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() < 64.0 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::S) => write!(f, "s"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: String| ExprError {
        column,
        message,
        source_text: src.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut k = i + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    i = k;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| err(column, format!("malformed number `{text}`")))?;
            out.push(Token {
                tok: Tok::Num(value),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '×' => Tok::Op('*'),
                '÷' => Tok::Op('/'),
                '−' => Tok::Op('-'),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => return Err(err(column, format!("unexpected character `{c}`"))),
            };
            out.push(Token { tok, column });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [Var],
}

impl Parser<'_> {
    fn error(&self, column: usize, message: &str) -> ExprError {
        ExprError {
            column,
            message: message.to_string(),
            source_text: self.src.to_string(),
        }
    }

    fn end_column(&self) -> usize {
        self.src.chars().count() + 1
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let end = self.end_column();
        let Some(tok) = self.next() else {
            return Err(self.error(end, "unexpected end of expression"));
        };
        match tok.tok {
            Tok::Num(x) => Ok(Expr::Num(x)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => return Ok(Expr::Num(std::f64::consts::E)),
                    "t" | "s" => {
                        let v = if name == "t" { Var::T } else { Var::S };
                        if !self.vars.contains(&v) {
                            return Err(
                                self.error(tok.column, &format!("variable `{name}` not allowed here"))
                            );
                        }
                        return Ok(Expr::Var(v));
                    }
                    "exp" => Func::Exp,
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "abs" => Func::Abs,
                    "sqrt" => Func::Sqrt,
                    "ln" => Func::Ln,
                    _ => {
                        return Err(self.error(tok.column, &format!("unknown identifier `{name}`")))
                    }
                };
                match self.next() {
                    Some(Token {
                        tok: Tok::LParen, ..
                    }) => {}
                    Some(t) => return Err(self.error(t.column, "expected `(` after function name")),
                    None => return Err(self.error(end, "expected `(` after function name")),
                }
                let arg = self.expr()?;
                self.expect_rparen()?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Tok::Op(c) => Err(self.error(tok.column, &format!("unexpected operator `{c}`"))),
            Tok::RParen => Err(self.error(tok.column, "unexpected `)`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let end = self.end_column();
        match self.next() {
            Some(Token {
                tok: Tok::RParen, ..
            }) => Ok(()),
            Some(t) => Err(self.error(t.column, "expected `)`")),
            None => Err(self.error(end, "missing `)`")),
        }
    }
}
