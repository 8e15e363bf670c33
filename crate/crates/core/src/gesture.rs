//! Gesture costs: a small expression language over fingertip positions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := postfix ('*' postfix)*          one side of '*' must be a number
//! postfix := primary ('.' ('x' | 'y' | 'z'))?
//! primary := number | '[' number ',' number ',' number ']' | tip '(' finger ')'
//!          | neg '(' expr ')' | norm '(' expr ')' | dot '(' expr ',' expr ')'
//!          | mean '(' expr (',' expr)* ')' | '(' expr ')'
//! finger  := integer | finger name
//! ```
//!
//! Values are scalars or 3-vectors. A program must evaluate to a scalar and is
//! minimised by the planner. `#` starts a comment that runs to the end of the line.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::hand::{HandConfig, Setting};
use crate::internal::{ForwardModel, InverseModel};
use crate::math;
use crate::plan::{self, PlanBudget, TrajectoryCost};
use crate::rng;
use crate::{Error, Result};

/// One-paragraph grammar summary handed to language models.
pub const GRAMMAR: &str = "\
A cost is one expression over fingertip positions and is minimised.
Values are scalars or 3-vectors [x, y, z] in metres.
tip(i) or tip(name) is the position of finger i (0 is the first finger).
Vector operations: a + b, a - b, a * 2.0, neg(a), mean(a, b, ...), v.x, v.y, v.z.
Scalar operations: norm(v), dot(u, v), numbers, + - * neg mean.
Multiplication needs a number literal on one side.
Use [0, 0, 1] style literals for constant directions. # starts a comment.";

/// Static type of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ty {
    Scalar,
    Vec3,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Scalar => "scalar",
            Ty::Vec3 => "vector",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Vec3([f64; 3]),
    Tip(usize),
    Axis(Box<Expr>, usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Scale(Box<Expr>, f64),
    Neg(Box<Expr>),
    Norm(Box<Expr>),
    Dot(Box<Expr>, Box<Expr>),
    Mean(Vec<Expr>),
}

impl Expr {
    /// Type of a well-formed expression.
    pub fn ty(&self) -> Ty {
        match self {
            Expr::Num(_) | Expr::Axis(..) | Expr::Norm(_) | Expr::Dot(..) => Ty::Scalar,
            Expr::Vec3(_) | Expr::Tip(_) => Ty::Vec3,
            Expr::Add(a, _) | Expr::Sub(a, _) | Expr::Scale(a, _) | Expr::Neg(a) => a.ty(),
            Expr::Mean(xs) => xs[0].ty(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 0,
            Expr::Scale(..) => 1,
            _ => 2,
        }
    }

    fn write_at(&self, out: &mut String, min: u8) {
        let paren = self.precedence() < min;
        if paren {
            out.push('(');
        }
        match self {
            Expr::Num(v) => write_num(out, *v),
            Expr::Vec3(v) => {
                out.push('[');
                for (i, c) in v.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_num(out, *c);
                }
                out.push(']');
            }
            Expr::Tip(i) => {
                out.push_str("tip(");
                out.push_str(&i.to_string());
                out.push(')');
            }
            Expr::Axis(e, a) => {
                e.write_at(out, 2);
                out.push('.');
                out.push(['x', 'y', 'z'][*a]);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.write_at(out, 0);
                out.push_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " });
                b.write_at(out, 1);
            }
            Expr::Scale(e, c) => {
                e.write_at(out, 1);
                out.push_str(" * ");
                write_num(out, *c);
            }
            Expr::Neg(e) | Expr::Norm(e) => {
                out.push_str(if matches!(self, Expr::Neg(_)) { "neg(" } else { "norm(" });
                e.write_at(out, 0);
                out.push(')');
            }
            Expr::Dot(a, b) => {
                out.push_str("dot(");
                a.write_at(out, 0);
                out.push_str(", ");
                b.write_at(out, 0);
                out.push(')');
            }
            Expr::Mean(xs) => {
                out.push_str("mean(");
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    x.write_at(out, 0);
                }
                out.push(')');
            }
        }
        if paren {
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_at(&mut s, 0);
        f.write_str(&s)
    }
}

// Shortest representation that parses back to the same bits.
fn write_num(out: &mut String, v: f64) {
    use core::fmt::Write;
    let _ = write!(out, "{v}");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseErrorKind {
    Syntax,
    UnknownSymbol,
    TypeMismatch,
    IndexOutOfRange,
}

/// A rejected program; `position` is a byte offset into the source.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind:?} at {position}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> core::result::Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c == '#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
                i = lx.number(i)?;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(src[start..i].into()), start));
            } else if "+-*(),.[]".contains(c) {
                lx.toks.push((Tok::Sym(c), i));
                i += 1;
            } else {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(ParseErrorKind::Syntax, i, alloc::format!("unexpected character '{ch}'")));
            }
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }

    fn number(&mut self, start: usize) -> core::result::Result<usize, ParseError> {
        let b = self.src.as_bytes();
        let mut i = start;
        let digits = |i: &mut usize| {
            while *i < b.len() && b[*i].is_ascii_digit() {
                *i += 1;
            }
        };
        digits(&mut i);
        if i < b.len() && b[i] == b'.' && b.get(i + 1).is_some_and(u8::is_ascii_digit) {
            i += 1;
            digits(&mut i);
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                i = j;
                digits(&mut i);
            }
        }
        let text = &self.src[start..i];
        let v: f64 = text
            .parse()
            .map_err(|_| err(ParseErrorKind::Syntax, start, alloc::format!("bad number '{text}'")))?;
        if !v.is_finite() {
            return Err(err(ParseErrorKind::Syntax, start, alloc::format!("number '{text}' overflows")));
        }
        self.toks.push((Tok::Num(v), start));
        Ok(i)
    }
}

fn err(kind: ParseErrorKind, position: usize, message: String) -> ParseError {
    ParseError { kind, position, message }
}

type PResult<T> = core::result::Result<T, ParseError>;

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    fingers: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, c: char) -> PResult<usize> {
        match self.bump() {
            (Tok::Sym(s), p) if s == c => Ok(p),
            (t, p) => Err(err(ParseErrorKind::Syntax, p, alloc::format!("expected '{c}', found {}", describe(&t)))),
        }
    }

    fn expr(&mut self) -> PResult<(Expr, usize)> {
        let (mut lhs, start) = self.term()?;
        while let Tok::Sym(op @ ('+' | '-')) = *self.peek() {
            let op_pos = self.bump().1;
            let (rhs, rpos) = self.term()?;
            if lhs.ty() != rhs.ty() {
                return Err(err(
                    ParseErrorKind::TypeMismatch,
                    rpos,
                    alloc::format!("'{op}' at {op_pos} combines a {} with a {}", lhs.ty(), rhs.ty()),
                ));
            }
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok((lhs, start))
    }

    fn term(&mut self) -> PResult<(Expr, usize)> {
        let (mut lhs, start) = self.postfix()?;
        while *self.peek() == Tok::Sym('*') {
            self.bump();
            let (rhs, rpos) = self.postfix()?;
            lhs = match (lhs, rhs) {
                (e, Expr::Num(c)) => Expr::Scale(Box::new(e), c),
                (Expr::Num(c), e) => Expr::Scale(Box::new(e), c),
                _ => {
                    return Err(err(
                        ParseErrorKind::TypeMismatch,
                        rpos,
                        "'*' needs a number literal on one side".into(),
                    ))
                }
            };
        }
        Ok((lhs, start))
    }

    fn postfix(&mut self) -> PResult<(Expr, usize)> {
        let (e, start) = self.primary()?;
        if *self.peek() != Tok::Sym('.') {
            return Ok((e, start));
        }
        self.bump();
        let (t, p) = self.bump();
        let axis = match &t {
            Tok::Ident(s) if s == "x" => 0,
            Tok::Ident(s) if s == "y" => 1,
            Tok::Ident(s) if s == "z" => 2,
            Tok::Ident(s) => return Err(err(ParseErrorKind::UnknownSymbol, p, alloc::format!("unknown axis '{s}'"))),
            t => return Err(err(ParseErrorKind::Syntax, p, alloc::format!("expected an axis, found {}", describe(t)))),
        };
        if e.ty() != Ty::Vec3 {
            return Err(err(ParseErrorKind::TypeMismatch, p, "axis selection on a scalar".into()));
        }
        Ok((Expr::Axis(Box::new(e), axis), start))
    }

    fn signed_number(&mut self) -> PResult<Option<f64>> {
        let save = self.at;
        let neg = *self.peek() == Tok::Sym('-');
        if neg {
            self.bump();
        }
        if let Tok::Num(v) = *self.peek() {
            self.bump();
            return Ok(Some(if neg { -v } else { v }));
        }
        self.at = save;
        Ok(None)
    }

    fn primary(&mut self) -> PResult<(Expr, usize)> {
        let start = self.pos();
        if let Some(v) = self.signed_number()? {
            return Ok((Expr::Num(v), start));
        }
        let (t, p) = self.bump();
        match t {
            Tok::Sym('(') => {
                let (e, _) = self.expr()?;
                self.expect(')')?;
                Ok((e, start))
            }
            Tok::Sym('[') => {
                let mut v = [0.0; 3];
                for (i, c) in v.iter_mut().enumerate() {
                    if i > 0 {
                        self.expect(',')?;
                    }
                    let q = self.pos();
                    *c = self
                        .signed_number()?
                        .ok_or_else(|| err(ParseErrorKind::Syntax, q, "vector literals hold three numbers".into()))?;
                }
                self.expect(']')?;
                Ok((Expr::Vec3(v), start))
            }
            Tok::Ident(name) => self.call(&name, p),
            t => Err(err(ParseErrorKind::Syntax, p, alloc::format!("unexpected {}", describe(&t)))),
        }
    }

    fn call(&mut self, name: &str, p: usize) -> PResult<(Expr, usize)> {
        if !matches!(name, "tip" | "neg" | "norm" | "dot" | "mean") {
            return Err(err(ParseErrorKind::UnknownSymbol, p, alloc::format!("unknown function '{name}'")));
        }
        self.expect('(')?;
        if name == "tip" {
            let (t, q) = self.bump();
            let idx = match t {
                Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 => {
                    if v >= self.fingers as f64 {
                        return Err(err(
                            ParseErrorKind::IndexOutOfRange,
                            q,
                            alloc::format!("finger {v} on a {}-finger hand", self.fingers),
                        ));
                    }
                    v as usize
                }
                Tok::Num(v) => return Err(err(ParseErrorKind::Syntax, q, alloc::format!("finger index {v} is not a natural number"))),
                Tok::Ident(s) => match self.names.iter().position(|n| *n == s) {
                    Some(i) if i < self.fingers => i,
                    _ => return Err(err(ParseErrorKind::UnknownSymbol, q, alloc::format!("unknown finger '{s}'"))),
                },
                t => return Err(err(ParseErrorKind::Syntax, q, alloc::format!("expected a finger, found {}", describe(&t)))),
            };
            self.expect(')')?;
            return Ok((Expr::Tip(idx), p));
        }
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Sym(',') {
            self.bump();
            args.push(self.expr()?);
        }
        let close = self.expect(')')?;
        let arity_err = |n: usize| err(ParseErrorKind::Syntax, close, alloc::format!("{name} takes {n} argument(s), got {}", args.len()));
        let want = |(e, q): &(Expr, usize), ty: Ty| {
            if e.ty() == ty {
                Ok(())
            } else {
                Err(err(ParseErrorKind::TypeMismatch, *q, alloc::format!("{name} expects a {ty}, got a {}", e.ty())))
            }
        };
        let e = match name {
            "neg" | "norm" => {
                if args.len() != 1 {
                    return Err(arity_err(1));
                }
                if name == "norm" {
                    want(&args[0], Ty::Vec3)?;
                }
                let a = Box::new(args.swap_remove(0).0);
                if name == "norm" {
                    Expr::Norm(a)
                } else {
                    Expr::Neg(a)
                }
            }
            "dot" => {
                if args.len() != 2 {
                    return Err(arity_err(2));
                }
                want(&args[0], Ty::Vec3)?;
                want(&args[1], Ty::Vec3)?;
                let b = Box::new(args.swap_remove(1).0);
                Expr::Dot(Box::new(args.swap_remove(0).0), b)
            }
            _ => {
                let ty = args[0].0.ty();
                for a in &args[1..] {
                    want(a, ty)?;
                }
                Expr::Mean(args.into_iter().map(|a| a.0).collect())
            }
        };
        Ok((e, p))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => alloc::format!("number {v}"),
        Tok::Ident(s) => alloc::format!("'{s}'"),
        Tok::Sym(c) => alloc::format!("'{c}'"),
        Tok::End => "end of input".into(),
    }
}

/// Parses a standalone expression for a hand with `fingers` fingers.
pub fn parse_expr(src: &str, fingers: usize, names: &[String]) -> core::result::Result<Expr, ParseError> {
    let toks = Lexer::run(src)?;
    let mut p = Parser { toks, at: 0, fingers, names };
    let (e, _) = p.expr()?;
    if *p.peek() != Tok::End {
        let (t, q) = p.bump();
        return Err(err(ParseErrorKind::Syntax, q, alloc::format!("trailing {}", describe(&t))));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Num(f64),
    Vec3([f64; 3]),
    Tip(usize),
    Axis(usize),
    AddS,
    AddV,
    SubS,
    SubV,
    ScaleS(f64),
    ScaleV(f64),
    NegS,
    NegV,
    Norm,
    Dot,
    MeanS(usize),
    MeanV(usize),
}

fn compile(e: &Expr, ops: &mut Vec<Op>) {
    let vec = e.ty() == Ty::Vec3;
    match e {
        Expr::Num(v) => ops.push(Op::Num(*v)),
        Expr::Vec3(v) => ops.push(Op::Vec3(*v)),
        Expr::Tip(i) => ops.push(Op::Tip(*i)),
        Expr::Axis(a, k) => {
            compile(a, ops);
            ops.push(Op::Axis(*k));
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            compile(a, ops);
            compile(b, ops);
            ops.push(match (matches!(e, Expr::Add(..)), vec) {
                (true, false) => Op::AddS,
                (true, true) => Op::AddV,
                (false, false) => Op::SubS,
                (false, true) => Op::SubV,
            });
        }
        Expr::Scale(a, c) => {
            compile(a, ops);
            ops.push(if vec { Op::ScaleV(*c) } else { Op::ScaleS(*c) });
        }
        Expr::Neg(a) => {
            compile(a, ops);
            ops.push(if vec { Op::NegV } else { Op::NegS });
        }
        Expr::Norm(a) => {
            compile(a, ops);
            ops.push(Op::Norm);
        }
        Expr::Dot(a, b) => {
            compile(a, ops);
            compile(b, ops);
            ops.push(Op::Dot);
        }
        Expr::Mean(xs) => {
            for x in xs {
                compile(x, ops);
            }
            ops.push(if vec { Op::MeanV(xs.len()) } else { Op::MeanS(xs.len()) });
        }
    }
}

fn max_depth(ops: &[Op]) -> usize {
    let (mut d, mut m) = (0isize, 0isize);
    for op in ops {
        d += match op {
            Op::Num(_) => 1,
            Op::Vec3(_) | Op::Tip(_) => 3,
            Op::Axis(_) => -2,
            Op::AddS | Op::SubS => -1,
            Op::AddV | Op::SubV => -3,
            Op::ScaleS(_) | Op::ScaleV(_) | Op::NegS | Op::NegV => 0,
            Op::Norm => -2,
            Op::Dot => -5,
            Op::MeanS(n) => 1 - *n as isize,
            Op::MeanV(n) => 3 - 3 * *n as isize,
        };
        m = m.max(d);
    }
    m as usize
}

/// A type-checked scalar cost over the fingertips of one hand.
#[derive(Debug, Clone, PartialEq)]
pub struct CostProgram {
    pub expr: Expr,
    pub source: String,
    pub num_fingers: usize,
    pub finger_names: Vec<String>,
    ops: Vec<Op>,
    depth: usize,
}

impl CostProgram {
    pub fn parse(src: &str, num_fingers: usize, finger_names: &[String]) -> core::result::Result<Self, ParseError> {
        let expr = parse_expr(src, num_fingers, finger_names)?;
        if expr.ty() != Ty::Scalar {
            return Err(err(ParseErrorKind::TypeMismatch, 0, "a cost must be a scalar".into()));
        }
        let mut ops = Vec::new();
        compile(&expr, &mut ops);
        Ok(Self {
            depth: max_depth(&ops),
            expr,
            source: src.into(),
            num_fingers,
            finger_names: finger_names.to_vec(),
            ops,
        })
    }

    pub fn for_hand(src: &str, hand: &HandConfig) -> core::result::Result<Self, ParseError> {
        Self::parse(src, hand.num_fingers, &hand.finger_names)
    }

    /// Canonical source text; parsing it yields the same expression.
    pub fn canonical(&self) -> String {
        self.expr.to_string()
    }

    /// Cost of stacked fingertip positions (`3 x num_fingers`).
    pub fn eval(&self, tips: &[f64]) -> Result<f64> {
        if tips.len() != 3 * self.num_fingers {
            return Err(Error::Shape(alloc::format!("{} values for {} fingertips", tips.len(), self.num_fingers)));
        }
        if !math::all_finite(tips) {
            return Err(Error::Numeric("fingertip positions are not finite".into()));
        }
        let v = self.eval_unchecked(tips);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(alloc::format!("cost evaluated to {v}")))
        }
    }

    fn eval_unchecked(&self, tips: &[f64]) -> f64 {
        let mut st: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            let n = st.len();
            match *op {
                Op::Num(v) => st.push(v),
                Op::Vec3(v) => st.extend_from_slice(&v),
                Op::Tip(i) => st.extend_from_slice(&tips[3 * i..3 * i + 3]),
                Op::Axis(k) => {
                    let v = st[n - 3 + k];
                    st.truncate(n - 3);
                    st.push(v);
                }
                Op::AddS => {
                    let b = st.pop().unwrap_or(0.0);
                    st[n - 2] += b;
                }
                Op::SubS => {
                    let b = st.pop().unwrap_or(0.0);
                    st[n - 2] -= b;
                }
                Op::AddV | Op::SubV => {
                    let sign = if *op == Op::AddV { 1.0 } else { -1.0 };
                    for k in 0..3 {
                        st[n - 6 + k] += sign * st[n - 3 + k];
                    }
                    st.truncate(n - 3);
                }
                Op::ScaleS(c) => st[n - 1] *= c,
                Op::ScaleV(c) => st[n - 3..].iter_mut().for_each(|v| *v *= c),
                Op::NegS => st[n - 1] = -st[n - 1],
                Op::NegV => st[n - 3..].iter_mut().for_each(|v| *v = -*v),
                Op::Norm => {
                    let v = math::norm(&st[n - 3..]);
                    st.truncate(n - 3);
                    st.push(v);
                }
                Op::Dot => {
                    let v = math::dot(&st[n - 6..n - 3], &st[n - 3..]);
                    st.truncate(n - 6);
                    st.push(v);
                }
                Op::MeanS(m) => {
                    let v = st[n - m..].iter().sum::<f64>() / m as f64;
                    st.truncate(n - m);
                    st.push(v);
                }
                Op::MeanV(m) => {
                    let mut v = [0.0; 3];
                    for c in st[n - 3 * m..].chunks_exact(3) {
                        for k in 0..3 {
                            v[k] += c[k];
                        }
                    }
                    st.truncate(n - 3 * m);
                    st.extend(v.iter().map(|x| x / m as f64));
                }
            }
        }
        st[0]
    }
}

/// Costs the final predicted state of a trajectory; failures cost NaN.
impl TrajectoryCost for CostProgram {
    fn cost(&self, states: &[f64], _actions: &[f64]) -> f64 {
        let h = 3 * self.num_fingers;
        if states.len() < h {
            return f64::NAN;
        }
        self.eval(&states[states.len() - h..]).unwrap_or(f64::NAN)
    }
}

/// Built-in gesture exemplars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exemplar {
    /// Thumb and index tips touch, the remaining fingers extend.
    Ok,
    ThumbUp,
    Scissors,
    RockAndRoll,
    Call,
}

impl Exemplar {
    pub const ALL: [Exemplar; 5] = [Exemplar::Ok, Exemplar::ThumbUp, Exemplar::Scissors, Exemplar::RockAndRoll, Exemplar::Call];

    pub fn name(self) -> &'static str {
        match self {
            Exemplar::Ok => "ok",
            Exemplar::ThumbUp => "thumb_up",
            Exemplar::Scissors => "scissors",
            Exemplar::RockAndRoll => "rock_and_roll",
            Exemplar::Call => "call",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Exemplar::Ok => "OK sign: thumb and index fingertips touch, other fingers straight",
            Exemplar::ThumbUp => "thumbs up: thumb straight, every other finger curled",
            Exemplar::Scissors => "scissors: index and middle straight, the rest curled",
            Exemplar::RockAndRoll => "rock and roll: index and little finger straight, the rest curled",
            Exemplar::Call => "call me: thumb and little finger straight, the rest curled",
        }
    }

    /// Straight fingers by position; `None` means the pinch gesture.
    fn straight(self, n: usize) -> Option<Vec<usize>> {
        let last = n - 1;
        let mut v = match self {
            Exemplar::Ok => return None,
            Exemplar::ThumbUp => vec![0],
            Exemplar::Scissors => vec![1, 2.min(last)],
            Exemplar::RockAndRoll => vec![1, last],
            Exemplar::Call => vec![0, last],
        };
        v.dedup();
        Some(v)
    }

    /// Source text of this exemplar for `hand`. Finger 0 is the thumb and the
    /// last finger plays the little finger.
    pub fn source(self, hand: &HandConfig) -> Result<String> {
        let n = hand.num_fingers;
        if n < 2 || hand.extension_dirs.len() != n {
            return Err(config_err!("gesture exemplars need at least two fingers with extension directions"));
        }
        let ext = |i: usize| {
            let mut s = String::from("dot(tip(");
            s.push_str(&i.to_string());
            s.push_str("), ");
            Expr::Vec3(hand.extension_dirs[i]).write_at(&mut s, 0);
            s.push(')');
            s
        };
        let mut src = String::new();
        match self.straight(n) {
            None => {
                src.push_str("norm(tip(0) - tip(1))");
                for i in 2..n {
                    src.push_str(" - ");
                    src.push_str(&ext(i));
                }
            }
            Some(straight) => {
                for i in 0..n {
                    let term = ext(i);
                    if src.is_empty() {
                        if straight.contains(&i) {
                            src.push_str("neg(");
                            src.push_str(&term);
                            src.push(')');
                        } else {
                            src.push_str(&term);
                        }
                    } else {
                        src.push_str(if straight.contains(&i) { " - " } else { " + " });
                        src.push_str(&term);
                    }
                }
            }
        }
        Ok(src)
    }

    pub fn program(self, hand: &HandConfig) -> Result<CostProgram> {
        let src = self.source(hand)?;
        CostProgram::for_hand(&src, hand).map_err(Error::Parse)
    }
}

/// Planning knobs for single-action gesture synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GestureBudget {
    /// Forward-model rollouts used to propose a target for the inverse model.
    pub proposals: usize,
    pub cem: PlanBudget,
}

impl Default for GestureBudget {
    fn default() -> Self {
        Self {
            proposals: 400,
            cem: PlanBudget::quasi_static(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureResult {
    pub action: Vec<f64>,
    /// Fingertips after executing `action` in the simulator.
    pub tips: Vec<f64>,
    /// Program value at `tips`.
    pub cost: f64,
    /// Program value at the forward model's prediction.
    pub predicted_cost: f64,
    pub samples: usize,
}

/// Plans one quasi-static action that minimises `program` and executes it
/// from the rest pose. The best of `proposals` random forward predictions
/// is the target handed to the inverse model, whose Gaussian seeds CEM.
pub fn generate_gesture(
    hand: &HandConfig,
    forward: &ForwardModel,
    inverse: &InverseModel,
    program: &CostProgram,
    budget: &GestureBudget,
    seed: u64,
) -> Result<GestureResult> {
    if program.num_fingers != hand.num_fingers {
        return Err(Error::Shape(alloc::format!(
            "program for {} fingers on a {}-finger hand",
            program.num_fingers,
            hand.num_fingers
        )));
    }
    let mut cem = budget.cem;
    cem.horizon = 1;
    let start = hand.rest_state();
    let proposal = plan::random_shoot(forward, &start.tips, 1, program, budget.proposals.max(1), rng::derive_seed(seed, 0))?;
    let target = forward.predict(&start.tips, &proposal.actions)?;
    let refined = plan::bidirectional_plan(forward, inverse, &start.tips, &target, program, &cem, rng::derive_seed(seed, 1))?;
    let action = if refined.cost <= proposal.cost { refined.actions } else { proposal.actions };
    let predicted = forward.predict(&start.tips, &action)?;
    let next = hand.env_step(&start, &action, Setting::QuasiStatic)?;
    Ok(GestureResult {
        cost: program.eval(&next.tips)?,
        predicted_cost: program.eval(&predicted)?,
        tips: next.tips,
        action,
        samples: proposal.samples + refined.samples,
    })
}
