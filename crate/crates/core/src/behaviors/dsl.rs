//! Endpoint-rule expression language: lexer, recursive-descent parser, printer and a
//! guarded evaluator.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := atom ("^" atom)?
//! atom   := number | ident | "-" atom | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! ```

use std::fmt;

use thiserror::Error;

/// Identifiers an endpoint rule may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    Y,
    H,
    V,
    A,
    T,
    Time,
    Dt,
    EgoX,
    EgoY,
    EgoH,
    EgoV,
    LaneW,
    CrossX,
    CrossY,
}

impl Var {
    pub const ALL: [Var; 15] = [
        Var::X,
        Var::Y,
        Var::H,
        Var::V,
        Var::A,
        Var::T,
        Var::Time,
        Var::Dt,
        Var::EgoX,
        Var::EgoY,
        Var::EgoH,
        Var::EgoV,
        Var::LaneW,
        Var::CrossX,
        Var::CrossY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::Y => "y",
            Var::H => "h",
            Var::V => "v",
            Var::A => "a",
            Var::T => "T",
            Var::Time => "t",
            Var::Dt => "dt",
            Var::EgoX => "ego_x",
            Var::EgoY => "ego_y",
            Var::EgoH => "ego_h",
            Var::EgoV => "ego_v",
            Var::LaneW => "lane_w",
            Var::CrossX => "cross_x",
            Var::CrossY => "cross_y",
        }
    }

    pub fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn describe(self) -> &'static str {
        match self {
            Var::X => "critical vehicle x position (m)",
            Var::Y => "critical vehicle y position (m)",
            Var::H => "critical vehicle heading (rad)",
            Var::V => "critical vehicle speed (m/s)",
            Var::A => "requested acceleration (m/s^2)",
            Var::T => "planning horizon (s)",
            Var::Time => "current scenario time (s)",
            Var::Dt => "simulation timestep (s)",
            Var::EgoX => "ego x position (m)",
            Var::EgoY => "ego y position (m)",
            Var::EgoH => "ego heading (rad)",
            Var::EgoV => "ego speed (m/s)",
            Var::LaneW => "lane width (m)",
            Var::CrossX => "x of the ego/critical path crossing (m)",
            Var::CrossY => "y of the ego/critical path crossing (m)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Abs,
    Min,
    Max,
    Clamp,
    Sqrt,
    Sign,
}

impl Func {
    pub const ALL: [Func; 9] =
        [Func::Sin, Func::Cos, Func::Tan, Func::Abs, Func::Min, Func::Max, Func::Clamp, Func::Sqrt, Func::Sign];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Clamp => 3,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at offset {offset} takes {expected} argument(s), got {found}")]
    Arity { name: String, offset: usize, expected: usize, found: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound identifier `{0}`")]
    Unbound(&'static str),
    #[error("division by a denominator of magnitude below 1e-12")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite intermediate result")]
    NonFinite,
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
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next_token(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || (c == b'.' && bytes.get(self.pos + 1).is_some_and(u8::is_ascii_digit)) {
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if bytes.get(self.pos) == Some(&b'.') {
                self.pos += 1;
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
            if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
                let mut p = self.pos + 1;
                if matches!(bytes.get(p), Some(b'+' | b'-')) {
                    p += 1;
                }
                if bytes.get(p).is_some_and(u8::is_ascii_digit) {
                    while p < bytes.len() && bytes[p].is_ascii_digit() {
                        p += 1;
                    }
                    self.pos = p;
                } else {
                    return Err(ParseError::Syntax { offset: p, message: "malformed exponent".into() });
                }
            }
            let text = &self.src[start..self.pos];
            let value: f64 = text
                .parse()
                .map_err(|_| ParseError::Syntax { offset: start, message: format!("malformed number `{text}`") })?;
            if !value.is_finite() {
                return Err(ParseError::Syntax { offset: start, message: format!("number `{text}` out of range") });
            }
            return Ok((Tok::Num(value), start));
        }
        // identifiers are [a-z_][a-z0-9_]*, plus the horizon symbol T
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            return Ok((Tok::Ident(self.src[start..self.pos].to_string()), start));
        }
        if matches!(c, b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' | b',') {
            self.pos += 1;
            return Ok((Tok::Sym(c as char), start));
        }
        let ch = self.src[start..].chars().next().unwrap();
        Err(ParseError::Syntax { offset: start, message: format!("unexpected character `{ch}`") })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut lexer = Lexer { src, pos: 0 };
        let (tok, offset) = lexer.next_token()?;
        Ok(Self { lexer, tok, offset })
    }

    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, offset) = self.lexer.next_token()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match &self.tok {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".to_string(),
        };
        ParseError::Syntax { offset: self.offset, message: format!("expected {wanted}, found {found}") }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.tok == Tok::Sym(c) {
            self.bump()
        } else {
            Err(self.unexpected(&format!("`{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.tok == Tok::Sym('^') {
            self.bump()?;
            let exp = self.atom()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(n) => {
                self.bump()?;
                Ok(Expr::Num(n))
            }
            Tok::Sym('-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.atom()?)))
            }
            Tok::Sym('(') => {
                self.bump()?;
                let inner = self.expr()?;
                self.expect_sym(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.bump()?;
                if self.tok == Tok::Sym('(') {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| ParseError::UnknownFunction { name: name.clone(), offset: at })?;
                    self.bump()?;
                    let mut args = vec![self.expr()?];
                    while self.tok == Tok::Sym(',') {
                        self.bump()?;
                        args.push(self.expr()?);
                    }
                    self.expect_sym(')')?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Arity { name, offset: at, expected: func.arity(), found: args.len() });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Var::from_name(&name).map(Expr::Var).ok_or(ParseError::UnknownIdentifier { name, offset: at })
                }
            }
            _ => Err(self.unexpected("a number, identifier, `-` or `(`")),
        }
    }
}

/// Parses one endpoint-rule expression.
pub fn parse_rule(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}

impl Expr {
    fn write_atom(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Binary(..) => write!(f, "({self})"),
            Expr::Num(n) if *n < 0.0 || n.is_sign_negative() => write!(f, "({self})"),
            _ => write!(f, "{self}"),
        }
    }

    /// Identifiers referenced anywhere in the tree.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }
}

/// Prints in the grammar above; compound operands are parenthesised so that parsing the
/// output reproduces the tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(n) => write!(f, "{n:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.write_atom(f)
            }
            Expr::Binary(op, l, r) => {
                l.write_atom(f)?;
                write!(f, " {} ", op.symbol())?;
                r.write_atom(f)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Env {
    values: [Option<f64>; Var::ALL.len()],
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: Var, value: f64) -> &mut Self {
        self.values[var as usize] = Some(value);
        self
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.set(var, value);
        self
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.values[var as usize]
    }

    /// Binds by textual name; unknown names are rejected.
    pub fn set_named(&mut self, name: &str, value: f64) -> Result<&mut Self, EvalError> {
        let var = Var::from_name(name).ok_or(EvalError::Domain(format!("`{name}` is not an environment variable")))?;
        Ok(self.set(var, value))
    }
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

/// Evaluates `expr`; every failure mode is a typed error, never NaN or infinity.
pub fn eval_expr(expr: &Expr, env: &Env) -> Result<f64, EvalError> {
    match expr {
        Expr::Num(n) => finite(*n),
        Expr::Var(v) => finite(env.get(*v).ok_or(EvalError::Unbound(v.name()))?),
        Expr::Neg(e) => Ok(-eval_expr(e, env)?),
        Expr::Binary(op, l, r) => {
            let a = eval_expr(l, env)?;
            let b = eval_expr(r, env)?;
            let value = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b.abs() < 1e-12 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Pow => {
                    if a < 0.0 && b.fract() != 0.0 {
                        return Err(EvalError::Domain(format!("negative base {a} with fractional exponent {b}")));
                    }
                    if a == 0.0 && b < 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a.powf(b)
                }
            };
            finite(value)
        }
        Expr::Call(func, args) => {
            let vals = args.iter().map(|a| eval_expr(a, env)).collect::<Result<Vec<_>, _>>()?;
            let value = match func {
                Func::Sin => vals[0].sin(),
                Func::Cos => vals[0].cos(),
                Func::Tan => vals[0].tan(),
                Func::Abs => vals[0].abs(),
                Func::Min => vals[0].min(vals[1]),
                Func::Max => vals[0].max(vals[1]),
                Func::Clamp => {
                    if vals[1] > vals[2] {
                        return Err(EvalError::Domain(format!("clamp bounds reversed: {} > {}", vals[1], vals[2])));
                    }
                    vals[0].clamp(vals[1], vals[2])
                }
                Func::Sqrt => {
                    if vals[0] < 0.0 {
                        return Err(EvalError::Domain(format!("sqrt of negative value {}", vals[0])));
                    }
                    vals[0].sqrt()
                }
                Func::Sign => {
                    if vals[0] > 0.0 {
                        1.0
                    } else if vals[0] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            finite(value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_str(text: &str, env: &Env) -> Result<f64, EvalError> {
        eval_expr(&parse_rule(text).unwrap(), env)
    }

    #[test]
    fn precedence_and_shape() {
        let e = parse_rule("x + v * cos(h) * T").unwrap();
        match &e {
            Expr::Binary(BinOp::Add, l, r) => {
                assert_eq!(**l, Expr::Var(Var::X));
                assert!(matches!(**r, Expr::Binary(BinOp::Mul, _, _)));
            }
            other => panic!("unexpected {other:?}"),
        }
        let env = Env::new().with(Var::X, 1.0).with(Var::V, 2.0).with(Var::H, 0.0).with(Var::T, 3.0);
        assert_eq!(eval_expr(&e, &env).unwrap(), 7.0);
    }

    #[test]
    fn incomplete_expression_reports_end_offset() {
        let err = parse_rule("x +").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 3, .. }), "{err:?}");
    }

    #[test]
    fn whitelist_errors() {
        assert_eq!(parse_rule("foo(x)").unwrap_err(), ParseError::UnknownFunction { name: "foo".into(), offset: 0 });
        assert_eq!(parse_rule("x + zz").unwrap_err(), ParseError::UnknownIdentifier { name: "zz".into(), offset: 4 });
        assert!(matches!(parse_rule("min(x)").unwrap_err(), ParseError::Arity { expected: 2, found: 1, .. }));
        assert!(matches!(parse_rule("sin").unwrap_err(), ParseError::UnknownIdentifier { .. }));
    }

    #[test]
    fn evaluation_examples() {
        let env = Env::new().with(Var::X, 1.0);
        assert_eq!(eval_str("x + 2", &env).unwrap(), 3.0);
        assert_eq!(eval_str("clamp(5, 0, 2)", &env).unwrap(), 2.0);
        let env = Env::new().with(Var::X, 0.0).with(Var::V, 10.0).with(Var::A, -5.0);
        assert_eq!(eval_str("x + v^2 / (2 * abs(a))", &env).unwrap(), 10.0);
        assert_eq!(eval_str("-2^2", &env).unwrap(), 4.0);
        assert!(matches!(parse_rule("2^3^1"), Err(ParseError::Syntax { offset: 3, .. })));
    }

    #[test]
    fn guards() {
        let env = Env::new().with(Var::X, 0.0);
        assert_eq!(eval_str("1 / x", &env), Err(EvalError::DivisionByZero));
        assert!(matches!(eval_str("sqrt(x - 1)", &env), Err(EvalError::Domain(_))));
        assert!(matches!(eval_str("(x - 2) ^ 0.5", &env), Err(EvalError::Domain(_))));
        assert_eq!(eval_str("10 ^ 400", &env), Err(EvalError::NonFinite));
        assert_eq!(eval_str("y", &env), Err(EvalError::Unbound("y")));
    }

    #[test]
    fn print_then_parse_is_identity() {
        for src in
            ["x + v * cos(h) * T", "-(x - y) ^ 2", "-x ^ 2", "clamp(a, -2, 3) / (1 + abs(a))", "1e-7 * 2.5e3", "((x))"]
        {
            let a = parse_rule(src).unwrap();
            let b = parse_rule(&a.to_string()).unwrap();
            assert_eq!(a, b, "{src} -> {a}");
        }
    }
}
