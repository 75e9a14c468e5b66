//! Arithmetic expressions for inline coefficients.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus and associates to the right, so
//! `-x^2^3` is `-(x^(2^3))`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

const MAX_LEN: usize = 4096;
const MAX_DEPTH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("expression longer than {MAX_LEN} bytes")]
    TooLong,
    #[error("expression nested deeper than {MAX_DEPTH} levels")]
    TooDeep,
    #[error("unexpected character {0:?} at byte {1}")]
    BadChar(char, usize),
    #[error("malformed number {0:?}")]
    BadNumber(String),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("{name} takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("expected {expected} at byte {at}")]
    Expected { expected: &'static str, at: usize },
    #[error("trailing input at byte {0}")]
    Trailing(usize),
    #[error("variable {0} is not available here")]
    Unavailable(Var),
}

/// Quantities an expression may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// Current time.
    T,
    /// Endpoint coordinate, zero-based.
    X(usize),
    /// Running maximum `||γ_t||_0`.
    Max,
    /// Running integral `Σ_{j<k} γ^1(t_j) dt`.
    Int,
    /// Control coordinate, zero-based.
    U(usize),
    /// BSDE value.
    Y,
    /// BSDE integrand coordinate, zero-based.
    Z(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Max => write!(f, "m"),
            Var::Int => write!(f, "int"),
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::Y => write!(f, "y"),
            Var::Z(i) => write!(f, "z{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Values an expression is evaluated against. Slices shorter than an index
/// the expression reads are a caller bug; [`Expr::check`] rules them out.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub max: f64,
    pub int: f64,
    pub u: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
}

/// Parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        if source.len() > MAX_LEN {
            return Err(ExprError::TooLong);
        }
        let tokens = lex(source)?;
        let mut parser = Parser { tokens: &tokens, pos: 0, depth: 0, len: source.len() };
        let root = parser.expr()?;
        if parser.pos < tokens.len() {
            return Err(ExprError::Trailing(tokens[parser.pos].at));
        }
        Ok(Expr { source: source.to_string(), root })
    }

    pub fn constant(c: f64) -> Expr {
        Expr { source: format!("{c:?}"), root: Node::Num(c) }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        collect(&self.root, &mut out);
        out
    }

    /// Reject variables outside `allowed`, and coordinate indices at or
    /// beyond the given dimensions.
    pub fn check(&self, allowed: &Allowed) -> Result<(), ExprError> {
        for v in self.variables() {
            let ok = match v {
                Var::T => true,
                Var::X(i) => i < allowed.dim,
                Var::Max | Var::Int => allowed.history,
                Var::U(i) => i < allowed.control_dim,
                Var::Y => allowed.y,
                Var::Z(i) => i < allowed.z_dim,
            };
            if !ok {
                return Err(ExprError::Unavailable(v));
            }
        }
        Ok(())
    }

    pub fn eval(&self, env: &Env<'_>) -> f64 {
        eval(&self.root, env)
    }
}

/// What a coefficient slot may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allowed {
    pub dim: usize,
    pub history: bool,
    pub control_dim: usize,
    pub y: bool,
    pub z_dim: usize,
}

fn collect(n: &Node, out: &mut BTreeSet<Var>) {
    match n {
        Node::Num(_) => {}
        Node::Var(v) => {
            out.insert(*v);
        }
        Node::Neg(a) => collect(a, out),
        Node::Bin(_, a, b) => {
            collect(a, out);
            collect(b, out);
        }
        Node::Call(_, args) => args.iter().for_each(|a| collect(a, out)),
    }
}

fn eval(n: &Node, env: &Env<'_>) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(v) => match *v {
            Var::T => env.t,
            Var::X(i) => env.x[i],
            Var::Max => env.max,
            Var::Int => env.int,
            Var::U(i) => env.u[i],
            Var::Y => env.y,
            Var::Z(i) => env.z[i],
        },
        Node::Neg(a) => -eval(a, env),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, env), eval(b, env));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => pow(a, b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], env);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Tanh => a.tanh(),
                Func::Min => a.min(eval(&args[1], env)),
                Func::Max => a.max(eval(&args[1], env)),
            }
        }
    }
}

// integer exponents go through powi so that x^2 of a negative base stays real
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Sym(char),
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    tok: Tok,
    at: usize,
}

fn lex(s: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == b'.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mark = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = mark;
                }
            }
            let text = &s[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::BadNumber(text.to_string()))?;
            out.push(Token { tok: Tok::Num(v), at: start });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Name(s[start..i].to_string()), at: start });
        } else if b"+-*/^(),".contains(&c) {
            out.push(Token { tok: Tok::Sym(c as char), at: i });
            i += 1;
        } else {
            let ch = s[i..].chars().next().unwrap_or('?');
            return Err(ExprError::BadChar(ch, i));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    depth: usize,
    len: usize,
}

impl Parser<'_> {
    fn at(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.len, |t| t.at)
    }

    fn peek_sym(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token { tok: Tok::Sym(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek_sym() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ExprError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                break;
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        self.enter()?;
        let node = if self.eat('-') { Node::Neg(Box::new(self.unary()?)) } else { self.power()? };
        self.depth -= 1;
        Ok(node)
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let at = self.at();
        let Some(token) = self.tokens.get(self.pos).cloned() else {
            return Err(ExprError::Expected { expected: "a value", at });
        };
        self.pos += 1;
        match token.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Sym('(') => {
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(ExprError::Expected { expected: "')'", at: self.at() });
                }
                Ok(inner)
            }
            Tok::Sym(_) => Err(ExprError::Expected { expected: "a value", at }),
            Tok::Name(name) => {
                if self.eat('(') {
                    let f = Func::lookup(&name).ok_or_else(|| ExprError::UnknownName(name.clone()))?;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(')') {
                        return Err(ExprError::Expected { expected: "')'", at: self.at() });
                    }
                    if args.len() != f.arity() {
                        return Err(ExprError::Arity { name, expected: f.arity(), got: args.len() });
                    }
                    Ok(Node::Call(f, args))
                } else {
                    name_to_node(&name)
                }
            }
        }
    }
}

fn name_to_node(name: &str) -> Result<Node, ExprError> {
    let indexed = |prefix: &str| -> Option<usize> {
        let rest = name.strip_prefix(prefix)?;
        match rest.parse::<usize>() {
            Ok(i) if (1..=64).contains(&i) && !rest.starts_with('0') => Some(i - 1),
            _ => None,
        }
    };
    let var = match name {
        "t" => Var::T,
        "x" => Var::X(0),
        "m" => Var::Max,
        "int" => Var::Int,
        "u" => Var::U(0),
        "y" => Var::Y,
        "z" => Var::Z(0),
        "pi" => return Ok(Node::Num(std::f64::consts::PI)),
        _ => {
            if let Some(i) = indexed("x") {
                Var::X(i)
            } else if let Some(i) = indexed("u") {
                Var::U(i)
            } else if let Some(i) = indexed("z") {
                Var::Z(i)
            } else {
                return Err(ExprError::UnknownName(name.to_string()));
            }
        }
    };
    Ok(Node::Var(var))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_str(s: &str, x: f64) -> f64 {
        Expr::parse(s).unwrap().eval(&Env { t: 0.5, x: &[x, 2.0], max: 3.0, int: 0.25, u: &[0.1], y: 1.5, z: &[-1.0], })
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_str("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(eval_str("-x^2", 3.0), -9.0);
        assert_eq!(eval_str("2^3^2", 0.0), 512.0);
        assert_eq!(eval_str("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(eval_str("2^-1", 0.0), 0.5);
        assert_eq!(eval_str("(1 - 2) - 3", 0.0), -4.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(eval_str("t + x2 + m + int + u + y + z1", 1.0), 0.5 + 2.0 + 3.0 + 0.25 + 0.1 + 1.5 - 1.0);
        assert_eq!(eval_str("max(x, 2) + min(-1, abs(-3))", 5.0), 4.0);
        assert!((eval_str("sqrt(exp(log(4)))", 0.0) - 2.0).abs() < 1e-15);
        assert_eq!(eval_str("(-2)^2", 0.0), 4.0);
        assert_eq!(eval_str("1.5e1 + 2E-1", 0.0), 15.2);
    }

    #[test]
    fn variable_set_and_check() {
        let e = Expr::parse("x2 * u + m").unwrap();
        let vars: Vec<Var> = e.variables().into_iter().collect();
        assert_eq!(vars, vec![Var::X(1), Var::Max, Var::U(0)]);
        let allowed = Allowed { dim: 2, history: false, control_dim: 1, y: false, z_dim: 0 };
        assert_eq!(e.check(&allowed), Err(ExprError::Unavailable(Var::Max)));
        let allowed = Allowed { dim: 1, history: true, control_dim: 1, y: false, z_dim: 0 };
        assert_eq!(e.check(&allowed), Err(ExprError::Unavailable(Var::X(1))));
    }

    #[test]
    fn errors() {
        assert!(matches!(Expr::parse(""), Err(ExprError::Expected { .. })));
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::Expected { .. })));
        assert!(matches!(Expr::parse("(1"), Err(ExprError::Expected { .. })));
        assert!(matches!(Expr::parse("1 2"), Err(ExprError::Trailing(2))));
        assert!(matches!(Expr::parse("foo"), Err(ExprError::UnknownName(_))));
        assert!(matches!(Expr::parse("x0"), Err(ExprError::UnknownName(_))));
        assert!(matches!(Expr::parse("sin(1, 2)"), Err(ExprError::Arity { .. })));
        assert!(matches!(Expr::parse("1 $ 2"), Err(ExprError::BadChar('$', 2))));
        assert!(matches!(Expr::parse("1..2"), Err(ExprError::BadNumber(_))));
        let deep = "(".repeat(200) + "1" + &")".repeat(200);
        assert_eq!(Expr::parse(&deep), Err(ExprError::TooDeep));
        let minus = "-".repeat(200) + "1";
        assert_eq!(Expr::parse(&minus), Err(ExprError::TooDeep));
    }
}
