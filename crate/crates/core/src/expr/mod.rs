//! Expression language for drivers, obstacles and terminal payoffs.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | var | func '(' expr ')' | ('min' | 'max') '(' expr ',' expr ')' | '(' expr ')'
//! var     := 't' | 'y' | 'z' | 'b' | 'm1' | 'am'
//! func    := 'abs' | 'exp' | 'log' | 'sq'
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-x^2` is `-(x^2)`.
//! `m1` and `am` are the mean and absolute mean of the current marginal law.

mod eval;
mod parse;

use std::fmt;

use rand::Rng;

pub use eval::{EvalEnv, EvalError};
pub use parse::{parse, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    Y,
    Z,
    B,
    M1,
    Am,
}

impl Var {
    pub const ALL: [Var; 6] = [Var::T, Var::Y, Var::Z, Var::B, Var::M1, Var::Am];

    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::Y => "y",
            Var::Z => "z",
            Var::B => "b",
            Var::M1 => "m1",
            Var::Am => "am",
        }
    }

    pub fn from_name(s: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    /// Whether `v` occurs anywhere in the tree.
    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Unary(_, e) => e.uses(v),
            Expr::Binary(_, l, r) => l.uses(v) || r.uses(v),
        }
    }

    pub fn variables(&self) -> Vec<Var> {
        Var::ALL.into_iter().filter(|v| self.uses(*v)).collect()
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the minimal parentheses that make `parse` return the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                write_wrapped(f, e, e.precedence() < 3)
            }
            Expr::Unary(op, e) => {
                let name = match op {
                    UnaryOp::Abs => "abs",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sq => "sq",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({e})")
            }
            Expr::Binary(op @ (BinOp::Min | BinOp::Max), l, r) => {
                let name = if *op == BinOp::Min { "min" } else { "max" };
                write!(f, "{name}({l}, {r})")
            }
            Expr::Binary(BinOp::Pow, l, r) => {
                write_wrapped(f, l, l.precedence() <= 4)?;
                f.write_str("^")?;
                write_wrapped(f, r, r.precedence() < 3)
            }
            Expr::Binary(op, l, r) => {
                let (sym, prec) = match op {
                    BinOp::Add => (" + ", 1),
                    BinOp::Sub => (" - ", 1),
                    BinOp::Mul => (" * ", 2),
                    BinOp::Div => (" / ", 2),
                    _ => unreachable!(),
                };
                write_wrapped(f, l, l.precedence() < prec)?;
                f.write_str(sym)?;
                write_wrapped(f, r, r.precedence() <= prec)
            }
        }
    }
}

/// Random well-formed expression of at most `depth` operator levels.
///
/// Literals are nonnegative, since a leading minus prints as negation.
pub fn random_expr<R: Rng>(rng: &mut R, depth: u32) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.5) {
            let v: f64 = match rng.random_range(0..3) {
                0 => rng.random_range(0..100) as f64,
                1 => rng.random::<f64>() * 10.0,
                _ => rng.random::<f64>() * 1e-7,
            };
            Expr::Num(v)
        } else {
            Expr::Var(Var::ALL[rng.random_range(0..6)])
        };
    }
    let d = depth - 1;
    match rng.random_range(0..12) {
        0 => Expr::unary(UnaryOp::Neg, random_expr(rng, d)),
        1 => Expr::unary(UnaryOp::Abs, random_expr(rng, d)),
        2 => Expr::unary(UnaryOp::Exp, random_expr(rng, d)),
        3 => Expr::unary(UnaryOp::Log, random_expr(rng, d)),
        4 => Expr::unary(UnaryOp::Sq, random_expr(rng, d)),
        k => {
            let op = [
                BinOp::Add,
                BinOp::Sub,
                BinOp::Mul,
                BinOp::Div,
                BinOp::Pow,
                BinOp::Min,
                BinOp::Max,
            ][k - 5];
            Expr::binary(op, random_expr(rng, d), random_expr(rng, d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thousand_seeded_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(20240611);
        for _ in 0..1000 {
            let e = random_expr(&mut rng, 6);
            let printed = e.to_string();
            let back = parse(&printed).unwrap_or_else(|err| panic!("{printed}: {err}"));
            assert_eq!(back, e, "{printed}");
        }
    }

    #[test]
    fn printing_examples() {
        let e = parse("0.5*m1 + 0.5*sq(z)").unwrap();
        assert_eq!(e.to_string(), "0.5 * m1 + 0.5 * sq(z)");
        assert_eq!(parse("-(y)^2").unwrap().to_string(), "-y^2");
        assert_eq!(parse("(-y)^2").unwrap().to_string(), "(-y)^2");
        assert_eq!(parse("t - (b - z)").unwrap().to_string(), "t - (b - z)");
        assert_eq!(parse("(t - b) - z").unwrap().to_string(), "t - b - z");
        assert_eq!(parse("2^3^2").unwrap().to_string(), "2^3^2");
        assert_eq!(parse("(2^3)^2").unwrap().to_string(), "(2^3)^2");
    }

    #[test]
    fn variable_usage() {
        let e = parse("max(1 - t, y) + 0*am").unwrap();
        assert!(e.uses(Var::T) && e.uses(Var::Y) && e.uses(Var::Am));
        assert!(!e.uses(Var::Z));
        assert_eq!(e.variables(), vec![Var::T, Var::Y, Var::Am]);
    }
}
