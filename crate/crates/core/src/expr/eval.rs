use thiserror::Error;

use super::{BinOp, Expr, UnaryOp, Var};

/// Values bound to the expression variables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalEnv {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub b: f64,
    pub m1: f64,
    pub am: f64,
}

impl EvalEnv {
    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::T => self.t,
            Var::Y => self.y,
            Var::Z => self.z,
            Var::B => self.b,
            Var::M1 => self.m1,
            Var::Am => self.am,
        }
    }

    pub fn set(&mut self, v: Var, value: f64) {
        match v {
            Var::T => self.t = value,
            Var::Y => self.y = value,
            Var::Z => self.z = value,
            Var::B => self.b = value,
            Var::M1 => self.m1 = value,
            Var::Am => self.am = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },
    #[error("non-finite variable `{0}` in evaluation environment")]
    NonFiniteInput(&'static str),
}

fn domain(e: &Expr, reason: impl Into<String>) -> EvalError {
    EvalError::Domain {
        expr: e.to_string(),
        reason: reason.into(),
    }
}

impl Expr {
    /// Evaluate in IEEE doubles. Any step that would produce NaN or an infinity is an error.
    pub fn eval(&self, env: &EvalEnv) -> Result<f64, EvalError> {
        for v in Var::ALL {
            if !env.get(v).is_finite() {
                return Err(EvalError::NonFiniteInput(v.name()));
            }
        }
        self.eval_unchecked(env)
    }

    fn eval_unchecked(&self, env: &EvalEnv) -> Result<f64, EvalError> {
        let out = match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => env.get(*v),
            Expr::Unary(op, a) => {
                let x = a.eval_unchecked(env)?;
                match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Abs => x.abs(),
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Log => {
                        if x <= 0.0 {
                            return Err(domain(self, format!("log of non-positive value {x}")));
                        }
                        x.ln()
                    }
                    UnaryOp::Sq => x * x,
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval_unchecked(env)?;
                let y = b.eval_unchecked(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(domain(self, "division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => x.powf(y),
                    BinOp::Min => x.min(y),
                    BinOp::Max => x.max(y),
                }
            }
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(domain(self, format!("result is {out}")))
        }
    }
}
