use thiserror::Error;

use super::{BinOp, Expr, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdentifier { offset, .. } => {
                *offset
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut k = i + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        i = k;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            return Ok(Expr::binary(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(v) = Var::from_name(&name) {
                    return Ok(Expr::Var(v));
                }
                let unary = match name.as_str() {
                    "abs" => Some(UnaryOp::Abs),
                    "exp" => Some(UnaryOp::Exp),
                    "log" => Some(UnaryOp::Log),
                    "sq" => Some(UnaryOp::Sq),
                    _ => None,
                };
                let binary = match name.as_str() {
                    "min" => Some(BinOp::Min),
                    "max" => Some(BinOp::Max),
                    _ => None,
                };
                if unary.is_none() && binary.is_none() {
                    return Err(ParseError::UnknownIdentifier { offset: at, name });
                }
                self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                let first = self.expr()?;
                let e = if let Some(op) = unary {
                    Expr::unary(op, first)
                } else {
                    self.expect(Tok::Comma, &format!("`,` in `{name}`"))?;
                    let second = self.expr()?;
                    Expr::binary(binary.unwrap(), first, second)
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::End => Err(ParseError::Syntax {
                offset: at,
                message: "unexpected end of input".into(),
            }),
            other => Err(ParseError::Syntax {
                offset: at,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// Parse an expression; errors carry the byte offset of the offending token.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: f64) -> Expr {
        Expr::Num(v)
    }

    fn v(x: Var) -> Expr {
        Expr::Var(x)
    }

    #[test]
    fn literal() {
        assert_eq!(parse("0").unwrap(), n(0.0));
        assert_eq!(parse("  1.5e-3 ").unwrap(), n(1.5e-3));
    }

    #[test]
    fn precedence_of_driver_example() {
        let want = Expr::binary(
            BinOp::Add,
            Expr::binary(BinOp::Mul, n(0.5), v(Var::M1)),
            Expr::binary(BinOp::Mul, n(0.5), Expr::unary(UnaryOp::Sq, v(Var::Z))),
        );
        assert_eq!(parse("0.5*m1 + 0.5*sq(z)").unwrap(), want);
        assert_eq!(parse("0.5 *m1+0.5* sq ( z )").unwrap(), want);
    }

    #[test]
    fn max_with_two_children() {
        let want = Expr::binary(
            BinOp::Max,
            Expr::binary(BinOp::Sub, n(1.0), v(Var::T)),
            v(Var::Y),
        );
        assert_eq!(parse("max(1 - t, y)").unwrap(), want);
    }

    #[test]
    fn power_binds_tighter_than_negation() {
        let e = parse("-y^2").unwrap();
        assert_eq!(
            e,
            Expr::unary(UnaryOp::Neg, Expr::binary(BinOp::Pow, v(Var::Y), n(2.0)))
        );
        let r = parse("2^3^2").unwrap();
        assert_eq!(
            r,
            Expr::binary(BinOp::Pow, n(2.0), Expr::binary(BinOp::Pow, n(3.0), n(2.0)))
        );
        assert_eq!(
            parse("y^-1").unwrap(),
            Expr::binary(BinOp::Pow, v(Var::Y), Expr::unary(UnaryOp::Neg, n(1.0)))
        );
    }

    #[test]
    fn left_associative_arithmetic() {
        assert_eq!(
            parse("t - y - z").unwrap(),
            Expr::binary(
                BinOp::Sub,
                Expr::binary(BinOp::Sub, v(Var::T), v(Var::Y)),
                v(Var::Z)
            )
        );
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(
            parse("y + foo").unwrap_err(),
            ParseError::UnknownIdentifier {
                offset: 4,
                name: "foo".into()
            }
        );
        assert_eq!(parse("y +").unwrap_err().offset(), 3);
        assert_eq!(parse("(y").unwrap_err().offset(), 2);
        assert_eq!(parse("y $ 2").unwrap_err().offset(), 2);
        assert_eq!(parse("max(y)").unwrap_err().offset(), 5);
        assert_eq!(parse("y y").unwrap_err().offset(), 2);
        assert!(parse("").is_err());
        assert!(parse("1..2").is_err());
    }
}
