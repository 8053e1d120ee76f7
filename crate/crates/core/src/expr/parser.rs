//! Recursive-descent parser.
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := '-' unary | power
//! power    := primary ('^' exponent)?
//! primary  := number | variable | '(' expr ')' | ('exp' | 'log') primary
//! exponent := '-'? number | '(' '-'? number ')'
//! ```
//!
//! Precedence is pow > unary minus > mul/div > add/sub, and binary operators
//! of equal precedence associate to the left.

use super::{ActionId, Expr, ExprError};

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src: text, bytes: text.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.syntax(format!("unexpected `{}`", p.peek_char())));
    }
    Ok(e)
}

/// Parses a bare `x<i>_<j>` token with 1-based indices.
pub(crate) fn parse_action_token(tok: &str) -> Option<ActionId> {
    let rest = tok.strip_prefix('x')?;
    let (i, j) = rest.split_once('_')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(i) || !digits(j) {
        return None;
    }
    let (i, j): (usize, usize) = (i.parse().ok()?, j.parse().ok()?);
    (i >= 1 && j >= 1).then_some(ActionId::new(i, j))
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax { offset: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn peek_char(&self) -> char {
        self.src[self.pos..].chars().next().unwrap_or('\0')
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ExprError> {
        if self.eat(b) {
            Ok(())
        } else if self.pos >= self.bytes.len() {
            Err(self.syntax(format!("expected `{}`, found end of input", b as char)))
        } else {
            Err(self.syntax(format!("expected `{}`, found `{}`", b as char, self.peek_char())))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            })
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let e = self.exponent()?;
            if self.peek() == Some(b'^') {
                return Err(self.syntax("chained `^` is ambiguous; add parentheses"));
            }
            Ok(Expr::Pow(Box::new(base), e))
        } else {
            Ok(base)
        }
    }

    fn exponent(&mut self) -> Result<f64, ExprError> {
        let paren = self.eat(b'(');
        let negative = self.eat(b'-');
        self.skip_ws();
        if !matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit() || *b == b'.') {
            return Err(self.syntax("exponent must be a numeric literal"));
        }
        let v = self.number()?;
        if paren {
            self.expect(b')')?;
        }
        Ok(if negative { -v } else { v })
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => Ok(Expr::Const(self.number()?)),
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.identifier(),
            Some(_) => Err(self.syntax(format!("unexpected `{}`", self.peek_char()))),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let tok = &self.src[start..self.pos];
        match tok {
            "exp" => Ok(Expr::Exp(Box::new(self.primary()?))),
            "log" => Ok(Expr::Log(Box::new(self.primary()?))),
            _ => {
                if let Some(id) = parse_action_token(tok) {
                    Ok(Expr::Var(id))
                } else if self.peek() == Some(b'(') {
                    Err(ExprError::UnknownFunction { name: tok.to_string(), offset: start })
                } else {
                    Err(ExprError::MalformedVariable { token: tok.to_string(), offset: start })
                }
            }
        }
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // `2exp(..)` and friends: the `e` is not part of the literal
                self.pos = mark;
            }
        }
        self.src[start..self.pos]
            .parse()
            .map_err(|_| ExprError::Syntax { offset: start, message: "malformed number".into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Box<Expr> {
        Box::new(Expr::Const(v))
    }

    fn v(i: usize, j: usize) -> Box<Expr> {
        Box::new(Expr::var(i, j))
    }

    #[test]
    fn literal_zero() {
        assert_eq!(parse("0").unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn squared_difference_tree() {
        let expected = Expr::Pow(Box::new(Expr::Sub(v(1, 1), Box::new(Expr::Mul(c(0.5), v(3, 1))))), 2.0);
        assert_eq!(parse("(x1_1 - 0.5*x3_1)^2").unwrap(), expected);
    }

    #[test]
    fn congestion_cost_parses() {
        let e = parse("10/(20 - x2_1 - x2_2) - 10*log(x2_1 + 1)").unwrap();
        let vars: Vec<_> = e.free_variables().into_iter().collect();
        assert_eq!(vars, vec![ActionId::new(2, 1), ActionId::new(2, 2)]);
    }

    #[test]
    fn precedence_and_associativity() {
        // pow binds tighter than unary minus
        assert_eq!(parse("-x1_1^2").unwrap(), Expr::Neg(Box::new(Expr::Pow(v(1, 1), 2.0))));
        // left associative subtraction and division
        assert_eq!(
            parse("x1_1 - x1_2 - x1_3").unwrap(),
            Expr::Sub(Box::new(Expr::Sub(v(1, 1), v(1, 2))), v(1, 3))
        );
        assert_eq!(
            parse("x1_1 / x1_2 / x1_3").unwrap(),
            Expr::Div(Box::new(Expr::Div(v(1, 1), v(1, 2))), v(1, 3))
        );
        assert_eq!(
            parse("1 + 2*x1_1").unwrap(),
            Expr::Add(c(1.0), Box::new(Expr::Mul(c(2.0), v(1, 1))))
        );
    }

    #[test]
    fn numbers_with_exponents() {
        assert_eq!(parse("1.5e-3").unwrap(), Expr::Const(1.5e-3));
        assert_eq!(parse(".25").unwrap(), Expr::Const(0.25));
        assert_eq!(parse("x1_1^(-2)").unwrap(), Expr::Pow(v(1, 1), -2.0));
        assert_eq!(parse("x1_1^0.5").unwrap(), Expr::Pow(v(1, 1), 0.5));
    }

    #[test]
    fn functions_take_a_primary() {
        assert_eq!(parse("exp(x3_1)^2").unwrap(), Expr::Pow(Box::new(Expr::Exp(v(3, 1))), 2.0));
        assert_eq!(parse("log x1_1").unwrap(), Expr::Log(v(1, 1)));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(
            parse("x1_1 + sin(x1_1)").unwrap_err(),
            ExprError::UnknownFunction { name: "sin".into(), offset: 7 }
        );
        assert_eq!(
            parse("x1 + 1").unwrap_err(),
            ExprError::MalformedVariable { token: "x1".into(), offset: 0 }
        );
        assert_eq!(
            parse("x0_1").unwrap_err(),
            ExprError::MalformedVariable { token: "x0_1".into(), offset: 0 }
        );
        assert!(matches!(parse("(x1_1 + 2"), Err(ExprError::Syntax { offset: 9, .. })));
        assert!(matches!(parse("x1_1 ^ x1_2"), Err(ExprError::Syntax { offset: 7, .. })));
        assert!(matches!(parse("x1_1 2"), Err(ExprError::Syntax { offset: 5, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { offset: 0, .. })));
        assert!(matches!(parse("x1_1^2^3"), Err(ExprError::Syntax { .. })));
    }
}
