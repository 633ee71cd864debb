//! Text syntax for formulas.
//!
//! ```text
//! formula   := or
//! or        := and ("||" and)*
//! and       := until ("&&" until)*
//! until     := unary ("U" interval? unary)?
//! unary     := "!" unary | "G" interval? unary | "F" interval? unary | atom
//! atom      := "true" | "(" formula ")" | predicate
//! predicate := feature (("+" | "-") number)? (">=" | "<=") number
//! feature   := "sig(" name ")" | "coeff(" name ")"
//! interval  := "[" number "," number "]"
//! ```
//!
//! `G`, `F` and `U` without an interval run to the end of the signal.
//! Interval bounds are in the signal's time units. A constant offset on a
//! feature is folded into the comparison threshold, so
//! `G[0,420](sig(G) - 70 >= 0)` equals `G[0,420](sig(G) >= 70)`.
//! Coefficient names may themselves contain parentheses
//! (e.g. `coeff(a(G,i_s))`); the name runs to the matching close paren.

use std::fmt;

use super::{Direction, Feature, Interval, StlError, StlFormula};

pub fn parse_formula(text: &str) -> Result<StlFormula, StlError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let phi = p.or_expr()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(p.error("unexpected trailing input"));
    }
    phi.validate()?;
    Ok(phi)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> StlError {
        StlError::Parse {
            at: self.pos,
            message: message.to_string(),
        }
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

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.bytes[self.pos..].starts_with(token.as_bytes()) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), StlError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{token}`")))
        }
    }

    fn or_expr(&mut self) -> Result<StlFormula, StlError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(b'|') {
            self.expect("||")?;
            let rhs = self.and_expr()?;
            lhs = StlFormula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<StlFormula, StlError> {
        let mut lhs = self.until_expr()?;
        while self.peek() == Some(b'&') {
            self.expect("&&")?;
            let rhs = self.until_expr()?;
            lhs = StlFormula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn until_expr(&mut self) -> Result<StlFormula, StlError> {
        let lhs = self.unary()?;
        self.skip_ws();
        // `U` only counts as the operator when not the head of an identifier
        if self.bytes.get(self.pos) == Some(&b'U') {
            self.pos += 1;
            let interval = self.optional_interval()?;
            let rhs = self.unary()?;
            return Ok(StlFormula::until(interval, lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<StlFormula, StlError> {
        self.skip_ws();
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                Ok(StlFormula::not(self.unary()?))
            }
            Some(b'G') => {
                self.pos += 1;
                let i = self.optional_interval()?;
                Ok(StlFormula::globally(i, self.unary()?))
            }
            Some(b'F') => {
                self.pos += 1;
                let i = self.optional_interval()?;
                Ok(StlFormula::eventually(i, self.unary()?))
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<StlFormula, StlError> {
        if self.eat("true") {
            return Ok(StlFormula::True);
        }
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let phi = self.or_expr()?;
            self.expect(")")?;
            return Ok(phi);
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<StlFormula, StlError> {
        let feature = if self.eat("sig(") {
            Feature::SignalValue(self.balanced_name()?)
        } else if self.eat("coeff(") {
            Feature::CoefficientValue(self.balanced_name()?)
        } else {
            return Err(self.error("expected a formula or predicate"));
        };
        let mut offset = 0.0;
        match self.peek() {
            Some(b'+') => {
                self.pos += 1;
                offset = self.number()?;
            }
            Some(b'-') => {
                self.pos += 1;
                offset = -self.number()?;
            }
            _ => {}
        }
        let direction = if self.eat(">=") {
            Direction::AtLeast
        } else if self.eat("<=") {
            Direction::AtMost
        } else {
            return Err(self.error("expected `>=` or `<=`"));
        };
        let c = self.signed_number()?;
        Ok(StlFormula::pred(feature, direction, c - offset))
    }

    /// Name running to the close paren matching the already-consumed open.
    fn balanced_name(&mut self) -> Result<String, StlError> {
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b'(' => depth += 1,
                b')' => {
                    if depth == 0 {
                        let name = std::str::from_utf8(&self.bytes[start..self.pos])
                            .map_err(|_| self.error("invalid utf-8 in name"))?
                            .trim()
                            .to_string();
                        self.pos += 1;
                        if name.is_empty() {
                            return Err(self.error("empty name"));
                        }
                        return Ok(name);
                    }
                    depth -= 1;
                }
                _ => {}
            }
            self.pos += 1;
        }
        Err(self.error("unterminated name"))
    }

    fn optional_interval(&mut self) -> Result<Interval, StlError> {
        if self.peek() != Some(b'[') {
            return Ok(Interval::unbounded());
        }
        self.pos += 1;
        let a = self.signed_number()?;
        self.expect(",")?;
        let b = self.signed_number()?;
        self.expect("]")?;
        Ok(Interval::bounded(a, b))
    }

    fn signed_number(&mut self) -> Result<f64, StlError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            Ok(-self.number()?)
        } else {
            self.number()
        }
    }

    fn number(&mut self) -> Result<f64, StlError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            let exponent_sign = (b == b'+' || b == b'-')
                && self.pos > start
                && matches!(self.bytes[self.pos - 1], b'e' | b'E');
            if b.is_ascii_digit() || b == b'.' || b == b'e' || b == b'E' || exponent_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.error("expected a number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.error("malformed number"))
    }
}

impl fmt::Display for StlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn interval(i: &Interval) -> String {
            match i.b {
                Some(b) => format!("[{},{}]", i.a, b),
                None if i.a == 0.0 => String::new(),
                None => format!("[{},...]", i.a),
            }
        }
        match self {
            StlFormula::True => write!(f, "true"),
            StlFormula::Predicate {
                feature,
                direction,
                threshold,
            } => {
                let op = match direction {
                    Direction::AtLeast => ">=",
                    Direction::AtMost => "<=",
                };
                write!(f, "{} {op} {threshold}", feature.name())
            }
            StlFormula::Not(p) => write!(f, "!({p})"),
            StlFormula::And(a, b) => write!(f, "({a}) && ({b})"),
            StlFormula::Or(a, b) => write!(f, "({a}) || ({b})"),
            StlFormula::Eventually(i, p) => write!(f, "F{}({p})", interval(i)),
            StlFormula::Globally(i, p) => write!(f, "G{}({p})", interval(i)),
            StlFormula::Until(i, a, b) => write!(f, "({a}) U{} ({b})", interval(i)),
        }
    }
}
