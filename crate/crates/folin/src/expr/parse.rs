//! Recursive-descent parser for the expression grammar.

use thiserror::Error;

use super::{BinOp, Expr, Func};

/// A parse failure, carrying the byte offset into the source string.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            offset,
            message: message.into(),
        }
    }
}

/// Parses an expression string into an [`Expr`] tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(ParseError::new(p.pos, "empty expression"));
    }
    let expr = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(ParseError::new(p.pos, "unexpected trailing input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let exp = self.exponent()?;
            return Ok(Expr::Pow(Box::new(base), exp));
        }
        Ok(base)
    }

    // Exponent chains like `2^3^2` fold right-associatively into a single
    // exact integer, so `Pow` always stores a literal.
    fn exponent(&mut self) -> Result<u32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        if !matches!(self.peek(), Some(b'0'..=b'9')) {
            return Err(ParseError::new(
                self.pos,
                "exponent must be a non-negative integer literal",
            ));
        }
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'.' | b'e' | b'E')) {
            return Err(ParseError::new(
                start,
                "exponent must be a non-negative integer literal",
            ));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let base: u32 = digits
            .parse()
            .map_err(|_| ParseError::new(start, "exponent out of range"))?;
        self.skip_ws();
        if self.eat(b'^') {
            let rhs = self.exponent()?;
            return base
                .checked_pow(rhs)
                .ok_or_else(|| ParseError::new(start, "exponent out of range"));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(ParseError::new(self.pos, "expected an operand")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(ParseError::new(self.pos, "expected `)`"));
                }
                Ok(inner)
            }
            Some(b'0'..=b'9' | b'.') => self.number(),
            Some(c) if c == b'_' || c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(ParseError::new(self.pos, "expected an operand")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(b'0'..=b'9')) {
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
            } else {
                // `1e` followed by a non-digit: the `e` was not an exponent.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, format!("invalid number literal `{text}`")))?;
        Ok(Expr::Const(value))
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c == b'_' || c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii identifier")
            .to_owned();
        self.skip_ws();
        if self.eat(b'(') {
            let func = Func::from_name(&name)
                .ok_or_else(|| ParseError::new(start, format!("unknown function `{name}`")))?;
            let arg = self.expr()?;
            self.skip_ws();
            if !self.eat(b')') {
                return Err(ParseError::new(self.pos, "expected `)`"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        Ok(Expr::Var(name))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{eval, EvalContext};
    use super::*;

    fn ast(text: &str) -> Expr {
        parse(text).unwrap()
    }

    fn eval1(text: &str, name: &str, value: f64) -> f64 {
        let names = vec![name.to_owned()];
        let values = vec![value];
        eval(&ast(text), &EvalContext::new(&names, &values)).unwrap()
    }

    #[test]
    fn precedence_structure() {
        assert_eq!(
            ast("x1 + x3^4"),
            Expr::var("x1").add(Expr::Pow(Box::new(Expr::var("x3")), 4))
        );
    }

    #[test]
    fn reciprocal_value() {
        assert_eq!(eval1("1/(1+x3^2)", "x3", 1.0), 0.5);
    }

    #[test]
    fn incomplete_input_offset() {
        let err = parse("x1 +").unwrap_err();
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(eval1("-x^2", "x", 3.0), -9.0);
    }

    #[test]
    fn power_chain_right_associative() {
        assert_eq!(eval1("2^3^2", "x", 0.0), 512.0);
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(ast("1.5e-3"), Expr::Const(1.5e-3));
        assert_eq!(ast("2E4"), Expr::Const(2e4));
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = parse("tan(x)").unwrap_err();
        assert!(err.message.contains("unknown function"));
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn fractional_exponent_is_rejected() {
        assert!(parse("x^2.5").is_err());
        assert!(parse("x^-1").is_err());
        assert!(parse("x^(2)").is_err());
    }

    #[test]
    fn free_vars_examples() {
        let vars = ast("x1*x2 - c").free_vars();
        assert_eq!(
            vars.into_iter().collect::<Vec<_>>(),
            vec!["c".to_owned(), "x1".to_owned(), "x2".to_owned()]
        );
        assert!(ast("3.5").free_vars().is_empty());
    }

    #[test]
    fn validate_reports_first_offender() {
        let allowed: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
        let err = ast("x9").validate(&allowed).unwrap_err();
        assert_eq!(err.name, "x9");
        assert!(ast("x1 + x4").validate(&allowed).is_ok());
    }

    #[test]
    fn empty_input() {
        assert!(parse("").is_err());
        assert!(parse("   ").is_err());
    }
}
