//! Recursive-descent parser for expressions and relations.
//!
//! ```text
//! relation  := expr ("=" | ">=" | "<=") expr
//! expr      := term (("+"|"-") term)*
//! term      := factor (("*"|"/") factor)*
//! factor    := base ("^" "-"? integer)?
//! base      := number | ident | "f" "(" expr ")" | "f'" "(" expr ")"
//!            | "ln" "(" expr ")" | "exp" "(" expr ")" | "(" expr ")" | "-" base
//! ```
//!
//! Numbers are decimal literals (with optional exponent) and are stored as
//! exact rationals. Which identifiers are accepted depends on the [`Dialect`].

use num::{BigInt, BigRational, ToPrimitive};
use thiserror::Error;

use crate::ast::{BinOp, Domain, Expr, FunctionalRelation, RelationKind, Var};
use crate::number::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{name}` at byte {offset}")]
    UnknownSymbol { name: String, offset: usize },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("line {line}: {message}")]
    InvalidValue { line: usize, message: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ParseError>,
    },
}

impl ParseError {
    fn syntax(offset: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax { offset, message: message.into() }
    }

    pub(crate) fn at_line(self, line: usize) -> Self {
        ParseError::AtLine { line, source: Box::new(self) }
    }
}

/// Symbols a parse accepts.
#[derive(Clone, Copy, Debug)]
pub struct Dialect {
    pub variables: &'static [Var],
    pub unknown: bool,
    pub derivative: bool,
}

impl Dialect {
    /// Functional equations: `x, y, z`, `f`, `f'`.
    pub const RELATION: Dialect =
        Dialect { variables: &[Var::X, Var::Y, Var::Z], unknown: true, derivative: true };
    /// Closed-form candidates in `x` with parameters `c, d`.
    pub const CANDIDATE: Dialect =
        Dialect { variables: &[Var::X, Var::C, Var::D], unknown: false, derivative: false };
    /// Recurrence and envelope update maps in `a, b`.
    pub const MAP: Dialect = Dialect { variables: &[Var::A, Var::B], unknown: false, derivative: false };
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    FPrime,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eq,
    Ge,
    Le,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, offset: start });
            i += 1;
            continue;
        }
        if c == b'>' || c == b'<' {
            if bytes.get(i + 1) != Some(&b'=') {
                return Err(ParseError::syntax(start, "expected `=` after comparison"));
            }
            let tok = if c == b'>' { Tok::Ge } else { Tok::Le };
            out.push(Token { tok, offset: start });
            i += 2;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            let (value, next) = lex_number(src, i)?;
            out.push(Token { tok: Tok::Num(value), offset: start });
            i = next;
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let name = &src[start..i];
            if name == "f" && bytes.get(i) == Some(&b'\'') {
                i += 1;
                out.push(Token { tok: Tok::FPrime, offset: start });
            } else {
                out.push(Token { tok: Tok::Ident(name.to_string()), offset: start });
            }
            continue;
        }
        let ch = src[i..].chars().next().unwrap_or('?');
        return Err(ParseError::syntax(start, format!("unexpected character `{ch}`")));
    }
    Ok(out)
}

fn lex_number(src: &str, start: usize) -> Result<(BigRational, usize), ParseError> {
    let bytes = src.as_bytes();
    let mut i = start;
    let mut digits = String::new();
    let mut frac_digits = 0i64;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        digits.push(bytes[i] as char);
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            digits.push(bytes[i] as char);
            frac_digits += 1;
            i += 1;
        }
    }
    if digits.is_empty() {
        return Err(ParseError::syntax(start, "malformed number"));
    }
    let mut exponent = 0i64;
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        let negative = match bytes.get(j) {
            Some(b'-') => {
                j += 1;
                true
            }
            Some(b'+') => {
                j += 1;
                false
            }
            _ => false,
        };
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            let value: i64 = src[exp_start..j]
                .parse()
                .map_err(|_| ParseError::syntax(exp_start, "exponent out of range"))?;
            if value > 4096 {
                return Err(ParseError::syntax(exp_start, "exponent out of range"));
            }
            exponent = if negative { -value } else { value };
            i = j;
        }
    }
    let mantissa: BigInt = digits.parse().map_err(|_| ParseError::syntax(start, "malformed number"))?;
    let shift = exponent - frac_digits;
    let ten = BigInt::from(10);
    let value = if shift >= 0 {
        BigRational::from_integer(mantissa * num::pow::pow(ten, shift as usize))
    } else {
        BigRational::new(mantissa, num::pow::pow(ten, (-shift) as usize))
    };
    Ok((value, i))
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    dialect: &'a Dialect,
}

impl<'a> Parser<'a> {
    fn new(src: &str, dialect: &'a Dialect) -> Result<Self, ParseError> {
        if src.trim().is_empty() {
            return Err(ParseError::syntax(0, "empty input"));
        }
        Ok(Parser { tokens: lex(src)?, pos: 0, end: src.len(), dialect })
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::syntax(self.offset(), format!("expected {what}")))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.tokens.len() {
            Err(ParseError::syntax(self.offset(), "unexpected trailing input"))
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            let at = self.offset();
            self.pos += 1;
            let rhs = self.factor()?;
            if op == BinOp::Div {
                if let Expr::Const(c) = &rhs {
                    if c.is_zero() {
                        return Err(ParseError::syntax(at, "division by a zero constant"));
                    }
                }
            }
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.base()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        let at = self.offset();
        match self.bump().map(|t| t.tok) {
            Some(Tok::Num(n)) if n.is_integer() => {
                let mag = n.to_integer().to_i32().filter(|m| *m <= 1024);
                let mag = mag.ok_or_else(|| ParseError::syntax(at, "exponent too large"))?;
                Ok(Expr::pow(base, if negative { -mag } else { mag }))
            }
            _ => Err(ParseError::syntax(at, "expected integer exponent")),
        }
    }

    fn call_argument(&mut self) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let arg = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(arg)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        let Some(token) = self.bump() else {
            return Err(ParseError::syntax(at, "unexpected end of input"));
        };
        match token.tok {
            Tok::Num(n) => Ok(Expr::Const(Scalar::Exact(n))),
            Tok::Minus => Ok(Expr::negate(self.base()?)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::FPrime => {
                if !self.dialect.derivative {
                    return Err(ParseError::UnknownSymbol { name: "f'".into(), offset: at });
                }
                Ok(Expr::Deriv(Box::new(self.call_argument()?)))
            }
            Tok::Ident(name) => match name.as_str() {
                "f" if self.dialect.unknown => Ok(Expr::apply(self.call_argument()?)),
                "ln" => Ok(Expr::Ln(Box::new(self.call_argument()?))),
                "exp" => Ok(Expr::Exp(Box::new(self.call_argument()?))),
                other => match Var::from_name(other) {
                    Some(v) if self.dialect.variables.contains(&v) => Ok(Expr::Var(v)),
                    _ => Err(ParseError::UnknownSymbol { name: name.clone(), offset: at }),
                },
            },
            _ => Err(ParseError::syntax(at, "expected a number, variable or `(`")),
        }
    }
}

/// Parses an expression over `x, y, z` that may apply `f` and `f'`.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    parse_with(text, &Dialect::RELATION)
}

pub fn parse_with(text: &str, dialect: &Dialect) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text, dialect)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parses `lhs = rhs`, `lhs >= rhs` or `lhs <= rhs` (stored as `rhs >= lhs`).
pub fn parse_relation(text: &str, domain: Domain) -> Result<FunctionalRelation, ParseError> {
    let mut p = Parser::new(text, &Dialect::RELATION)?;
    let lhs = p.expr()?;
    let at = p.offset();
    let op = p.bump().map(|t| t.tok);
    let rhs = p.expr()?;
    p.finish()?;
    Ok(match op {
        Some(Tok::Eq) => FunctionalRelation::new(lhs, rhs, RelationKind::Equality, domain),
        Some(Tok::Ge) => FunctionalRelation::new(lhs, rhs, RelationKind::GreaterEqual, domain),
        Some(Tok::Le) => FunctionalRelation::new(rhs, lhs, RelationKind::GreaterEqual, domain),
        _ => return Err(ParseError::syntax(at, "expected `=`, `>=` or `<=`")),
    })
}

/// Parses a comma-separated list of scalars such as `1, 3` or `2/3, 1.5`.
pub fn parse_scalar_list(text: &str) -> Result<Vec<Scalar>, ParseError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in text.split(',') {
        let e = parse_with(piece, &Dialect::MAP).map_err(|e| shift_offset(e, offset))?;
        let env = crate::eval::ScalarBinding::new();
        let value = crate::eval::evaluate_scalar(&e, &env)
            .map_err(|err| ParseError::syntax(offset, format!("not a constant: {err}")))?;
        out.push(value);
        offset += piece.len() + 1;
    }
    Ok(out)
}

fn shift_offset(err: ParseError, by: usize) -> ParseError {
    match err {
        ParseError::Syntax { offset, message } => ParseError::Syntax { offset: offset + by, message },
        ParseError::UnknownSymbol { name, offset } => {
            ParseError::UnknownSymbol { name, offset: offset + by }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::Var(Var::X)
    }

    #[test]
    fn nested_application() {
        let e = parse_expression("f(x)+f(f(x))").unwrap();
        assert_eq!(
            e,
            Expr::binary(BinOp::Add, Expr::apply(x()), Expr::apply(Expr::apply(x())))
        );
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse_expression("x").unwrap(), x());
    }

    #[test]
    fn application_of_sum() {
        let e = parse_expression("f(x*y+f(x))").unwrap();
        let inner = Expr::binary(
            BinOp::Add,
            Expr::binary(BinOp::Mul, x(), Expr::Var(Var::Y)),
            Expr::apply(x()),
        );
        assert_eq!(e, Expr::apply(inner));
    }

    #[test]
    fn decimals_are_exact() {
        let e = parse_expression("0.5*x + 1e-3").unwrap();
        let Expr::Binary(_, l, r) = e else { panic!() };
        assert_eq!(*r, Expr::Const(Scalar::ratio(1, 1000)));
        let Expr::Binary(_, half, _) = *l else { panic!() };
        assert_eq!(*half, Expr::Const(Scalar::ratio(1, 2)));
    }

    #[test]
    fn unknown_symbols_are_rejected() {
        assert_eq!(
            parse_expression("g(x)"),
            Err(ParseError::UnknownSymbol { name: "g".into(), offset: 0 })
        );
        assert_eq!(
            parse_expression("x + w"),
            Err(ParseError::UnknownSymbol { name: "w".into(), offset: 4 })
        );
        assert!(matches!(
            parse_with("f(a)", &Dialect::MAP),
            Err(ParseError::UnknownSymbol { .. })
        ));
        assert!(matches!(
            parse_with("f'(x)", &Dialect::CANDIDATE),
            Err(ParseError::UnknownSymbol { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(
            parse_expression("f(x"),
            Err(ParseError::Syntax { offset: 3, message: "expected `)`".into() })
        );
        assert!(matches!(parse_expression(""), Err(ParseError::Syntax { offset: 0, .. })));
        assert!(matches!(parse_expression("x / 0"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expression("x ^ y"), Err(ParseError::Syntax { offset: 4, .. })));
        assert!(matches!(parse_expression("x $ 1"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_expression("x x"), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn relations() {
        let r = parse_relation("f(f(x)-x)=2*x", Domain::NonNegReals).unwrap();
        assert_eq!(r.kind, RelationKind::Equality);
        let ge = parse_relation("f(x+y)+f(x+z)-f(x)*f(y+z) >= 1", Domain::PositiveReals).unwrap();
        assert_eq!(ge.kind, RelationKind::GreaterEqual);
        assert_eq!(ge.variables.len(), 3);
        let le = parse_relation("f(y) <= f(x)", Domain::Reals).unwrap();
        assert_eq!(le.lhs, Expr::apply(x()));
        assert!(parse_relation("f(x)", Domain::Reals).is_err());
    }

    #[test]
    fn powers_and_unary_minus() {
        assert_eq!(parse_expression("-x^2").unwrap(), Expr::pow(Expr::negate(x()), 2));
        assert_eq!(parse_expression("x^-1").unwrap(), Expr::pow(x(), -1));
        assert!(parse_expression("x^1.5").is_err());
    }

    #[test]
    fn scalar_lists() {
        let v = parse_scalar_list("1, 2/3, 0.25").unwrap();
        assert_eq!(v, vec![Scalar::int(1), Scalar::ratio(2, 3), Scalar::ratio(1, 4)]);
        assert!(parse_scalar_list("1, x").is_err());
    }
}
