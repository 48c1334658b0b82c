use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{Action, AgentRule, BinOp, Builtin, CellRef, Expr, Post, Ref, RuleError, UnOp};
use crate::crm::{CellId, Kind, Name, Operation};
use crate::value::Value;

/// Parses rule source text and runs the structural scope/type checks.
pub fn parse_rule(source: &str) -> Result<AgentRule, RuleError> {
    let mut p = Parser {
        src: source,
        pos: 0,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.error("empty rule"));
    }
    let rule = p.rule()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.error("unexpected trailing input"));
    }
    rule.validate()?;
    Ok(rule)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl<'a> Parser<'a> {
    fn bytes(&self) -> &'a [u8] {
        self.src.as_bytes()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes().get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.bytes().get(self.pos + off).copied()
    }

    fn error(&self, message: impl Into<String>) -> RuleError {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        RuleError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(b) = self.peek() {
                    if b == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    /// Identifier at the cursor, without consuming it.
    fn peek_ident(&self) -> Option<&'a str> {
        let start = self.pos;
        let first = self.peek()?;
        if !(first.is_ascii_alphabetic() || first == b'_') {
            return None;
        }
        let mut end = start;
        while end < self.src.len() && is_ident_byte(self.bytes()[end]) {
            end += 1;
        }
        Some(&self.src[start..end])
    }

    /// True when the identifier is a keyword use, i.e. not the head of a
    /// `cell/K/name` reference.
    fn at_keyword(&self, kw: &str) -> bool {
        self.peek_ident() == Some(kw) && self.bytes().get(self.pos + kw.len()) != Some(&b'/')
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        if self.at_keyword(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), RuleError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{kw}`")))
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), RuleError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{s}`")))
        }
    }

    fn rule(&mut self) -> Result<AgentRule, RuleError> {
        let mut on = Vec::new();
        if self.eat_keyword("ON") {
            loop {
                on.push(self.reference()?);
                if !self.eat(",") {
                    break;
                }
            }
        }
        self.expect_keyword("IF")?;
        let pre = self.expr()?;
        self.expect_keyword("THEN")?;
        let mut actions = Vec::new();
        loop {
            actions.push(self.action()?);
            if !self.eat(";") {
                break;
            }
            self.skip_ws();
            if self.at_end() || self.peek() == Some(b'}') {
                break;
            }
        }
        Ok(AgentRule { on, pre, actions })
    }

    fn action(&mut self) -> Result<Action, RuleError> {
        let operation = if self.eat_keyword("CREATE") {
            Operation::Create
        } else if self.eat_keyword("UPDATE") {
            Operation::Update
        } else if self.eat_keyword("DELETE") {
            Operation::Delete
        } else {
            return Err(self.error("expected CREATE, UPDATE or DELETE"));
        };
        let target = self.reference()?;
        let post = if operation == Operation::Delete {
            None
        } else {
            self.expect("=")?;
            if self.eat("{") {
                let nested = self.rule()?;
                self.expect("}")?;
                Some(Post::Rule(Arc::new(nested)))
            } else {
                Some(Post::Expr(self.expr()?))
            }
        };
        Ok(Action {
            operation,
            target,
            post,
        })
    }

    fn ident(&mut self) -> Result<&'a str, RuleError> {
        self.skip_ws();
        let id = self
            .peek_ident()
            .ok_or_else(|| self.error("expected an identifier"))?;
        self.pos += id.len();
        Ok(id)
    }

    fn reference(&mut self) -> Result<Ref, RuleError> {
        let head = self.ident()?;
        if self.peek() != Some(b'/') {
            return Err(self.error(format!("expected `/` after `{head}`")));
        }
        self.pos += 1;
        let (cell, kind) = match Kind::from_letter(head) {
            Some(kind) => (CellRef::Host, kind),
            None => {
                let cell = if head == "self" {
                    CellRef::Host
                } else {
                    CellRef::Cell(CellId::new(head).map_err(|e| self.error(format!("{e}")))?)
                };
                let letter = self.peek_ident().unwrap_or("");
                let kind = Kind::from_letter(letter)
                    .ok_or_else(|| self.error("expected resource kind L, S or A"))?;
                self.pos += 1;
                if self.peek() != Some(b'/') {
                    return Err(self.error("expected `/` after resource kind"));
                }
                self.pos += 1;
                (cell, kind)
            }
        };
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.peek().is_some_and(is_ident_byte) {
            return Err(self.error("resource names use [a-z0-9_] only"));
        }
        let name = Name::new(&self.src[start..self.pos])
            .map_err(|_| self.error("expected a resource name"))?;
        Ok(Ref { cell, kind, name })
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.and_expr()?;
        while self.eat_keyword("or") {
            let rhs = self.and_expr()?;
            lhs = Expr::Binary(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.not_expr()?;
        while self.eat_keyword("and") {
            let rhs = self.not_expr()?;
            lhs = Expr::Binary(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, RuleError> {
        if self.eat_keyword("not") {
            Ok(Expr::Unary(UnOp::Not, Box::new(self.not_expr()?)))
        } else {
            self.cmp_expr()
        }
    }

    fn cmp_expr(&mut self) -> Result<Expr, RuleError> {
        let lhs = self.add_expr()?;
        self.skip_ws();
        let op = [
            ("==", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<=", BinOp::Le),
            (">=", BinOp::Ge),
            ("<", BinOp::Lt),
            (">", BinOp::Gt),
        ]
        .into_iter()
        .find(|(s, _)| self.src[self.pos..].starts_with(s));
        match op {
            Some((s, op)) => {
                self.pos += s.len();
                let rhs = self.add_expr()?;
                Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
            }
            None => Ok(lhs),
        }
    }

    fn add_expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.mul_expr()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, RuleError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else if self.eat("%") {
                BinOp::Rem
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, RuleError> {
        if self.eat("-") {
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                return self.number(true);
            }
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn number(&mut self, negative: bool) -> Result<Expr, RuleError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.peek().is_some_and(|b| b.is_ascii_digit()) {
                p.pos += 1;
            }
        };
        digits(self);
        let mut is_real = false;
        if self.peek() == Some(b'.') && self.peek_at(1).is_some_and(|b| b.is_ascii_digit()) {
            is_real = true;
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                is_real = true;
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let signed = if negative {
            format!("-{text}")
        } else {
            String::from(text)
        };
        let value = if is_real {
            let x: f64 = signed
                .parse()
                .map_err(|_| self.error("malformed real literal"))?;
            Value::real(x).map_err(|_| self.error("real literal out of range"))?
        } else {
            Value::Int(
                signed
                    .parse()
                    .map_err(|_| self.error("integer literal out of range"))?,
            )
        };
        Ok(Expr::Lit(value))
    }

    fn string(&mut self) -> Result<Expr, RuleError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let mut chars = rest.chars();
            let c = chars
                .next()
                .ok_or_else(|| self.error("unterminated string"))?;
            self.pos += c.len_utf8();
            match c {
                '"' => return Ok(Expr::Lit(Value::Text(out))),
                '\\' => {
                    let e = chars
                        .next()
                        .ok_or_else(|| self.error("unterminated escape"))?;
                    self.pos += e.len_utf8();
                    out.push(match e {
                        'n' => '\n',
                        '"' => '"',
                        '\\' => '\\',
                        _ => return Err(self.error("unknown escape")),
                    });
                }
                c => out.push(c),
            }
        }
    }

    fn call_ref(&mut self) -> Result<Ref, RuleError> {
        self.expect("(")?;
        let r = self.reference()?;
        self.expect(")")?;
        Ok(r)
    }

    fn primary(&mut self) -> Result<Expr, RuleError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of rule")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(b'"') => self.string(),
            Some(b) if b.is_ascii_digit() => self.number(false),
            Some(_) => {
                let id = self
                    .peek_ident()
                    .ok_or_else(|| self.error("unexpected character"))?;
                let after = self.bytes().get(self.pos + id.len()).copied();
                if after == Some(b'/') {
                    return Ok(Expr::Ref(self.reference()?));
                }
                self.pos += id.len();
                match id {
                    "true" => Ok(Expr::Lit(Value::Bool(true))),
                    "false" => Ok(Expr::Lit(Value::Bool(false))),
                    "prev" => Ok(Expr::Prev(self.call_ref()?)),
                    "exists" => {
                        self.expect("(")?;
                        let e = if self.eat_keyword("prev") {
                            Expr::ExistsPrev(self.call_ref()?)
                        } else {
                            Expr::Exists(self.reference()?)
                        };
                        self.expect(")")?;
                        Ok(e)
                    }
                    other => {
                        let f = Builtin::from_name(other)
                            .ok_or_else(|| self.error(format!("unknown identifier `{other}`")))?;
                        self.expect("(")?;
                        let mut args = Vec::new();
                        if !self.eat(")") {
                            loop {
                                args.push(self.expr()?);
                                if self.eat(")") {
                                    break;
                                }
                                self.expect(",")?;
                            }
                        }
                        Ok(Expr::Call(f, args))
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_flow_style_rule() {
        let r = parse_rule("IF prev(L/p0) != L/p0 THEN UPDATE m/L/p1 = prev(L/p0) - L/p0").unwrap();
        assert_eq!(r.actions.len(), 1);
        assert_eq!(
            r.actions[0].target.cell,
            CellRef::Cell(CellId::new("m").unwrap())
        );
        assert!(matches!(r.pre, Expr::Binary(BinOp::Ne, _, _)));
    }

    #[test]
    fn always_firing_rule() {
        let r = parse_rule("IF true THEN UPDATE self/L/x = 0").unwrap();
        assert_eq!(r.pre, Expr::Lit(Value::Bool(true)));
        assert_eq!(r.actions[0].target.cell, CellRef::Host);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_rule("IF true THEN\n  UPDATE self/L/x 0").unwrap_err();
        assert_eq!(
            err,
            RuleError::Syntax {
                line: 2,
                column: 19,
                message: "expected `=`".into()
            }
        );
    }

    #[test]
    fn empty_source_is_a_syntax_error() {
        assert!(matches!(parse_rule("   "), Err(RuleError::Syntax { .. })));
    }

    #[test]
    fn precedence() {
        let r =
            parse_rule("IF 1 + 2 * 3 == 7 and not false THEN UPDATE self/L/x = -2 - -3").unwrap();
        assert_eq!(
            r.to_string(),
            "IF (((1 + (2 * 3)) == 7) and not (false)) THEN UPDATE self/L/x = (-2 - -3)"
        );
    }

    #[test]
    fn literals() {
        let r = parse_rule(r#"IF L/s == "a\"b" THEN UPDATE self/L/x = 1.5e-3"#).unwrap();
        let Some(Post::Expr(Expr::Lit(v))) = &r.actions[0].post else {
            panic!()
        };
        assert_eq!(v, &Value::Real(1.5e-3));
        assert!(parse_rule("IF true THEN UPDATE self/L/x = 99999999999999999999").is_err());
        assert!(parse_rule("IF true THEN UPDATE self/L/x = -9223372036854775808").is_ok());
    }

    #[test]
    fn digit_leading_names_and_comments() {
        let r = parse_rule("IF L/0a > 1 # trailing\nTHEN DELETE self/A/t2;").unwrap();
        assert_eq!(r.actions.len(), 1);
    }

    #[test]
    fn builtins() {
        let r =
            parse_rule("IF gap(L/a, L/b) > 0.1 THEN UPDATE self/L/w = argmax(L/a, L/b)").unwrap();
        assert!(matches!(r.pre, Expr::Binary(BinOp::Gt, _, _)));
        assert!(matches!(
            parse_rule("IF gap(L/a) > 0 THEN UPDATE self/L/w = 1"),
            Err(RuleError::Type(_))
        ));
    }
}
