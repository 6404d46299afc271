//! Pratt parser for the expression language.
//!
//! Binding powers, loosest first: `+ -` (1, 2), `* /` (3, 4), prefix `-` (5),
//! `^` (8, 7; right associative). So `-x1^2` is `-(x1^2)` and `2^-1` is `0.5`.

use std::sync::Arc;

use super::lexer::{tokenize, Spanned, Tok};
use super::{BinOp, ExprError, Func, Node, Scope};

const PREFIX_MINUS_BP: u8 = 5;

pub(crate) struct Parser<'s> {
    toks: Vec<Spanned>,
    pos: usize,
    scope: &'s Scope,
    bound: Vec<Arc<str>>,
}

impl<'s> Parser<'s> {
    pub(crate) fn new(src: &str, scope: &'s Scope) -> Result<Self, ExprError> {
        if src.trim().is_empty() {
            return Err(ExprError::Empty);
        }
        Ok(Self {
            toks: tokenize(src)?,
            pos: 0,
            scope,
            bound: Vec::new(),
        })
    }

    pub(crate) fn parse_all(mut self) -> Result<Node, ExprError> {
        let node = self.expr(0)?;
        match &self.peek().tok {
            Tok::End => Ok(node),
            _ => Err(self.unexpected(&["operator", "end of input"])),
        }
    }

    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> ExprError {
        let t = self.peek();
        ExprError::Syntax {
            offset: t.offset,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, want: Tok, label: &str) -> Result<(), ExprError> {
        if self.peek().tok == want {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[label]))
        }
    }

    fn infix_bp(tok: &Tok) -> Option<(u8, u8, BinOp)> {
        match tok {
            Tok::Plus => Some((1, 2, BinOp::Add)),
            Tok::Minus => Some((1, 2, BinOp::Sub)),
            Tok::Star => Some((3, 4, BinOp::Mul)),
            Tok::Slash => Some((3, 4, BinOp::Div)),
            Tok::Caret => Some((8, 7, BinOp::Pow)),
            _ => None,
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Node, ExprError> {
        let mut lhs = self.prefix()?;
        while let Some((l_bp, r_bp, op)) = Self::infix_bp(&self.peek().tok) {
            if l_bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr(r_bp)?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Node, ExprError> {
        let t = self.bump();
        match t.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Minus => {
                let inner = self.expr(PREFIX_MINUS_BP)?;
                Ok(Node::Neg(Box::new(inner)))
            }
            Tok::LParen => {
                let inner = self.expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    self.call(&name, t.offset)
                } else {
                    self.variable(&name, t.offset)
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.unexpected(&["number", "identifier", "`(`", "`-`"]))
            }
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Node, ExprError> {
        if let Some(depth) = self.bound.iter().rposition(|b| &**b == name) {
            return Ok(Node::Bound(depth));
        }
        if self.scope.time_name() == Some(name) {
            return Ok(Node::Time);
        }
        if let Some(i) = self.scope.state_index(name) {
            return Ok(Node::State(i));
        }
        if let Some(v) = self.scope.constant(name) {
            return Ok(Node::Const {
                name: Arc::from(name),
                value: v,
            });
        }
        Err(ExprError::UnknownIdentifier {
            name: name.to_string(),
            offset,
        })
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ExprError> {
        if name == "integral" {
            return self.integral(offset);
        }
        let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownIdentifier {
            name: name.to_string(),
            offset,
        })?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                args.push(self.expr(0)?);
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if args.len() != func.arity() {
            return Err(ExprError::FunctionArity {
                name: func.name(),
                expected: func.arity(),
                got: args.len(),
                offset,
            });
        }
        Ok(Node::Call(func, args))
    }

    // integral(var, lo, hi, body): definite integral of body over var ∈ [lo, hi].
    fn integral(&mut self, offset: usize) -> Result<Node, ExprError> {
        self.expect(Tok::LParen, "`(`")?;
        let var: Arc<str> = match self.bump().tok {
            Tok::Ident(v) => Arc::from(v.as_str()),
            _ => {
                self.pos -= 1;
                return Err(self.unexpected(&["integration variable"]));
            }
        };
        if Func::from_name(&var).is_some() || &*var == "integral" {
            return Err(ExprError::Syntax {
                offset,
                expected: vec!["integration variable".into()],
                found: format!("function name `{var}`"),
            });
        }
        self.expect(Tok::Comma, "`,`")?;
        let lo = self.expr(0)?;
        self.expect(Tok::Comma, "`,`")?;
        let hi = self.expr(0)?;
        self.expect(Tok::Comma, "`,`")?;
        self.bound.push(var.clone());
        let body = self.expr(0);
        self.bound.pop();
        let body = body?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Node::Integral {
            var,
            lo: Box::new(lo),
            hi: Box::new(hi),
            body: Box::new(body),
        })
    }
}
