use super::lexer::{lex, Tok, Token};
use super::{BinOp, Expr, Pos, Program, ProgramError, Skill, Stmt, PART};

/// Maximum block nesting (`while` and `if` bodies combined).
pub const MAX_NESTING: usize = 8;
/// Maximum expression tree depth, parentheses included.
pub const MAX_EXPR_DEPTH: usize = 64;

pub(super) const KEYWORDS: [&str; 9] = ["let", "while", "if", "else", "true", "false", "and", "or", "not"];
const FUNCTIONS: [&str; 3] = ["rand", "min", "max"];

const EXPR_START: [&str; 11] = ["integer", "`true`", "`false`", "identifier", "`(`", "`-`", "`not`", "`rand`", "`min`", "`max`", "skill call"];
const STMT_START: [&str; 5] = ["`let`", "`while`", "`if`", "identifier", "skill call"];

pub(crate) fn is_reserved(name: &str) -> bool {
    KEYWORDS.contains(&name) || FUNCTIONS.contains(&name) || Skill::from_name(name).is_some() || name == PART
}

/// Parses and statically checks a program: every variable is declared with
/// `let` before use in an enclosing scope, block nesting is at most
/// [`MAX_NESTING`] and expression depth at most [`MAX_EXPR_DEPTH`].
pub fn parse_program(src: &str) -> Result<Program, ProgramError> {
    let mut p = Parser { toks: lex(src)?, i: 0, scopes: vec![Vec::new()], nesting: 0, recursion: 0 };
    let mut body = Vec::new();
    while p.peek().tok != Tok::Eof {
        body.push(p.statement()?);
    }
    Ok(Program { body })
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    scopes: Vec<Vec<String>>,
    nesting: usize,
    recursion: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.i]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if t.tok != Tok::Eof {
            self.i += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ProgramError {
        let t = self.peek();
        ProgramError::Syntax { pos: t.pos, found: t.tok.describe(), expected: expected.iter().map(|s| s.to_string()).collect() }
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == w)
    }

    fn expect_sym(&mut self, s: &'static str) -> Result<(), ProgramError> {
        if self.at_sym(s) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{s}`")]))
        }
    }

    fn defined(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.iter().any(|n| n == name))
    }

    fn statement(&mut self) -> Result<Stmt, ProgramError> {
        let Token { tok, pos } = self.peek().clone();
        let stmt = match tok {
            Tok::Ident(w) if w == "let" => {
                self.bump();
                let (name, name_pos) = self.ident()?;
                if is_reserved(&name) {
                    return Err(ProgramError::Reserved { pos: name_pos, name });
                }
                self.expect_sym("=")?;
                let value = self.expr()?;
                self.scopes.last_mut().expect("scope").push(name.clone());
                Stmt::Let(name, value)
            }
            Tok::Ident(w) if w == "while" => {
                self.bump();
                let cond = self.expr()?;
                let body = self.nested(pos, Self::block)?;
                Stmt::While(cond, body)
            }
            Tok::Ident(w) if w == "if" => self.if_stmt()?,
            Tok::Ident(w) if Skill::from_name(&w).is_some() => Stmt::Call(self.skill_call()?),
            Tok::Ident(w) if !is_reserved(&w) => {
                self.bump();
                if !self.at_sym("=") {
                    return Err(self.error(&["`=`"]));
                }
                if !self.defined(&w) {
                    return Err(ProgramError::UnknownIdentifier { pos, name: w });
                }
                self.bump();
                Stmt::Assign(w, self.expr()?)
            }
            _ => return Err(self.error(&STMT_START)),
        };
        if self.at_sym(";") {
            self.bump();
        }
        Ok(stmt)
    }

    fn if_stmt(&mut self) -> Result<Stmt, ProgramError> {
        let pos = self.bump().pos;
        let cond = self.expr()?;
        let then = self.nested(pos, Self::block)?;
        if !self.at_word("else") {
            return Ok(Stmt::If(cond, then, None));
        }
        self.bump();
        let els = if self.at_word("if") {
            // `else if` is sugar for an else block holding one if statement
            let at = self.peek().pos;
            self.nested(at, |p| {
                p.scopes.push(Vec::new());
                let s = p.if_stmt();
                p.scopes.pop();
                Ok(vec![s?])
            })?
        } else if self.at_sym("{") {
            self.nested(pos, Self::block)?
        } else {
            return Err(self.error(&["`{`", "`if`"]));
        };
        Ok(Stmt::If(cond, then, Some(els)))
    }

    fn nested<T>(&mut self, pos: Pos, f: impl FnOnce(&mut Self) -> Result<T, ProgramError>) -> Result<T, ProgramError> {
        if self.nesting == MAX_NESTING {
            return Err(ProgramError::NestingOverflow { pos, max: MAX_NESTING });
        }
        self.nesting += 1;
        let r = f(self);
        self.nesting -= 1;
        r
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ProgramError> {
        self.expect_sym("{")?;
        self.scopes.push(Vec::new());
        let mut body = Vec::new();
        let r = loop {
            if self.at_sym("}") {
                self.bump();
                break Ok(body);
            }
            if self.peek().tok == Tok::Eof {
                let mut expected = vec!["`}`"];
                expected.extend(STMT_START);
                break Err(self.error(&expected));
            }
            match self.statement() {
                Ok(s) => body.push(s),
                Err(e) => break Err(e),
            }
        };
        self.scopes.pop();
        r
    }

    fn ident(&mut self) -> Result<(String, Pos), ProgramError> {
        match self.peek().clone() {
            Token { tok: Tok::Ident(name), pos } if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                Ok((name, pos))
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn skill_call(&mut self) -> Result<Skill, ProgramError> {
        let Tok::Ident(name) = self.bump().tok else { unreachable!("caller checked for a skill name") };
        let skill = Skill::from_name(&name).expect("caller checked for a skill name");
        self.expect_sym("(")?;
        if skill == Skill::Grasp {
            if !self.at_word(PART) {
                return Err(self.error(&["`part`"]));
            }
            self.bump();
        }
        self.expect_sym(")")?;
        Ok(skill)
    }

    fn expr(&mut self) -> Result<Expr, ProgramError> {
        Ok(self.guarded(Self::or_expr)?.0)
    }

    fn guarded(&mut self, f: impl FnOnce(&mut Self) -> Result<(Expr, usize), ProgramError>) -> Result<(Expr, usize), ProgramError> {
        let pos = self.peek().pos;
        if self.recursion >= MAX_EXPR_DEPTH {
            return Err(ProgramError::NestingOverflow { pos, max: MAX_EXPR_DEPTH });
        }
        self.recursion += 1;
        let r = f(self);
        self.recursion -= 1;
        let (e, d) = r?;
        if d > MAX_EXPR_DEPTH {
            return Err(ProgramError::NestingOverflow { pos, max: MAX_EXPR_DEPTH });
        }
        Ok((e, d))
    }

    fn binary_chain(
        &mut self,
        ops: &[(&str, BinOp)],
        next: fn(&mut Self) -> Result<(Expr, usize), ProgramError>,
    ) -> Result<(Expr, usize), ProgramError> {
        let pos = self.peek().pos;
        let (mut lhs, mut depth) = next(self)?;
        while let Some(&(_, op)) = ops.iter().find(|(s, _)| self.at_sym(s) || self.at_word(s)) {
            self.bump();
            let (rhs, d) = next(self)?;
            lhs = Expr::binary(op, lhs, rhs);
            depth = depth.max(d) + 1;
            if depth > MAX_EXPR_DEPTH {
                return Err(ProgramError::NestingOverflow { pos, max: MAX_EXPR_DEPTH });
            }
        }
        Ok((lhs, depth))
    }

    fn or_expr(&mut self) -> Result<(Expr, usize), ProgramError> {
        self.binary_chain(&[("or", BinOp::Or)], Self::and_expr)
    }

    fn and_expr(&mut self) -> Result<(Expr, usize), ProgramError> {
        self.binary_chain(&[("and", BinOp::And)], Self::not_expr)
    }

    fn not_expr(&mut self) -> Result<(Expr, usize), ProgramError> {
        if self.at_word("not") {
            self.bump();
            let (e, d) = self.guarded(Self::not_expr)?;
            return Ok((Expr::Not(Box::new(e)), d + 1));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<(Expr, usize), ProgramError> {
        const OPS: [(&str, BinOp); 6] =
            [("<=", BinOp::Le), (">=", BinOp::Ge), ("==", BinOp::Eq), ("!=", BinOp::Ne), ("<", BinOp::Lt), (">", BinOp::Gt)];
        let (lhs, dl) = self.sum()?;
        let Some(&(_, op)) = OPS.iter().find(|(s, _)| self.at_sym(s)) else {
            return Ok((lhs, dl));
        };
        self.bump();
        let (rhs, dr) = self.sum()?;
        Ok((Expr::binary(op, lhs, rhs), dl.max(dr) + 1))
    }

    fn sum(&mut self) -> Result<(Expr, usize), ProgramError> {
        self.binary_chain(&[("+", BinOp::Add), ("-", BinOp::Sub)], Self::product)
    }

    fn product(&mut self) -> Result<(Expr, usize), ProgramError> {
        self.binary_chain(&[("*", BinOp::Mul)], Self::unary)
    }

    fn unary(&mut self) -> Result<(Expr, usize), ProgramError> {
        if self.at_sym("-") {
            self.bump();
            let (e, d) = self.guarded(Self::unary)?;
            return Ok((Expr::Neg(Box::new(e)), d + 1));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<(Expr, usize), ProgramError> {
        let Token { tok, pos } = self.peek().clone();
        match tok {
            Tok::Int(v) => {
                self.bump();
                Ok((Expr::Int(v), 1))
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.guarded(Self::or_expr)?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Tok::Ident(w) => match w.as_str() {
                "true" | "false" => {
                    self.bump();
                    Ok((Expr::Bool(w == "true"), 1))
                }
                "rand" => {
                    self.bump();
                    self.expect_sym("(")?;
                    self.expect_sym(")")?;
                    Ok((Expr::Rand, 1))
                }
                "min" | "max" => {
                    self.bump();
                    self.expect_sym("(")?;
                    let (a, da) = self.guarded(Self::or_expr)?;
                    self.expect_sym(",")?;
                    let (b, db) = self.guarded(Self::or_expr)?;
                    self.expect_sym(")")?;
                    let (a, b) = (Box::new(a), Box::new(b));
                    Ok((if w == "min" { Expr::Min(a, b) } else { Expr::Max(a, b) }, da.max(db) + 1))
                }
                _ if Skill::from_name(&w).is_some() => Ok((Expr::Call(self.skill_call()?), 1)),
                _ if is_reserved(&w) => {
                    Err(if KEYWORDS.contains(&w.as_str()) { self.error(&EXPR_START) } else { ProgramError::Reserved { pos, name: w } })
                }
                _ if self.defined(&w) => {
                    self.bump();
                    Ok((Expr::Var(w), 1))
                }
                _ => Err(ProgramError::UnknownIdentifier { pos, name: w }),
            },
            _ => Err(self.error(&EXPR_START)),
        }
    }
}
