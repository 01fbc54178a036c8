//! Random well-formed programs for round-trip and interpreter fuzzing.

use super::{BinOp, Expr, Program, Skill, Stmt, MAX_NESTING};
use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenConfig {
    /// Statements per block, at most.
    pub max_stmts: usize,
    /// Block nesting, at most; capped at [`MAX_NESTING`].
    pub max_nesting: usize,
    /// Expression tree depth, at most.
    pub max_expr_depth: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { max_stmts: 5, max_nesting: 3, max_expr_depth: 4 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Num,
    Bool,
}

struct Gen<'a, R> {
    rng: &'a mut R,
    cfg: GenConfig,
    scopes: Vec<Vec<(String, Kind)>>,
    next_var: usize,
}

/// A program that passes the static checks: variables are declared before
/// use and used at their declared kind, so most runs avoid type errors.
pub fn random_program<R: Rng>(rng: &mut R, cfg: GenConfig) -> Program {
    let cfg = GenConfig { max_nesting: cfg.max_nesting.min(MAX_NESTING), max_expr_depth: cfg.max_expr_depth.max(1), ..cfg };
    let mut g = Gen { rng, cfg, scopes: vec![Vec::new()], next_var: 0 };
    let n = g.rng.random_range(1..=cfg.max_stmts.max(1));
    Program { body: (0..n).map(|_| g.stmt(0)).collect() }
}

impl<R: Rng> Gen<'_, R> {
    fn vars(&self, kind: Kind) -> Vec<String> {
        self.scopes.iter().flatten().filter(|(_, k)| *k == kind).map(|(n, _)| n.clone()).collect()
    }

    fn block(&mut self, nesting: usize) -> Vec<Stmt> {
        self.scopes.push(Vec::new());
        let n = self.rng.random_range(0..=self.cfg.max_stmts);
        let body = (0..n).map(|_| self.stmt(nesting)).collect();
        self.scopes.pop();
        body
    }

    fn stmt(&mut self, nesting: usize) -> Stmt {
        let can_nest = nesting < self.cfg.max_nesting;
        loop {
            match self.rng.random_range(0..6) {
                0 => {
                    let kind = if self.rng.random_bool(0.5) { Kind::Num } else { Kind::Bool };
                    let e = self.expr(kind, self.cfg.max_expr_depth);
                    let name = format!("v{}", self.next_var);
                    self.next_var += 1;
                    self.scopes.last_mut().expect("scope").push((name.clone(), kind));
                    return Stmt::Let(name, e);
                }
                1 => {
                    let kind = if self.rng.random_bool(0.5) { Kind::Num } else { Kind::Bool };
                    if let Some(name) = self.vars(kind).choose(self.rng).cloned() {
                        return Stmt::Assign(name, self.expr(kind, self.cfg.max_expr_depth));
                    }
                }
                2 if can_nest => {
                    let cond = self.expr(Kind::Bool, self.cfg.max_expr_depth);
                    return Stmt::While(cond, self.block(nesting + 1));
                }
                3 if can_nest => {
                    let cond = self.expr(Kind::Bool, self.cfg.max_expr_depth);
                    let then = self.block(nesting + 1);
                    let els = self.rng.random_bool(0.5).then(|| self.block(nesting + 1));
                    return Stmt::If(cond, then, els);
                }
                4 | 5 => return Stmt::Call(*Skill::ALL.choose(self.rng).expect("skills")),
                _ => {}
            }
        }
    }

    fn expr(&mut self, kind: Kind, depth: usize) -> Expr {
        let leaf = depth <= 1 || self.rng.random_bool(0.3);
        match kind {
            Kind::Num if leaf => match self.rng.random_range(0..3) {
                0 => Expr::Rand,
                1 => match self.vars(Kind::Num).choose(self.rng) {
                    Some(v) => Expr::Var(v.clone()),
                    None => Expr::Int(self.rng.random_range(0..=20)),
                },
                _ => Expr::Int(self.rng.random_range(0..=20)),
            },
            Kind::Num => {
                let d = depth - 1;
                match self.rng.random_range(0..6) {
                    0 => Expr::Neg(Box::new(self.expr(Kind::Num, d))),
                    1 => Expr::Min(Box::new(self.expr(Kind::Num, d)), Box::new(self.expr(Kind::Num, d))),
                    2 => Expr::Max(Box::new(self.expr(Kind::Num, d)), Box::new(self.expr(Kind::Num, d))),
                    k => {
                        let op = [BinOp::Add, BinOp::Sub, BinOp::Mul][k - 3];
                        Expr::binary(op, self.expr(Kind::Num, d), self.expr(Kind::Num, d))
                    }
                }
            }
            Kind::Bool if leaf => match self.rng.random_range(0..3) {
                0 => Expr::Bool(self.rng.random_bool(0.5)),
                1 => match self.vars(Kind::Bool).choose(self.rng) {
                    Some(v) => Expr::Var(v.clone()),
                    None => Expr::Bool(false),
                },
                _ => Expr::Call(*Skill::ALL.choose(self.rng).expect("skills")),
            },
            Kind::Bool => {
                let d = depth - 1;
                match self.rng.random_range(0..4) {
                    0 => Expr::Not(Box::new(self.expr(Kind::Bool, d))),
                    1 => {
                        let op = *[BinOp::And, BinOp::Or].choose(self.rng).expect("ops");
                        Expr::binary(op, self.expr(Kind::Bool, d), self.expr(Kind::Bool, d))
                    }
                    2 => {
                        let op = *[BinOp::Eq, BinOp::Ne].choose(self.rng).expect("ops");
                        Expr::binary(op, self.expr(Kind::Bool, d), self.expr(Kind::Bool, d))
                    }
                    _ => {
                        let op = *[BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge, BinOp::Eq, BinOp::Ne].choose(self.rng).expect("ops");
                        Expr::binary(op, self.expr(Kind::Num, d), self.expr(Kind::Num, d))
                    }
                }
            }
        }
    }
}
