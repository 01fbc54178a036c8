//! Skill-program DSL: syntax tree, parser, canonical printer, interpreter and
//! program generation.
//!
//! Grammar (EBNF):
//!
//! ```text
//! program    = { statement [ ";" ] } ;
//! statement  = "let" IDENT "=" expr
//!            | IDENT "=" expr
//!            | "while" expr block
//!            | "if" expr block [ "else" ( block | if_stmt ) ]
//!            | skill_call ;
//! block      = "{" { statement [ ";" ] } "}" ;
//! skill_call = "grasp" "(" "part" ")" | SKILL "(" ")" ;
//! expr       = and_expr { "or" and_expr } ;
//! and_expr   = not_expr { "and" not_expr } ;
//! not_expr   = "not" not_expr | comparison ;
//! comparison = sum [ ( "<" | "<=" | ">" | ">=" | "==" | "!=" ) sum ] ;
//! sum        = product { ( "+" | "-" ) product } ;
//! product    = unary { "*" unary } ;
//! unary      = "-" unary | atom ;
//! atom       = INT | "true" | "false" | IDENT | "(" expr ")"
//!            | "rand" "(" ")" | ( "min" | "max" ) "(" expr "," expr ")"
//!            | skill_call ;
//! SKILL      = "pull_part" | "push_part" | "rotate_cw" | "rotate_ccw"
//!            | "move_arc_pos" | "move_arc_neg" | "release" ;
//! ```
//!
//! `#` starts a comment that runs to the end of the line. Newlines are not
//! significant. Programs are stored as `.skl` text files.

mod codegen;
pub mod gen;
mod interp;
mod lexer;
mod parser;
mod printer;

pub use codegen::{canned_program, generate_program, CodeGenerator, CodegenError, OfflineCodegen, RemoteCodegen, TaskSpec, N_CAP};
pub use interp::{interpret, ExecutionTrace, SkillCall, SkillRuntime, TerminatedBy, DEFAULT_BUDGET, FUEL_PER_CALL};
pub use parser::{parse_program, MAX_EXPR_DEPTH, MAX_NESTING};
pub use printer::print_program;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// The only identifier that names the current affordance result.
pub const PART: &str = "part";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Grasp,
    PullPart,
    PushPart,
    RotateCw,
    RotateCcw,
    MoveArcPos,
    MoveArcNeg,
    Release,
}

impl Skill {
    pub const ALL: [Skill; 8] =
        [Skill::Grasp, Skill::PullPart, Skill::PushPart, Skill::RotateCw, Skill::RotateCcw, Skill::MoveArcPos, Skill::MoveArcNeg, Skill::Release];

    pub fn name(self) -> &'static str {
        match self {
            Skill::Grasp => "grasp",
            Skill::PullPart => "pull_part",
            Skill::PushPart => "push_part",
            Skill::RotateCw => "rotate_cw",
            Skill::RotateCcw => "rotate_ccw",
            Skill::MoveArcPos => "move_arc_pos",
            Skill::MoveArcNeg => "move_arc_neg",
            Skill::Release => "release",
        }
    }

    pub fn from_name(name: &str) -> Option<Skill> {
        Skill::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Or,
    And,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    /// Binding strength; higher binds tighter.
    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul => 6,
        }
    }

    pub(crate) fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    /// Non-negative literal; negative values are `Neg` nodes.
    Int(i64),
    Bool(bool),
    Var(String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Rand,
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    /// Evaluates to the skill's success flag.
    Call(Skill),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Let(String, Expr),
    Assign(String, Expr),
    While(Expr, Vec<Stmt>),
    If(Expr, Vec<Stmt>, Option<Vec<Stmt>>),
    Call(Skill),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub body: Vec<Stmt>,
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}

impl std::str::FromStr for Program {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("{pos}: syntax error: found {found}, expected one of {}", expected.join(", "))]
    Syntax { pos: Pos, found: String, expected: Vec<String> },
    #[error("{pos}: unknown identifier `{name}`")]
    UnknownIdentifier { pos: Pos, name: String },
    #[error("{pos}: `{name}` is reserved")]
    Reserved { pos: Pos, name: String },
    #[error("{pos}: block nesting exceeds {max}")]
    NestingOverflow { pos: Pos, max: usize },
    #[error("{pos}: integer literal out of range")]
    IntOverflow { pos: Pos },
}

impl ProgramError {
    pub fn pos(&self) -> Pos {
        match self {
            ProgramError::Syntax { pos, .. }
            | ProgramError::UnknownIdentifier { pos, .. }
            | ProgramError::Reserved { pos, .. }
            | ProgramError::NestingOverflow { pos, .. }
            | ProgramError::IntOverflow { pos } => *pos,
        }
    }
}
