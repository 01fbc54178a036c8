use super::{BinOp, Expr, Program, Skill, Stmt};
use crate::scene::RotationDir;
use crate::skills::{GraspPose, Sign, SimHandle, SkillConfig, SkillResult, TranslateAxis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BUDGET: usize = 200;
/// Statements and loop iterations allowed per unit of skill budget.
pub const FUEL_PER_CALL: usize = 1000;

/// Bindings the interpreter needs besides the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillRuntime {
    pub skill: SkillConfig,
    /// Grasp pose derived from the current affordance result; `grasp(part)`
    /// fails with an error when it is absent.
    pub grasp_pose: Option<GraspPose>,
    /// Maximum number of skill calls.
    pub budget: usize,
}

impl SkillRuntime {
    pub fn new(skill: SkillConfig, grasp_pose: Option<GraspPose>, budget: usize) -> Self {
        assert!(budget > 0, "skill budget must be positive");
        Self { skill, grasp_pose, budget }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Goal,
    Budget,
    Error,
    /// The program finished without reaching the goal.
    EndOfProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCall {
    pub skill: Skill,
    pub success: bool,
    pub control_steps: usize,
    pub joint_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub calls: Vec<SkillCall>,
    pub task_success: bool,
    pub steps_used: usize,
    pub terminated_by: TerminatedBy,
    pub error: Option<String>,
    /// Set when the error came from a skill rather than the program itself.
    pub failed_skill: Option<Skill>,
}

impl ExecutionTrace {
    pub fn count(&self, skill: Skill) -> usize {
        self.calls.iter().filter(|c| c.skill == skill).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
}

impl Value {
    fn type_name(self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Float(_) => "number",
            Value::Bool(_) => "boolean",
        }
    }

    fn as_f64(self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(v as f64),
            Value::Float(v) => Some(v),
            Value::Bool(_) => None,
        }
    }
}

enum Halt {
    Goal,
    Budget,
    Error(String),
}

struct Machine<'a> {
    rt: &'a SkillRuntime,
    sim: &'a mut SimHandle,
    rng: ChaCha8Rng,
    scopes: Vec<Vec<(String, Value)>>,
    calls: Vec<SkillCall>,
    fuel: usize,
    failed_skill: Option<Skill>,
}

/// Runs `program` against `sim`. Never panics on program behavior: budget
/// and fuel exhaustion, goal attainment and runtime errors all end up in
/// the trace. `and`/`or` short-circuit, so skill calls on their right-hand
/// side may be skipped.
pub fn interpret(program: &Program, rt: &SkillRuntime, sim: &mut SimHandle, seed: u64) -> ExecutionTrace {
    let mut m = Machine {
        rt,
        sim,
        rng: ChaCha8Rng::seed_from_u64(seed),
        scopes: vec![Vec::new()],
        calls: Vec::new(),
        fuel: rt.budget.saturating_mul(FUEL_PER_CALL),
        failed_skill: None,
    };
    let outcome = if m.sim.object.goal_reached() { Err(Halt::Goal) } else { m.block(&program.body) };
    let (terminated_by, error) = match outcome {
        Ok(()) => (TerminatedBy::EndOfProgram, None),
        Err(Halt::Goal) => (TerminatedBy::Goal, None),
        Err(Halt::Budget) => (TerminatedBy::Budget, None),
        Err(Halt::Error(e)) => (TerminatedBy::Error, Some(e)),
    };
    ExecutionTrace {
        steps_used: m.calls.len(),
        task_success: m.sim.object.goal_reached(),
        calls: m.calls,
        terminated_by,
        error,
        failed_skill: m.failed_skill,
    }
}

impl Machine<'_> {
    fn burn(&mut self) -> Result<(), Halt> {
        if self.fuel == 0 {
            return Err(Halt::Budget);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> Result<(), Halt> {
        self.scopes.push(Vec::new());
        let r = body.iter().try_for_each(|s| self.stmt(s));
        self.scopes.pop();
        r
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), Halt> {
        self.burn()?;
        match s {
            Stmt::Let(name, e) => {
                let v = self.eval(e)?;
                self.scopes.last_mut().expect("scope").push((name.clone(), v));
            }
            Stmt::Assign(name, e) => {
                let v = self.eval(e)?;
                let slot = self
                    .scopes
                    .iter_mut()
                    .rev()
                    .find_map(|s| s.iter_mut().rev().find(|(n, _)| n == name))
                    .ok_or_else(|| Halt::Error(format!("assignment to undeclared `{name}`")))?;
                slot.1 = v;
            }
            Stmt::While(cond, body) => {
                while self.condition(cond)? {
                    self.block(body)?;
                    self.burn()?;
                }
            }
            Stmt::If(cond, then, els) => {
                if self.condition(cond)? {
                    self.block(then)?;
                } else if let Some(els) = els {
                    self.block(els)?;
                }
            }
            Stmt::Call(skill) => {
                self.call(*skill)?;
            }
        }
        Ok(())
    }

    fn condition(&mut self, e: &Expr) -> Result<bool, Halt> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(Halt::Error(format!("condition must be boolean, got {}", v.type_name()))),
        }
    }

    fn call(&mut self, skill: Skill) -> Result<bool, Halt> {
        if self.calls.len() >= self.rt.budget {
            return Err(Halt::Budget);
        }
        let cfg = &self.rt.skill;
        let r: Result<SkillResult, String> = match skill {
            Skill::Grasp => match self.rt.grasp_pose {
                Some(pose) => self.sim.grasp(pose, cfg).map_err(|e| e.to_string()),
                None => Err("no affordance result to grasp".into()),
            },
            Skill::PullPart => self.sim.exec_translate(TranslateAxis::GripperZ, Sign::Neg, cfg).map_err(|e| e.to_string()),
            Skill::PushPart => self.sim.exec_translate(TranslateAxis::GripperZ, Sign::Pos, cfg).map_err(|e| e.to_string()),
            Skill::MoveArcPos => self.sim.exec_translate(TranslateAxis::ObjectArcY, Sign::Pos, cfg).map_err(|e| e.to_string()),
            Skill::MoveArcNeg => self.sim.exec_translate(TranslateAxis::ObjectArcY, Sign::Neg, cfg).map_err(|e| e.to_string()),
            Skill::RotateCw => self.sim.exec_rotate(RotationDir::Cw, cfg).map_err(|e| e.to_string()),
            Skill::RotateCcw => self.sim.exec_rotate(RotationDir::Ccw, cfg).map_err(|e| e.to_string()),
            Skill::Release => Ok(self.sim.release()),
        };
        let r = r.map_err(|e| {
            self.failed_skill = Some(skill);
            Halt::Error(format!("{skill}: {e}"))
        })?;
        self.calls.push(SkillCall { skill, success: r.success, control_steps: r.steps, joint_value: r.feedback.map(|f| f.joint_value) });
        if self.sim.object.goal_reached() {
            return Err(Halt::Goal);
        }
        Ok(r.success)
    }

    fn lookup(&self, name: &str) -> Result<Value, Halt> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v))
            .ok_or_else(|| Halt::Error(format!("undeclared variable `{name}`")))
    }

    fn number(&mut self, e: &Expr) -> Result<Value, Halt> {
        match self.eval(e)? {
            Value::Bool(_) => Err(Halt::Error("expected a number, got boolean".into())),
            v => Ok(v),
        }
    }

    fn boolean(&mut self, e: &Expr) -> Result<bool, Halt> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(Halt::Error(format!("expected a boolean, got {}", v.type_name()))),
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, Halt> {
        Ok(match e {
            Expr::Int(v) => Value::Int(*v),
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Var(name) => self.lookup(name)?,
            Expr::Rand => Value::Float(self.rng.random::<f64>()),
            Expr::Call(skill) => Value::Bool(self.call(*skill)?),
            Expr::Not(inner) => Value::Bool(!self.boolean(inner)?),
            Expr::Neg(inner) => match self.number(inner)? {
                Value::Int(v) => Value::Int(v.checked_neg().ok_or_else(overflow)?),
                Value::Float(v) => Value::Float(-v),
                Value::Bool(_) => unreachable!("number() rejects booleans"),
            },
            Expr::Min(a, b) | Expr::Max(a, b) => {
                let (x, y) = (self.number(a)?, self.number(b)?);
                let take_x = match (x, y) {
                    (Value::Int(p), Value::Int(q)) => p <= q,
                    _ => x.as_f64() <= y.as_f64(),
                };
                if take_x == matches!(e, Expr::Min(..)) {
                    x
                } else {
                    y
                }
            }
            Expr::Binary(BinOp::And, a, b) => Value::Bool(self.boolean(a)? && self.boolean(b)?),
            Expr::Binary(BinOp::Or, a, b) => Value::Bool(self.boolean(a)? || self.boolean(b)?),
            Expr::Binary(op, a, b) => {
                let (x, y) = (self.eval(a)?, self.eval(b)?);
                binary(*op, x, y)?
            }
        })
    }
}

fn overflow() -> Halt {
    Halt::Error("integer overflow".into())
}

fn binary(op: BinOp, x: Value, y: Value) -> Result<Value, Halt> {
    use std::cmp::Ordering;
    let ordering = |x: Value, y: Value| -> Result<Option<Ordering>, Halt> {
        match (x, y) {
            (Value::Int(p), Value::Int(q)) => Ok(Some(p.cmp(&q))),
            (Value::Bool(p), Value::Bool(q)) if matches!(op, BinOp::Eq | BinOp::Ne) => Ok(Some(p.cmp(&q))),
            _ => match (x.as_f64(), y.as_f64()) {
                (Some(p), Some(q)) => Ok(p.partial_cmp(&q)),
                _ => Err(Halt::Error(format!("cannot apply `{}` to {} and {}", op.symbol(), x.type_name(), y.type_name()))),
            },
        }
    };
    Ok(match op {
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => {
            let ord = ordering(x, y)?;
            Value::Bool(match op {
                BinOp::Lt => ord == Some(Ordering::Less),
                BinOp::Le => matches!(ord, Some(Ordering::Less | Ordering::Equal)),
                BinOp::Gt => ord == Some(Ordering::Greater),
                BinOp::Ge => matches!(ord, Some(Ordering::Greater | Ordering::Equal)),
                BinOp::Eq => ord == Some(Ordering::Equal),
                _ => ord != Some(Ordering::Equal),
            })
        }
        BinOp::Add | BinOp::Sub | BinOp::Mul => match (x, y) {
            (Value::Int(p), Value::Int(q)) => Value::Int(
                match op {
                    BinOp::Add => p.checked_add(q),
                    BinOp::Sub => p.checked_sub(q),
                    _ => p.checked_mul(q),
                }
                .ok_or_else(overflow)?,
            ),
            _ => {
                let (Some(p), Some(q)) = (x.as_f64(), y.as_f64()) else {
                    return Err(Halt::Error(format!("cannot apply `{}` to {} and {}", op.symbol(), x.type_name(), y.type_name())));
                };
                Value::Float(match op {
                    BinOp::Add => p + q,
                    BinOp::Sub => p - q,
                    _ => p * q,
                })
            }
        },
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators are evaluated lazily"),
    })
}
