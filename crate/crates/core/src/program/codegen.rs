use super::{parse_program, Program, ProgramError};
use crate::grounding::{RemoteClient, RemoteFailure, PROTOCOL_VERSION};
use crate::scene::{Category, RotationDir};
use serde_json::{json, Value};
use thiserror::Error;

/// Rotation count at which a pull attempt becomes certain.
pub const N_CAP: u32 = 6;

const GENERAL_PROMPT: &str = "You control a robot arm through a small language of primitive skills. \
Write one program that completes the task. The object may hide a locking mechanism: rotating the grasped part \
may be needed before it moves, and a failed pull means it is still locked. Make pull attempts more likely the \
more rotations you have made, and once a pull succeeds keep pulling until the part stops moving. \
Reply with the program only, in the grammar below.";

const GRAMMAR: &str = "\
program    = { statement [ \";\" ] } ;
statement  = \"let\" IDENT \"=\" expr | IDENT \"=\" expr | \"while\" expr block
           | \"if\" expr block [ \"else\" ( block | if_stmt ) ] | skill_call ;
block      = \"{\" { statement [ \";\" ] } \"}\" ;
skill_call = \"grasp\" \"(\" \"part\" \")\" | SKILL \"(\" \")\" ;
expr       = and_expr { \"or\" and_expr } ;
and_expr   = not_expr { \"and\" not_expr } ;
not_expr   = \"not\" not_expr | comparison ;
comparison = sum [ ( \"<\" | \"<=\" | \">\" | \">=\" | \"==\" | \"!=\" ) sum ] ;
sum        = product { ( \"+\" | \"-\" ) product } ;
product    = unary { \"*\" unary } ;
unary      = \"-\" unary | atom ;
atom       = INT | \"true\" | \"false\" | IDENT | \"(\" expr \")\" | \"rand\" \"(\" \")\"
           | ( \"min\" | \"max\" ) \"(\" expr \",\" expr \")\" | skill_call ;
SKILL      = \"pull_part\" | \"push_part\" | \"rotate_cw\" | \"rotate_ccw\" | \"move_arc_pos\" | \"move_arc_neg\" | \"release\" ;
Every skill call evaluates to true on success. rand() is uniform in [0, 1).";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub category: Category,
    pub goal: String,
}

impl TaskSpec {
    pub fn open(category: Category) -> Self {
        Self { category, goal: format!("open the {}", category.name().replace('_', " ")) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error(transparent)]
    Remote(#[from] RemoteFailure),
    #[error("malformed codegen reply: {0}")]
    BadResponse(String),
    #[error("generated program did not parse after {attempts} attempts: {last}")]
    Unparseable { attempts: u32, last: ProgramError },
}

pub trait CodeGenerator: Send + Sync {
    fn generate(&self, task: &TaskSpec) -> Result<String, CodegenError>;
}

/// Generates with `provider` and parses the result.
pub fn generate_program(provider: &dyn CodeGenerator, task: &TaskSpec) -> Result<(String, Program), CodegenError> {
    let source = provider.generate(task)?;
    match parse_program(&source) {
        Ok(p) => Ok((source, p)),
        Err(last) => Err(CodegenError::Unparseable { attempts: 1, last }),
    }
}

fn unlock_direction(category: Category) -> RotationDir {
    match category {
        Category::CoffeeMachine | Category::Window | Category::Door => RotationDir::Cw,
        Category::Bottle | Category::Pen | Category::PressureCooker | Category::Lamp => RotationDir::Ccw,
    }
}

/// The adaptive template: rotate in the unlock direction, attempt a pull with
/// probability `min(1, n / N_CAP)` after `n` rotations, and once a pull
/// succeeds keep pulling until the joint limit. Doors pull along the hinge
/// arc.
pub fn canned_program(category: Category) -> String {
    let rotate = match unlock_direction(category) {
        RotationDir::Cw => "rotate_cw",
        RotationDir::Ccw => "rotate_ccw",
    };
    let pull = if category == Category::Door { "move_arc_pos" } else { "pull_part" };
    format!(
        "# {category}: rotate until a pull succeeds, then pull to the limit\n\
         let n = 0\n\
         let done = false\n\
         grasp(part)\n\
         while not done {{\n\
         \x20 {rotate}()\n\
         \x20 n = n + 1\n\
         \x20 if rand() * {N_CAP} < n {{\n\
         \x20   done = {pull}()\n\
         \x20 }}\n\
         }}\n\
         while {pull}() {{\n\
         }}\n"
    )
}

/// Offline provider returning [`canned_program`].
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineCodegen;

impl CodeGenerator for OfflineCodegen {
    fn generate(&self, task: &TaskSpec) -> Result<String, CodegenError> {
        Ok(canned_program(task.category))
    }
}

/// Chat-endpoint provider (`POST {endpoint}/v1/codegen`). Replies that do
/// not parse are sent back with the parse error up to `repairs` times.
#[derive(Debug, Clone)]
pub struct RemoteCodegen {
    pub client: RemoteClient,
    pub repairs: u32,
}

impl RemoteCodegen {
    pub fn new(client: RemoteClient) -> Self {
        Self { client, repairs: 2 }
    }

    fn ask(&self, messages: &[Value]) -> Result<String, CodegenError> {
        let body = json!({ "version": PROTOCOL_VERSION, "stage": "codegen", "messages": messages });
        let reply = self.client.request("codegen", &body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(strip_fences)
            .ok_or_else(|| CodegenError::BadResponse("missing choices[0].message.content".into()))
    }
}

fn strip_fences(text: &str) -> String {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t.to_string() };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim_end().to_string()
}

impl CodeGenerator for RemoteCodegen {
    fn generate(&self, task: &TaskSpec) -> Result<String, CodegenError> {
        let mut messages = vec![
            json!({ "role": "system", "content": format!("{GENERAL_PROMPT}\n\n{GRAMMAR}") }),
            json!({ "role": "user", "content": format!("Task: {} ({}).", task.goal, task.category) }),
        ];
        let mut attempts = 0;
        loop {
            attempts += 1;
            let source = self.ask(&messages)?;
            match parse_program(&source) {
                Ok(_) => return Ok(source),
                Err(e) if attempts > self.repairs => return Err(CodegenError::Unparseable { attempts, last: e }),
                Err(e) => {
                    log::info!("codegen attempt {attempts} did not parse: {e}");
                    messages.push(json!({ "role": "assistant", "content": source }));
                    messages.push(
                        json!({ "role": "user", "content": format!("That program does not parse: {e}. Reply with the corrected program only.") }),
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{MockTransport, TransportError};
    use crate::program::{print_program, Skill, Stmt};
    use std::sync::Arc;

    fn chat(content: &str) -> Result<String, TransportError> {
        Ok(json!({ "choices": [{ "message": { "content": content } }] }).to_string())
    }

    #[test]
    fn canned_programs_parse_and_round_trip() {
        for c in Category::ALL {
            let (src, p) = generate_program(&OfflineCodegen, &TaskSpec::open(c)).unwrap();
            assert_eq!(parse_program(&print_program(&p)).unwrap(), p);
            assert!(src.contains(&format!("rand() * {N_CAP} < n")));
            assert_eq!(p.body[2], Stmt::Call(Skill::Grasp));
        }
        assert!(canned_program(Category::Door).contains("done = move_arc_pos()"));
        assert!(canned_program(Category::Door).contains("while move_arc_pos()"));
        assert!(!canned_program(Category::Door).contains("pull_part"));
        assert!(canned_program(Category::Bottle).contains("rotate_ccw()"));
    }

    #[test]
    fn remote_repairs_then_fails() {
        let mock = Arc::new(MockTransport::new([chat("while { }"), chat("grasp(x)"), chat("let = 3")]));
        let gen = RemoteCodegen::new(RemoteClient::new("http://codegen".into(), 1.0, 0, mock.clone()));
        let err = gen.generate(&TaskSpec::open(Category::Bottle)).unwrap_err();
        assert!(matches!(err, CodegenError::Unparseable { attempts: 3, .. }), "{err:?}");
        let reqs = mock.requests();
        assert_eq!(reqs.len(), 3);
        assert!(reqs.iter().all(|(url, _)| url == "http://codegen/v1/codegen"));
        let last: Value = serde_json::from_str(&reqs[2].1).unwrap();
        let msgs = last["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 6);
        assert!(msgs[5]["content"].as_str().unwrap().contains("does not parse"));
    }

    #[test]
    fn remote_repair_succeeds() {
        let fixed = "```\ngrasp(part)\nwhile pull_part() { }\n```";
        let mock = Arc::new(MockTransport::new([chat("grasp(part"), chat(fixed)]));
        let gen = RemoteCodegen::new(RemoteClient::new("http://codegen".into(), 1.0, 0, mock));
        let (src, p) = generate_program(&gen, &TaskSpec::open(Category::Pen)).unwrap();
        assert_eq!(src, "grasp(part)\nwhile pull_part() { }");
        assert_eq!(p.body.len(), 2);
    }

    #[test]
    fn remote_transport_failure() {
        let gen = RemoteCodegen::new(RemoteClient::new("http://codegen".into(), 1.0, 1, Arc::new(MockTransport::default())));
        assert!(matches!(gen.generate(&TaskSpec::open(Category::Pen)), Err(CodegenError::Remote(RemoteFailure::Transport { attempts: 2, .. }))));
    }
}
