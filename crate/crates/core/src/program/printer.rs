use super::{Expr, Program, Skill, Stmt, PART};
use std::fmt::Write;

const NOT_PREC: u8 = 3;
const NEG_PREC: u8 = 7;
const ATOM_PREC: u8 = 8;

/// Canonical text: one statement per line, two-space indentation, and only
/// the parentheses the grammar needs.
pub fn print_program(program: &Program) -> String {
    let mut out = String::new();
    block(&program.body, 0, &mut out);
    out
}

fn block(body: &[Stmt], indent: usize, out: &mut String) {
    for s in body {
        stmt(s, indent, out);
    }
}

fn braced(body: &[Stmt], indent: usize, out: &mut String) {
    out.push_str("{\n");
    block(body, indent + 1, out);
    pad(indent, out);
    out.push('}');
}

fn pad(indent: usize, out: &mut String) {
    out.extend(std::iter::repeat_n("  ", indent));
}

fn stmt(s: &Stmt, indent: usize, out: &mut String) {
    pad(indent, out);
    match s {
        Stmt::Let(name, e) => {
            let _ = write!(out, "let {name} = ");
            expr(e, out);
        }
        Stmt::Assign(name, e) => {
            let _ = write!(out, "{name} = ");
            expr(e, out);
        }
        Stmt::While(cond, body) => {
            out.push_str("while ");
            expr(cond, out);
            out.push(' ');
            braced(body, indent, out);
        }
        Stmt::If(cond, then, els) => {
            out.push_str("if ");
            expr(cond, out);
            out.push(' ');
            braced(then, indent, out);
            if let Some(els) = els {
                out.push_str(" else ");
                braced(els, indent, out);
            }
        }
        Stmt::Call(skill) => call(*skill, out),
    }
    out.push('\n');
}

fn call(skill: Skill, out: &mut String) {
    let arg = if skill == Skill::Grasp { PART } else { "" };
    let _ = write!(out, "{skill}({arg})");
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, ..) => op.precedence(),
        Expr::Not(_) => NOT_PREC,
        Expr::Neg(_) => NEG_PREC,
        _ => ATOM_PREC,
    }
}

fn child(e: &Expr, parens: bool, out: &mut String) {
    if parens {
        out.push('(');
        expr(e, out);
        out.push(')');
    } else {
        expr(e, out);
    }
}

fn expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Expr::Var(name) => out.push_str(name),
        Expr::Rand => out.push_str("rand()"),
        Expr::Call(skill) => call(*skill, out),
        Expr::Neg(inner) => {
            out.push('-');
            child(inner, prec(inner) < NEG_PREC, out);
        }
        Expr::Not(inner) => {
            out.push_str("not ");
            child(inner, prec(inner) < NOT_PREC, out);
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            out.push_str(if matches!(e, Expr::Min(..)) { "min(" } else { "max(" });
            expr(a, out);
            out.push_str(", ");
            expr(b, out);
            out.push(')');
        }
        Expr::Binary(op, lhs, rhs) => {
            let p = op.precedence();
            // left-associative chains; comparisons do not chain at all
            child(lhs, prec(lhs) < p || (op.is_comparison() && prec(lhs) <= p), out);
            let _ = write!(out, " {} ", op.symbol());
            child(rhs, prec(rhs) <= p, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    #[test]
    fn canonical_layout() {
        let src =
            "let n=0 let done=false grasp(part) while not done { rotate_ccw() n = n+1 if rand()*6<n { done = pull_part() } } while pull_part() {}";
        let text = print_program(&parse_program(src).unwrap());
        let expected = "let n = 0\nlet done = false\ngrasp(part)\nwhile not done {\n  rotate_ccw()\n  n = n + 1\n  if rand() * 6 < n {\n    done = pull_part()\n  }\n}\nwhile pull_part() {\n}\n";
        assert_eq!(text, expected);
        assert_eq!(print_program(&parse_program(&text).unwrap()), text);
    }

    #[test]
    fn parentheses_where_needed() {
        for src in [
            "let a = (1 - 2) - 3\n",
            "let a = 1 - (2 - 3)\n",
            "let a = (1 < 2) == true\n",
            "let a = not (1 < 2) and (true or false)\n",
            "let a = -(1 + 2) * --3\n",
            "let a = (not true) == false\n",
            "let a = min(1 + 2, max(3, rand())) * 2\n",
        ] {
            let p = parse_program(src).unwrap();
            let text = print_program(&p);
            assert_eq!(parse_program(&text).unwrap(), p, "{src} -> {text}");
        }
        assert_eq!(print_program(&parse_program("let a = ((1 - 2)) - 3").unwrap()), "let a = 1 - 2 - 3\n");
        assert_eq!(print_program(&parse_program("let a = 1 - (2 - 3)").unwrap()), "let a = 1 - (2 - 3)\n");
    }

    #[test]
    fn nested_indentation_is_stable() {
        let src =
            "let x = 0\nwhile x < 3 {\n  if x == 1 {\n    while false {\n      release()\n    }\n  } else {\n    x = x + 1\n  }\n  x = x + 1\n}\n";
        assert_eq!(print_program(&parse_program(src).unwrap()), src);
    }
}
