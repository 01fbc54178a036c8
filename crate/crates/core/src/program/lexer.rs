use super::{Pos, ProgramError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) enum Tok {
    Int(i64),
    Ident(String),
    Sym(&'static str),
    Eof,
}

impl Tok {
    pub(super) fn describe(&self) -> String {
        match self {
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Ident(s) if super::parser::KEYWORDS.contains(&s.as_str()) => format!("`{s}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(super) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

const SYMBOLS: [&str; 17] = ["<=", ">=", "==", "!=", "(", ")", "{", "}", ",", ";", "=", "+", "-", "*", "<", ">", "!"];

pub(super) fn lex(src: &str) -> Result<Vec<Token>, ProgramError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, col: &mut u32, n: usize| {
        *i += n;
        *col += n as u32;
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            advance(&mut i, &mut col, 1);
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut col, 1);
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut col, 1);
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<i64>().map_err(|_| ProgramError::IntOverflow { pos })?;
            out.push(Token { tok: Tok::Int(value), pos });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut col, 1);
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
        } else {
            let sym = SYMBOLS.iter().find(|s| {
                let s: Vec<char> = s.chars().collect();
                chars[i..].starts_with(&s)
            });
            match sym {
                // a lone `!` is not an operator
                Some(&s) if s != "!" => {
                    out.push(Token { tok: Tok::Sym(s), pos });
                    advance(&mut i, &mut col, s.len());
                }
                _ => {
                    return Err(ProgramError::Syntax { pos, found: format!("character `{c}`"), expected: vec!["token".into()] });
                }
            }
        }
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(out)
}
