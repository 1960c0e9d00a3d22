//! Preprocessor and tokenizer for the specification dialect.

use std::collections::BTreeSet;

use super::SpecError;

/// Applies the line-based `#ifdef FLAG … #endif` preprocessor. Inactive
/// lines and the directive lines themselves are blanked, so line numbers
/// in later diagnostics match the original file.
pub fn preprocess(source: &str, flags: &BTreeSet<String>) -> Result<String, SpecError> {
    let mut out = String::with_capacity(source.len());
    // Stack of booleans: is the enclosing region active?
    let mut stack: Vec<bool> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut words = rest.split_whitespace();
            match words.next() {
                Some("ifdef") => {
                    let flag = words.next().ok_or_else(|| {
                        SpecError::syntax(lineno, "#ifdef requires a flag name")
                    })?;
                    let parent_active = stack.iter().all(|a| *a);
                    stack.push(parent_active && flags.contains(flag));
                }
                Some("endif") => {
                    if stack.pop().is_none() {
                        return Err(SpecError::syntax(lineno, "#endif without matching #ifdef"));
                    }
                }
                Some(other) => {
                    return Err(SpecError::syntax(
                        lineno,
                        format!("unsupported preprocessor directive #{other}"),
                    ));
                }
                None => {
                    return Err(SpecError::syntax(lineno, "empty preprocessor directive"));
                }
            }
            out.push('\n');
            continue;
        }
        if stack.iter().all(|a| *a) {
            out.push_str(line);
        }
        out.push('\n');
    }
    if !stack.is_empty() {
        return Err(SpecError::syntax(source.lines().count(), "unterminated #ifdef"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// Single-quoted literal, raw content without the quotes.
    Quoted(String),
    /// Double-quoted string (only appears in skipped sections).
    DQuoted(String),
    Num(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LAngle,
    RAngle,
    Comma,
    Colon,
    Slash,
    Bang,
    Tilde,
    Dollar,
    Percent,
    Equals,
    Plus,
    Amp,
    Pipe,
    Dot,
    Hash,
    At,
    Dash,
    /// `--[`
    ActOpen,
    /// `]->`
    ActClose,
    /// `-->`
    ArrowPlain,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::Quoted(s) => write!(f, "'{s}'"),
            Tok::DQuoted(s) => write!(f, "\"{s}\""),
            Tok::Num(s) => write!(f, "{s}"),
            Tok::LParen => write!(f, "("),
            Tok::RParen => write!(f, ")"),
            Tok::LBracket => write!(f, "["),
            Tok::RBracket => write!(f, "]"),
            Tok::LAngle => write!(f, "<"),
            Tok::RAngle => write!(f, ">"),
            Tok::Comma => write!(f, ","),
            Tok::Colon => write!(f, ":"),
            Tok::Slash => write!(f, "/"),
            Tok::Bang => write!(f, "!"),
            Tok::Tilde => write!(f, "~"),
            Tok::Dollar => write!(f, "$"),
            Tok::Percent => write!(f, "%"),
            Tok::Equals => write!(f, "="),
            Tok::Plus => write!(f, "+"),
            Tok::Amp => write!(f, "&"),
            Tok::Pipe => write!(f, "|"),
            Tok::Dot => write!(f, "."),
            Tok::Hash => write!(f, "#"),
            Tok::At => write!(f, "@"),
            Tok::Dash => write!(f, "-"),
            Tok::ActOpen => write!(f, "--["),
            Tok::ActClose => write!(f, "]->"),
            Tok::ArrowPlain => write!(f, "-->"),
        }
    }
}

pub fn lex(source: &str) -> Result<Vec<(Tok, usize)>, SpecError> {
    let chars: Vec<char> = source.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            _ if c.is_whitespace() => i += 1,
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                let start = line;
                i += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return Err(SpecError::syntax(start, "unterminated block comment"));
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        break;
                    }
                    if chars[i] == '\n' {
                        line += 1;
                    }
                    i += 1;
                }
            }
            '\'' => {
                let start = line;
                i += 1;
                let from = i;
                while i < chars.len() && chars[i] != '\'' {
                    if chars[i] == '\n' {
                        return Err(SpecError::syntax(start, "unterminated quoted literal"));
                    }
                    i += 1;
                }
                if i == chars.len() {
                    return Err(SpecError::syntax(start, "unterminated quoted literal"));
                }
                toks.push((Tok::Quoted(chars[from..i].iter().collect()), start));
                i += 1;
            }
            '"' => {
                let start = line;
                i += 1;
                let from = i;
                while i < chars.len() && chars[i] != '"' {
                    if chars[i] == '\n' {
                        line += 1;
                    }
                    i += 1;
                }
                if i == chars.len() {
                    return Err(SpecError::syntax(start, "unterminated string"));
                }
                toks.push((Tok::DQuoted(chars[from..i].iter().collect()), start));
                i += 1;
            }
            '-' => {
                if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'[') {
                    toks.push((Tok::ActOpen, line));
                    i += 3;
                } else if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
                    toks.push((Tok::ArrowPlain, line));
                    i += 3;
                } else {
                    // Stray dashes appear in skipped sections
                    // (e.g. `builtins: symmetric-encryption`).
                    toks.push((Tok::Dash, line));
                    i += 1;
                }
            }
            ']' => {
                if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') {
                    toks.push((Tok::ActClose, line));
                    i += 3;
                } else {
                    toks.push((Tok::RBracket, line));
                    i += 1;
                }
            }
            '(' => {
                toks.push((Tok::LParen, line));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, line));
                i += 1;
            }
            '[' => {
                toks.push((Tok::LBracket, line));
                i += 1;
            }
            '<' => {
                toks.push((Tok::LAngle, line));
                i += 1;
            }
            '>' => {
                toks.push((Tok::RAngle, line));
                i += 1;
            }
            ',' => {
                toks.push((Tok::Comma, line));
                i += 1;
            }
            ':' => {
                toks.push((Tok::Colon, line));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, line));
                i += 1;
            }
            '!' => {
                toks.push((Tok::Bang, line));
                i += 1;
            }
            '~' => {
                toks.push((Tok::Tilde, line));
                i += 1;
            }
            '$' => {
                toks.push((Tok::Dollar, line));
                i += 1;
            }
            '%' => {
                toks.push((Tok::Percent, line));
                i += 1;
            }
            '=' => {
                toks.push((Tok::Equals, line));
                i += 1;
            }
            '+' => {
                toks.push((Tok::Plus, line));
                i += 1;
            }
            '&' => {
                toks.push((Tok::Amp, line));
                i += 1;
            }
            '|' => {
                toks.push((Tok::Pipe, line));
                i += 1;
            }
            '.' => {
                toks.push((Tok::Dot, line));
                i += 1;
            }
            '#' => {
                toks.push((Tok::Hash, line));
                i += 1;
            }
            '@' => {
                toks.push((Tok::At, line));
                i += 1;
            }
            _ if c.is_ascii_digit() => {
                let from = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                toks.push((Tok::Num(chars[from..i].iter().collect()), line));
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let from = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[from..i].iter().collect()), line));
            }
            _ => {
                return Err(SpecError::syntax(line, format!("unexpected character {c:?}")));
            }
        }
    }
    Ok(toks)
}
