//! Tokenizer for the SQL subset. Dialect affects only how double quotes are
//! read (string literal in MySQL, identifier elsewhere); every other dialect
//! rule is enforced by the parser so that violations carry a source span.

use super::error::{EngineError, EngineResult};
use super::mode::DialectMode;
use crate::model::Dialect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteKind {
    Double,
    Back,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Word(String),
    Quoted(String, QuoteKind),
    Str(String),
    Int(i64),
    Float(f64),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Slash,
    Percent,
    Eq,
    Neq,
    Lt,
    Gt,
    Le,
    Ge,
    DoubleColon,
    Concat,
    Semicolon,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_word(&self, kw: &str) -> bool {
        matches!(&self.tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }
}

pub fn tokenize(src: &str, mode: &DialectMode) -> EngineResult<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            match src[i + 2..].find("*/") {
                Some(off) => i = i + 2 + off + 2,
                None => return Err(EngineError::syntax(mode, &src[i..], i, "unterminated comment")),
            }
            continue;
        }
        let tok = match c {
            b'\'' => {
                let (s, next) = read_quoted(src, i, b'\'', mode)?;
                i = next;
                Tok::Str(s)
            }
            b'"' => {
                let (s, next) = read_quoted(src, i, b'"', mode)?;
                i = next;
                if mode.dialect == Dialect::Mysql {
                    Tok::Str(s)
                } else {
                    Tok::Quoted(s, QuoteKind::Double)
                }
            }
            b'`' => {
                let (s, next) = read_quoted(src, i, b'`', mode)?;
                i = next;
                Tok::Quoted(s, QuoteKind::Back)
            }
            b'0'..=b'9' => {
                let (t, next) = read_number(src, i, mode)?;
                i = next;
                t
            }
            b'.' if bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) => {
                let (t, next) = read_number(src, i, mode)?;
                i = next;
                t
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                let mut j = i;
                while j < bytes.len() {
                    let b = bytes[j];
                    if b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80 {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let w = src[i..j].to_string();
                i = j;
                Tok::Word(w)
            }
            _ => {
                let two = bytes.get(i + 1).copied();
                let (t, len) = match (c, two) {
                    (b'<', Some(b'>')) => (Tok::Neq, 2),
                    (b'!', Some(b'=')) => (Tok::Neq, 2),
                    (b'<', Some(b'=')) => (Tok::Le, 2),
                    (b'>', Some(b'=')) => (Tok::Ge, 2),
                    (b':', Some(b':')) => (Tok::DoubleColon, 2),
                    (b'|', Some(b'|')) => (Tok::Concat, 2),
                    (b'=', Some(b'=')) => (Tok::Eq, 2),
                    (b'<', _) => (Tok::Lt, 1),
                    (b'>', _) => (Tok::Gt, 1),
                    (b'=', _) => (Tok::Eq, 1),
                    (b',', _) => (Tok::Comma, 1),
                    (b'.', _) => (Tok::Dot, 1),
                    (b'(', _) => (Tok::LParen, 1),
                    (b')', _) => (Tok::RParen, 1),
                    (b'*', _) => (Tok::Star, 1),
                    (b'+', _) => (Tok::Plus, 1),
                    (b'-', _) => (Tok::Minus, 1),
                    (b'/', _) => (Tok::Slash, 1),
                    (b'%', _) => (Tok::Percent, 1),
                    (b';', _) => (Tok::Semicolon, 1),
                    _ => {
                        let ch = src[i..].chars().next().unwrap_or('?');
                        return Err(EngineError::syntax(mode, &src[i..], i, &format!("unexpected character '{}'", ch)));
                    }
                };
                i += len;
                t
            }
        };
        out.push(Token { tok, start, end: i });
    }
    out.push(Token { tok: Tok::Eof, start: src.len(), end: src.len() });
    Ok(out)
}

fn read_quoted(src: &str, start: usize, q: u8, mode: &DialectMode) -> EngineResult<(String, usize)> {
    let bytes = src.as_bytes();
    let mut i = start + 1;
    let mut s = String::new();
    let mut seg = i;
    while i < bytes.len() {
        if bytes[i] == q {
            if bytes.get(i + 1) == Some(&q) {
                s.push_str(&src[seg..=i]);
                i += 2;
                seg = i;
                continue;
            }
            s.push_str(&src[seg..i]);
            return Ok((s, i + 1));
        }
        i += 1;
    }
    Err(EngineError::syntax(mode, &src[start..], start, "unterminated quoted text"))
}

fn read_number(src: &str, start: usize, mode: &DialectMode) -> EngineResult<(Tok, usize)> {
    let bytes = src.as_bytes();
    let mut i = start;
    let mut is_float = false;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_none_or(|b| b.is_ascii_digit()) {
        is_float = true;
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        if j < bytes.len() && bytes[j].is_ascii_digit() {
            is_float = true;
            i = j;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
    }
    let text = &src[start..i];
    if !is_float {
        if let Ok(v) = text.parse::<i64>() {
            return Ok((Tok::Int(v), i));
        }
    }
    text.parse::<f64>().map(|f| (Tok::Float(f), i)).map_err(|_| EngineError::syntax(mode, text, start, "bad numeric literal"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str, d: Dialect) -> Vec<Tok> {
        tokenize(s, &DialectMode::for_dialect(d)).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn double_colon_and_operators() {
        let t = toks("a::INTEGER >= 5 <> 6", Dialect::Postgres);
        assert_eq!(
            t,
            vec![Tok::Word("a".into()), Tok::DoubleColon, Tok::Word("INTEGER".into()), Tok::Ge, Tok::Int(5), Tok::Neq, Tok::Int(6), Tok::Eof]
        );
    }

    #[test]
    fn double_quotes_are_strings_in_mysql() {
        assert_eq!(toks("\"San Jose\"", Dialect::Mysql)[0], Tok::Str("San Jose".into()));
        assert_eq!(toks("\"San Jose\"", Dialect::Postgres)[0], Tok::Quoted("San Jose".into(), QuoteKind::Double));
    }

    #[test]
    fn escaped_quotes_and_comments() {
        let t = toks("'it''s' -- trailing\n/* block */ 1.5e3", Dialect::Sqlite);
        assert_eq!(t, vec![Tok::Str("it's".into()), Tok::Float(1500.0), Tok::Eof]);
    }

    #[test]
    fn unterminated_string_is_parse_error() {
        let e = tokenize("SELECT 'abc", &DialectMode::for_dialect(Dialect::Sqlite)).unwrap_err();
        assert_eq!(e.class, super::super::error::EngineErrorClass::Parse);
        assert_eq!(e.position, Some(7));
    }
}
