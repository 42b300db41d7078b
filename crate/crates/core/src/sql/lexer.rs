use super::SqlError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    /// Unquoted identifiers and keywords are lowercased.
    Ident { name: String, quoted: bool },
    Number(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: usize,
}

const SYMBOLS: [&str; 17] =
    ["<>", "<=", ">=", "!=", "(", ")", ",", ".", ";", "*", "+", "-", "/", "%", "=", "<", ">"];

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if text[i..].starts_with("--") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if text[i..].starts_with("/*") {
            let end = text[i + 2..]
                .find("*/")
                .ok_or_else(|| SqlError::parse(i, "unterminated comment"))?;
            i += end + 4;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident { name: text[start..i].to_ascii_lowercase(), quoted: false },
                pos: start,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push(Token { tok: Tok::Number(text[start..i].to_string()), pos: start });
            continue;
        }
        if c == b'\'' || c == b'"' {
            let quote = c as char;
            let mut value = String::new();
            i += 1;
            loop {
                let Some(ch) = text[i..].chars().next() else {
                    return Err(SqlError::parse(start, "unterminated quoted text"));
                };
                i += ch.len_utf8();
                if ch == quote {
                    if text[i..].starts_with(quote) {
                        value.push(quote);
                        i += 1;
                        continue;
                    }
                    break;
                }
                value.push(ch);
            }
            let tok = if quote == '\'' { Tok::Str(value) } else { Tok::Ident { name: value, quoted: true } };
            out.push(Token { tok, pos: start });
            continue;
        }
        match SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), pos: start });
                i += s.len();
            }
            None => {
                let ch = text[i..].chars().next().unwrap();
                return Err(SqlError::parse(start, format!("unexpected character '{ch}'")));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, pos: text.len() });
    Ok(out)
}
