use super::{Pos, SpecError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    /// `%name`
    Ref(String),
    /// `%%`
    Universe,
    /// `!import`
    Import,
    LParen,
    RParen,
    Comma,
    Equals,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Ref(s) => format!("reference `%{s}`"),
            Tok::Universe => "`%%`".into(),
            Tok::Import => "`!import`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Equals => "`=`".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub(crate) fn tokenize(source: &str, label: &str) -> Result<Vec<Token>, SpecError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let pos = |line, col| Pos {
        source: label.to_string(),
        line,
        col,
    };

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };

        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(1, &mut i, &mut col);
            }
            continue;
        }

        let tok = match c {
            '(' => {
                advance(1, &mut i, &mut col);
                Tok::LParen
            }
            ')' => {
                advance(1, &mut i, &mut col);
                Tok::RParen
            }
            ',' => {
                advance(1, &mut i, &mut col);
                Tok::Comma
            }
            '=' => {
                advance(1, &mut i, &mut col);
                Tok::Equals
            }
            '%' => {
                if chars.get(i + 1) == Some(&'%') {
                    advance(2, &mut i, &mut col);
                    Tok::Universe
                } else if chars.get(i + 1).copied().is_some_and(is_ident_start) {
                    advance(1, &mut i, &mut col);
                    let start = i;
                    while i < chars.len() && is_ident_char(chars[i]) {
                        advance(1, &mut i, &mut col);
                    }
                    Tok::Ref(chars[start..i].iter().collect())
                } else {
                    return Err(SpecError::Lex {
                        at: pos(start_line, start_col),
                        msg: "expected `%%` or `%name`".into(),
                    });
                }
            }
            '!' => {
                advance(1, &mut i, &mut col);
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                let word: String = chars[start..i].iter().collect();
                if word != "import" {
                    return Err(SpecError::Lex {
                        at: pos(start_line, start_col),
                        msg: format!("unknown directive `!{word}`"),
                    });
                }
                Tok::Import
            }
            '"' => {
                advance(1, &mut i, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(SpecError::Lex {
                                at: pos(start_line, start_col),
                                msg: "unterminated string literal".into(),
                            })
                        }
                        Some('"') => {
                            advance(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(i + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                other => {
                                    return Err(SpecError::Lex {
                                        at: pos(line, col),
                                        msg: format!("invalid escape `\\{}`", other.map(|c| c.to_string()).unwrap_or_default()),
                                    })
                                }
                            };
                            s.push(esc);
                            advance(2, &mut i, &mut col);
                        }
                        Some(&ch) => {
                            s.push(ch);
                            advance(1, &mut i, &mut col);
                        }
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                advance(1, &mut i, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut col);
                }
                let text: String = chars[start..i].iter().collect();
                let value = text.parse::<i64>().map_err(|_| SpecError::Lex {
                    at: pos(start_line, start_col),
                    msg: format!("integer literal `{text}` out of range"),
                })?;
                Tok::Int(value)
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                Tok::Ident(chars[start..i].iter().collect())
            }
            other => {
                return Err(SpecError::Lex {
                    at: pos(start_line, start_col),
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token {
            tok,
            line: start_line,
            col: start_col,
        });
    }
    Ok(out)
}
