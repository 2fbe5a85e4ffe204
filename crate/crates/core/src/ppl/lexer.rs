use super::ast::Span;
use super::error::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Var,
    Function,
    Return,
    If,
    Else,
    True,
    False,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Dot,
    Question,
    Bang,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    LtEq,
    Gt,
    GtEq,
    EqEq,
    NotEq,
    AndAnd,
    OrOr,
    Assign,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    pub(crate) fn text(&self) -> &'static str {
        match self {
            Tok::Var => "var",
            Tok::Function => "function",
            Tok::Return => "return",
            Tok::If => "if",
            Tok::Else => "else",
            Tok::True => "true",
            Tok::False => "false",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Dot => ".",
            Tok::Question => "?",
            Tok::Bang => "!",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Lt => "<",
            Tok::LtEq => "<=",
            Tok::Gt => ">",
            Tok::GtEq => ">=",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
            Tok::Assign => "=",
            Tok::Ident(_) | Tok::Number(_) | Tok::Str(_) | Tok::Eof => "",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub(crate) struct Lexed {
    pub tokens: Vec<Token>,
    pub comments: Vec<Span>,
}

/// JavaScript keywords and operators outside the language subset. They are
/// reported by name instead of as a generic syntax error.
const UNSUPPORTED_WORDS: &[&str] = &[
    "let", "const", "for", "while", "do", "switch", "case", "new", "class", "this", "try",
    "catch", "throw", "break", "continue", "typeof", "delete", "async", "await", "yield",
    "import", "export", "null", "undefined",
];

pub(crate) fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, col)
}

pub(crate) fn tokenize(source: &str) -> Result<Lexed, ParseError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    let mut i = 0;

    let err = |kind: ParseErrorKind, at: usize, message: String| {
        let (line, column) = line_col(source, at);
        ParseError {
            kind,
            message,
            line,
            column,
            span: Span::new(at, at),
        }
    };

    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            comments.push(Span::new(start, i));
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(err(
                        ParseErrorKind::Syntax { expected: "`*/`".into() },
                        start,
                        "unterminated block comment".into(),
                    ));
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            comments.push(Span::new(start, i));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            let word = &source[start..i];
            let tok = match word {
                "var" => Tok::Var,
                "function" => Tok::Function,
                "return" => Tok::Return,
                "if" => Tok::If,
                "else" => Tok::Else,
                "true" => Tok::True,
                "false" => Tok::False,
                w if UNSUPPORTED_WORDS.contains(&w) => {
                    return Err(err(
                        ParseErrorKind::UnsupportedConstruct {
                            construct: format!("`{w}`"),
                        },
                        start,
                        format!("`{w}` is not part of MedPPL"),
                    ))
                }
                w => Tok::Ident(w.to_string()),
            };
            tokens.push(Token {
                tok,
                span: Span::new(start, i),
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
            let text = &source[start..i];
            let value: f64 = text.parse().map_err(|_| {
                err(
                    ParseErrorKind::Syntax { expected: "number".into() },
                    start,
                    format!("malformed number `{text}`"),
                )
            })?;
            if !value.is_finite() {
                return Err(err(
                    ParseErrorKind::Syntax { expected: "finite number".into() },
                    start,
                    format!("number `{text}` is not finite"),
                ));
            }
            tokens.push(Token {
                tok: Tok::Number(value),
                span: Span::new(start, i),
            });
            continue;
        }
        if c == b'\'' || c == b'"' {
            let quote = c;
            i += 1;
            let mut value = String::new();
            loop {
                let Some(&b) = bytes.get(i) else {
                    return Err(err(
                        ParseErrorKind::Syntax { expected: "closing quote".into() },
                        start,
                        "unterminated string literal".into(),
                    ));
                };
                if b == b'\n' {
                    return Err(err(
                        ParseErrorKind::Syntax { expected: "closing quote".into() },
                        start,
                        "newline inside string literal".into(),
                    ));
                }
                if b == quote {
                    i += 1;
                    break;
                }
                if b == b'\\' {
                    let escaped = bytes.get(i + 1).copied();
                    match escaped {
                        Some(b'n') => value.push('\n'),
                        Some(b't') => value.push('\t'),
                        Some(b'\\') => value.push('\\'),
                        Some(b'\'') => value.push('\''),
                        Some(b'"') => value.push('"'),
                        _ => {
                            return Err(err(
                                ParseErrorKind::Syntax { expected: "escape sequence".into() },
                                i,
                                "unsupported escape sequence".into(),
                            ))
                        }
                    }
                    i += 2;
                    continue;
                }
                // copy one UTF-8 scalar
                let ch = source[i..].chars().next().expect("in bounds");
                value.push(ch);
                i += ch.len_utf8();
            }
            tokens.push(Token {
                tok: Tok::Str(value),
                span: Span::new(start, i),
            });
            continue;
        }

        let next = bytes.get(i + 1).copied();
        let next2 = bytes.get(i + 2).copied();
        let (tok, len) = match (c, next, next2) {
            (b'=', Some(b'='), Some(b'=')) => (Tok::EqEq, 3),
            (b'!', Some(b'='), Some(b'=')) => (Tok::NotEq, 3),
            (b'=', Some(b'='), _) => (Tok::EqEq, 2),
            (b'!', Some(b'='), _) => (Tok::NotEq, 2),
            (b'=', Some(b'>'), _) => {
                return Err(err(
                    ParseErrorKind::UnsupportedConstruct {
                        construct: "arrow function".into(),
                    },
                    start,
                    "arrow functions are not part of MedPPL; use `function(...) { ... }`".into(),
                ))
            }
            (b'<', Some(b'='), _) => (Tok::LtEq, 2),
            (b'>', Some(b'='), _) => (Tok::GtEq, 2),
            (b'&', Some(b'&'), _) => (Tok::AndAnd, 2),
            (b'|', Some(b'|'), _) => (Tok::OrOr, 2),
            (b'(', _, _) => (Tok::LParen, 1),
            (b')', _, _) => (Tok::RParen, 1),
            (b'{', _, _) => (Tok::LBrace, 1),
            (b'}', _, _) => (Tok::RBrace, 1),
            (b'[', _, _) => (Tok::LBracket, 1),
            (b']', _, _) => (Tok::RBracket, 1),
            (b',', _, _) => (Tok::Comma, 1),
            (b';', _, _) => (Tok::Semi, 1),
            (b':', _, _) => (Tok::Colon, 1),
            (b'.', _, _) => (Tok::Dot, 1),
            (b'?', _, _) => (Tok::Question, 1),
            (b'!', _, _) => (Tok::Bang, 1),
            (b'+', _, _) => (Tok::Plus, 1),
            (b'-', _, _) => (Tok::Minus, 1),
            (b'*', _, _) => (Tok::Star, 1),
            (b'/', _, _) => (Tok::Slash, 1),
            (b'%', _, _) => (Tok::Percent, 1),
            (b'<', _, _) => (Tok::Lt, 1),
            (b'>', _, _) => (Tok::Gt, 1),
            (b'=', _, _) => (Tok::Assign, 1),
            _ => {
                let ch = source[i..].chars().next().expect("in bounds");
                return Err(err(
                    ParseErrorKind::Syntax { expected: "a token".into() },
                    start,
                    format!("unexpected character `{ch}`"),
                ));
            }
        };
        i += len;
        tokens.push(Token {
            tok,
            span: Span::new(start, i),
        });
    }
    tokens.push(Token {
        tok: Tok::Eof,
        span: Span::new(source.len(), source.len()),
    });
    Ok(Lexed { tokens, comments })
}
