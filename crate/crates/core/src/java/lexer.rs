//! Maximal-munch lexer for the supported Java subset.

use super::JavaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Keyword,
    Identifier,
    Literal,
    Operator,
    Separator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line.
    pub line: usize,
    /// 1-based column, counted in chars.
    pub column: usize,
    /// Byte offset of the first char in the source.
    pub offset: usize,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    pub fn end_offset(&self) -> usize {
        self.offset + self.text.len()
    }
}

pub const KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
];

const WORD_LITERALS: &[&str] = &["true", "false", "null"];

// Longest first so that a linear scan implements maximal munch.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "->", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=",
    "*=", "/=", "&=", "|=", "^=", "%=", "<<", ">>", "=", ">", "<", "!", "~", "?", ":", "+", "-",
    "*", "/", "&", "|", "^", "%",
];

const SEPARATORS: &[&str] = &[
    "...", "::", "(", ")", "{", "}", "[", "]", ";", ",", ".", "@",
];

/// Kind of a standalone word as the lexer would classify it.
pub fn classify_word(word: &str) -> TokenKind {
    if KEYWORDS.contains(&word) {
        TokenKind::Keyword
    } else if WORD_LITERALS.contains(&word) {
        TokenKind::Literal
    } else {
        TokenKind::Identifier
    }
}

/// Kind of an arbitrary token text (used when only node labels are at hand).
pub fn classify_text(text: &str) -> TokenKind {
    let first = text.chars().next().unwrap_or(' ');
    if first == '"' || first == '\'' || first.is_ascii_digit() {
        return TokenKind::Literal;
    }
    if first == '.' && text.len() > 1 && text[1..].starts_with(|c: char| c.is_ascii_digit()) {
        return TokenKind::Literal;
    }
    if is_ident_start(first) {
        return classify_word(text);
    }
    if SEPARATORS.contains(&text) {
        TokenKind::Separator
    } else {
        TokenKind::Operator
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn bump_n(&mut self, n: usize) {
        for _ in 0..n {
            self.bump();
        }
    }
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, JavaError> {
    let mut cur = Cursor {
        src: source,
        pos: 0,
        line: 1,
        column: 1,
    };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        let (line, column, start) = (cur.line, cur.column, cur.pos);
        if cur.rest().starts_with("//") {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        if cur.rest().starts_with("/*") {
            cur.bump_n(2);
            loop {
                if cur.rest().starts_with("*/") {
                    cur.bump_n(2);
                    break;
                }
                if cur.bump().is_none() {
                    return Err(JavaError::Lex {
                        line,
                        column,
                        message: "unterminated block comment".into(),
                    });
                }
            }
            continue;
        }
        let kind = if is_ident_start(c) {
            while cur.peek().is_some_and(is_ident_part) {
                cur.bump();
            }
            classify_word(&source[start..cur.pos])
        } else if c.is_ascii_digit()
            || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit()))
        {
            lex_number(&mut cur);
            TokenKind::Literal
        } else if c == '"' || c == '\'' {
            lex_quoted(&mut cur, c, line, column)?;
            TokenKind::Literal
        } else if let Some(sep) = SEPARATORS.iter().find(|s| cur.rest().starts_with(**s)) {
            cur.bump_n(sep.chars().count());
            TokenKind::Separator
        } else if let Some(op) = OPERATORS.iter().find(|s| cur.rest().starts_with(**s)) {
            cur.bump_n(op.chars().count());
            TokenKind::Operator
        } else {
            return Err(JavaError::Lex {
                line,
                column,
                message: format!("unexpected character {c:?}"),
            });
        };
        out.push(Token {
            kind,
            text: source[start..cur.pos].to_string(),
            line,
            column,
            offset: start,
        });
    }
    Ok(out)
}

fn lex_number(cur: &mut Cursor<'_>) {
    if cur.rest().starts_with("0x")
        || cur.rest().starts_with("0X")
        || cur.rest().starts_with("0b")
        || cur.rest().starts_with("0B")
    {
        cur.bump_n(2);
        while cur
            .peek()
            .is_some_and(|c| c.is_ascii_hexdigit() || c == '_')
        {
            cur.bump();
        }
    } else {
        while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
            cur.bump();
        }
        if cur.peek() == Some('.') && cur.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            cur.bump();
            while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
                cur.bump();
            }
        } else if cur.peek() == Some('.')
            && !cur
                .peek_at(1)
                .is_some_and(|c| is_ident_start(c) || c == '.')
        {
            // `1.` is a valid double literal
            cur.bump();
        }
        if matches!(cur.peek(), Some('e' | 'E')) {
            let sign = matches!(cur.peek_at(1), Some('+' | '-'));
            let digit_at = if sign { 2 } else { 1 };
            if cur.peek_at(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                cur.bump_n(digit_at);
                while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                    cur.bump();
                }
            }
        }
    }
    if matches!(cur.peek(), Some('l' | 'L' | 'f' | 'F' | 'd' | 'D')) {
        cur.bump();
    }
}

fn lex_quoted(
    cur: &mut Cursor<'_>,
    quote: char,
    line: usize,
    column: usize,
) -> Result<(), JavaError> {
    let what = if quote == '"' { "string" } else { "character" };
    cur.bump();
    loop {
        match cur.bump() {
            None | Some('\n') => {
                return Err(JavaError::Lex {
                    line,
                    column,
                    message: format!("unterminated {what} literal"),
                })
            }
            Some('\\') => {
                if cur.bump().is_none() {
                    return Err(JavaError::Lex {
                        line,
                        column,
                        message: format!("unterminated {what} literal"),
                    });
                }
            }
            Some(c) if c == quote => return Ok(()),
            Some(_) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds(src: &str) -> Vec<(TokenKind, String)> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn simple_declaration() {
        let expected = [
            (Keyword, "int"),
            (Identifier, "x"),
            (Operator, "="),
            (Literal, "1"),
            (Separator, ";"),
        ];
        let got = kinds("int x = 1;");
        assert_eq!(got.len(), expected.len());
        for ((k, t), (ek, et)) in got.iter().zip(expected) {
            assert_eq!((k, t.as_str()), (&ek, et));
        }
    }

    #[test]
    fn empty_source_has_no_tokens() {
        assert!(tokenize("").unwrap().is_empty());
        assert!(tokenize("  // only a comment\n /* and another */ ")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unterminated_string_reports_position() {
        let err = tokenize("\"unterminated").unwrap_err();
        match err {
            JavaError::Lex { line, column, .. } => assert_eq!((line, column), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(tokenize("a /* open").is_err());
    }

    #[test]
    fn maximal_munch_on_operators() {
        let got: Vec<String> = kinds("a>>>=b>>c>=d->e").into_iter().map(|t| t.1).collect();
        assert_eq!(got, ["a", ">>>=", "b", ">>", "c", ">=", "d", "->", "e"]);
    }

    #[test]
    fn literals_stay_whole() {
        let got = kinds(r#"s = "a \"q\" b" + 'c' + 0x1F + 1.5e-3f + 10L + true;"#);
        let lits: Vec<&str> = got
            .iter()
            .filter(|(k, _)| *k == Literal)
            .map(|(_, t)| t.as_str())
            .collect();
        assert_eq!(
            lits,
            [r#""a \"q\" b""#, "'c'", "0x1F", "1.5e-3f", "10L", "true"]
        );
    }

    #[test]
    fn positions_are_monotone() {
        let toks = tokenize("int f() {\n  return a.b(c);\n}\n").unwrap();
        for w in toks.windows(2) {
            assert!((w[0].line, w[0].column) <= (w[1].line, w[1].column));
        }
        assert_eq!(toks.last().unwrap().line, 3);
    }
}
