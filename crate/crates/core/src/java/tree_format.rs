//! Line-oriented tree exchange format.
//!
//! One node per line: `id<TAB>category<TAB>token-or-∅<TAB>child ids`, child
//! ids separated by single spaces, root id 0. Backslash, tab, newline and
//! carriage return inside tokens are written as `\\`, `\t`, `\n`, `\r`; a
//! token consisting of exactly `∅` is written as `\∅`.

use super::ast::{Ast, AstNode};
use super::JavaError;

pub const NO_TOKEN: &str = "∅";

fn escape(token: &str) -> String {
    if token == NO_TOKEN {
        return format!("\\{NO_TOKEN}");
    }
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str, line: usize) -> Result<String, JavaError> {
    if field == format!("\\{NO_TOKEN}") {
        return Ok(NO_TOKEN.to_string());
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(JavaError::Tree(format!(
                    "line {line}: bad escape sequence \\{}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

pub fn serialize_tree(ast: &Ast) -> String {
    let mut out = String::new();
    for n in ast.nodes() {
        let token = n
            .token
            .as_deref()
            .map(escape)
            .unwrap_or_else(|| NO_TOKEN.to_string());
        let kids: Vec<String> = n.children.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            n.id,
            n.category,
            token,
            kids.join(" ")
        ));
    }
    out
}

pub fn deserialize_tree(text: &str) -> Result<Ast, JavaError> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(JavaError::Tree(format!(
                "line {lineno}: expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let id = fields[0]
            .parse::<usize>()
            .map_err(|_| JavaError::Tree(format!("line {lineno}: bad node id {:?}", fields[0])))?;
        if fields[1].is_empty() {
            return Err(JavaError::Tree(format!("line {lineno}: empty category")));
        }
        let token = if fields[2] == NO_TOKEN {
            None
        } else {
            Some(unescape(fields[2], lineno)?)
        };
        let children = fields[3]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| JavaError::Tree(format!("line {lineno}: bad child id {s:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        raw.push(AstNode {
            id,
            category: fields[1].to_string(),
            token,
            children,
        });
    }
    if raw.is_empty() {
        return Err(JavaError::Tree("empty tree".into()));
    }
    Ast::from_unordered(raw, 0).map_err(JavaError::Tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::java::parse_method_source;

    #[test]
    fn round_trip_of_parsed_method() {
        let ast = parse_method_source("void f(){}").unwrap();
        let text = serialize_tree(&ast);
        assert_eq!(deserialize_tree(&text).unwrap(), ast);
    }

    #[test]
    fn awkward_tokens_survive() {
        let src = "String f(){ return \"a\\tb\" + \"∅\" + '\\\\'; }";
        let ast = parse_method_source(src).unwrap();
        assert_eq!(deserialize_tree(&serialize_tree(&ast)).unwrap(), ast);
    }

    #[test]
    fn cyclic_references_are_rejected() {
        let text = "0\tA\t∅\t1\n1\tB\t∅\t2\n2\tC\t∅\t1\n";
        assert!(deserialize_tree(text).is_err());
        let self_loop = "0\tA\t∅\t0\n";
        assert!(deserialize_tree(self_loop).is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(deserialize_tree("0\tA\n").is_err());
        assert!(deserialize_tree("x\tA\t∅\t\n").is_err());
        assert!(deserialize_tree("0\tA\t∅\t9\n").is_err());
        assert!(deserialize_tree("").is_err());
    }
}
