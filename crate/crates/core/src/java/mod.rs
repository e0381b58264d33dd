//! Java front end: lexing, method parsing, tree simplification and the
//! node-sequence/relation-graph view of a method.

mod ast;
mod lexer;
mod parser;
mod tree_format;

pub use ast::{
    bucket_literal, is_wrapper, node_label, Ast, AstNode, CodeGraph, TreeNode, WRAPPER_CATEGORIES,
};
pub use lexer::{classify_text, classify_word, tokenize, Token, TokenKind, KEYWORDS};
pub use parser::{parse_method, MethodInfo, Parser};
pub use tree_format::{deserialize_tree, serialize_tree, NO_TOKEN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JavaError {
    #[error("lex error at {line}:{column}: {message}")]
    Lex {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported construct at {line}:{column}: {construct}")]
    Unsupported {
        construct: String,
        line: usize,
        column: usize,
    },
    #[error("tree format: {0}")]
    Tree(String),
}

/// Tokenizes and parses one method declaration.
pub fn parse_method_source(source: &str) -> Result<Ast, JavaError> {
    parse_method(&tokenize(source)?)
}

/// Methods and constructors declared in a Java source file.
pub fn parse_compilation_unit(source: &str) -> Result<Vec<MethodInfo>, JavaError> {
    let tokens = tokenize(source)?;
    Parser::new(&tokens).parse_compilation_unit(source)
}

/// Source → simplified tree → relation graph.
pub fn code_graph(source: &str) -> Result<CodeGraph, JavaError> {
    Ok(parse_method_source(source)?.simplify().to_code_graph())
}
